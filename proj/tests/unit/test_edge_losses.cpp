#include "doctest.h"

#include <cmath>
#include <numeric>

#include "edge/edge_losses.hpp"
#include "edge/errors.hpp"
#include "helpers.hpp"

using namespace edge;

TEST_SUITE("edge_losses") {

namespace {

EmbeddingBatch random_batch(int n, int d, Rng& rng) {
    return EmbeddingBatch::from_raw(Tensor::randn({n, d}, rng, 1.0), Tensor::randn({n, d}, rng, 1.0));
}

// Textbook formulas with explicit exponentials, no shared code with the library.
struct Oracle {
    double i2t = 0, t2i = 0, div = 0;
};

Oracle oracle(const EmbeddingBatch& b, double tau) {
    const int N = b.size(), D = b.z_vec.dim(1);
    auto sim = [&](int i, int j) {
        double s = 0;
        for (int k = 0; k < D; ++k) s += b.z_vec.data[static_cast<std::size_t>(i * D + k)] * b.y_vec.data[static_cast<std::size_t>(j * D + k)];
        return s / tau;
    };
    Oracle o;
    for (int i = 0; i < N; ++i) {
        double row = 0, col = 0;
        for (int j = 0; j < N; ++j) {
            row += std::exp(sim(i, j));
            col += std::exp(sim(j, i));
        }
        o.i2t -= std::log(std::exp(sim(i, i)) / row);
        o.t2i -= std::log(std::exp(sim(i, i)) / col);
    }
    o.i2t /= N;
    o.t2i /= N;
    if (N >= 2) {
        std::vector<std::vector<double>> c(static_cast<std::size_t>(N));
        for (int i = 0; i < N; ++i) {
            for (int k = 0; k < D; ++k) c[static_cast<std::size_t>(i)].push_back(b.z_vec.data[static_cast<std::size_t>(i * D + k)]);
            for (int k = 0; k < D; ++k) c[static_cast<std::size_t>(i)].push_back(b.y_vec.data[static_cast<std::size_t>(i * D + k)]);
            double n = 0;
            for (double v : c[static_cast<std::size_t>(i)]) n += v * v;
            for (double& v : c[static_cast<std::size_t>(i)]) v /= std::sqrt(n);
        }
        for (int i = 0; i < N; ++i)
            for (int j = i + 1; j < N; ++j)
                o.div += std::inner_product(c[static_cast<std::size_t>(i)].begin(), c[static_cast<std::size_t>(i)].end(),
                                            c[static_cast<std::size_t>(j)].begin(), 0.0);
        o.div *= 2.0 / (N * (N - 1.0));
    }
    return o;
}

}  // namespace

TEST_CASE("loss values match an independent textbook implementation") {
    Rng rng(11);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 2 + trial % 6, d = 3 + trial % 5;
        const double tau = 0.1 + 0.05 * (trial % 9);
        const auto b = random_batch(n, d, rng);
        const auto o = oracle(b, tau);
        const LossBreakdown l = edge_loss(b, {tau, 1.3, 0.7});
        CHECK(l.l_i2t == doctest::Approx(o.i2t).epsilon(1e-10));
        CHECK(l.l_t2i == doctest::Approx(o.t2i).epsilon(1e-10));
        CHECK(l.l_d == doctest::Approx(o.div).epsilon(1e-10));
    }
}

TEST_CASE("closed-form values") {
    SUBCASE("single pair has zero contrastive loss") {
        const auto b = EmbeddingBatch::from_raw(Tensor({1, 2}, {1.0, 0.0}), Tensor({1, 2}, {0.3, 0.7}));
        const auto c = contrastive_loss(b, 0.5, 1.0);
        CHECK(c.l_i2t == 0.0);
        CHECK(c.l_t2i == 0.0);
        CHECK_THROWS_AS(diversity_loss(b), ValidationError);
    }
    SUBCASE("uniform similarities give ln 2 per direction") {
        const auto b = EmbeddingBatch::from_raw(Tensor({2, 2}, {1, 0, 1, 0}), Tensor({2, 2}, {1, 0, 1, 0}));
        const auto c = contrastive_loss(b, 0.5, 1.0);
        CHECK(std::abs(c.l_i2t - std::log(2.0)) < 1e-12);
        CHECK(std::abs(c.l_t2i - std::log(2.0)) < 1e-12);
    }
    SUBCASE("identical pairs have diversity 1, orthogonal pairs 0") {
        const auto same = EmbeddingBatch::from_raw(Tensor({2, 2}, {1, 0, 1, 0}), Tensor({2, 2}, {0, 1, 0, 1}));
        CHECK(std::abs(diversity_loss(same) - 1.0) < 1e-12);
        const auto orth = EmbeddingBatch::from_raw(Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2, 2}, {1, 0, 0, 1}));
        CHECK(std::abs(diversity_loss(orth)) < 1e-12);
    }
}

TEST_CASE("breakdown composition identities hold exactly") {
    Rng rng(12);
    for (int trial = 0; trial < 10; ++trial) {
        const LossParams p{0.5, 0.5 + trial * 0.25, 2.0 - trial * 0.1};
        const auto l = edge_loss(random_batch(4, 6, rng), p);
        CHECK(l.l_c == p.lambda_c * l.l_i2t + l.l_t2i);
        CHECK(l.l_edge == l.l_c + p.lambda_d * l.l_d);
    }
}

TEST_CASE("analytic gradients match central differences") {
    Rng rng(13);
    const LossParams p{0.5, 1.2, 0.8};
    for (int n : {2, 3, 5}) {
        Tensor z = Tensor::randn({n, 4}, rng, 1.0), y = Tensor::randn({n, 4}, rng, 1.0);
        for (const LossWeights& w : {LossWeights{1, 0, 0}, LossWeights{0, 1, 0}, LossWeights{0, 0, 1}, LossWeights::edge(p)}) {
            const auto g = loss_gradient(EmbeddingBatch::from_raw(z, y), p, w);
            auto f = [&] { return loss_gradient(EmbeddingBatch::from_raw(z, y), p, w).objective; };
            for (std::size_t k = 0; k < z.data.size(); ++k) {
                CHECK(testing::rel_err(testing::central_diff(f, z.data[k]), g.d_z_raw.data[k], 1e-6) < 1e-6);
                CHECK(testing::rel_err(testing::central_diff(f, y.data[k]), g.d_y_raw.data[k], 1e-6) < 1e-6);
            }
        }
    }
}

TEST_CASE("swapping modalities swaps the two contrastive directions") {
    Rng rng(14);
    Tensor z = Tensor::randn({5, 3}, rng, 1.0), y = Tensor::randn({5, 3}, rng, 1.0);
    const auto a = contrastive_loss(EmbeddingBatch::from_raw(z, y), 0.5, 1.0);
    const auto b = contrastive_loss(EmbeddingBatch::from_raw(y, z), 0.5, 1.0);
    CHECK(a.l_i2t == doctest::Approx(b.l_t2i).epsilon(1e-12));
    CHECK(a.l_t2i == doctest::Approx(b.l_i2t).epsilon(1e-12));
}

TEST_CASE("losses are invariant to a joint permutation of the pairs") {
    Rng rng(15);
    Tensor z = Tensor::randn({6, 4}, rng, 1.0), y = Tensor::randn({6, 4}, rng, 1.0);
    const std::vector<int> perm{3, 0, 5, 1, 4, 2};
    Tensor zp(z.shape), yp(y.shape);
    for (std::size_t i = 0; i < perm.size(); ++i)
        for (int k = 0; k < 4; ++k) {
            zp.data[i * 4 + static_cast<std::size_t>(k)] = z.data[static_cast<std::size_t>(perm[i] * 4 + k)];
            yp.data[i * 4 + static_cast<std::size_t>(k)] = y.data[static_cast<std::size_t>(perm[i] * 4 + k)];
        }
    const auto a = edge_loss(EmbeddingBatch::from_raw(z, y));
    const auto b = edge_loss(EmbeddingBatch::from_raw(zp, yp));
    CHECK(a.l_edge == doctest::Approx(b.l_edge).epsilon(1e-12));
}

TEST_CASE("contrastive loss is non-negative and diversity lies in [-1/(N-1), 1]") {
    Rng rng(16);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 2 + trial % 5;
        const auto l = edge_loss(random_batch(n, 3, rng));
        CHECK(l.l_i2t >= 0.0);
        CHECK(l.l_t2i >= 0.0);
        CHECK(l.l_d <= 1.0 + 1e-12);
        CHECK(l.l_d >= -1.0 / (n - 1) - 1e-12);
    }
}

TEST_CASE("invalid inputs are rejected") {
    Rng rng(17);
    const auto b = random_batch(3, 4, rng);
    CHECK_THROWS_AS(similarity_matrix(b, 0.0), ValidationError);
    CHECK_THROWS_AS(similarity_matrix(b, -1.0), ValidationError);
    CHECK_THROWS_AS(EmbeddingBatch::from_raw(Tensor::randn({3, 4}, rng, 1.0), Tensor::randn({3, 5}, rng, 1.0)), ConfigError);
    CHECK_THROWS_AS(EmbeddingBatch::from_raw(Tensor::randn({3, 4}, rng, 1.0), Tensor::randn({2, 4}, rng, 1.0)), ConfigError);
    CHECK_THROWS_AS(EmbeddingBatch::from_normalized(Tensor({1, 2}, {1, 1}), Tensor({1, 2}, {1, 0})), ValidationError);
    CHECK_THROWS_AS(EmbeddingBatch::from_raw(Tensor({1, 2}, {0, 0}), Tensor({1, 2}, {1, 0})), ValidationError);
    CHECK_THROWS_AS(edge_loss(EmbeddingBatch::from_raw(Tensor({1, 2}, {1, 0}), Tensor({1, 2}, {1, 0}))), ValidationError);
}

}
