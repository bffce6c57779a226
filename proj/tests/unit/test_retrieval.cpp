#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "edge/errors.hpp"
#include "edge/retrieval.hpp"
#include "edge/toy_corpus.hpp"
#include "helpers.hpp"

using namespace edge;

TEST_SUITE("retrieval") {

namespace {

// Full sort with index tie-breaking; independent of the counting formulation.
RetrievalMetrics brute_force(const Tensor& s, const std::vector<int>& owner, const std::vector<int>& ks) {
    const int Q = s.dim(0), M = s.dim(1);
    auto at = [&](int q, int j) { return s.data[static_cast<std::size_t>(q * M + j)]; };
    RetrievalMetrics m;
    for (int k : ks) {
        int ir = 0;
        for (int q = 0; q < Q; ++q) {
            std::vector<int> idx(static_cast<std::size_t>(M));
            std::iota(idx.begin(), idx.end(), 0);
            std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return at(q, a) > at(q, b); });
            ir += std::find(idx.begin(), idx.begin() + k, owner[static_cast<std::size_t>(q)]) != idx.begin() + k;
        }
        int tr = 0;
        for (int j = 0; j < M; ++j) {
            std::vector<int> idx(static_cast<std::size_t>(Q));
            std::iota(idx.begin(), idx.end(), 0);
            std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return at(a, j) > at(b, j); });
            tr += std::any_of(idx.begin(), idx.begin() + k, [&](int q) { return owner[static_cast<std::size_t>(q)] == j; });
        }
        m.ir_at[k] = static_cast<double>(ir) / Q;
        m.tr_at[k] = static_cast<double>(tr) / M;
    }
    return m;
}

DistilledDataset toy_set(int n, int cpi, std::uint64_t seed) {
    ToyCorpusSpec spec;
    spec.num_images = n;
    spec.captions_per_image = cpi;
    DistilledDataset d;
    d.cpi = cpi;
    for (auto& it : render_toy_corpus(spec, seed)) d.pairs.push_back(it.pair);
    return d;
}

DualEncoderConfig quick() {
    DualEncoderConfig c;
    c.epochs = 4;
    return c;
}

}  // namespace

TEST_CASE("hand-computed ranks") {
    // Two images with two captions each.
    const Tensor s({4, 2}, {0.9, 0.1,
                            0.2, 0.8,
                            0.3, 0.7,
                            0.5, 0.5});
    const std::vector<int> owner{0, 0, 1, 1};
    const std::vector<int> ks{1, 2};
    const auto m = compute_retrieval_from_scores(s, owner, ks);
    // Caption 1 ranks image 1 first; caption 3 ties and the lower index (0) wins.
    CHECK(m.ir_at.at(1) == doctest::Approx(0.5));
    CHECK(m.ir_at.at(2) == doctest::Approx(1.0));
    CHECK(m.tr_at.at(1) == doctest::Approx(0.5));
    CHECK(m.alignment_score == doctest::Approx((0.9 + 0.2 + 0.7 + 0.5) / 4));
    CHECK(m.n_queries == 4);
    CHECK(m.n_image_queries == 2);
}

TEST_CASE("counting ranks agree with a brute-force sort, ties included") {
    Rng rng(11);
    std::uniform_int_distribution<int> coarse(0, 4);
    for (int trial = 0; trial < 60; ++trial) {
        const int M = 3 + trial % 7, cpi = 1 + trial % 3, Q = M * cpi;
        Tensor s({Q, M});
        for (double& v : s.data) v = trial % 2 ? coarse(rng) / 4.0 : std::tanh(std::normal_distribution<double>()(rng));
        std::vector<int> owner;
        for (int j = 0; j < M; ++j)
            for (int c = 0; c < cpi; ++c) owner.push_back(j);
        std::shuffle(owner.begin(), owner.end(), rng);
        const std::vector<int> ks{1, 2, M};
        const auto got = compute_retrieval_from_scores(s, owner, ks);
        const auto want = brute_force(s, owner, ks);
        CHECK(got.ir_at == want.ir_at);
        CHECK(got.tr_at == want.tr_at);
        CHECK_NOTHROW(got.validate());
    }
}

TEST_CASE("random scores give chance-level recall") {
    Rng rng(3);
    const int M = 200;
    Tensor s({M, M});
    for (double& v : s.data) v = std::normal_distribution<double>()(rng);
    std::vector<int> owner(M);
    std::iota(owner.begin(), owner.end(), 0);
    const std::vector<int> ks{10};
    double ir = 0;
    for (int rep = 0; rep < 20; ++rep) {
        for (double& v : s.data) v = std::normal_distribution<double>()(rng);
        ir += compute_retrieval_from_scores(s, owner, ks).ir_at.at(10) / 20;
    }
    CHECK(std::abs(ir - 10.0 / M) < 0.02);
}

TEST_CASE("invalid retrieval requests") {
    const Tensor s({2, 2}, {1, 0, 0, 1});
    const std::vector<int> owner{0, 1};
    const std::vector<int> too_big{3};
    CHECK_THROWS_AS(compute_retrieval_from_scores(s, owner, too_big), ValidationError);
    const std::vector<int> orphan{0, 0};
    const std::vector<int> ks{1};
    CHECK_THROWS_AS(compute_retrieval_from_scores(s, orphan, ks), ValidationError);
    const std::vector<int> short_owner{0};
    CHECK_THROWS_AS(compute_retrieval_from_scores(s, short_owner, ks), ValidationError);

    RetrievalMetrics m;
    m.ir_at = {{1, 0.5}, {5, 0.4}};
    CHECK_THROWS_AS(m.validate(), ValidationError);
    m.ir_at = {{1, 1.5}};
    CHECK_THROWS_AS(m.validate(), ValidationError);
}

TEST_CASE("dual encoder embeddings are unit rows and the text tower is seeded independently") {
    const DualEncoder a(quick(), 1), b(quick(), 2);
    CHECK(a.params().at("text.embed").value.data == b.params().at("text.embed").value.data);
    const auto d = toy_set(4, 1, 0);
    std::vector<Image> imgs;
    for (const auto& p : d.pairs) imgs.push_back(p.image);
    for (const Tensor& e : {a.embed_images(imgs), a.embed_texts({"red", "a blue square", "x y z"})}) {
        for (std::size_t r = 0; r < static_cast<std::size_t>(e.dim(0)); ++r) {
            double n = 0;
            for (double v : e.row(r)) n += v * v;
            CHECK(n == doctest::Approx(1.0));
        }
    }
    DualEncoderConfig bad = quick();
    bad.image_arch = "vit";
    CHECK_THROWS_AS(DualEncoder(bad, 0), ConfigError);
    CHECK(registered_image_towers().size() >= 2);
}

TEST_CASE("evaluation training is deterministic, keeps a frozen text tower fixed and lowers the loss") {
    const auto d = toy_set(48, 2, 4);
    auto cfg = quick();
    cfg.epochs = 15;
    const DualEncoder init(cfg, 0);
    const DualEncoder m1 = train_eval_model(d, cfg, 9);
    const DualEncoder m2 = train_eval_model(d, cfg, 9);
    CHECK(m1.train_losses == m2.train_losses);
    CHECK(m1.params().at("text.embed").value.data == init.params().at("text.embed").value.data);
    const std::size_t n = m1.train_losses.size(), w = 6;
    double head = 0, tail = 0;
    for (std::size_t i = 0; i < w; ++i) {
        head += m1.train_losses[i];
        tail += m1.train_losses[n - 1 - i];
    }
    CHECK(tail < head);
    CHECK(training_pair_count(d) == 96);

    cfg.freeze_text = false;
    const DualEncoder m3 = train_eval_model(d, cfg, 9);
    CHECK(m3.params().at("text.embed").value.data != init.params().at("text.embed").value.data);

    DistilledDataset one = toy_set(1, 1, 0);
    CHECK_THROWS_AS(train_eval_model(one, cfg, 0), TrainingError);
}

TEST_CASE("a trained encoder beats chance on held-out toy data") {
    const auto train = toy_set(200, 3, 1);
    auto cfg = quick();
    cfg.epochs = 20;
    const DualEncoder m = train_eval_model(train, cfg, 0);
    ToyCorpusSpec spec;
    spec.num_images = 50;
    std::vector<ImageTextPair> val;
    for (auto& it : render_toy_corpus(spec, 99)) val.push_back(it.pair);
    const auto r = compute_retrieval(m, val);
    CHECK(r.ir_at.at(10) > 2.0 * 10.0 / 50.0);
    CHECK(r.alignment_score > 0.0);
}

TEST_CASE("swapping the image tower keeps the text tower") {
    const DualEncoder m(quick(), 3);
    const DualEncoder w = swap_image_tower(m, "conv_wide");
    CHECK(w.config().image_arch == "conv_wide");
    CHECK(w.params().at("text.embed").value.data == m.params().at("text.embed").value.data);
    CHECK(w.image_param_count() > m.image_param_count());
    CHECK_THROWS_AS(swap_image_tower(m, "nope"), ConfigError);
}

TEST_CASE("metric aggregation uses the sample standard deviation") {
    std::vector<RetrievalMetrics> runs(3);
    const double v[3] = {0.1, 0.2, 0.6};
    for (int i = 0; i < 3; ++i) {
        runs[static_cast<std::size_t>(i)].ir_at[1] = v[i];
        runs[static_cast<std::size_t>(i)].tr_at[1] = v[i];
        runs[static_cast<std::size_t>(i)].alignment_score = v[i];
    }
    const auto s = aggregate_metrics(runs);
    CHECK(s.ir_mean.at(1) == doctest::Approx(0.3));
    CHECK(s.ir_std.at(1) == doctest::Approx(std::sqrt((0.04 + 0.01 + 0.09) / 2.0)));
    const auto single = aggregate_metrics(std::span(runs).first(1));
    CHECK(single.ir_std.at(1) == 0.0);
}

TEST_CASE("pipeline evaluation runs one model per seed") {
    const auto d = toy_set(24, 1, 2);
    std::vector<ImageTextPair> val(d.pairs.begin(), d.pairs.begin() + 12);
    const std::vector<std::uint64_t> seeds{0, 1};
    const auto rep = evaluate_pipeline(d, val, quick(), seeds);
    CHECK(rep.seeds == seeds);
    CHECK(rep.per_seed.size() == 2);
    CHECK(rep.aggregate.ir_mean.count(10) == 1);
}

}
