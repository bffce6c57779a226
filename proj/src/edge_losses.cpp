#include "edge/edge_losses.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "edge/errors.hpp"
#include "edge/kernels.hpp"

namespace edge {

namespace {

void check_matrix(const Tensor& m, const char* what) {
    if (m.rank() != 2 || m.dim(0) < 1 || m.dim(1) < 1)
        throw ValidationError(std::string(what) + " must be a non-empty [N, d] matrix, got " + shape_str(m.shape));
    for (double v : m.data)
        if (!std::isfinite(v)) throw ValidationError(std::string(what) + " has non-finite entries");
}

void check_tau(double tau) {
    if (!(tau > 0.0)) throw ValidationError("temperature must be positive");
}

// Backpropagate through row normalization n = a / ‖a‖: da = (g - n (n·g)) / ‖a‖.
Tensor normalize_backward(const Tensor& raw, const Tensor& unit, const Tensor& g) {
    Tensor out(raw.shape);
    for (std::size_t i = 0; i < static_cast<std::size_t>(raw.dim(0)); ++i) {
        const auto r = raw.row(i);
        const double norm = std::sqrt(kernels::dot(r, r));
        const auto n = unit.row(i);
        const auto gi = g.row(i);
        const double ng = kernels::dot(n, gi);
        auto o = out.row(i);
        for (std::size_t k = 0; k < o.size(); ++k) o[k] = (gi[k] - n[k] * ng) / norm;
    }
    return out;
}

struct Softmaxes {
    std::vector<double> row_lse;  // log Σ_j exp(S_ij)
    std::vector<double> col_lse;  // log Σ_j exp(S_ji)
};

Softmaxes log_sum_exps(const Tensor& S) {
    const std::size_t N = static_cast<std::size_t>(S.dim(0));
    Softmaxes s{std::vector<double>(N), std::vector<double>(N)};
    for (std::size_t i = 0; i < N; ++i) {
        double mr = -INFINITY, mc = -INFINITY;
        for (std::size_t j = 0; j < N; ++j) {
            mr = std::max(mr, S.data[i * N + j]);
            mc = std::max(mc, S.data[j * N + i]);
        }
        double sr = 0.0, sc = 0.0;
        for (std::size_t j = 0; j < N; ++j) {
            sr += std::exp(S.data[i * N + j] - mr);
            sc += std::exp(S.data[j * N + i] - mc);
        }
        s.row_lse[i] = mr + std::log(sr);
        s.col_lse[i] = mc + std::log(sc);
    }
    return s;
}

}  // namespace

EmbeddingBatch EmbeddingBatch::from_raw(Tensor z_raw, Tensor y_raw) {
    check_matrix(z_raw, "image embeddings");
    check_matrix(y_raw, "text embeddings");
    if (z_raw.dim(0) != y_raw.dim(0)) throw ConfigError("image and text embedding batches differ in size");
    if (z_raw.dim(1) != y_raw.dim(1)) throw ConfigError("image and text embeddings differ in dimension");
    for (const Tensor* m : {&z_raw, &y_raw})
        for (std::size_t i = 0; i < static_cast<std::size_t>(m->dim(0)); ++i)
            if (kernels::dot(m->row(i), m->row(i)) == 0.0) throw ValidationError("zero embedding row cannot be normalized");
    EmbeddingBatch b;
    b.z_vec = l2_normalize_rows(z_raw);
    b.y_vec = l2_normalize_rows(y_raw);
    b.z_raw = std::move(z_raw);
    b.y_raw = std::move(y_raw);
    return b;
}

EmbeddingBatch EmbeddingBatch::from_normalized(Tensor z_vec, Tensor y_vec) {
    EmbeddingBatch b{z_vec, y_vec, z_vec, y_vec};
    b.validate();
    return b;
}

void EmbeddingBatch::validate() const {
    check_matrix(z_vec, "image embeddings");
    check_matrix(y_vec, "text embeddings");
    if (z_vec.dim(0) != y_vec.dim(0)) throw ConfigError("image and text embedding batches differ in size");
    if (z_vec.dim(1) != y_vec.dim(1)) throw ConfigError("image and text embeddings differ in dimension");
    for (const Tensor* m : {&z_vec, &y_vec})
        for (std::size_t i = 0; i < static_cast<std::size_t>(m->dim(0)); ++i)
            if (std::abs(std::sqrt(kernels::dot(m->row(i), m->row(i))) - 1.0) > 1e-6)
                throw ValidationError("embedding row " + std::to_string(i) + " is not unit-normalized");
}

Tensor similarity_matrix(const EmbeddingBatch& batch, double tau) {
    check_tau(tau);
    batch.validate();
    if (batch.z_vec.dim(1) != batch.y_vec.dim(1))
        throw ConfigError("image embedding width " + std::to_string(batch.z_vec.dim(1)) + " differs from text width " +
                          std::to_string(batch.y_vec.dim(1)));
    const std::size_t N = static_cast<std::size_t>(batch.size());
    const std::size_t D = static_cast<std::size_t>(batch.z_vec.dim(1));
    Tensor S({static_cast<int>(N), static_cast<int>(N)});
    kernels::gemm_nt(N, N, D, batch.z_vec.data.data(), D, batch.y_vec.data.data(), D, S.data.data(), N, false);
    for (double& v : S.data) v /= tau;
    return S;
}

ContrastiveTerms contrastive_loss(const EmbeddingBatch& batch, double tau, double lambda_c) {
    const Tensor S = similarity_matrix(batch, tau);
    const std::size_t N = static_cast<std::size_t>(S.dim(0));
    const auto lse = log_sum_exps(S);
    ContrastiveTerms c;
    for (std::size_t i = 0; i < N; ++i) {
        c.l_i2t += lse.row_lse[i] - S.data[i * N + i];
        c.l_t2i += lse.col_lse[i] - S.data[i * N + i];
    }
    c.l_i2t /= static_cast<double>(N);
    c.l_t2i /= static_cast<double>(N);
    c.l_c = lambda_c * c.l_i2t + c.l_t2i;
    return c;
}

namespace {

// Unit concatenations c_i = [z_i; y_i] / ‖·‖ and their norms.
Tensor concat_unit(const EmbeddingBatch& b, std::vector<double>* norms) {
    const int N = b.size(), dz = b.z_vec.dim(1), dy = b.y_vec.dim(1);
    Tensor c({N, dz + dy});
    if (norms) norms->resize(static_cast<std::size_t>(N));
    for (std::size_t i = 0; i < static_cast<std::size_t>(N); ++i) {
        auto r = c.row(i);
        std::copy(b.z_vec.row(i).begin(), b.z_vec.row(i).end(), r.begin());
        std::copy(b.y_vec.row(i).begin(), b.y_vec.row(i).end(), r.begin() + dz);
        const double n = std::sqrt(kernels::dot(r, r));
        for (double& v : r) v /= n;
        if (norms) (*norms)[i] = n;
    }
    return c;
}

}  // namespace

double diversity_loss(const EmbeddingBatch& batch) {
    batch.validate();
    const std::size_t N = static_cast<std::size_t>(batch.size());
    if (N < 2) throw ValidationError("diversity loss needs at least two pairs");
    const Tensor c = concat_unit(batch, nullptr);
    double s = 0.0;
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = i + 1; j < N; ++j) s += kernels::dot(c.row(i), c.row(j));
    return 2.0 * s / (static_cast<double>(N) * static_cast<double>(N - 1));
}

LossBreakdown edge_loss(const EmbeddingBatch& batch, const LossParams& params) {
    if (batch.size() < 2) throw ValidationError("EDGE loss needs at least two pairs (diversity term undefined for N=1)");
    const ContrastiveTerms c = contrastive_loss(batch, params.tau, params.lambda_c);
    LossBreakdown b;
    b.l_i2t = c.l_i2t;
    b.l_t2i = c.l_t2i;
    b.l_c = c.l_c;
    b.l_d = diversity_loss(batch);
    b.l_edge = b.l_c + params.lambda_d * b.l_d;
    b.tau = params.tau;
    b.lambda_c = params.lambda_c;
    b.lambda_d = params.lambda_d;
    return b;
}

LossGradient loss_gradient(const EmbeddingBatch& batch, const LossParams& params, const LossWeights& w) {
    const Tensor S = similarity_matrix(batch, params.tau);
    const std::size_t N = static_cast<std::size_t>(S.dim(0));
    const std::size_t dz = static_cast<std::size_t>(batch.z_vec.dim(1));
    const std::size_t dy = static_cast<std::size_t>(batch.y_vec.dim(1));
    const auto lse = log_sum_exps(S);

    LossGradient out;
    LossBreakdown& v = out.values;
    v.tau = params.tau;
    v.lambda_c = params.lambda_c;
    v.lambda_d = params.lambda_d;

    // dObjective/dS: row softmax for i->t, column softmax for t->i.
    Tensor G({static_cast<int>(N), static_cast<int>(N)});
    const double invN = 1.0 / static_cast<double>(N);
    for (std::size_t i = 0; i < N; ++i) {
        v.l_i2t += lse.row_lse[i] - S.data[i * N + i];
        v.l_t2i += lse.col_lse[i] - S.data[i * N + i];
        for (std::size_t j = 0; j < N; ++j) {
            const double p_row = std::exp(S.data[i * N + j] - lse.row_lse[i]);
            const double p_col = std::exp(S.data[i * N + j] - lse.col_lse[j]);
            const double delta = i == j ? 1.0 : 0.0;
            G.data[i * N + j] = invN * (w.i2t * (p_row - delta) + w.t2i * (p_col - delta));
        }
    }
    v.l_i2t *= invN;
    v.l_t2i *= invN;
    v.l_c = params.lambda_c * v.l_i2t + v.l_t2i;

    // dL/dz_i = Σ_j G_ij y_j / tau ; dL/dy_j = Σ_i G_ij z_i / tau
    Tensor gz(batch.z_vec.shape), gy(batch.y_vec.shape);
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j) {
            const double g = G.data[i * N + j] / params.tau;
            if (g == 0.0) continue;
            kernels::axpy(g, batch.y_vec.row(j), gz.row(i));
            kernels::axpy(g, batch.z_vec.row(i), gy.row(j));
        }

    if (N >= 2) {
        std::vector<double> norms;
        const Tensor c = concat_unit(batch, &norms);
        double s = 0.0;
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t j = i + 1; j < N; ++j) s += kernels::dot(c.row(i), c.row(j));
        const double scale = 2.0 / (static_cast<double>(N) * static_cast<double>(N - 1));
        v.l_d = scale * s;
        v.l_edge = v.l_c + params.lambda_d * v.l_d;
        if (w.diversity != 0.0) {
            // d/dc_i = scale Σ_{j≠i} c_j = scale (Σ_j c_j − c_i), then through the concat normalization.
            std::vector<double> total(dz + dy, 0.0);
            for (std::size_t j = 0; j < N; ++j) kernels::axpy(1.0, c.row(j), total);
            for (std::size_t i = 0; i < N; ++i) {
                const auto ci = c.row(i);
                std::vector<double> gc(dz + dy);
                for (std::size_t k = 0; k < gc.size(); ++k) gc[k] = w.diversity * scale * (total[k] - ci[k]);
                const double proj = kernels::dot(ci, gc);
                for (std::size_t k = 0; k < gc.size(); ++k) gc[k] = (gc[k] - ci[k] * proj) / norms[i];
                auto gzi = gz.row(i);
                auto gyi = gy.row(i);
                for (std::size_t k = 0; k < dz; ++k) gzi[k] += gc[k];
                for (std::size_t k = 0; k < dy; ++k) gyi[k] += gc[dz + k];
            }
        }
    } else if (w.diversity != 0.0) {
        throw ValidationError("diversity loss needs at least two pairs");
    }

    out.objective = w.i2t * v.l_i2t + w.t2i * v.l_t2i + w.diversity * v.l_d;
    out.d_z_raw = normalize_backward(batch.z_raw, batch.z_vec, gz);
    out.d_y_raw = normalize_backward(batch.y_raw, batch.y_vec, gy);
    return out;
}

}  // namespace edge
