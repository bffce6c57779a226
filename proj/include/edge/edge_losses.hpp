#pragma once
// Contrastive + diversity objective on paired image/text embeddings.
//
//   S_ij  = (z_i · y_j) / tau                     (rows: images, columns: texts)
//   L_i2t = -(1/N) Σ_i log softmax_j(S_i·)_i
//   L_t2i = -(1/N) Σ_i log softmax_j(S_·i)_i
//   L_C   = lambda_c L_i2t + L_t2i
//   L_D   = 2/(N(N-1)) Σ_{i<j} c_i · c_j,  c_i = [z_i; y_i] / ‖[z_i; y_i]‖
//   L     = L_C + lambda_d L_D
//
// Gradients are analytic and taken with respect to the raw (pre-normalization)
// embeddings, so callers can push them straight into an autodiff tape.

#include "edge/tensor.hpp"

namespace edge {

struct EmbeddingBatch {
    Tensor z_vec;  // [N, d] unit rows
    Tensor y_vec;  // [N, d] unit rows
    Tensor z_raw;  // pre-normalization inputs (equal to z_vec when built from unit rows)
    Tensor y_raw;

    static EmbeddingBatch from_raw(Tensor z_raw, Tensor y_raw);
    // Rows must already have unit norm within 1e-6.
    static EmbeddingBatch from_normalized(Tensor z_vec, Tensor y_vec);

    int size() const { return z_vec.rank() ? z_vec.dim(0) : 0; }
    void validate() const;
};

struct LossParams {
    double tau = 0.5;
    double lambda_c = 1.0;
    double lambda_d = 1.0;
};

struct LossBreakdown {
    double l_i2t = 0.0;
    double l_t2i = 0.0;
    double l_c = 0.0;
    double l_d = 0.0;
    double l_edge = 0.0;
    double tau = 0.5;
    double lambda_c = 1.0;
    double lambda_d = 1.0;
};

struct ContrastiveTerms {
    double l_i2t = 0.0;
    double l_t2i = 0.0;
    double l_c = 0.0;
};

Tensor similarity_matrix(const EmbeddingBatch& batch, double tau);
ContrastiveTerms contrastive_loss(const EmbeddingBatch& batch, double tau, double lambda_c);
// Requires N >= 2.
double diversity_loss(const EmbeddingBatch& batch);
// Requires N >= 2.
LossBreakdown edge_loss(const EmbeddingBatch& batch, const LossParams& params = {});

// Objective = w_i2t L_i2t + w_t2i L_t2i + w_d L_D.
struct LossWeights {
    double i2t = 0.0;
    double t2i = 0.0;
    double diversity = 0.0;

    static LossWeights contrastive(const LossParams& p) { return {p.lambda_c, 1.0, 0.0}; }
    static LossWeights edge(const LossParams& p) { return {p.lambda_c, 1.0, p.lambda_d}; }
};

struct LossGradient {
    // Populated for every term that is defined for this batch (l_d/l_edge need N >= 2).
    LossBreakdown values;
    double objective = 0.0;
    Tensor d_z_raw;
    Tensor d_y_raw;
};

LossGradient loss_gradient(const EmbeddingBatch& batch, const LossParams& params, const LossWeights& weights);

}  // namespace edge
