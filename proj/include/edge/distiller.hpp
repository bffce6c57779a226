#pragma once
// Fine-tuning a diffusion model with the EDGE objective and synthesizing a
// distilled image-text set from it.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "edge/dataset_io.hpp"
#include "edge/diffusion.hpp"
#include "edge/edge_losses.hpp"
#include "edge/optimizer.hpp"

namespace edge {

// Which objective terms drive the update. The last mask trains exactly like
// plus_contrastive_diversity; caption synthesis is applied at synthesis time.
enum class LossMask { mse_only, plus_contrastive, plus_contrastive_diversity, edge_plus_caption_synthesis };

LossMask parse_loss_mask(const std::string& name);
std::string loss_mask_name(LossMask mask);
std::vector<LossMask> all_loss_masks();

struct TrainConfig {
    double learning_rate = 1e-4;
    int batch_size = 8;
    int epochs = 8;
    double tau = 0.5;
    double lambda_c = 1.0;
    double lambda_d = 1.0;
    // Weight of the noise-prediction MSE added to the contrastive objectives.
    double mse_weight = 0.0;
    // Per-sample weight of the noise-prediction error: clamp((1 - ab_t) / ab_t, 1, cap),
    // which moves emphasis toward high-noise steps. 0 keeps uniform weights.
    double mse_snr_cap = 0.0;
    LossMask mask = LossMask::plus_contrastive_diversity;
    // Parameter-name prefixes that may change; empty means every parameter.
    std::vector<std::string> trainable_prefixes;
    OptimizerKind optimizer = OptimizerKind::rmsprop;
    std::uint64_t seed = 0;

    void validate() const;
    LossParams loss_params() const { return {tau, lambda_c, lambda_d}; }
};

struct TrainLogEntry {
    long step = 0;
    int epoch = 0;
    LossBreakdown loss;
    double mse = 0.0;
    double objective = 0.0;
    double wall_ms = 0.0;
};

struct TrainingLog {
    LossMask mask = LossMask::plus_contrastive_diversity;
    std::vector<TrainLogEntry> entries;
};

// Everything one optimizer step saw; handed to the observer before the update.
struct StepObservation {
    long step;
    const std::vector<std::size_t>& batch_ids;
    const Tensor& z0;
    const LatentBatch& noised;
    const Tensor& eps_hat;
    const Tensor& z_denoised;
    const Tensor& image_embedding_raw;
    const Tensor& text_embedding_raw;
};
using StepObserver = std::function<void(const StepObservation&)>;

TrainingLog finetune(DiffusionModel& model, std::span<const ImageTextPair> corpus, const TrainConfig& config,
                     const StepObserver& observer = {});

struct SynthesisRequest {
    int pair_count = 10;
    int cpi = 2;
    std::vector<std::string> caption_source;
    int sampler_steps = 50;
    std::uint64_t seed = 0;
    // Written to provenance as the generator tag.
    std::string generator_id = "edge-finetuned";
    int sample_batch = 16;

    void validate() const;
    int image_count() const { return pair_count / cpi; }
};

// Seed captions drawn without replacement from the distinct captions of the source;
// one image sampled per seed caption with sampler seed = request.seed + index.
DistilledDataset synthesize(const DiffusionModel& model, const SynthesisRequest& request);

DistilledDataset baseline_pretrained_synthesize(const DiffusionModel& pretrained, SynthesisRequest request);

// Uniform sample of real (image, caption) pairs without replacement, cpi = 1.
DistilledDataset baseline_random_select(std::span<const ImageTextPair> corpus, int pair_count, std::uint64_t seed);

}  // namespace edge
