#pragma once
// End-to-end stages shared by the CLI and the experiment harness.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "edge/config.hpp"
#include "edge/reports.hpp"

namespace edge {

std::vector<ImageTextPair> load_corpus(const CorpusSource& source, int image_size);

// The starting point of fine-tuning: loaded from pretrain.checkpoint or trained
// with the plain denoising objective on the corpus.
DiffusionModel build_pretrained(const ExperimentConfig& config, std::span<const ImageTextPair> corpus,
                                TrainingLog* log = nullptr);

// Copy of `pretrained` fine-tuned with `mask`.
DiffusionModel distill_model(const ExperimentConfig& config, const DiffusionModel& pretrained,
                             std::span<const ImageTextPair> corpus, LossMask mask, TrainingLog* log = nullptr);

std::unique_ptr<Captioner> make_captioner(const ExperimentConfig& config);

struct SynthesisPlan {
    int pair_count = 0;
    int cpi = 1;
    std::string generator_id = "edge-finetuned";
    bool expand_captions = true;
};

SynthesisPlan default_plan(const ExperimentConfig& config);

// synthesize (+ optional rephrasing of seed captions) then caption expansion up to plan.cpi.
DistilledDataset synthesize_distilled(const ExperimentConfig& config, const DiffusionModel& model,
                                      std::span<const ImageTextPair> corpus, const SynthesisPlan& plan);

MetricsReport evaluate_distilled(const ExperimentConfig& config, const DistilledDataset& distilled,
                                 std::span<const ImageTextPair> validation, const std::string& mask);

using Progress = std::function<void(const std::string&)>;

// One row per mask. mse_only is the un-fine-tuned pretrained model; the caption
// synthesis mask expands to synthesis.cpi, the others keep one caption per image
// at the same pair count.
AblationTable run_ablation(const ExperimentConfig& config, const std::vector<LossMask>& masks,
                           const std::filesystem::path& run_dir, const Progress& progress = {});

}  // namespace edge
