#pragma once
// Evaluation protocol: train a small dual encoder on a (distilled) image-text set
// and measure text-to-image (IR@K) and image-to-text (TR@K) recall on held-out data.

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "edge/autograd.hpp"
#include "edge/dataset_io.hpp"
#include "edge/optimizer.hpp"

namespace edge {

struct DualEncoderConfig {
    std::string image_arch = "conv_small";
    int image_size = 16;
    int embed_dim = 32;
    int text_buckets = 1024;
    bool freeze_text = true;
    double tau = 0.1;
    double learning_rate = 3e-3;
    int epochs = 40;
    int batch_size = 16;
    OptimizerKind optimizer = OptimizerKind::adam;
    // The text tower starts from this fixed seed so every evaluation run shares it.
    std::uint64_t text_init_seed = 1234;

    void validate() const;
};

const std::vector<std::string>& registered_image_towers();

class DualEncoder {
public:
    DualEncoder(DualEncoderConfig config, std::uint64_t seed);

    const DualEncoderConfig& config() const { return config_; }
    ParamMap& params() { return params_; }
    const ParamMap& params() const { return params_; }
    std::size_t image_param_count() const;

    // Unit-norm rows [N, embed_dim].
    Tensor embed_images(std::span<const Image> images) const;
    Tensor embed_texts(const std::vector<std::string>& captions) const;
    // Raw (unnormalized) embeddings on a tape.
    Var image_forward(Tape& tape, std::span<const Image> images);
    Var text_forward(Tape& tape, const std::vector<std::string>& captions);

    // Per-step training objective recorded by train_eval_model.
    std::vector<double> train_losses;

private:
    using ParamFn = std::function<Var(const std::string&)>;
    Var image_tower(Tape& tape, const ParamFn& p, Var x) const;
    Tensor image_input(std::span<const Image> images) const;

    DualEncoderConfig config_;
    ParamMap params_;
};

// Every (image, caption) combination of the dataset is one training pair.
std::size_t training_pair_count(const DistilledDataset& dataset);
DualEncoder train_eval_model(const DistilledDataset& dataset, const DualEncoderConfig& config, std::uint64_t seed);

// Fresh model with the requested image tower; the text tower is carried over.
DualEncoder swap_image_tower(const DualEncoder& model, const std::string& architecture);

struct RetrievalMetrics {
    std::map<int, double> ir_at;
    std::map<int, double> tr_at;
    double alignment_score = 0.0;
    int n_queries = 0;          // caption (text-to-image) queries
    int n_image_queries = 0;

    // Fractions in [0,1] and nondecreasing in K.
    void validate() const;
};

inline const std::vector<int> kDefaultKs{1, 5, 10};

// scores[q][j]: similarity of caption q to image j; owner[q]: index of q's image.
// Ties rank the lower index first.
RetrievalMetrics compute_retrieval_from_scores(const Tensor& scores, std::span<const int> owner, std::span<const int> ks);

RetrievalMetrics compute_retrieval(const DualEncoder& model, std::span<const ImageTextPair> validation,
                                   std::span<const int> ks = kDefaultKs);

// Mean cosine between each image and each of its own captions.
double alignment_score(const DualEncoder& model, std::span<const ImageTextPair> pairs);

struct MetricStats {
    std::map<int, double> ir_mean, ir_std, tr_mean, tr_std;
    double alignment_mean = 0.0;
    double alignment_std = 0.0;
};

struct PipelineReport {
    std::vector<std::uint64_t> seeds;
    std::vector<RetrievalMetrics> per_seed;
    MetricStats aggregate;
};

// Sample standard deviation; zero for a single value.
MetricStats aggregate_metrics(std::span<const RetrievalMetrics> runs);

PipelineReport evaluate_pipeline(const DistilledDataset& distilled, std::span<const ImageTextPair> validation,
                                 const DualEncoderConfig& config, std::span<const std::uint64_t> seeds,
                                 std::span<const int> ks = kDefaultKs);

}  // namespace edge
