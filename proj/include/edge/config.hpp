#pragma once
// Experiment configuration: one INI-style file with a section per pipeline stage.
//
//   [run]        out_dir, run_id, seed
//   [corpus]     manifest | toy_images, toy_captions, toy_seed, image_size
//   [validation] manifest | toy_images, toy_captions, toy_seed
//   [model]      diffusion architecture, init_seed, pretrained checkpoint
//   [pretrain]   denoising pretraining of the starting model
//   [train]      EDGE fine-tuning
//   [synthesis]  pair_count, cpi, sampler_steps, rephrase
//   [captioner]  kind, endpoint, retries, backoff_ms, timeout_ms, prompt, max_in_flight
//   [eval]       dual-encoder settings, seeds, ks

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "edge/caption.hpp"
#include "edge/diffusion.hpp"
#include "edge/distiller.hpp"
#include "edge/retrieval.hpp"

namespace edge {

inline constexpr const char* kCaptionerEndpointEnv = "EDGE_CAPTIONER_ENDPOINT";

struct CorpusSource {
    std::filesystem::path manifest;  // empty -> generate the toy corpus
    int toy_images = 256;
    int toy_captions = 5;
    std::uint64_t toy_seed = 0;
};

struct PretrainConfig {
    std::filesystem::path checkpoint;  // non-empty -> load instead of training
    int epochs = 200;
    double learning_rate = 2e-3;
    int batch_size = 16;
    OptimizerKind optimizer = OptimizerKind::adam;
    double snr_cap = 20.0;
};

struct SynthesisConfig {
    int pair_count = 100;
    int cpi = 2;
    int sampler_steps = 50;
    bool rephrase = false;
};

struct CaptionerConfig {
    std::string kind = "template";  // template | mllm
    MllmClientConfig client;
    std::string prompt = "llava_style";
    int max_in_flight = 4;
};

struct EvalConfig {
    DualEncoderConfig encoder;
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::vector<int> ks{1, 5, 10};
};

struct ExperimentConfig {
    std::filesystem::path out_dir = "runs";
    std::string run_id = "run";
    std::uint64_t seed = 0;
    int image_size = 16;
    CorpusSource corpus;
    CorpusSource validation{{}, 100, 5, 1};
    DiffusionConfig model;
    std::uint64_t model_init_seed = 0;
    PretrainConfig pretrain;
    TrainConfig train;
    SynthesisConfig synthesis;
    CaptionerConfig captioner;
    EvalConfig eval;

    std::filesystem::path run_dir() const { return out_dir / run_id; }
    void validate() const;
};

// Parses the file, applies `overrides` ("section.key" -> value) and the captioner
// endpoint environment variable. Unknown sections/keys are errors.
ExperimentConfig load_config(const std::filesystem::path& path, const std::map<std::string, std::string>& overrides = {});
ExperimentConfig parse_config(const std::string& text, const std::map<std::string, std::string>& overrides = {});
// Flat "section.key" -> value view; parse_config(render_config(c)) reproduces c.
std::map<std::string, std::string> flatten_config(const ExperimentConfig& config);
std::string render_config(const ExperimentConfig& config);

std::vector<std::uint64_t> parse_seed_list(const std::string& text);
std::vector<int> parse_int_list(const std::string& text);

}  // namespace edge
