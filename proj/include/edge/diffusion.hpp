#pragma once
// Tiny conditional latent diffusion: schedule, forward noising, denoised-latent
// reconstruction, a conditional U-Net noise predictor and DDPM ancestral sampling.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "edge/autograd.hpp"
#include "edge/image_io.hpp"
#include "edge/text_encoder.hpp"

namespace edge {

struct NoiseSchedule {
    // Cumulative signal fraction per timestep; strictly decreasing inside (0,1).
    std::vector<double> alpha_bar;

    static NoiseSchedule cosine(int timesteps);
    static NoiseSchedule from_alpha_bar(std::vector<double> alpha_bar);

    int timesteps() const { return static_cast<int>(alpha_bar.size()); }
    void validate() const;
    void check_timestep(int t) const;
    double signal_scale(int t) const;  // sqrt(alpha_bar[t])
    double noise_scale(int t) const;   // sqrt(1 - alpha_bar[t])
};

struct LatentBatch {
    Tensor z;               // noised latents z_t
    std::vector<int> t;     // one timestep per sample
    Tensor eps;             // the Gaussian noise that produced z
};

// z_t = sqrt(ab_t) z0 + sqrt(1 - ab_t) eps, eps ~ N(0, I) drawn from rng.
LatentBatch forward_noise(const Tensor& z0, std::span<const int> t, const NoiseSchedule& schedule, Rng& rng);
LatentBatch forward_noise_with(const Tensor& z0, std::span<const int> t, const Tensor& eps, const NoiseSchedule& schedule);

// z = (z_t - sqrt(1 - ab_t) eps_hat) / sqrt(ab_t); the exact inverse of forward noising.
Tensor reconstruct_latent(const Tensor& z_t, const Tensor& eps_hat, std::span<const int> t, const NoiseSchedule& schedule);

enum class CodecMode { identity, autoencoder };

// What the U-Net head regresses. With `v` the head output v is turned into the
// noise estimate as eps = sqrt(1 - ab) z_t + sqrt(ab) v, so predict_noise always
// returns a noise estimate.
enum class Prediction { epsilon, v };

Prediction parse_prediction(const std::string& name);
std::string prediction_name(Prediction p);

CodecMode parse_codec(const std::string& name);
std::string codec_name(CodecMode mode);

struct DiffusionConfig {
    int image_channels = 3;
    int image_size = 16;
    CodecMode codec = CodecMode::identity;
    int patch = 2;
    int ae_latent_channels = 8;
    int ae_hidden = 32;
    int cond_dim = 32;
    int text_buckets = 1024;
    int base_channels = 32;
    int time_features = 16;
    int emb_dim = 64;
    // Spatial grid the denoised latent is average-pooled to before the image
    // embedding projection; 1 is a global mean.
    int edge_pool_grid = 1;
    // Channels of a latent-resolution map projected from the condition and
    // concatenated to the noisy latent; 0 disables it.
    int cond_map_channels = 4;
    int timesteps = 100;
    bool clip_denoised = true;
    Prediction prediction = Prediction::v;

    int latent_channels() const;
    int latent_size() const { return image_size / patch; }
    int latent_dim() const { return latent_channels() * latent_size() * latent_size(); }
    void validate() const;
    bool operator==(const DiffusionConfig&) const = default;
};

class DiffusionModel {
public:
    DiffusionModel(DiffusionConfig config, std::uint64_t init_seed);
    // Rebuild from stored parameters (checkpoint loading).
    DiffusionModel(DiffusionConfig config, NoiseSchedule schedule, ParamMap params);

    const DiffusionConfig& config() const { return config_; }
    const NoiseSchedule& schedule() const { return schedule_; }
    ParamMap& params() { return params_; }
    const ParamMap& params() const { return params_; }
    TextEncoderSpec text_spec() const { return {"text", config_.text_buckets, config_.cond_dim}; }
    std::vector<int> latent_shape(int batch) const;

    // Images -> [N, C_lat, h, w] and back. Decoding snaps to the 8-bit grid.
    Tensor encode_images(std::span<const Image> images) const;
    Tensor encode_image(const Image& image) const;
    std::vector<Image> decode_latents(const Tensor& z) const;
    Image decode_latent(const Tensor& z) const;

    // Condition embeddings y [N, cond_dim].
    Tensor encode_text(const std::vector<std::string>& captions) const;
    Var encode_text(Tape& tape, const std::vector<std::string>& captions);

    Var predict_noise(Tape& tape, Var z_t, std::span<const int> t, Var y);
    Tensor predict_noise(const Tensor& z_t, std::span<const int> t, const Tensor& y) const;

    // Denoised latent as a differentiable function of eps_hat.
    Var reconstruct(Tape& tape, const Tensor& z_t, Var eps_hat, std::span<const int> t) const;
    // Pool + linear projection into the text-embedding space (raw, unnormalized).
    Var image_embedding(Tape& tape, Var z);
    Tensor image_embedding(const Tensor& z) const;

    // Ancestral sampling over `steps` evenly spaced timesteps, starting at T-1.
    // Every row draws its noise from rngs[row].
    Tensor sample(const Tensor& y, int steps, std::span<Rng> rngs) const;
    Tensor sample(const Tensor& y, int steps, Rng& rng) const;

    // Autoencoder-mode codec training on pixel reconstruction; returns per-epoch MSE.
    std::vector<double> train_autoencoder(std::span<const Image> images, int epochs, double learning_rate,
                                          std::uint64_t seed);
    double reconstruction_mse(std::span<const Image> images) const;

private:
    using ParamFn = std::function<Var(const std::string&)>;
    Var unet(Tape& tape, const ParamFn& p, Var z_t, std::span<const int> t, Var y) const;
    Var ae_encode(Tape& tape, const ParamFn& p, Var patches) const;
    Var ae_decode(Tape& tape, const ParamFn& p, Var z) const;
    ParamFn tracked(Tape& tape);
    ParamFn frozen(Tape& tape) const;

    Tensor patchify(std::span<const Image> images) const;
    std::vector<Image> unpatchify(const Tensor& patches) const;

    DiffusionConfig config_;
    NoiseSchedule schedule_;
    ParamMap params_;
};

// Free-function form of DiffusionModel::sample with an explicit schedule check.
Tensor sample(const DiffusionModel& model, const Tensor& y, const NoiseSchedule& schedule, int steps, Rng& rng);

std::vector<int> sampling_timesteps(int timesteps, int steps);

}  // namespace edge
