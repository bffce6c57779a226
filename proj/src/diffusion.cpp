#include "edge/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "edge/errors.hpp"
#include "edge/kernels.hpp"
#include "edge/optimizer.hpp"

namespace edge {

// ---------------------------------------------------------------- schedule

NoiseSchedule NoiseSchedule::cosine(int timesteps) {
    if (timesteps < 1) throw ConfigError("schedule needs at least one timestep");
    constexpr double s = 0.008;
    auto f = [&](double u) {
        const double c = std::cos((u / timesteps + s) / (1.0 + s) * std::numbers::pi / 2.0);
        return c * c;
    };
    NoiseSchedule sch;
    sch.alpha_bar.resize(static_cast<std::size_t>(timesteps));
    double prod = 1.0;
    for (int t = 0; t < timesteps; ++t) {
        const double beta = std::min(1.0 - f(t + 1) / f(t), 0.999);
        prod *= 1.0 - beta;
        sch.alpha_bar[static_cast<std::size_t>(t)] = prod;
    }
    sch.validate();
    return sch;
}

NoiseSchedule NoiseSchedule::from_alpha_bar(std::vector<double> alpha_bar) {
    NoiseSchedule s{std::move(alpha_bar)};
    s.validate();
    return s;
}

void NoiseSchedule::validate() const {
    if (alpha_bar.empty()) throw ValidationError("noise schedule is empty");
    for (std::size_t t = 0; t < alpha_bar.size(); ++t) {
        if (!(alpha_bar[t] > 0.0 && alpha_bar[t] < 1.0))
            throw ValidationError("alpha_bar[" + std::to_string(t) + "] outside (0,1)");
        if (t > 0 && !(alpha_bar[t] < alpha_bar[t - 1]))
            throw ValidationError("alpha_bar not strictly decreasing at t=" + std::to_string(t));
    }
}

void NoiseSchedule::check_timestep(int t) const {
    if (t < 0 || t >= timesteps())
        throw IndexError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(timesteps()) + ")");
}

double NoiseSchedule::signal_scale(int t) const {
    check_timestep(t);
    return std::sqrt(alpha_bar[static_cast<std::size_t>(t)]);
}

double NoiseSchedule::noise_scale(int t) const {
    check_timestep(t);
    return std::sqrt(1.0 - alpha_bar[static_cast<std::size_t>(t)]);
}

// ---------------------------------------------------------------- noising

namespace {

std::size_t batch_of(const Tensor& z, std::span<const int> t, const char* what) {
    if (z.rank() == 0 || z.shape[0] < 0) throw ConfigError(std::string(what) + ": latent needs a batch dimension");
    const auto n = static_cast<std::size_t>(z.shape[0]);
    if (t.size() != n)
        throw ConfigError(std::string(what) + ": " + std::to_string(t.size()) + " timesteps for batch of " + std::to_string(n));
    return n;
}

}  // namespace

LatentBatch forward_noise_with(const Tensor& z0, std::span<const int> t, const Tensor& eps, const NoiseSchedule& schedule) {
    const std::size_t n = batch_of(z0, t, "forward_noise");
    if (!z0.same_shape(eps)) throw ConfigError("forward_noise: noise shape " + shape_str(eps.shape) + " vs latent " + shape_str(z0.shape));
    LatentBatch b{Tensor(z0.shape), {t.begin(), t.end()}, eps};
    for (std::size_t i = 0; i < n; ++i) {
        const double a = schedule.signal_scale(t[i]);
        const double s = schedule.noise_scale(t[i]);
        auto zi = z0.row(i);
        auto ei = eps.row(i);
        auto out = b.z.row(i);
        for (std::size_t k = 0; k < zi.size(); ++k) out[k] = a * zi[k] + s * ei[k];
    }
    return b;
}

LatentBatch forward_noise(const Tensor& z0, std::span<const int> t, const NoiseSchedule& schedule, Rng& rng) {
    batch_of(z0, t, "forward_noise");
    for (int ti : t) schedule.check_timestep(ti);
    return forward_noise_with(z0, t, Tensor::randn(z0.shape, rng), schedule);
}

Tensor reconstruct_latent(const Tensor& z_t, const Tensor& eps_hat, std::span<const int> t, const NoiseSchedule& schedule) {
    const std::size_t n = batch_of(z_t, t, "reconstruct_latent");
    if (!z_t.same_shape(eps_hat))
        throw ConfigError("reconstruct_latent: noise estimate " + shape_str(eps_hat.shape) + " vs latent " + shape_str(z_t.shape));
    Tensor z(z_t.shape);
    for (std::size_t i = 0; i < n; ++i) {
        const double a = schedule.signal_scale(t[i]);
        const double s = schedule.noise_scale(t[i]);
        auto zi = z_t.row(i);
        auto ei = eps_hat.row(i);
        auto out = z.row(i);
        for (std::size_t k = 0; k < zi.size(); ++k) out[k] = (zi[k] - s * ei[k]) / a;
    }
    return z;
}

std::vector<int> sampling_timesteps(int timesteps, int steps) {
    if (steps < 1) throw ConfigError("sampler needs at least one step");
    if (steps > timesteps)
        throw ConfigError("sampler steps " + std::to_string(steps) + " exceed schedule length " + std::to_string(timesteps));
    std::vector<int> ts;
    if (steps == 1) return {timesteps - 1};
    for (int i = 0; i < steps; ++i)
        ts.push_back(static_cast<int>(std::lround(static_cast<double>(i) * (timesteps - 1) / (steps - 1))));
    ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
    return ts;
}

// ---------------------------------------------------------------- config

Prediction parse_prediction(const std::string& name) {
    if (name == "epsilon") return Prediction::epsilon;
    if (name == "v") return Prediction::v;
    throw ConfigError("unknown prediction target '" + name + "' (expected epsilon or v)");
}

std::string prediction_name(Prediction p) { return p == Prediction::epsilon ? "epsilon" : "v"; }

CodecMode parse_codec(const std::string& name) {
    if (name == "identity") return CodecMode::identity;
    if (name == "autoencoder") return CodecMode::autoencoder;
    throw ConfigError("unknown codec '" + name + "' (expected identity or autoencoder)");
}

std::string codec_name(CodecMode mode) { return mode == CodecMode::identity ? "identity" : "autoencoder"; }

int DiffusionConfig::latent_channels() const {
    return codec == CodecMode::identity ? image_channels * patch * patch : ae_latent_channels;
}

void DiffusionConfig::validate() const {
    if (image_channels != 1 && image_channels != 3) throw ConfigError("image_channels must be 1 or 3");
    if (patch < 1 || image_size % patch) throw ConfigError("patch size must divide image_size");
    if (latent_size() % 2) throw ConfigError("latent spatial size must be even for the U-Net down/up path");
    if (edge_pool_grid < 1 || latent_size() % edge_pool_grid) throw ConfigError("edge_pool_grid must divide the latent size");
    if (cond_dim < 1 || base_channels < 1 || emb_dim < 1 || time_features < 2 || time_features % 2)
        throw ConfigError("model widths must be positive (time_features even)");
    if (timesteps < 1) throw ConfigError("timesteps must be positive");
    if (cond_map_channels < 0) throw ConfigError("cond_map_channels must be non-negative");
    if (codec == CodecMode::autoencoder && (ae_latent_channels < 1 || ae_hidden < 1))
        throw ConfigError("autoencoder widths must be positive");
}

// ---------------------------------------------------------------- model

namespace {

void add_conv(ParamMap& params, const std::string& name, int in, int out, int k, Rng& rng, double gain = 1.0) {
    const int fan_in = in * k * k;
    add_param(params, name + ".weight", Tensor::randn({out, fan_in}, rng, gain / std::sqrt(static_cast<double>(fan_in))));
    add_param(params, name + ".bias", Tensor::zeros({out}));
}

void add_linear(ParamMap& params, const std::string& name, int in, int out, Rng& rng, double gain = 1.0) {
    add_param(params, name + ".weight", Tensor::randn({out, in}, rng, gain / std::sqrt(static_cast<double>(in))));
    add_param(params, name + ".bias", Tensor::zeros({out}));
}

}  // namespace

DiffusionModel::DiffusionModel(DiffusionConfig config, std::uint64_t init_seed)
    : config_(config), schedule_(NoiseSchedule::cosine(config.timesteps)) {
    config_.validate();
    Rng rng(init_seed);
    const int c = config_.base_channels;
    const int cl = config_.latent_channels();
    if (config_.codec == CodecMode::autoencoder) {
        const int pc = config_.image_channels * config_.patch * config_.patch;
        add_conv(params_, "codec.enc1", pc, config_.ae_hidden, 1, rng);
        add_conv(params_, "codec.enc2", config_.ae_hidden, cl, 1, rng);
        add_conv(params_, "codec.dec1", cl, config_.ae_hidden, 1, rng);
        add_conv(params_, "codec.dec2", config_.ae_hidden, pc, 1, rng);
    }
    init_text_encoder(params_, text_spec(), rng, 1.0);
    add_linear(params_, "unet.time_proj", config_.time_features, config_.emb_dim, rng);
    add_linear(params_, "unet.cond_proj", config_.cond_dim, config_.emb_dim, rng);
    add_linear(params_, "unet.emb_to1", config_.emb_dim, c, rng);
    add_linear(params_, "unet.emb_to2", config_.emb_dim, 2 * c, rng);
    const int ls = config_.latent_size();
    if (config_.cond_map_channels > 0)
        add_linear(params_, "unet.cond_map", config_.cond_dim, config_.cond_map_channels * ls * ls, rng);
    add_conv(params_, "unet.conv_in", cl + config_.cond_map_channels, c, 3, rng);
    add_conv(params_, "unet.conv1", c, c, 3, rng);
    add_conv(params_, "unet.down", c, 2 * c, 3, rng);
    add_conv(params_, "unet.mid", 2 * c, 2 * c, 3, rng);
    add_conv(params_, "unet.up", 3 * c, c, 3, rng);
    add_conv(params_, "unet.conv_out", c, cl, 3, rng, 0.1);
    const int g = config_.edge_pool_grid;
    add_linear(params_, "edge_proj", cl * g * g, config_.cond_dim, rng);
}

DiffusionModel::DiffusionModel(DiffusionConfig config, NoiseSchedule schedule, ParamMap params)
    : config_(config), schedule_(std::move(schedule)), params_(std::move(params)) {
    config_.validate();
    schedule_.validate();
    if (schedule_.timesteps() != config_.timesteps) throw ConfigError("schedule length does not match config timesteps");
    const DiffusionModel reference(config_, 0);
    for (const auto& [name, p] : reference.params_) {
        auto it = params_.find(name);
        if (it == params_.end()) throw ConfigError("missing parameter '" + name + "'");
        if (it->second.value.shape != p.value.shape)
            throw ConfigError("parameter '" + name + "' has shape " + shape_str(it->second.value.shape) + ", expected " +
                              shape_str(p.value.shape));
    }
    if (params_.size() != reference.params_.size()) throw ConfigError("unexpected extra parameters in model");
}

std::vector<int> DiffusionModel::latent_shape(int batch) const {
    return {batch, config_.latent_channels(), config_.latent_size(), config_.latent_size()};
}

DiffusionModel::ParamFn DiffusionModel::tracked(Tape& tape) {
    return [this, &tape](const std::string& name) { return tape.param(params_.at(name)); };
}

DiffusionModel::ParamFn DiffusionModel::frozen(Tape& tape) const {
    return [this, &tape](const std::string& name) { return tape.constant(params_.at(name).value); };
}

Tensor DiffusionModel::patchify(std::span<const Image> images) const {
    const int C = config_.image_channels, S = config_.image_size, p = config_.patch, h = S / p;
    const int PC = C * p * p;
    Tensor out({static_cast<int>(images.size()), PC, h, h});
    for (std::size_t n = 0; n < images.size(); ++n) {
        const Image& img = images[n];
        if (img.channels != C || img.height != S || img.width != S)
            throw ConfigError("image " + std::to_string(img.channels) + "x" + std::to_string(img.height) + "x" +
                              std::to_string(img.width) + " does not match model input " + std::to_string(C) + "x" +
                              std::to_string(S) + "x" + std::to_string(S));
        auto row = out.row(n);
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < S; ++y)
                for (int x = 0; x < S; ++x) {
                    const int ch = c * p * p + (y % p) * p + (x % p);
                    row[(static_cast<std::size_t>(ch) * h + y / p) * h + x / p] = 2.0 * img.at(c, y, x) - 1.0;
                }
    }
    return out;
}

std::vector<Image> DiffusionModel::unpatchify(const Tensor& z) const {
    const int C = config_.image_channels, S = config_.image_size, p = config_.patch, h = S / p;
    const int PC = C * p * p;
    if (z.rank() != 4 || z.dim(1) != PC || z.dim(2) != h || z.dim(3) != h)
        throw ConfigError("patch tensor " + shape_str(z.shape) + " does not match model geometry");
    std::vector<Image> out;
    for (int n = 0; n < z.dim(0); ++n) {
        Image img = Image::blank(C, S, S);
        auto row = z.row(static_cast<std::size_t>(n));
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < S; ++y)
                for (int x = 0; x < S; ++x) {
                    const int ch = c * p * p + (y % p) * p + (x % p);
                    img.at(c, y, x) = (row[(static_cast<std::size_t>(ch) * h + y / p) * h + x / p] + 1.0) / 2.0;
                }
        out.push_back(quantize(std::move(img)));
    }
    return out;
}

Var DiffusionModel::ae_encode(Tape& tape, const ParamFn& p, Var patches) const {
    Var h = ops::silu(tape, ops::conv2d(tape, patches, p("codec.enc1.weight"), p("codec.enc1.bias"), 1));
    return ops::conv2d(tape, h, p("codec.enc2.weight"), p("codec.enc2.bias"), 1);
}

Var DiffusionModel::ae_decode(Tape& tape, const ParamFn& p, Var z) const {
    Var h = ops::silu(tape, ops::conv2d(tape, z, p("codec.dec1.weight"), p("codec.dec1.bias"), 1));
    return ops::conv2d(tape, h, p("codec.dec2.weight"), p("codec.dec2.bias"), 1);
}

Tensor DiffusionModel::encode_images(std::span<const Image> images) const {
    Tensor patches = patchify(images);
    if (config_.codec == CodecMode::identity) return patches;
    Tape tape;
    return tape.value(ae_encode(tape, frozen(tape), tape.constant(std::move(patches))));
}

Tensor DiffusionModel::encode_image(const Image& image) const { return encode_images(std::span<const Image>(&image, 1)); }

std::vector<Image> DiffusionModel::decode_latents(const Tensor& z) const {
    if (z.rank() != 4 || z.dim(1) != config_.latent_channels() || z.dim(2) != config_.latent_size() ||
        z.dim(3) != config_.latent_size())
        throw ConfigError("latent " + shape_str(z.shape) + " does not match configured latent shape " + shape_str(latent_shape(-1)));
    if (config_.codec == CodecMode::identity) return unpatchify(z);
    Tape tape;
    return unpatchify(tape.value(ae_decode(tape, frozen(tape), tape.constant(z))));
}

Image DiffusionModel::decode_latent(const Tensor& z) const {
    auto imgs = decode_latents(z);
    if (imgs.size() != 1) throw ConfigError("decode_latent expects a single latent");
    return imgs.front();
}

Tensor DiffusionModel::encode_text(const std::vector<std::string>& captions) const {
    return text_embed(params_, text_spec(), captions);
}

Var DiffusionModel::encode_text(Tape& tape, const std::vector<std::string>& captions) {
    return text_forward(tape, params_, text_spec(), captions);
}

Var DiffusionModel::unet(Tape& tape, const ParamFn& p, Var z_t, std::span<const int> t, Var y) const {
    const Tensor& Z = tape.value(z_t);
    const Tensor& Y = tape.value(y);
    if (Z.rank() != 4 || Z.dim(1) != config_.latent_channels() || Z.dim(2) != config_.latent_size() ||
        Z.dim(3) != config_.latent_size())
        throw ConfigError("noise predictor input " + shape_str(Z.shape) + " does not match latent shape " +
                          shape_str(latent_shape(Z.rank() ? Z.dim(0) : 0)));
    const int N = Z.dim(0);
    if (Y.rank() != 2 || Y.dim(0) != N || Y.dim(1) != config_.cond_dim)
        throw ConfigError("condition embedding " + shape_str(Y.shape) + " does not match batch " + std::to_string(N) +
                          " x cond_dim " + std::to_string(config_.cond_dim));
    if (static_cast<int>(t.size()) != N) throw ConfigError("noise predictor: one timestep per sample required");
    for (double v : Y.data)
        if (!std::isfinite(v)) throw ValidationError("condition embedding has non-finite entries");

    const int F = config_.time_features, half = F / 2;
    Tensor tf({N, F});
    for (int n = 0; n < N; ++n) {
        schedule_.check_timestep(t[static_cast<std::size_t>(n)]);
        for (int k = 0; k < half; ++k) {
            const double freq = std::exp(-std::log(1000.0) * k / half);
            const double arg = t[static_cast<std::size_t>(n)] * freq;
            tf.data[static_cast<std::size_t>(n) * F + k] = std::sin(arg);
            tf.data[static_cast<std::size_t>(n) * F + half + k] = std::cos(arg);
        }
    }
    Var tfv = tape.constant(std::move(tf));
    Var emb = ops::silu(tape, ops::add(tape, ops::linear(tape, tfv, p("unet.time_proj.weight"), p("unet.time_proj.bias")),
                                       ops::linear(tape, y, p("unet.cond_proj.weight"), p("unet.cond_proj.bias"))));
    auto conv = [&](Var x, const std::string& name) {
        return ops::conv2d(tape, x, p(name + ".weight"), p(name + ".bias"), 3);
    };
    Var input = z_t;
    if (config_.cond_map_channels > 0) {
        const int ls = config_.latent_size();
        Var m = ops::linear(tape, y, p("unet.cond_map.weight"), p("unet.cond_map.bias"));
        input = ops::concat_channels(tape, z_t, ops::reshape(tape, m, {N, config_.cond_map_channels, ls, ls}));
    }
    Var h = conv(input, "unet.conv_in");
    h = ops::silu(tape, ops::add_channel(tape, h, ops::linear(tape, emb, p("unet.emb_to1.weight"), p("unet.emb_to1.bias"))));
    Var skip = ops::silu(tape, conv(h, "unet.conv1"));
    Var d = conv(ops::avg_pool2(tape, skip), "unet.down");
    d = ops::silu(tape, ops::add_channel(tape, d, ops::linear(tape, emb, p("unet.emb_to2.weight"), p("unet.emb_to2.bias"))));
    d = ops::silu(tape, conv(d, "unet.mid"));
    Var u = ops::concat_channels(tape, ops::upsample2(tape, d), skip);
    u = ops::silu(tape, conv(u, "unet.up"));
    Var head = conv(u, "unet.conv_out");
    if (config_.prediction == Prediction::epsilon) return head;
    std::vector<double> cz(static_cast<std::size_t>(N)), cv(static_cast<std::size_t>(N));
    for (std::size_t n = 0; n < cz.size(); ++n) {
        cz[n] = schedule_.noise_scale(t[n]);
        cv[n] = schedule_.signal_scale(t[n]);
    }
    return ops::row_combine(tape, z_t, std::move(cz), head, std::move(cv));
}

Var DiffusionModel::predict_noise(Tape& tape, Var z_t, std::span<const int> t, Var y) {
    return unet(tape, tracked(tape), z_t, t, y);
}

Tensor DiffusionModel::predict_noise(const Tensor& z_t, std::span<const int> t, const Tensor& y) const {
    Tape tape;
    Var out = unet(tape, frozen(tape), tape.constant(z_t), t, tape.constant(y));
    return tape.value(out);
}

Var DiffusionModel::reconstruct(Tape& tape, const Tensor& z_t, Var eps_hat, std::span<const int> t) const {
    Tensor z = reconstruct_latent(z_t, tape.value(eps_hat), t, schedule_);
    std::vector<double> coef(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) coef[i] = -schedule_.noise_scale(t[i]) / schedule_.signal_scale(t[i]);
    Var out{static_cast<int>(tape.size())};
    return tape.make(std::move(z), tape.requires_grad(eps_hat), [=](Tape& tp) {
        const Tensor& dz = tp.grad(out);
        Tensor& de = tp.grad(eps_hat);
        for (std::size_t i = 0; i < coef.size(); ++i) kernels::axpy(coef[i], dz.row(i), de.row(i));
    });
}

Var DiffusionModel::image_embedding(Tape& tape, Var z) {
    Var pooled = ops::pool_grid(tape, z, config_.edge_pool_grid);
    return ops::linear(tape, pooled, tape.param(params_.at("edge_proj.weight")), tape.param(params_.at("edge_proj.bias")));
}

Tensor DiffusionModel::image_embedding(const Tensor& z) const {
    Tape tape;
    Var pooled = ops::pool_grid(tape, tape.constant(z), config_.edge_pool_grid);
    auto p = frozen(tape);
    return tape.value(ops::linear(tape, pooled, p("edge_proj.weight"), p("edge_proj.bias")));
}

Tensor DiffusionModel::sample(const Tensor& y, int steps, std::span<Rng> rngs) const {
    if (y.rank() != 2 || y.dim(1) != config_.cond_dim)
        throw ConfigError("sample: condition " + shape_str(y.shape) + " does not match cond_dim " + std::to_string(config_.cond_dim));
    const int N = y.dim(0);
    if (rngs.size() != static_cast<std::size_t>(N)) throw ConfigError("sample: one randomness source per row required");
    const auto ts = sampling_timesteps(schedule_.timesteps(), steps);
    Tensor z(latent_shape(N));
    for (int n = 0; n < N; ++n) fill_normal(z.row(static_cast<std::size_t>(n)), rngs[static_cast<std::size_t>(n)]);
    std::vector<int> tvec(static_cast<std::size_t>(N));
    for (std::size_t i = ts.size(); i-- > 0;) {
        const int t = ts[i];
        const double ab = schedule_.alpha_bar[static_cast<std::size_t>(t)];
        const double ab_prev = i > 0 ? schedule_.alpha_bar[static_cast<std::size_t>(ts[i - 1])] : 1.0;
        std::fill(tvec.begin(), tvec.end(), t);
        const Tensor eps_hat = predict_noise(z, tvec, y);
        Tensor x0 = reconstruct_latent(z, eps_hat, tvec, schedule_);
        if (config_.clip_denoised && config_.codec == CodecMode::identity)
            for (double& v : x0.data) v = std::clamp(v, -1.0, 1.0);
        if (i == 0) return x0;
        const double alpha = ab / ab_prev;
        const double beta = 1.0 - alpha;
        const double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
        const double ct = std::sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab);
        const double sigma = std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab));
        for (int n = 0; n < N; ++n) {
            auto zr = z.row(static_cast<std::size_t>(n));
            auto xr = x0.row(static_cast<std::size_t>(n));
            std::normal_distribution<double> nd(0.0, 1.0);
            Rng& rng = rngs[static_cast<std::size_t>(n)];
            for (std::size_t k = 0; k < zr.size(); ++k) zr[k] = c0 * xr[k] + ct * zr[k] + sigma * nd(rng);
        }
    }
    return z;
}

Tensor DiffusionModel::sample(const Tensor& y, int steps, Rng& rng) const {
    const int N = y.rank() == 2 ? y.dim(0) : 0;
    std::vector<Rng> rngs;
    for (int n = 0; n < N; ++n) rngs.emplace_back(rng());
    return sample(y, steps, rngs);
}

Tensor sample(const DiffusionModel& model, const Tensor& y, const NoiseSchedule& schedule, int steps, Rng& rng) {
    if (schedule.alpha_bar != model.schedule().alpha_bar)
        throw ConfigError("sample: schedule differs from the model's training schedule");
    return model.sample(y, steps, rng);
}

std::vector<double> DiffusionModel::train_autoencoder(std::span<const Image> images, int epochs, double learning_rate,
                                                      std::uint64_t seed) {
    if (config_.codec != CodecMode::autoencoder) throw ConfigError("train_autoencoder requires the autoencoder codec");
    if (images.empty()) throw ConfigError("train_autoencoder: no images");
    Rng rng(seed);
    Optimizer opt(OptimizerKind::adam, learning_rate);
    std::vector<std::size_t> order(images.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> history;
    constexpr std::size_t batch = 16;
    // The optimizer sees only codec entries; they are moved out and back so the
    // rest of the model stays untouched.
    ParamMap codec_params;
    for (auto it = params_.begin(); it != params_.end();) {
        if (it->first.rfind("codec.", 0) == 0) {
            codec_params.insert(params_.extract(it++));
        } else {
            ++it;
        }
    }
    struct Restore {
        ParamMap& dst;
        ParamMap& src;
        ~Restore() { dst.merge(src); }
    } restore{params_, codec_params};
    for (int e = 0; e < epochs; ++e) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        for (std::size_t b = 0; b < order.size(); b += batch) {
            std::vector<Image> imgs;
            for (std::size_t i = b; i < std::min(order.size(), b + batch); ++i) imgs.push_back(images[order[i]]);
            Tensor target = patchify(imgs);
            opt.zero_grad(codec_params);
            Tape tape;
            ParamFn p = [&](const std::string& name) { return tape.param(codec_params.at(name)); };
            Var rec = ae_decode(tape, p, ae_encode(tape, p, tape.constant(target)));
            const Tensor& R = tape.value(rec);
            Tensor g(R.shape);
            double loss = 0.0;
            for (std::size_t k = 0; k < R.data.size(); ++k) {
                const double d = R.data[k] - target.data[k];
                loss += d * d;
                g.data[k] = 2.0 * d / static_cast<double>(R.data.size());
            }
            total += loss / static_cast<double>(R.data.size()) * static_cast<double>(imgs.size());
            tape.seed(rec, g);
            tape.backward();
            opt.step(codec_params);
        }
        history.push_back(total / static_cast<double>(images.size()));
    }
    return history;
}

double DiffusionModel::reconstruction_mse(std::span<const Image> images) const {
    const auto rec = decode_latents(encode_images(images));
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < images.size(); ++i)
        for (std::size_t k = 0; k < images[i].pixels.size(); ++k) {
            const double d = rec[i].pixels[k] - images[i].pixels[k];
            s += d * d;
            ++n;
        }
    return n ? s / static_cast<double>(n) : 0.0;
}

}  // namespace edge
