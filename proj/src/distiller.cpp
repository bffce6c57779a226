#include "edge/distiller.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "edge/errors.hpp"

namespace edge {

LossMask parse_loss_mask(const std::string& name) {
    for (LossMask m : all_loss_masks())
        if (loss_mask_name(m) == name) return m;
    throw ConfigError("unknown loss mask '" + name +
                      "' (expected mse_only, plus_contrastive, plus_contrastive_diversity or edge_plus_caption_synthesis)");
}

std::string loss_mask_name(LossMask mask) {
    switch (mask) {
        case LossMask::mse_only: return "mse_only";
        case LossMask::plus_contrastive: return "plus_contrastive";
        case LossMask::plus_contrastive_diversity: return "plus_contrastive_diversity";
        case LossMask::edge_plus_caption_synthesis: return "edge_plus_caption_synthesis";
    }
    return "unknown";
}

std::vector<LossMask> all_loss_masks() {
    return {LossMask::mse_only, LossMask::plus_contrastive, LossMask::plus_contrastive_diversity,
            LossMask::edge_plus_caption_synthesis};
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
    if (batch_size < 2) throw ConfigError("train.batch_size must be at least 2 (diversity loss needs two pairs)");
    if (epochs < 1) throw ConfigError("train.epochs must be positive");
    if (!(tau > 0.0)) throw ConfigError("train.tau must be positive");
    if (!(lambda_c > 0.0) || !(lambda_d > 0.0)) throw ConfigError("train.lambda_c and train.lambda_d must be positive");
    if (mse_weight < 0.0) throw ConfigError("train.mse_weight must be non-negative");
    if (mse_snr_cap != 0.0 && !(mse_snr_cap >= 1.0)) throw ConfigError("train.mse_snr_cap must be 0 or at least 1");
}

namespace {

bool has_prefix(const std::string& name, const std::vector<std::string>& prefixes) {
    if (prefixes.empty()) return true;
    return std::any_of(prefixes.begin(), prefixes.end(), [&](const std::string& p) { return name.rfind(p, 0) == 0; });
}

// Applies trainable flags from prefixes and restores the previous flags on exit.
class TrainableScope {
public:
    TrainableScope(ParamMap& params, const std::vector<std::string>& prefixes) : params_(params) {
        for (auto& [name, p] : params_) {
            saved_.push_back(p.trainable);
            p.trainable = has_prefix(name, prefixes);
        }
    }
    ~TrainableScope() {
        std::size_t i = 0;
        for (auto& [name, p] : params_) p.trainable = saved_[i++];
    }
    TrainableScope(const TrainableScope&) = delete;
    TrainableScope& operator=(const TrainableScope&) = delete;

private:
    ParamMap& params_;
    std::vector<bool> saved_;
};

std::string describe_batch(const std::vector<std::size_t>& ids, std::span<const ImageTextPair> corpus) {
    std::ostringstream os;
    for (std::size_t i = 0; i < ids.size(); ++i) os << (i ? "," : "") << corpus[ids[i]].image_id;
    return os.str();
}

}  // namespace

TrainingLog finetune(DiffusionModel& model, std::span<const ImageTextPair> corpus, const TrainConfig& config,
                     const StepObserver& observer) {
    config.validate();
    if (corpus.empty()) throw ConfigError("finetune: corpus is empty");
    for (const auto& p : corpus) p.validate();

    TrainableScope scope(model.params(), config.trainable_prefixes);
    Optimizer opt(config.optimizer, config.learning_rate);
    Rng rng(config.seed);
    const int T = model.schedule().timesteps();
    const LossParams lp = config.loss_params();
    const bool contrastive = config.mask != LossMask::mse_only;
    const LossWeights weights = config.mask == LossMask::plus_contrastive ? LossWeights::contrastive(lp)
                                : contrastive                            ? LossWeights::edge(lp)
                                                                         : LossWeights{};
    const double mse_weight = contrastive ? config.mse_weight : 1.0;

    std::vector<Image> images;
    images.reserve(corpus.size());
    for (const auto& p : corpus) images.push_back(p.image);
    const Tensor all_z0 = model.encode_images(images);
    const std::size_t latent_row = all_z0.stride0();

    TrainingLog log;
    log.mask = config.mask;
    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::uniform_int_distribution<int> pick_t(0, T - 1);
    long step = 0;
    const auto start = std::chrono::steady_clock::now();

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(config.batch_size));
            if (e - b < 2) continue;
            std::vector<std::size_t> ids(order.begin() + static_cast<std::ptrdiff_t>(b), order.begin() + static_cast<std::ptrdiff_t>(e));
            const int N = static_cast<int>(ids.size());

            std::vector<std::string> captions;
            std::vector<int> ts;
            Tensor z0(model.latent_shape(N));
            for (int i = 0; i < N; ++i) {
                const auto& pair = corpus[ids[static_cast<std::size_t>(i)]];
                std::uniform_int_distribution<std::size_t> pick_c(0, pair.captions.size() - 1);
                captions.push_back(pair.captions[pick_c(rng)]);
                ts.push_back(pick_t(rng));
                std::copy_n(all_z0.data.begin() + static_cast<std::ptrdiff_t>(ids[static_cast<std::size_t>(i)] * latent_row),
                            latent_row, z0.data.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(i) * latent_row));
            }
            const LatentBatch noised = forward_noise(z0, ts, model.schedule(), rng);

            opt.zero_grad(model.params());
            Tape tape;
            Var y = model.encode_text(tape, captions);
            Var eps_hat = model.predict_noise(tape, tape.constant(noised.z), ts, y);
            Var z = model.reconstruct(tape, noised.z, eps_hat, ts);
            Var zemb = model.image_embedding(tape, z);

            auto fail = [&] {
                return TrainingError("non-finite loss at step " + std::to_string(step) + " (epoch " + std::to_string(epoch) +
                                     ", batch " + describe_batch(ids, corpus) + ")");
            };
            for (Var v : {eps_hat, zemb, y})
                for (double x : tape.value(v).data)
                    if (!std::isfinite(x)) throw fail();
            const EmbeddingBatch batch = EmbeddingBatch::from_raw(tape.value(zemb), tape.value(y));
            const LossGradient lg = loss_gradient(batch, lp, weights);

            const Tensor& E = tape.value(eps_hat);
            double mse = 0.0, weighted_mse = 0.0;
            Tensor d_eps(E.shape);
            const double inv_numel = 1.0 / static_cast<double>(E.data.size());
            for (int n = 0; n < N; ++n) {
                double w = 1.0;
                if (config.mse_snr_cap > 0.0) {
                    const double ab = model.schedule().alpha_bar[static_cast<std::size_t>(ts[static_cast<std::size_t>(n)])];
                    w = std::clamp((1.0 - ab) / ab, 1.0, config.mse_snr_cap);
                }
                for (std::size_t k = static_cast<std::size_t>(n) * latent_row; k < static_cast<std::size_t>(n + 1) * latent_row; ++k) {
                    const double d = E.data[k] - noised.eps.data[k];
                    mse += d * d * inv_numel;
                    weighted_mse += w * d * d * inv_numel;
                    d_eps.data[k] = mse_weight * w * 2.0 * d * inv_numel;
                }
            }
            const double objective = (contrastive ? lg.objective : 0.0) + mse_weight * weighted_mse;
            if (!std::isfinite(objective) || !std::isfinite(lg.values.l_edge)) throw fail();

            if (observer)
                observer(StepObservation{step, ids, z0, noised, E, tape.value(z), tape.value(zemb), tape.value(y)});

            if (contrastive) {
                tape.seed(zemb, lg.d_z_raw);
                tape.seed(y, lg.d_y_raw);
            }
            if (mse_weight > 0.0) tape.seed(eps_hat, d_eps);
            tape.backward();
            opt.step(model.params());

            TrainLogEntry entry;
            entry.step = step;
            entry.epoch = epoch;
            entry.loss = lg.values;
            entry.mse = mse;
            entry.objective = objective;
            entry.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
            log.entries.push_back(entry);
            ++step;
        }
    }
    return log;
}

void SynthesisRequest::validate() const {
    if (pair_count < 1) throw ValidationError("synthesis pair_count must be positive");
    if (cpi < 1) throw ValidationError("synthesis cpi must be positive");
    if (pair_count % cpi)
        throw ValidationError("pair_count " + std::to_string(pair_count) + " is not divisible by cpi " + std::to_string(cpi));
    if (sampler_steps < 1) throw ValidationError("sampler_steps must be positive");
    if (sample_batch < 1) throw ValidationError("sample_batch must be positive");
}

DistilledDataset synthesize(const DiffusionModel& model, const SynthesisRequest& request) {
    request.validate();
    if (request.sampler_steps > model.schedule().timesteps())
        throw ConfigError("sampler_steps exceed the model's schedule length");
    std::vector<std::string> distinct;
    std::set<std::string> seen;
    for (const auto& c : request.caption_source)
        if (!trim(c).empty() && seen.insert(c).second) distinct.push_back(c);
    const std::size_t need = static_cast<std::size_t>(request.image_count());
    if (distinct.size() < need)
        throw InsufficientDataError("caption source has " + std::to_string(distinct.size()) + " distinct captions, " +
                                    std::to_string(need) + " needed");
    Rng rng(request.seed);
    std::shuffle(distinct.begin(), distinct.end(), rng);
    distinct.resize(need);

    DistilledDataset out;
    out.cpi = request.cpi;
    for (std::size_t b = 0; b < need; b += static_cast<std::size_t>(request.sample_batch)) {
        const std::size_t e = std::min(need, b + static_cast<std::size_t>(request.sample_batch));
        std::vector<std::string> caps(distinct.begin() + static_cast<std::ptrdiff_t>(b), distinct.begin() + static_cast<std::ptrdiff_t>(e));
        std::vector<Rng> rngs;
        for (std::size_t i = b; i < e; ++i) rngs.emplace_back(request.seed + i);
        const Tensor y = model.encode_text(caps);
        const auto images = model.decode_latents(model.sample(y, request.sampler_steps, rngs));
        for (std::size_t i = b; i < e; ++i) {
            const std::string id = "syn_" + std::to_string(i);
            out.pairs.push_back({id, images[i - b], {caps[i - b]}});
            out.provenance.push_back({id, caps[i - b], request.seed + i, request.generator_id});
        }
    }
    return out;
}

DistilledDataset baseline_pretrained_synthesize(const DiffusionModel& pretrained, SynthesisRequest request) {
    request.generator_id = "pretrained-baseline";
    return synthesize(pretrained, request);
}

DistilledDataset baseline_random_select(std::span<const ImageTextPair> corpus, int pair_count, std::uint64_t seed) {
    if (pair_count < 1) throw ValidationError("pair_count must be positive");
    std::vector<std::pair<std::size_t, std::size_t>> all;
    for (std::size_t i = 0; i < corpus.size(); ++i)
        for (std::size_t c = 0; c < corpus[i].captions.size(); ++c) all.emplace_back(i, c);
    if (all.size() < static_cast<std::size_t>(pair_count))
        throw InsufficientDataError("corpus holds " + std::to_string(all.size()) + " pairs, " + std::to_string(pair_count) +
                                    " requested");
    Rng rng(seed);
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(static_cast<std::size_t>(pair_count));
    DistilledDataset out;
    out.cpi = 1;
    for (const auto& [i, c] : all) {
        const auto& src = corpus[i];
        const std::string id = src.image_id + "_c" + std::to_string(c);
        out.pairs.push_back({id, src.image, {src.captions[c]}});
        out.provenance.push_back({id, src.captions[c], seed, "real-random"});
    }
    return out;
}

}  // namespace edge
