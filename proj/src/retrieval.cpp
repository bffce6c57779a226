#include "edge/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "edge/edge_losses.hpp"
#include "edge/errors.hpp"
#include "edge/kernels.hpp"
#include "edge/text_encoder.hpp"

namespace edge {

namespace {

struct TowerLayout {
    int c1;
    int c2;
};

TowerLayout tower_layout(const std::string& arch) {
    if (arch == "conv_small") return {16, 32};
    if (arch == "conv_wide") return {32, 48};
    throw ConfigError("unknown image tower '" + arch + "'");
}

constexpr int kTowerGrid = 2;

TextEncoderSpec text_spec(const DualEncoderConfig& c) { return {"text", c.text_buckets, c.embed_dim}; }

void add_conv(ParamMap& params, const std::string& name, int in, int out, int k, Rng& rng) {
    const int fan_in = in * k * k;
    add_param(params, name + ".weight", Tensor::randn({out, fan_in}, rng, 1.0 / std::sqrt(static_cast<double>(fan_in))));
    add_param(params, name + ".bias", Tensor::zeros({out}));
}

}  // namespace

const std::vector<std::string>& registered_image_towers() {
    static const std::vector<std::string> towers{"conv_small", "conv_wide"};
    return towers;
}

void DualEncoderConfig::validate() const {
    tower_layout(image_arch);
    if (image_size < 4 || image_size % 4) throw ConfigError("eval.image_size must be a positive multiple of 4");
    if (embed_dim < 1 || text_buckets < 1) throw ConfigError("eval.embed_dim and eval.text_buckets must be positive");
    if (!(tau > 0.0)) throw ConfigError("eval.tau must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("eval.learning_rate must be positive");
    if (epochs < 1) throw ConfigError("eval.epochs must be positive");
    if (batch_size < 2) throw ConfigError("eval.batch_size must be at least 2");
}

DualEncoder::DualEncoder(DualEncoderConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    const TowerLayout L = tower_layout(config_.image_arch);
    Rng rng(seed);
    add_conv(params_, "image.conv1", 3, L.c1, 3, rng);
    add_conv(params_, "image.conv2", L.c1, L.c2, 3, rng);
    const int feat = L.c2 * kTowerGrid * kTowerGrid;
    add_param(params_, "image.proj.weight",
              Tensor::randn({config_.embed_dim, feat}, rng, 1.0 / std::sqrt(static_cast<double>(feat))));
    add_param(params_, "image.proj.bias", Tensor::zeros({config_.embed_dim}));
    Rng text_rng(config_.text_init_seed);
    init_text_encoder(params_, text_spec(config_), text_rng, 1.0);
    params_.at(text_spec(config_).table_name()).trainable = !config_.freeze_text;
}

std::size_t DualEncoder::image_param_count() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_)
        if (name.rfind("image.", 0) == 0) n += p.value.data.size();
    return n;
}

Tensor DualEncoder::image_input(std::span<const Image> images) const {
    const int S = config_.image_size;
    Tensor x({static_cast<int>(images.size()), 3, S, S});
    for (std::size_t n = 0; n < images.size(); ++n) {
        const Image& img = images[n];
        if (img.channels != 3 || img.height != S || img.width != S)
            throw ConfigError("eval encoder expects 3x" + std::to_string(S) + "x" + std::to_string(S) + " images");
        auto row = x.row(n);
        for (std::size_t k = 0; k < img.pixels.size(); ++k) row[k] = 2.0 * img.pixels[k] - 1.0;
    }
    return x;
}

Var DualEncoder::image_tower(Tape& tape, const ParamFn& p, Var x) const {
    Var h = ops::silu(tape, ops::conv2d(tape, x, p("image.conv1.weight"), p("image.conv1.bias"), 3));
    h = ops::avg_pool2(tape, h);
    h = ops::silu(tape, ops::conv2d(tape, h, p("image.conv2.weight"), p("image.conv2.bias"), 3));
    h = ops::avg_pool2(tape, h);
    h = ops::pool_grid(tape, h, kTowerGrid);
    return ops::linear(tape, h, p("image.proj.weight"), p("image.proj.bias"));
}

Var DualEncoder::image_forward(Tape& tape, std::span<const Image> images) {
    const ParamFn p = [this, &tape](const std::string& name) { return tape.param(params_.at(name)); };
    return image_tower(tape, p, tape.constant(image_input(images)));
}

Var DualEncoder::text_forward(Tape& tape, const std::vector<std::string>& captions) {
    return edge::text_forward(tape, params_, text_spec(config_), captions);
}

Tensor DualEncoder::embed_images(std::span<const Image> images) const {
    Tensor out({static_cast<int>(images.size()), config_.embed_dim});
    constexpr std::size_t chunk = 64;
    for (std::size_t b = 0; b < images.size(); b += chunk) {
        const std::size_t e = std::min(images.size(), b + chunk);
        Tape tape;
        const ParamFn p = [this, &tape](const std::string& name) { return tape.constant(params_.at(name).value); };
        const Tensor& v = tape.value(image_tower(tape, p, tape.constant(image_input(images.subspan(b, e - b)))));
        std::copy(v.data.begin(), v.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(b * out.stride0()));
    }
    return l2_normalize_rows(out);
}

Tensor DualEncoder::embed_texts(const std::vector<std::string>& captions) const {
    Tensor out = text_embed(params_, text_spec(config_), captions);
    return l2_normalize_rows(out);
}

std::size_t training_pair_count(const DistilledDataset& dataset) { return dataset.pair_count(); }

DualEncoder train_eval_model(const DistilledDataset& dataset, const DualEncoderConfig& config, std::uint64_t seed) {
    struct PairRef {
        std::size_t image;
        std::size_t caption;
    };
    std::vector<PairRef> pairs;
    for (std::size_t i = 0; i < dataset.pairs.size(); ++i)
        for (std::size_t c = 0; c < dataset.pairs[i].captions.size(); ++c) pairs.push_back({i, c});
    if (pairs.size() < 2)
        throw TrainingError("evaluation training needs at least 2 image-text pairs, got " + std::to_string(pairs.size()));

    DualEncoder model(config, seed);
    Optimizer opt(config.optimizer, config.learning_rate);
    Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
    const LossParams lp{config.tau, 1.0, 1.0};
    const LossWeights w = LossWeights::contrastive(lp);
    const std::size_t bs = static_cast<std::size_t>(config.batch_size);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(pairs.begin(), pairs.end(), rng);
        for (std::size_t b = 0; b < pairs.size(); b += bs) {
            const std::size_t e = std::min(pairs.size(), b + bs);
            if (e - b < 2) continue;
            std::vector<Image> images;
            std::vector<std::string> captions;
            for (std::size_t k = b; k < e; ++k) {
                images.push_back(dataset.pairs[pairs[k].image].image);
                captions.push_back(dataset.pairs[pairs[k].image].captions[pairs[k].caption]);
            }
            opt.zero_grad(model.params());
            Tape tape;
            Var zi = model.image_forward(tape, images);
            Var yt = model.text_forward(tape, captions);
            const LossGradient g = loss_gradient(EmbeddingBatch::from_raw(tape.value(zi), tape.value(yt)), lp, w);
            if (!std::isfinite(g.objective))
                throw TrainingError("non-finite evaluation loss at epoch " + std::to_string(epoch));
            tape.seed(zi, g.d_z_raw);
            if (tape.requires_grad(yt)) tape.seed(yt, g.d_y_raw);
            tape.backward();
            opt.step(model.params());
            model.train_losses.push_back(g.objective);
        }
    }
    return model;
}

DualEncoder swap_image_tower(const DualEncoder& model, const std::string& architecture) {
    DualEncoderConfig cfg = model.config();
    cfg.image_arch = architecture;
    cfg.validate();
    DualEncoder out(cfg, 0);
    const std::string table = text_spec(cfg).table_name();
    out.params().at(table).value = model.params().at(table).value;
    return out;
}

void RetrievalMetrics::validate() const {
    auto check = [](const std::map<int, double>& m, const char* what) {
        double prev = 0.0;
        for (const auto& [k, v] : m) {
            if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(std::string(what) + "@" + std::to_string(k) + " outside [0,1]");
            if (v < prev) throw ValidationError(std::string(what) + " is not monotone in K");
            prev = v;
        }
    };
    check(ir_at, "IR");
    check(tr_at, "TR");
    if (!(alignment_score >= -1.0 - 1e-12 && alignment_score <= 1.0 + 1e-12))
        throw ValidationError("alignment score outside [-1,1]");
}

RetrievalMetrics compute_retrieval_from_scores(const Tensor& scores, std::span<const int> owner, std::span<const int> ks) {
    if (scores.rank() != 2) throw ValidationError("score matrix must be 2-D");
    const int Q = scores.dim(0), M = scores.dim(1);
    if (Q < 1 || M < 1) throw ValidationError("retrieval needs at least one image and one caption");
    if (static_cast<int>(owner.size()) != Q) throw ValidationError("one owner index per caption required");
    if (ks.empty()) throw ValidationError("no K values requested");
    std::vector<int> own_count(static_cast<std::size_t>(M), 0);
    for (int o : owner) {
        if (o < 0 || o >= M) throw ValidationError("caption owner index out of range");
        ++own_count[static_cast<std::size_t>(o)];
    }
    for (int j = 0; j < M; ++j)
        if (!own_count[static_cast<std::size_t>(j)]) throw ValidationError("image " + std::to_string(j) + " has no caption");
    for (int k : ks)
        if (k < 1 || k > M)
            throw ValidationError("K=" + std::to_string(k) + " exceeds the " + std::to_string(M) + " retrieval candidates");

    auto s = [&](int q, int j) { return scores.data[static_cast<std::size_t>(q) * static_cast<std::size_t>(M) + static_cast<std::size_t>(j)]; };

    // Text-to-image: rank of the owning image among all images for each caption.
    std::vector<int> ir_rank(static_cast<std::size_t>(Q));
    for (int q = 0; q < Q; ++q) {
        const int o = owner[static_cast<std::size_t>(q)];
        const double target = s(q, o);
        int r = 0;
        for (int j = 0; j < M; ++j)
            if (s(q, j) > target || (s(q, j) == target && j < o)) ++r;
        ir_rank[static_cast<std::size_t>(q)] = r;
    }
    // Image-to-text: best rank of any own caption among all captions for each image.
    std::vector<int> tr_rank(static_cast<std::size_t>(M), Q);
    for (int j = 0; j < M; ++j)
        for (int q = 0; q < Q; ++q) {
            if (owner[static_cast<std::size_t>(q)] != j) continue;
            const double target = s(q, j);
            int r = 0;
            for (int c = 0; c < Q; ++c)
                if (s(c, j) > target || (s(c, j) == target && c < q)) ++r;
            tr_rank[static_cast<std::size_t>(j)] = std::min(tr_rank[static_cast<std::size_t>(j)], r);
        }

    RetrievalMetrics m;
    m.n_queries = Q;
    m.n_image_queries = M;
    for (int k : ks) {
        const auto ir_hits = std::count_if(ir_rank.begin(), ir_rank.end(), [k](int r) { return r < k; });
        const auto tr_hits = std::count_if(tr_rank.begin(), tr_rank.end(), [k](int r) { return r < k; });
        m.ir_at[k] = static_cast<double>(ir_hits) / Q;
        m.tr_at[k] = static_cast<double>(tr_hits) / M;
    }
    double align = 0.0;
    for (int q = 0; q < Q; ++q) align += s(q, owner[static_cast<std::size_t>(q)]);
    m.alignment_score = align / Q;
    return m;
}

namespace {

struct Flattened {
    std::vector<Image> images;
    std::vector<std::string> captions;
    std::vector<int> owner;
};

Flattened flatten_pairs(std::span<const ImageTextPair> pairs) {
    Flattened f;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (pairs[i].captions.empty()) throw ValidationError("image '" + pairs[i].image_id + "' has no caption");
        f.images.push_back(pairs[i].image);
        for (const auto& c : pairs[i].captions) {
            f.captions.push_back(c);
            f.owner.push_back(static_cast<int>(i));
        }
    }
    return f;
}

Tensor cosine_scores(const Tensor& text, const Tensor& img) {
    const int Q = text.dim(0), M = img.dim(0), d = text.dim(1);
    Tensor s({Q, M});
    kernels::gemm_nt(Q, M, d, text.data.data(), d, img.data.data(), d, s.data.data(), M, false);
    return s;
}

}  // namespace

RetrievalMetrics compute_retrieval(const DualEncoder& model, std::span<const ImageTextPair> validation,
                                   std::span<const int> ks) {
    if (validation.empty()) throw ValidationError("validation set is empty");
    const Flattened f = flatten_pairs(validation);
    const Tensor scores = cosine_scores(model.embed_texts(f.captions), model.embed_images(f.images));
    RetrievalMetrics m = compute_retrieval_from_scores(scores, f.owner, ks);
    m.validate();
    return m;
}

double alignment_score(const DualEncoder& model, std::span<const ImageTextPair> pairs) {
    if (pairs.empty()) throw ValidationError("alignment score of an empty set");
    const Flattened f = flatten_pairs(pairs);
    const Tensor img = model.embed_images(f.images);
    const Tensor txt = model.embed_texts(f.captions);
    double sum = 0.0;
    for (std::size_t q = 0; q < f.captions.size(); ++q)
        sum += kernels::dot(txt.row(q), img.row(static_cast<std::size_t>(f.owner[q])));
    return sum / static_cast<double>(f.captions.size());
}

MetricStats aggregate_metrics(std::span<const RetrievalMetrics> runs) {
    if (runs.empty()) throw ValidationError("no runs to aggregate");
    auto stats = [&](auto get) {
        const double n = static_cast<double>(runs.size());
        double mean = 0.0;
        for (const auto& r : runs) mean += get(r);
        mean /= n;
        if (runs.size() < 2) return std::pair{mean, 0.0};
        double ss = 0.0;
        for (const auto& r : runs) ss += (get(r) - mean) * (get(r) - mean);
        return std::pair{mean, std::sqrt(ss / (n - 1.0))};
    };
    MetricStats out;
    for (const auto& [k, v] : runs.front().ir_at) {
        std::tie(out.ir_mean[k], out.ir_std[k]) = stats([k](const RetrievalMetrics& r) { return r.ir_at.at(k); });
        std::tie(out.tr_mean[k], out.tr_std[k]) = stats([k](const RetrievalMetrics& r) { return r.tr_at.at(k); });
    }
    std::tie(out.alignment_mean, out.alignment_std) = stats([](const RetrievalMetrics& r) { return r.alignment_score; });
    return out;
}

PipelineReport evaluate_pipeline(const DistilledDataset& distilled, std::span<const ImageTextPair> validation,
                                 const DualEncoderConfig& config, std::span<const std::uint64_t> seeds,
                                 std::span<const int> ks) {
    if (seeds.empty()) throw ValidationError("evaluate_pipeline needs at least one seed");
    PipelineReport report;
    for (std::uint64_t seed : seeds) {
        const DualEncoder model = train_eval_model(distilled, config, seed);
        report.seeds.push_back(seed);
        report.per_seed.push_back(compute_retrieval(model, validation, ks));
    }
    report.aggregate = aggregate_metrics(report.per_seed);
    return report;
}

}  // namespace edge
