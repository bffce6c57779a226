#include "edge/pipeline.hpp"

#include "edge/checkpoint.hpp"
#include "edge/errors.hpp"
#include "edge/toy_corpus.hpp"

namespace edge {

namespace {
constexpr std::uint64_t kPretrainOffset = 101;
constexpr std::uint64_t kFinetuneOffset = 202;
constexpr std::uint64_t kSynthesisOffset = 303;
}  // namespace

std::vector<ImageTextPair> load_corpus(const CorpusSource& source, int image_size) {
    if (!source.manifest.empty()) return load_pairs(load_manifest(source.manifest));
    ToyCorpusSpec spec;
    spec.image_size = image_size;
    spec.num_images = source.toy_images;
    spec.captions_per_image = source.toy_captions;
    std::vector<ImageTextPair> pairs;
    for (auto& item : render_toy_corpus(spec, source.toy_seed)) pairs.push_back(std::move(item.pair));
    return pairs;
}

DiffusionModel build_pretrained(const ExperimentConfig& config, std::span<const ImageTextPair> corpus, TrainingLog* log) {
    if (!config.pretrain.checkpoint.empty()) {
        DiffusionModel model = load_checkpoint(config.pretrain.checkpoint);
        if (!(model.config() == config.model))
            throw ConfigError("pretrain.checkpoint architecture differs from the [model] section");
        return model;
    }
    DiffusionModel model(config.model, config.model_init_seed + config.seed);
    if (config.model.codec == CodecMode::autoencoder) {
        std::vector<Image> images;
        for (const auto& p : corpus) images.push_back(p.image);
        model.train_autoencoder(images, std::max(1, config.pretrain.epochs), config.pretrain.learning_rate,
                                config.seed + kPretrainOffset);
    }
    if (config.pretrain.epochs > 0) {
        TrainConfig tc;
        tc.mask = LossMask::mse_only;
        tc.learning_rate = config.pretrain.learning_rate;
        tc.batch_size = config.pretrain.batch_size;
        tc.epochs = config.pretrain.epochs;
        tc.optimizer = config.pretrain.optimizer;
        tc.mse_snr_cap = config.pretrain.snr_cap;
        tc.seed = config.seed + kPretrainOffset;
        tc.trainable_prefixes = {"text.", "unet."};
        TrainingLog l = finetune(model, corpus, tc);
        if (log) *log = std::move(l);
    }
    return model;
}

DiffusionModel distill_model(const ExperimentConfig& config, const DiffusionModel& pretrained,
                             std::span<const ImageTextPair> corpus, LossMask mask, TrainingLog* log) {
    DiffusionModel model = pretrained;
    TrainConfig tc = config.train;
    tc.mask = mask;
    tc.seed = config.seed + kFinetuneOffset;
    TrainingLog l = finetune(model, corpus, tc);
    if (log) *log = std::move(l);
    return model;
}

std::unique_ptr<Captioner> make_captioner(const ExperimentConfig& config) {
    if (config.captioner.kind == "mllm") return std::make_unique<MllmClient>(config.captioner.client);
    return std::make_unique<TemplateCaptioner>();
}

SynthesisPlan default_plan(const ExperimentConfig& config) {
    return {config.synthesis.pair_count, config.synthesis.cpi, "edge-finetuned", true};
}

DistilledDataset synthesize_distilled(const ExperimentConfig& config, const DiffusionModel& model,
                                      std::span<const ImageTextPair> corpus, const SynthesisPlan& plan) {
    SynthesisRequest req;
    req.pair_count = plan.pair_count;
    req.cpi = plan.cpi;
    req.caption_source = caption_pool(corpus);
    req.sampler_steps = config.synthesis.sampler_steps;
    req.seed = config.seed + kSynthesisOffset;
    req.generator_id = plan.generator_id;
    if (config.synthesis.rephrase) {
        MllmClient client(config.captioner.client);
        req.caption_source = rephrase_preprocess(req.caption_source, client);
    }
    DistilledDataset out = synthesize(model, req);
    if (plan.expand_captions && plan.cpi > 1) {
        auto captioner = make_captioner(config);
        ExpandOptions opts;
        opts.prompt = prompt_by_name(config.captioner.prompt);
        opts.max_in_flight = config.captioner.max_in_flight;
        out = expand(out, plan.cpi, *captioner, opts);
    }
    return out;
}

MetricsReport evaluate_distilled(const ExperimentConfig& config, const DistilledDataset& distilled,
                                 std::span<const ImageTextPair> validation, const std::string& mask) {
    MetricsReport r;
    r.mask = mask;
    r.dataset_digest = dataset_digest(distilled);
    r.train_pairs = training_pair_count(distilled);
    r.pipeline = evaluate_pipeline(distilled, validation, config.eval.encoder, config.eval.seeds, config.eval.ks);
    return r;
}

AblationTable run_ablation(const ExperimentConfig& config, const std::vector<LossMask>& masks,
                           const std::filesystem::path& run_dir, const Progress& progress) {
    if (masks.empty()) throw ConfigError("ablation plan has no masks");
    auto say = [&](const std::string& s) {
        if (progress) progress(s);
    };
    const auto corpus = load_corpus(config.corpus, config.image_size);
    const auto validation = load_corpus(config.validation, config.image_size);
    say("pretraining");
    TrainingLog pre_log;
    const DiffusionModel pretrained = build_pretrained(config, corpus, &pre_log);
    if (!pre_log.entries.empty()) write_training_log(pre_log, run_dir / "pretrain_log.jsonl");
    save_checkpoint(pretrained, run_dir / "pretrained.ckpt", {{"role", "pretrained"}});

    AblationTable table;
    table.seed = config.seed;
    table.eval_seeds = config.eval.seeds;
    for (LossMask mask : masks) {
        const std::string name = loss_mask_name(mask);
        say("row " + name);
        const bool cs = mask == LossMask::edge_plus_caption_synthesis;
        SynthesisPlan plan{config.synthesis.pair_count, cs ? config.synthesis.cpi : 1, "edge-finetuned", cs};
        DistilledDataset distilled;
        if (mask == LossMask::mse_only) {
            plan.generator_id = "pretrained-baseline";
            distilled = synthesize_distilled(config, pretrained, corpus, plan);
        } else {
            TrainingLog log;
            const DiffusionModel model = distill_model(config, pretrained, corpus, mask, &log);
            write_training_log(log, run_dir / name / "train_log.jsonl");
            save_checkpoint(model, run_dir / name / "model.ckpt", {{"role", "finetuned"}, {"mask", name}});
            distilled = synthesize_distilled(config, model, corpus, plan);
        }
        write_distilled(distilled, run_dir / name / "distilled");
        const MetricsReport report = evaluate_distilled(config, distilled, validation, name);
        write_metrics_report(report, run_dir / name / "metrics.json");
        table.rows.push_back({name, report.pipeline.aggregate.ir_mean, report.pipeline.aggregate.tr_mean,
                              report.pipeline.aggregate.alignment_mean});
    }
    return table;
}

}  // namespace edge
