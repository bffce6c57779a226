// edge: command-line driver for fine-tuning, synthesis, captioning, evaluation
// and ablations. Exit codes: 0 success, 2 configuration error, 3 runtime error.

#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "edge/checkpoint.hpp"
#include "edge/errors.hpp"
#include "edge/kernels.hpp"
#include "edge/pipeline.hpp"

namespace fs = std::filesystem;
using namespace edge;

namespace {

struct Globals {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::vector<std::string> sets;
};

ExperimentConfig resolve_config(const Globals& g) {
    std::map<std::string, std::string> overrides;
    for (const auto& s : g.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + s + "'");
        overrides[trim(s.substr(0, eq))] = s.substr(eq + 1);
    }
    if (g.seed) overrides["run.seed"] = std::to_string(*g.seed);
    if (!g.out.empty()) overrides["run.out_dir"] = g.out;
    return g.config_path.empty() ? parse_config("", overrides) : load_config(g.config_path, overrides);
}

void record_run(const ExperimentConfig& cfg, const fs::path& run_dir, const std::string& command,
                const nlohmann::json& artifacts) {
    const fs::path path = run_dir / "run.json";
    nlohmann::json run = fs::exists(path) ? read_json(path) : nlohmann::json::object();
    run["run_id"] = cfg.run_id;
    run["kernels"] = std::string(kernels::isa_name(kernels::active_isa()));
    run["commands"][command] = {{"seed", cfg.seed}, {"config", flatten_config(cfg)}, {"artifacts", artifacts}};
    write_json(run, path);
}

void say(const std::string& s) { std::cerr << "[edge] " << s << "\n"; }

int cmd_distill(const Globals& g, const std::string& mask_override) {
    ExperimentConfig cfg = resolve_config(g);
    if (!mask_override.empty()) cfg.train.mask = parse_loss_mask(mask_override);
    const fs::path run_dir = cfg.run_dir();
    RunLock lock(run_dir);
    const auto corpus = load_corpus(cfg.corpus, cfg.image_size);
    say("corpus: " + std::to_string(corpus.size()) + " images");
    TrainingLog pre_log;
    say("pretraining");
    const DiffusionModel pretrained = build_pretrained(cfg, corpus, &pre_log);
    save_checkpoint(pretrained, run_dir / "pretrained.ckpt", {{"role", "pretrained"}});
    nlohmann::json artifacts{{"pretrained", "pretrained.ckpt"}};
    if (!pre_log.entries.empty()) {
        write_training_log(pre_log, run_dir / "pretrain_log.jsonl");
        artifacts["pretrain_log"] = "pretrain_log.jsonl";
    }
    say("fine-tuning with " + loss_mask_name(cfg.train.mask));
    TrainingLog log;
    const DiffusionModel model = distill_model(cfg, pretrained, corpus, cfg.train.mask, &log);
    save_checkpoint(model, run_dir / "model.ckpt", {{"role", "finetuned"}, {"mask", loss_mask_name(cfg.train.mask)}});
    write_training_log(log, run_dir / "train_log.jsonl");
    artifacts["checkpoint"] = "model.ckpt";
    artifacts["train_log"] = "train_log.jsonl";
    record_run(cfg, run_dir, "distill", artifacts);
    std::cout << (run_dir / "model.ckpt").string() << "\n";
    return 0;
}

int cmd_synthesize(const Globals& g, const std::string& checkpoint, const std::string& baseline, const std::string& output) {
    const ExperimentConfig cfg = resolve_config(g);
    const fs::path run_dir = cfg.run_dir();
    RunLock lock(run_dir);
    const auto corpus = load_corpus(cfg.corpus, cfg.image_size);
    DistilledDataset distilled;
    std::string dir_name = "distilled";
    if (baseline == "random") {
        distilled = baseline_random_select(corpus, cfg.synthesis.pair_count, cfg.seed);
        dir_name = "baseline_random";
    } else {
        const fs::path ckpt = checkpoint.empty()
                                  ? run_dir / (baseline == "pretrained" ? "pretrained.ckpt" : "model.ckpt")
                                  : fs::path(checkpoint);
        if (!fs::exists(ckpt)) throw LoadError("checkpoint not found: " + ckpt.string());
        const DiffusionModel model = load_checkpoint(ckpt);
        SynthesisPlan plan = default_plan(cfg);
        if (baseline == "pretrained") {
            plan.generator_id = "pretrained-baseline";
            dir_name = "baseline_pretrained";
        }
        distilled = synthesize_distilled(cfg, model, corpus, plan);
    }
    const fs::path out_dir = output.empty() ? run_dir / dir_name : fs::path(output);
    write_distilled(distilled, out_dir);
    record_run(cfg, run_dir, "synthesize", {{"distilled", out_dir.string()}});
    std::cout << out_dir.string() << "\n";
    return 0;
}

int cmd_caption(const Globals& g, const std::string& dataset, int cpi, const std::string& output) {
    const ExperimentConfig cfg = resolve_config(g);
    if (cpi < 1) throw ConfigError("--cpi must be positive");
    const fs::path in_dir = dataset.empty() ? cfg.run_dir() / "distilled" : fs::path(dataset);
    const DistilledDataset src = load_distilled(in_dir);
    auto captioner = make_captioner(cfg);
    ExpandOptions opts;
    opts.prompt = prompt_by_name(cfg.captioner.prompt);
    opts.max_in_flight = cfg.captioner.max_in_flight;
    const DistilledDataset out = expand(src, cpi, *captioner, opts);
    const fs::path out_dir = output.empty() ? in_dir : fs::path(output);
    write_distilled(out, out_dir);
    std::cout << out_dir.string() << "\n";
    return 0;
}

int cmd_eval(const Globals& g, const std::string& distilled_dir, const std::string& validation_manifest,
             const std::string& seeds, const std::string& report_path) {
    ExperimentConfig cfg = resolve_config(g);
    if (!seeds.empty()) cfg.eval.seeds = parse_seed_list(seeds);
    if (!validation_manifest.empty()) cfg.validation.manifest = validation_manifest;
    const fs::path run_dir = cfg.run_dir();
    const fs::path dir = distilled_dir.empty() ? run_dir / "distilled" : fs::path(distilled_dir);
    const DistilledDataset distilled = load_distilled(dir);
    const auto validation = load_corpus(cfg.validation, cfg.image_size);
    std::string mask = "unknown";
    if (!distilled.provenance.empty()) mask = distilled.provenance.front().captioner_id;
    const MetricsReport report = evaluate_distilled(cfg, distilled, validation, mask);
    const fs::path out = report_path.empty() ? dir / "metrics.json" : fs::path(report_path);
    write_metrics_report(report, out);
    const auto& a = report.pipeline.aggregate;
    for (const auto& [k, v] : a.ir_mean) std::cout << "IR@" << k << "\t" << v << "\t+-" << a.ir_std.at(k) << "\n";
    for (const auto& [k, v] : a.tr_mean) std::cout << "TR@" << k << "\t" << v << "\t+-" << a.tr_std.at(k) << "\n";
    std::cout << "alignment\t" << a.alignment_mean << "\t+-" << a.alignment_std << "\n";
    return 0;
}

int cmd_ablate(const Globals& g, const std::string& masks_text) {
    const ExperimentConfig cfg = resolve_config(g);
    std::vector<LossMask> masks;
    if (masks_text.empty()) masks = all_loss_masks();
    else {
        std::stringstream ss(masks_text);
        for (std::string m; std::getline(ss, m, ',');) masks.push_back(parse_loss_mask(trim(m)));
    }
    const fs::path run_dir = cfg.run_dir();
    RunLock lock(run_dir);
    const AblationTable table = run_ablation(cfg, masks, run_dir, say);
    write_ablation_table(table, run_dir / "ablation.tsv");
    record_run(cfg, run_dir, "ablate", {{"table", "ablation.tsv"}});
    std::ifstream in(run_dir / "ablation.tsv");
    std::cout << in.rdbuf();
    return 0;
}

int cmd_baseline(const Globals& g, const std::string& kind) {
    const ExperimentConfig cfg = resolve_config(g);
    const fs::path run_dir = cfg.run_dir();
    RunLock lock(run_dir);
    const auto corpus = load_corpus(cfg.corpus, cfg.image_size);
    const auto validation = load_corpus(cfg.validation, cfg.image_size);
    DistilledDataset distilled;
    if (kind == "random") {
        distilled = baseline_random_select(corpus, cfg.synthesis.pair_count, cfg.seed);
    } else {
        const DiffusionModel pretrained = build_pretrained(cfg, corpus);
        SynthesisPlan plan = default_plan(cfg);
        plan.generator_id = "pretrained-baseline";
        distilled = synthesize_distilled(cfg, pretrained, corpus, plan);
    }
    const fs::path dir = run_dir / ("baseline_" + kind);
    write_distilled(distilled, dir);
    const MetricsReport report = evaluate_distilled(cfg, distilled, validation, "baseline_" + kind);
    write_metrics_report(report, dir / "metrics.json");
    record_run(cfg, run_dir, "baseline_" + kind, {{"distilled", dir.string()}, {"metrics", (dir / "metrics.json").string()}});
    std::cout << (dir / "metrics.json").string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"EDGE: diffusion-based vision-language dataset distillation"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config_path, "experiment config file");
    app.add_option("--seed", g.seed, "global seed (overrides run.seed)");
    app.add_option("--out", g.out, "output root (overrides run.out_dir)");
    app.add_option("--set", g.sets, "override a config field: section.key=value")->take_all();

    std::string mask, checkpoint, baseline, output, dataset, distilled, validation, seeds, report, masks, kind = "random";
    int cpi = 2;

    auto* distill = app.add_subcommand("distill", "pretrain (or load) and fine-tune a diffusion model");
    distill->add_option("--mask", mask, "loss mask for fine-tuning");

    auto* synth = app.add_subcommand("synthesize", "sample a distilled dataset from a checkpoint");
    synth->add_option("--checkpoint", checkpoint, "model checkpoint (default: <run>/model.ckpt)");
    synth->add_option("--baseline", baseline, "pretrained | random")->check(CLI::IsMember({"pretrained", "random"}));
    synth->add_option("--output", output, "output directory");

    auto* caption = app.add_subcommand("caption", "expand a distilled dataset to cpi captions per image");
    caption->add_option("--dataset", dataset, "distilled dataset directory");
    caption->add_option("--cpi", cpi, "captions per image")->required();
    caption->add_option("--output", output, "output directory (default: in place)");

    auto* eval = app.add_subcommand("eval", "train evaluation models and report retrieval metrics");
    eval->add_option("--distilled", distilled, "distilled dataset directory");
    eval->add_option("--validation", validation, "validation manifest");
    eval->add_option("--seeds", seeds, "comma-separated evaluation seeds");
    eval->add_option("--report", report, "metrics report path");

    auto* ablate = app.add_subcommand("ablate", "run the pipeline once per loss mask");
    ablate->add_option("--masks", masks, "comma-separated loss masks (default: all)");

    auto* base = app.add_subcommand("baseline", "evaluate a baseline distilled set");
    base->add_option("--kind", kind, "random | pretrained")->check(CLI::IsMember({"pretrained", "random"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*distill) return cmd_distill(g, mask);
        if (*synth) return cmd_synthesize(g, checkpoint, baseline, output);
        if (*caption) return cmd_caption(g, dataset, cpi, output);
        if (*eval) return cmd_eval(g, distilled, validation, seeds, report);
        if (*ablate) return cmd_ablate(g, masks);
        if (*base) return cmd_baseline(g, kind);
    } catch (const ConfigError& e) {
        std::cerr << "edge: configuration error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "edge: error: " << e.what() << "\n";
        return 3;
    }
    return 2;
}
