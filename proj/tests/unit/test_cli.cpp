#include "doctest.h"

#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

#include "edge/checkpoint.hpp"
#include "edge/dataset_io.hpp"
#include "edge/reports.hpp"
#include "helpers.hpp"

using namespace edge;
namespace fs = std::filesystem;

TEST_SUITE("cli") {

namespace {

int run(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(EDGE_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p);
    return {std::istreambuf_iterator<char>(is), {}};
}

// Small enough that the whole pipeline runs in seconds.
void write_tiny_config(const fs::path& path, const fs::path& out) {
    std::ofstream os(path);
    os << "[run]\nout_dir = " << out.string() << "\nrun_id = tiny\nseed = 3\n"
       << "[corpus]\nimage_size = 8\ntoy_images = 16\ntoy_captions = 3\n"
       << "[validation]\ntoy_images = 8\ntoy_captions = 2\n"
       << "[model]\nbase_channels = 8\nemb_dim = 16\ncond_dim = 8\ntext_buckets = 64\ntimesteps = 10\n"
       << "[pretrain]\nepochs = 1\nbatch_size = 8\n"
       << "[train]\nepochs = 1\nbatch_size = 4\n"
       << "[synthesis]\npair_count = 8\ncpi = 2\nsampler_steps = 5\n"
       << "[eval]\nepochs = 1\nseeds = 0\nks = 1,5\n";
}

}  // namespace

TEST_CASE("distill, synthesize, caption and eval chain through the run directory") {
    testing::TempDir dir("cli");
    write_tiny_config(dir / "c.ini", dir.path());
    const fs::path run_dir = dir.path() / "tiny";

    REQUIRE(run("--config " + (dir / "c.ini").string() + " distill --mask plus_contrastive", dir / "1.log") == 0);
    CHECK(fs::exists(run_dir / "model.ckpt"));
    CHECK(fs::exists(run_dir / "pretrained.ckpt"));
    CHECK(read_training_log(run_dir / "train_log.jsonl").mask == LossMask::plus_contrastive);
    CHECK(checkpoint_metadata(run_dir / "model.ckpt").at("mask") == "plus_contrastive");
    CHECK_FALSE(fs::exists(run_dir / "run.lock"));

    REQUIRE(run("--config " + (dir / "c.ini").string() + " synthesize", dir / "2.log") == 0);
    const auto d = load_distilled(run_dir / "distilled");
    CHECK(d.cpi == 2);
    CHECK(d.image_count() == 4);
    CHECK(d.pair_count() == 8);

    REQUIRE(run("--config " + (dir / "c.ini").string() + " caption --cpi 4 --output " + (dir / "c4").string(), dir / "3.log") == 0);
    CHECK(load_distilled(dir / "c4").pairs[0].captions.size() == 4);

    REQUIRE(run("--config " + (dir / "c.ini").string() + " eval", dir / "4.log") == 0);
    const auto report = read_metrics_report(run_dir / "distilled" / "metrics.json");
    CHECK(report.pipeline.seeds == std::vector<std::uint64_t>{0});
    CHECK(slurp(dir / "4.log").find("IR@1") != std::string::npos);

    const auto runs = read_json(run_dir / "run.json");
    CHECK(runs.at("commands").contains("distill"));
    CHECK(runs.at("commands").at("distill").at("seed") == 3);
    CHECK(runs.at("commands").contains("eval") == false);
    CHECK(runs.at("commands").at("synthesize").at("config").at("train.mask") == "plus_contrastive_diversity");
}

TEST_CASE("overrides, baselines and ablation") {
    testing::TempDir dir("cli2");
    write_tiny_config(dir / "c.ini", dir.path());
    const std::string base = "--config " + (dir / "c.ini").string() + " --seed 5 --set synthesis.cpi=1 ";
    REQUIRE(run(base + "baseline --kind random", dir / "1.log") == 0);
    CHECK(fs::exists(dir.path() / "tiny" / "baseline_random" / "metrics.json"));
    CHECK(read_json(dir.path() / "tiny" / "run.json").at("commands").at("baseline_random").at("seed") == 5);

    REQUIRE(run(base + "ablate --masks mse_only,plus_contrastive", dir / "2.log") == 0);
    const auto t = read_ablation_table(dir.path() / "tiny" / "ablation.tsv");
    CHECK(t.seed == 5);
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[0].mask == "mse_only");
}

TEST_CASE("exit codes distinguish configuration errors from runtime failures") {
    testing::TempDir dir("cli3");
    write_tiny_config(dir / "c.ini", dir.path());
    CHECK(run("", dir / "a.log") == 2);
    CHECK(run("frobnicate", dir / "b.log") == 2);
    CHECK(run("--config " + (dir / "nope.ini").string() + " distill", dir / "c.log") == 2);
    CHECK(run("--config " + (dir / "c.ini").string() + " --set train.tau=-1 distill", dir / "d.log") == 2);
    CHECK(slurp(dir / "d.log").find("train.tau") != std::string::npos);
    CHECK(run("--config " + (dir / "c.ini").string() + " synthesize --checkpoint " + (dir / "x.ckpt").string(), dir / "e.log") == 3);
    CHECK(run("--config " + (dir / "c.ini").string() + " distill --mask nonsense", dir / "f.log") == 2);

    fs::create_directories(dir.path() / "tiny");
    std::ofstream(dir.path() / "tiny" / "run.lock") << "";
    CHECK(run("--config " + (dir / "c.ini").string() + " distill", dir / "g.log") == 3);
    CHECK(slurp(dir / "g.log").find("lock") != std::string::npos);
}

}
