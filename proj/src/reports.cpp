#include "edge/reports.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "edge/errors.hpp"

namespace edge {

namespace fs = std::filesystem;
using nlohmann::json;

void write_json(const json& j, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw WriteError("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot read " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw LoadError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

void write_training_log(const TrainingLog& log, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw WriteError("cannot write " + path.string());
    const std::string mask = loss_mask_name(log.mask);
    for (const auto& e : log.entries) {
        out << json{{"step", e.step},         {"epoch", e.epoch},         {"mask", mask},
                    {"l_i2t", e.loss.l_i2t},  {"l_t2i", e.loss.l_t2i},    {"l_c", e.loss.l_c},
                    {"l_d", e.loss.l_d},      {"l_edge", e.loss.l_edge},  {"mse", e.mse},
                    {"objective", e.objective}, {"wall_ms", e.wall_ms}}
                   .dump()
            << "\n";
    }
}

TrainingLog read_training_log(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot read " + path.string());
    TrainingLog log;
    int n = 0;
    for (std::string line; std::getline(in, line);) {
        ++n;
        if (trim(line).empty()) continue;
        try {
            const json j = json::parse(line);
            log.mask = parse_loss_mask(j.at("mask").get<std::string>());
            TrainLogEntry e;
            e.step = j.at("step").get<long>();
            e.epoch = j.at("epoch").get<int>();
            e.loss.l_i2t = j.at("l_i2t").get<double>();
            e.loss.l_t2i = j.at("l_t2i").get<double>();
            e.loss.l_c = j.at("l_c").get<double>();
            e.loss.l_d = j.at("l_d").get<double>();
            e.loss.l_edge = j.at("l_edge").get<double>();
            e.mse = j.at("mse").get<double>();
            e.objective = j.at("objective").get<double>();
            e.wall_ms = j.at("wall_ms").get<double>();
            log.entries.push_back(e);
        } catch (const json::exception& ex) {
            throw LoadError(path.string() + ":" + std::to_string(n) + ": " + ex.what());
        }
    }
    return log;
}

namespace {

struct Fnv {
    std::uint64_t h = 14695981039346656037ULL;
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 1099511628211ULL;
    }
    void str(const std::string& s) {
        const std::uint64_t n = s.size();
        bytes(&n, sizeof n);
        bytes(s.data(), s.size());
    }
};

json k_map(const std::map<int, double>& m) {
    json j = json::object();
    for (const auto& [k, v] : m) j[std::to_string(k)] = v;
    return j;
}

std::map<int, double> k_map(const json& j) {
    std::map<int, double> m;
    for (const auto& [k, v] : j.items()) m[std::stoi(k)] = v.get<double>();
    return m;
}

json metrics_json(const RetrievalMetrics& m) {
    return {{"ir_at", k_map(m.ir_at)},
            {"tr_at", k_map(m.tr_at)},
            {"alignment_score", m.alignment_score},
            {"n_queries", m.n_queries},
            {"n_image_queries", m.n_image_queries}};
}

RetrievalMetrics metrics_from(const json& j) {
    RetrievalMetrics m;
    m.ir_at = k_map(j.at("ir_at"));
    m.tr_at = k_map(j.at("tr_at"));
    m.alignment_score = j.at("alignment_score").get<double>();
    m.n_queries = j.at("n_queries").get<int>();
    m.n_image_queries = j.value("n_image_queries", 0);
    return m;
}

}  // namespace

std::string dataset_digest(const DistilledDataset& d) {
    Fnv f;
    for (const auto& p : d.pairs) {
        f.str(p.image_id);
        for (const auto& c : p.captions) f.str(c);
        for (double v : p.image.pixels) {
            const auto q = static_cast<std::uint8_t>(std::lround(v * 255.0));
            f.bytes(&q, 1);
        }
    }
    for (const auto& r : d.provenance) {
        f.str(r.image_id);
        f.str(r.seed_caption);
        f.bytes(&r.sampler_seed, sizeof r.sampler_seed);
        f.str(r.captioner_id);
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << f.h;
    return os.str();
}

json metrics_report_json(const MetricsReport& r) {
    json per_seed = json::array();
    for (std::size_t i = 0; i < r.pipeline.per_seed.size(); ++i) {
        json block = metrics_json(r.pipeline.per_seed[i]);
        block["seed"] = r.pipeline.seeds.at(i);
        per_seed.push_back(block);
    }
    const MetricStats& a = r.pipeline.aggregate;
    return {{"mask", r.mask},
            {"dataset_digest", r.dataset_digest},
            {"train_pairs", r.train_pairs},
            {"per_seed", per_seed},
            {"aggregate",
             {{"ir_mean", k_map(a.ir_mean)},
              {"ir_std", k_map(a.ir_std)},
              {"tr_mean", k_map(a.tr_mean)},
              {"tr_std", k_map(a.tr_std)},
              {"alignment_mean", a.alignment_mean},
              {"alignment_std", a.alignment_std}}}};
}

MetricsReport metrics_report_from_json(const json& j) {
    MetricsReport r;
    try {
        r.mask = j.at("mask").get<std::string>();
        r.dataset_digest = j.at("dataset_digest").get<std::string>();
        r.train_pairs = j.at("train_pairs").get<std::size_t>();
        for (const auto& block : j.at("per_seed")) {
            r.pipeline.seeds.push_back(block.at("seed").get<std::uint64_t>());
            r.pipeline.per_seed.push_back(metrics_from(block));
        }
        const json& a = j.at("aggregate");
        r.pipeline.aggregate.ir_mean = k_map(a.at("ir_mean"));
        r.pipeline.aggregate.ir_std = k_map(a.at("ir_std"));
        r.pipeline.aggregate.tr_mean = k_map(a.at("tr_mean"));
        r.pipeline.aggregate.tr_std = k_map(a.at("tr_std"));
        r.pipeline.aggregate.alignment_mean = a.at("alignment_mean").get<double>();
        r.pipeline.aggregate.alignment_std = a.at("alignment_std").get<double>();
    } catch (const json::exception& e) {
        throw LoadError(std::string("malformed metrics report: ") + e.what());
    }
    return r;
}

void write_metrics_report(const MetricsReport& report, const fs::path& path) {
    for (const auto& m : report.pipeline.per_seed) m.validate();
    write_json(metrics_report_json(report), path);
}

MetricsReport read_metrics_report(const fs::path& path) { return metrics_report_from_json(read_json(path)); }

namespace {
constexpr const char* kSeedHeader = "# shared_seed=";
constexpr const char* kEvalSeedHeader = "# eval_seeds=";
}  // namespace

void write_ablation_table(const AblationTable& t, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw WriteError("cannot write " + path.string());
    out << kSeedHeader << t.seed << "\n" << kEvalSeedHeader;
    for (std::size_t i = 0; i < t.eval_seeds.size(); ++i) out << (i ? "," : "") << t.eval_seeds[i];
    out << "\n";
    std::vector<int> ks;
    if (!t.rows.empty())
        for (const auto& [k, v] : t.rows.front().ir_at) ks.push_back(k);
    out << "mask";
    for (int k : ks) out << "\tIR@" << k;
    for (int k : ks) out << "\tTR@" << k;
    out << "\talignment\n";
    out << std::setprecision(17);
    for (const auto& r : t.rows) {
        out << r.mask;
        for (int k : ks) out << "\t" << r.ir_at.at(k);
        for (int k : ks) out << "\t" << r.tr_at.at(k);
        out << "\t" << r.alignment << "\n";
    }
}

AblationTable read_ablation_table(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot read " + path.string());
    AblationTable t;
    std::vector<std::string> columns;
    int n = 0;
    for (std::string line; std::getline(in, line);) {
        ++n;
        if (line.empty()) continue;
        auto fail = [&](const std::string& why) { return LoadError(path.string() + ":" + std::to_string(n) + ": " + why); };
        if (line.rfind(kSeedHeader, 0) == 0) {
            t.seed = std::stoull(line.substr(std::string(kSeedHeader).size()));
            continue;
        }
        if (line.rfind(kEvalSeedHeader, 0) == 0) {
            std::stringstream ss(line.substr(std::string(kEvalSeedHeader).size()));
            for (std::string s; std::getline(ss, s, ',');) t.eval_seeds.push_back(std::stoull(s));
            continue;
        }
        if (line.front() == '#') continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, '\t');) cells.push_back(cell);
        if (columns.empty()) {
            if (cells.empty() || cells.front() != "mask") throw fail("missing column header");
            columns = cells;
            continue;
        }
        if (cells.size() != columns.size()) throw fail("expected " + std::to_string(columns.size()) + " cells");
        AblationRow row;
        row.mask = cells[0];
        for (std::size_t c = 1; c < cells.size(); ++c) {
            double v = 0.0;
            try {
                v = std::stod(cells[c]);
            } catch (const std::exception&) {
                throw fail("bad number '" + cells[c] + "'");
            }
            const std::string& col = columns[c];
            if (col.rfind("IR@", 0) == 0) row.ir_at[std::stoi(col.substr(3))] = v;
            else if (col.rfind("TR@", 0) == 0) row.tr_at[std::stoi(col.substr(3))] = v;
            else if (col == "alignment") row.alignment = v;
            else throw fail("unknown column '" + col + "'");
        }
        t.rows.push_back(row);
    }
    return t;
}

RunLock::RunLock(const fs::path& run_dir) : path_(run_dir / "run.lock") {
    fs::create_directories(run_dir);
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) throw WriteError("run directory " + run_dir.string() + " is locked by another command (" + path_.string() + ")");
    std::fclose(f);
}

RunLock::~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
}

}  // namespace edge
