#pragma once
// On-disk artifacts of a run: training logs, metric reports, ablation tables,
// the run descriptor and the run-directory lock.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "edge/dataset_io.hpp"
#include "edge/distiller.hpp"
#include "edge/retrieval.hpp"

namespace edge {

// JSON Lines, one record per optimizer step.
void write_training_log(const TrainingLog& log, const std::filesystem::path& path);
TrainingLog read_training_log(const std::filesystem::path& path);

// Hex FNV-1a digest over image ids, captions, pixels and provenance.
std::string dataset_digest(const DistilledDataset& dataset);

struct MetricsReport {
    std::string mask;
    std::string dataset_digest;
    std::size_t train_pairs = 0;
    PipelineReport pipeline;
};

nlohmann::json metrics_report_json(const MetricsReport& report);
MetricsReport metrics_report_from_json(const nlohmann::json& j);
void write_metrics_report(const MetricsReport& report, const std::filesystem::path& path);
MetricsReport read_metrics_report(const std::filesystem::path& path);

struct AblationRow {
    std::string mask;
    std::map<int, double> ir_at;
    std::map<int, double> tr_at;
    double alignment = 0.0;
};

struct AblationTable {
    std::uint64_t seed = 0;
    std::vector<std::uint64_t> eval_seeds;
    std::vector<AblationRow> rows;
};

// Tab-separated with '#'-prefixed header lines carrying the shared seeds.
void write_ablation_table(const AblationTable& table, const std::filesystem::path& path);
AblationTable read_ablation_table(const std::filesystem::path& path);

// Exclusive ownership of a run directory for the lifetime of the object.
class RunLock {
public:
    explicit RunLock(const std::filesystem::path& run_dir);
    ~RunLock();
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    std::filesystem::path path_;
};

void write_json(const nlohmann::json& j, const std::filesystem::path& path);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace edge
