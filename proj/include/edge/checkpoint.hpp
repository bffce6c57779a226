#pragma once
// Single-file model archive: magic, format version, a JSON header describing
// the configuration, schedule and tensor index, then raw little-endian doubles.

#include <filesystem>
#include <string>

#include "json.hpp"

#include "edge/diffusion.hpp"

namespace edge {

inline constexpr int kCheckpointVersion = 1;

nlohmann::json diffusion_config_to_json(const DiffusionConfig& config);
DiffusionConfig diffusion_config_from_json(const nlohmann::json& j);

// `metadata` is stored verbatim in the header (free-form object, may be null).
void save_checkpoint(const DiffusionModel& model, const std::filesystem::path& path,
                     const nlohmann::json& metadata);
void save_checkpoint(const DiffusionModel& model, const std::filesystem::path& path);
DiffusionModel load_checkpoint(const std::filesystem::path& path);
nlohmann::json checkpoint_metadata(const std::filesystem::path& path);

}  // namespace edge
