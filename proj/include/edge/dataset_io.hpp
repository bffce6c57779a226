#pragma once
// Image-caption records, manifests on disk, and distilled-dataset materialization.
//
// A manifest is JSON Lines: one {"image_id", "image_path", "captions"} object per
// line, image paths relative to the manifest's directory. A distilled dataset
// directory holds images/*.png, manifest.jsonl and provenance.jsonl.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "edge/image_io.hpp"

namespace edge {

struct ImageTextPair {
    std::string image_id;
    Image image;
    std::vector<std::string> captions;

    // Non-empty caption list, no blank captions, pixels in [0,1].
    void validate() const;
};

enum class Split { train, validation };

struct ManifestRecord {
    std::string image_id;
    std::string image_path;
    std::vector<std::string> captions;
    bool operator==(const ManifestRecord&) const = default;
};

struct DatasetManifest {
    std::filesystem::path root_path;
    std::vector<ManifestRecord> records;
    Split split = Split::train;

    std::size_t pair_count() const;
};

struct ProvenanceRecord {
    std::string image_id;
    std::string seed_caption;
    std::uint64_t sampler_seed = 0;
    std::string captioner_id;
    bool operator==(const ProvenanceRecord&) const = default;
};

struct DistilledDataset {
    std::vector<ImageTextPair> pairs;
    // Target captions per image (η). Freshly synthesized sets carry one caption
    // per image until caption expansion fills them up to cpi.
    int cpi = 1;
    std::vector<ProvenanceRecord> provenance;

    // |S|: one training pair per (image, caption).
    std::size_t pair_count() const;
    std::size_t image_count() const { return pairs.size(); }
    bool expanded() const;
    // Structural checks; with `require_full_cpi` every image must hold exactly cpi captions.
    void validate(bool require_full_cpi = false) const;
};

std::string trim(std::string_view s);

DatasetManifest load_manifest(const std::filesystem::path& path, Split split = Split::train);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
// Reads every referenced image.
std::vector<ImageTextPair> load_pairs(const DatasetManifest& manifest);

// Writes images + manifest.jsonl + provenance.jsonl; returns the manifest path.
std::filesystem::path write_distilled(const DistilledDataset& dataset, const std::filesystem::path& out_dir);
DistilledDataset load_distilled(const std::filesystem::path& dir);

std::vector<ProvenanceRecord> load_provenance(const std::filesystem::path& path);

// Every caption of every record, in manifest order.
std::vector<std::string> caption_pool(std::span<const ImageTextPair> pairs);

}  // namespace edge
