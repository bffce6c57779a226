#include "edge/dataset_io.hpp"

#include <fstream>
#include "json.hpp"
#include <set>
#include <sstream>

#include "edge/errors.hpp"

namespace edge {

namespace fs = std::filesystem;
using nlohmann::json;

std::string trim(std::string_view s) {
    const auto ws = " \t\r\n\f\v";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(ws);
    return std::string(s.substr(b, e - b + 1));
}

void ImageTextPair::validate() const {
    if (captions.empty()) throw ValidationError("image '" + image_id + "' has no captions");
    for (const auto& c : captions)
        if (trim(c).empty()) throw ValidationError("image '" + image_id + "' has an empty caption");
    validate_image(image);
}

std::size_t DatasetManifest::pair_count() const {
    std::size_t n = 0;
    for (const auto& r : records) n += r.captions.size();
    return n;
}

std::size_t DistilledDataset::pair_count() const {
    std::size_t n = 0;
    for (const auto& p : pairs) n += p.captions.size();
    return n;
}

bool DistilledDataset::expanded() const {
    for (const auto& p : pairs)
        if (p.captions.size() != static_cast<std::size_t>(cpi)) return false;
    return true;
}

void DistilledDataset::validate(bool require_full_cpi) const {
    if (cpi < 1) throw ValidationError("cpi must be positive");
    std::set<std::string> ids;
    for (const auto& p : pairs) {
        p.validate();
        if (!ids.insert(p.image_id).second) throw ValidationError("duplicate image_id '" + p.image_id + "'");
        if (p.captions.size() > static_cast<std::size_t>(cpi))
            throw ValidationError("image '" + p.image_id + "' carries more than cpi captions");
        if (require_full_cpi && p.captions.size() != static_cast<std::size_t>(cpi))
            throw ValidationError("image '" + p.image_id + "' carries " + std::to_string(p.captions.size()) +
                                  " captions, expected " + std::to_string(cpi));
    }
}

namespace {

std::vector<json> read_jsonl(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw LoadError("cannot open " + path.string());
    std::vector<json> out;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            out.push_back(json::parse(line));
        } catch (const json::parse_error& e) {
            throw LoadError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void write_jsonl(const fs::path& path, const std::vector<json>& rows) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw WriteError("cannot open " + path.string() + " for writing");
    for (const auto& r : rows) os << r.dump() << '\n';
    if (!os) throw WriteError("failed writing " + path.string());
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path, Split split) {
    if (!fs::exists(path)) throw LoadError("manifest not found: " + path.string());
    DatasetManifest m;
    m.root_path = path.parent_path();
    m.split = split;
    std::set<std::string> ids;
    int lineno = 0;
    for (const auto& row : read_jsonl(path)) {
        ++lineno;
        ManifestRecord r;
        try {
            r.image_id = row.at("image_id").get<std::string>();
            r.image_path = row.at("image_path").get<std::string>();
            r.captions = row.at("captions").get<std::vector<std::string>>();
        } catch (const json::exception& e) {
            throw LoadError(path.string() + ": record " + std::to_string(lineno) + ": " + e.what());
        }
        if (!ids.insert(r.image_id).second) throw ValidationError("duplicate image_id '" + r.image_id + "' in " + path.string());
        if (r.captions.empty()) throw ValidationError("image '" + r.image_id + "' has no captions");
        for (const auto& c : r.captions)
            if (trim(c).empty()) throw ValidationError("image '" + r.image_id + "' has an empty caption");
        if (!fs::exists(m.root_path / r.image_path))
            throw ValidationError("image file for '" + r.image_id + "' missing: " + (m.root_path / r.image_path).string());
        m.records.push_back(std::move(r));
    }
    return m;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
    std::vector<json> rows;
    rows.reserve(manifest.records.size());
    for (const auto& r : manifest.records)
        rows.push_back(json{{"image_id", r.image_id}, {"image_path", r.image_path}, {"captions", r.captions}});
    write_jsonl(path, rows);
}

std::vector<ImageTextPair> load_pairs(const DatasetManifest& manifest) {
    std::vector<ImageTextPair> out;
    out.reserve(manifest.records.size());
    for (const auto& r : manifest.records) {
        ImageTextPair p{r.image_id, read_png(manifest.root_path / r.image_path), r.captions};
        p.validate();
        out.push_back(std::move(p));
    }
    return out;
}

fs::path write_distilled(const DistilledDataset& dataset, const fs::path& out_dir) {
    dataset.validate();
    std::error_code ec;
    fs::create_directories(out_dir / "images", ec);
    if (ec) throw WriteError("cannot create " + (out_dir / "images").string() + ": " + ec.message());
    DatasetManifest m;
    m.root_path = out_dir;
    for (const auto& p : dataset.pairs) {
        const std::string rel = "images/" + p.image_id + ".png";
        write_png(out_dir / rel, p.image);
        m.records.push_back({p.image_id, rel, p.captions});
    }
    const fs::path manifest_path = out_dir / "manifest.jsonl";
    write_manifest(m, manifest_path);
    std::vector<json> prov;
    for (const auto& r : dataset.provenance)
        prov.push_back(json{{"image_id", r.image_id},
                            {"seed_caption", r.seed_caption},
                            {"sampler_seed", r.sampler_seed},
                            {"captioner_id", r.captioner_id}});
    write_jsonl(out_dir / "provenance.jsonl", prov);
    return manifest_path;
}

std::vector<ProvenanceRecord> load_provenance(const fs::path& path) {
    std::vector<ProvenanceRecord> out;
    for (const auto& row : read_jsonl(path)) {
        try {
            out.push_back({row.at("image_id").get<std::string>(), row.at("seed_caption").get<std::string>(),
                           row.at("sampler_seed").get<std::uint64_t>(), row.at("captioner_id").get<std::string>()});
        } catch (const json::exception& e) {
            throw LoadError(path.string() + ": " + e.what());
        }
    }
    return out;
}

DistilledDataset load_distilled(const fs::path& dir) {
    DistilledDataset d;
    d.pairs = load_pairs(load_manifest(dir / "manifest.jsonl"));
    std::size_t max_caps = 1;
    for (const auto& p : d.pairs) max_caps = std::max(max_caps, p.captions.size());
    d.cpi = static_cast<int>(max_caps);
    if (fs::exists(dir / "provenance.jsonl")) d.provenance = load_provenance(dir / "provenance.jsonl");
    return d;
}

std::vector<std::string> caption_pool(std::span<const ImageTextPair> pairs) {
    std::vector<std::string> out;
    for (const auto& p : pairs) out.insert(out.end(), p.captions.begin(), p.captions.end());
    return out;
}

}  // namespace edge
