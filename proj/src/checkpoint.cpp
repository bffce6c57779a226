#include "edge/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "edge/errors.hpp"

namespace edge {

namespace {

constexpr char kMagic[8] = {'E', 'D', 'G', 'E', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::filesystem::path& path) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw LoadError("truncated checkpoint " + path.string());
    return v;
}

struct Header {
    nlohmann::json json;
    std::streampos data_offset;
};

Header read_header(std::ifstream& in, const std::filesystem::path& path) {
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw LoadError("not a checkpoint file: " + path.string());
    const auto version = get<std::uint32_t>(in, path);
    if (version != kCheckpointVersion)
        throw LoadError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
    const auto len = get<std::uint64_t>(in, path);
    std::string text(len, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw LoadError("truncated checkpoint header in " + path.string());
    Header h;
    try {
        h.json = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw LoadError("corrupt checkpoint header in " + path.string() + ": " + e.what());
    }
    h.data_offset = in.tellg();
    return h;
}

}  // namespace

nlohmann::json diffusion_config_to_json(const DiffusionConfig& c) {
    return {{"image_channels", c.image_channels}, {"image_size", c.image_size},
            {"codec", codec_name(c.codec)},       {"patch", c.patch},
            {"ae_latent_channels", c.ae_latent_channels}, {"ae_hidden", c.ae_hidden},
            {"cond_dim", c.cond_dim},             {"text_buckets", c.text_buckets},
            {"base_channels", c.base_channels},   {"time_features", c.time_features},
            {"emb_dim", c.emb_dim},               {"edge_pool_grid", c.edge_pool_grid},
            {"cond_map_channels", c.cond_map_channels},
            {"timesteps", c.timesteps},           {"clip_denoised", c.clip_denoised},
            {"prediction", prediction_name(c.prediction)}};
}

DiffusionConfig diffusion_config_from_json(const nlohmann::json& j) {
    DiffusionConfig c;
    try {
        c.image_channels = j.at("image_channels").get<int>();
        c.image_size = j.at("image_size").get<int>();
        c.codec = parse_codec(j.at("codec").get<std::string>());
        c.patch = j.at("patch").get<int>();
        c.ae_latent_channels = j.at("ae_latent_channels").get<int>();
        c.ae_hidden = j.at("ae_hidden").get<int>();
        c.cond_dim = j.at("cond_dim").get<int>();
        c.text_buckets = j.at("text_buckets").get<int>();
        c.base_channels = j.at("base_channels").get<int>();
        c.time_features = j.at("time_features").get<int>();
        c.emb_dim = j.at("emb_dim").get<int>();
        c.edge_pool_grid = j.at("edge_pool_grid").get<int>();
        c.cond_map_channels = j.at("cond_map_channels").get<int>();
        c.timesteps = j.at("timesteps").get<int>();
        c.clip_denoised = j.at("clip_denoised").get<bool>();
        c.prediction = parse_prediction(j.at("prediction").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(std::string("bad model configuration: ") + e.what());
    }
    return c;
}

void save_checkpoint(const DiffusionModel& model, const std::filesystem::path& path, const nlohmann::json& metadata) {
    nlohmann::json header;
    header["format"] = "edge-diffusion";
    header["config"] = diffusion_config_to_json(model.config());
    header["schedule"] = {{"alpha_bar", model.schedule().alpha_bar}};
    header["metadata"] = metadata;
    nlohmann::json index = nlohmann::json::array();
    for (const auto& [name, p] : model.params())
        index.push_back({{"name", name}, {"shape", p.value.shape}, {"trainable", p.trainable}});
    header["tensors"] = index;
    const std::string text = header.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw WriteError("cannot open " + path.string() + " for writing");
    out.write(kMagic, 8);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, p] : model.params())
        out.write(reinterpret_cast<const char*>(p.value.data.data()),
                  static_cast<std::streamsize>(p.value.data.size() * sizeof(double)));
    if (!out) throw WriteError("failed writing " + path.string());
}

void save_checkpoint(const DiffusionModel& model, const std::filesystem::path& path) {
    save_checkpoint(model, path, nlohmann::json::object());
}

DiffusionModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open checkpoint " + path.string());
    const Header h = read_header(in, path);
    const DiffusionConfig config = diffusion_config_from_json(h.json.at("config"));
    NoiseSchedule schedule;
    ParamMap params;
    try {
        schedule = NoiseSchedule::from_alpha_bar(h.json.at("schedule").at("alpha_bar").get<std::vector<double>>());
        for (const auto& entry : h.json.at("tensors")) {
            const auto name = entry.at("name").get<std::string>();
            Tensor t = Tensor::zeros(entry.at("shape").get<std::vector<int>>());
            if (!in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(double))))
                throw LoadError("truncated tensor data for " + name + " in " + path.string());
            Param& p = add_param(params, name, std::move(t));
            p.trainable = entry.value("trainable", true);
        }
    } catch (const nlohmann::json::exception& e) {
        throw LoadError("corrupt checkpoint header in " + path.string() + ": " + e.what());
    }
    in.peek();
    if (!in.eof()) throw LoadError("trailing bytes after tensor data in " + path.string());
    return DiffusionModel(config, std::move(schedule), std::move(params));
}

nlohmann::json checkpoint_metadata(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open checkpoint " + path.string());
    return read_header(in, path).json.value("metadata", nlohmann::json::object());
}

}  // namespace edge
