#include "edge/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "edge/errors.hpp"

namespace edge {

namespace {

std::string fmt(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}
std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(int v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

template <class T>
std::string join(const std::vector<T>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + std::string(xs[i]);
    return out;
}
template <class T>
    requires std::is_arithmetic_v<T>
std::string join(const std::vector<T>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + std::to_string(xs[i]);
    return out;
}

struct FieldError {
    std::string message;
};

template <class T>
T parse_number(const std::string& s, const char* what) {
    T v{};
    const auto t = trim(s);
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size() || t.empty()) throw FieldError{std::string("expected ") + what + ", got '" + s + "'"};
    return v;
}

int to_int(const std::string& s) { return parse_number<int>(s, "an integer"); }
std::uint64_t to_u64(const std::string& s) { return parse_number<std::uint64_t>(s, "a non-negative integer"); }
double to_double(const std::string& s) { return parse_number<double>(s, "a number"); }
bool to_bool(const std::string& s) {
    const auto t = trim(s);
    if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
    if (t == "false" || t == "0" || t == "no" || t == "off") return false;
    throw FieldError{"expected true/false, got '" + s + "'"};
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

struct Field {
    std::string key;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define EDGE_FIELD(KEY, MEMBER, CONV) \
    Field { KEY, [](const ExperimentConfig& c) { return fmt(c.MEMBER); }, [](ExperimentConfig& c, const std::string& v) { c.MEMBER = CONV(v); } }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f{
            {"run.out_dir", [](const ExperimentConfig& c) { return c.out_dir.string(); },
             [](ExperimentConfig& c, const std::string& v) { c.out_dir = trim(v); }},
            {"run.run_id", [](const ExperimentConfig& c) { return c.run_id; },
             [](ExperimentConfig& c, const std::string& v) { c.run_id = trim(v); }},
            EDGE_FIELD("run.seed", seed, to_u64),
            EDGE_FIELD("corpus.image_size", image_size, to_int),
            {"corpus.manifest", [](const ExperimentConfig& c) { return c.corpus.manifest.string(); },
             [](ExperimentConfig& c, const std::string& v) { c.corpus.manifest = trim(v); }},
            EDGE_FIELD("corpus.toy_images", corpus.toy_images, to_int),
            EDGE_FIELD("corpus.toy_captions", corpus.toy_captions, to_int),
            EDGE_FIELD("corpus.toy_seed", corpus.toy_seed, to_u64),
            {"validation.manifest", [](const ExperimentConfig& c) { return c.validation.manifest.string(); },
             [](ExperimentConfig& c, const std::string& v) { c.validation.manifest = trim(v); }},
            EDGE_FIELD("validation.toy_images", validation.toy_images, to_int),
            EDGE_FIELD("validation.toy_captions", validation.toy_captions, to_int),
            EDGE_FIELD("validation.toy_seed", validation.toy_seed, to_u64),
            {"model.codec", [](const ExperimentConfig& c) { return codec_name(c.model.codec); },
             [](ExperimentConfig& c, const std::string& v) { c.model.codec = parse_codec(trim(v)); }},
            EDGE_FIELD("model.patch", model.patch, to_int),
            EDGE_FIELD("model.ae_latent_channels", model.ae_latent_channels, to_int),
            EDGE_FIELD("model.ae_hidden", model.ae_hidden, to_int),
            EDGE_FIELD("model.cond_dim", model.cond_dim, to_int),
            EDGE_FIELD("model.text_buckets", model.text_buckets, to_int),
            EDGE_FIELD("model.base_channels", model.base_channels, to_int),
            EDGE_FIELD("model.time_features", model.time_features, to_int),
            EDGE_FIELD("model.emb_dim", model.emb_dim, to_int),
            EDGE_FIELD("model.edge_pool_grid", model.edge_pool_grid, to_int),
            EDGE_FIELD("model.cond_map_channels", model.cond_map_channels, to_int),
            EDGE_FIELD("model.timesteps", model.timesteps, to_int),
            EDGE_FIELD("model.clip_denoised", model.clip_denoised, to_bool),
            {"model.prediction", [](const ExperimentConfig& c) { return prediction_name(c.model.prediction); },
             [](ExperimentConfig& c, const std::string& v) { c.model.prediction = parse_prediction(trim(v)); }},
            EDGE_FIELD("model.init_seed", model_init_seed, to_u64),
            {"pretrain.checkpoint", [](const ExperimentConfig& c) { return c.pretrain.checkpoint.string(); },
             [](ExperimentConfig& c, const std::string& v) { c.pretrain.checkpoint = trim(v); }},
            EDGE_FIELD("pretrain.epochs", pretrain.epochs, to_int),
            EDGE_FIELD("pretrain.learning_rate", pretrain.learning_rate, to_double),
            EDGE_FIELD("pretrain.batch_size", pretrain.batch_size, to_int),
            EDGE_FIELD("pretrain.snr_cap", pretrain.snr_cap, to_double),
            {"pretrain.optimizer", [](const ExperimentConfig& c) { return optimizer_name(c.pretrain.optimizer); },
             [](ExperimentConfig& c, const std::string& v) { c.pretrain.optimizer = parse_optimizer(trim(v)); }},
            EDGE_FIELD("train.learning_rate", train.learning_rate, to_double),
            EDGE_FIELD("train.batch_size", train.batch_size, to_int),
            EDGE_FIELD("train.epochs", train.epochs, to_int),
            EDGE_FIELD("train.tau", train.tau, to_double),
            EDGE_FIELD("train.lambda_c", train.lambda_c, to_double),
            EDGE_FIELD("train.lambda_d", train.lambda_d, to_double),
            EDGE_FIELD("train.mse_weight", train.mse_weight, to_double),
            EDGE_FIELD("train.mse_snr_cap", train.mse_snr_cap, to_double),
            {"train.mask", [](const ExperimentConfig& c) { return loss_mask_name(c.train.mask); },
             [](ExperimentConfig& c, const std::string& v) { c.train.mask = parse_loss_mask(trim(v)); }},
            {"train.trainable_prefixes", [](const ExperimentConfig& c) { return join(c.train.trainable_prefixes); },
             [](ExperimentConfig& c, const std::string& v) { c.train.trainable_prefixes = split_list(v); }},
            {"train.optimizer", [](const ExperimentConfig& c) { return optimizer_name(c.train.optimizer); },
             [](ExperimentConfig& c, const std::string& v) { c.train.optimizer = parse_optimizer(trim(v)); }},
            EDGE_FIELD("synthesis.pair_count", synthesis.pair_count, to_int),
            EDGE_FIELD("synthesis.cpi", synthesis.cpi, to_int),
            EDGE_FIELD("synthesis.sampler_steps", synthesis.sampler_steps, to_int),
            EDGE_FIELD("synthesis.rephrase", synthesis.rephrase, to_bool),
            {"captioner.kind", [](const ExperimentConfig& c) { return c.captioner.kind; },
             [](ExperimentConfig& c, const std::string& v) { c.captioner.kind = trim(v); }},
            {"captioner.endpoint", [](const ExperimentConfig& c) { return c.captioner.client.endpoint; },
             [](ExperimentConfig& c, const std::string& v) { c.captioner.client.endpoint = trim(v); }},
            EDGE_FIELD("captioner.retries", captioner.client.retries, to_int),
            {"captioner.backoff_ms", [](const ExperimentConfig& c) { return fmt(static_cast<int>(c.captioner.client.backoff.count())); },
             [](ExperimentConfig& c, const std::string& v) { c.captioner.client.backoff = std::chrono::milliseconds(to_int(v)); }},
            {"captioner.timeout_ms", [](const ExperimentConfig& c) { return fmt(static_cast<int>(c.captioner.client.timeout.count())); },
             [](ExperimentConfig& c, const std::string& v) { c.captioner.client.timeout = std::chrono::milliseconds(to_int(v)); }},
            {"captioner.prompt", [](const ExperimentConfig& c) { return c.captioner.prompt; },
             [](ExperimentConfig& c, const std::string& v) { c.captioner.prompt = trim(v); }},
            EDGE_FIELD("captioner.max_in_flight", captioner.max_in_flight, to_int),
            {"eval.arch", [](const ExperimentConfig& c) { return c.eval.encoder.image_arch; },
             [](ExperimentConfig& c, const std::string& v) { c.eval.encoder.image_arch = trim(v); }},
            EDGE_FIELD("eval.embed_dim", eval.encoder.embed_dim, to_int),
            EDGE_FIELD("eval.text_buckets", eval.encoder.text_buckets, to_int),
            EDGE_FIELD("eval.freeze_text", eval.encoder.freeze_text, to_bool),
            EDGE_FIELD("eval.tau", eval.encoder.tau, to_double),
            EDGE_FIELD("eval.learning_rate", eval.encoder.learning_rate, to_double),
            EDGE_FIELD("eval.epochs", eval.encoder.epochs, to_int),
            EDGE_FIELD("eval.batch_size", eval.encoder.batch_size, to_int),
            {"eval.optimizer", [](const ExperimentConfig& c) { return optimizer_name(c.eval.encoder.optimizer); },
             [](ExperimentConfig& c, const std::string& v) { c.eval.encoder.optimizer = parse_optimizer(trim(v)); }},
            EDGE_FIELD("eval.text_init_seed", eval.encoder.text_init_seed, to_u64),
            {"eval.seeds", [](const ExperimentConfig& c) { return join(c.eval.seeds); },
             [](ExperimentConfig& c, const std::string& v) { c.eval.seeds = parse_seed_list(v); }},
            {"eval.ks", [](const ExperimentConfig& c) { return join(c.eval.ks); },
             [](ExperimentConfig& c, const std::string& v) { c.eval.ks = parse_int_list(v); }},
        };
        return f;
    }();
    return table;
}

#undef EDGE_FIELD

const Field* find_field(const std::string& key) {
    for (const auto& f : fields())
        if (f.key == key) return &f;
    return nullptr;
}

// Best-effort line lookup for diagnostics: the first "key =" line inside [section].
int line_of(const std::string& text, const std::string& dotted) {
    const auto dot = dotted.find('.');
    const std::string section = dotted.substr(0, dot), key = dotted.substr(dot + 1);
    std::istringstream in(text);
    std::string current;
    int n = 0;
    for (std::string line; std::getline(in, line);) {
        ++n;
        const std::string t = trim(line);
        if (t.size() > 2 && t.front() == '[' && t.back() == ']') {
            current = trim(t.substr(1, t.size() - 2));
            continue;
        }
        const auto eq = t.find('=');
        if (current == section && eq != std::string::npos && trim(t.substr(0, eq)) == key) return n;
    }
    return 0;
}

void apply(ExperimentConfig& c, const std::string& key, const std::string& value, const std::string& where) {
    const Field* f = find_field(key);
    if (!f) throw ConfigError(where + "unknown config field '" + key + "'");
    try {
        f->set(c, value);
    } catch (const FieldError& e) {
        throw ConfigError(where + "config field '" + key + "': " + e.message);
    } catch (const ConfigError& e) {
        throw ConfigError(where + "config field '" + key + "': " + e.what());
    }
}

}  // namespace

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> out;
    for (const auto& item : split_list(text)) {
        try {
            out.push_back(to_u64(item));
        } catch (const FieldError& e) {
            throw ConfigError("seed list: " + e.message);
        }
    }
    if (out.empty()) throw ConfigError("seed list is empty");
    return out;
}

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    for (const auto& item : split_list(text)) {
        try {
            out.push_back(to_int(item));
        } catch (const FieldError& e) {
            throw ConfigError("integer list: " + e.message);
        }
    }
    if (out.empty()) throw ConfigError("integer list is empty");
    return out;
}

void ExperimentConfig::validate() const {
    if (run_id.empty() || run_id.find('/') != std::string::npos) throw ConfigError("run.run_id must be a plain non-empty name");
    auto check_source = [](const CorpusSource& s, const char* section) {
        if (s.manifest.empty()) {
            if (s.toy_images < 1) throw ConfigError(std::string(section) + ".toy_images must be positive");
            if (static_cast<std::size_t>(s.toy_images) > ToyVocabulary::standard().combinations())
                throw ConfigError(std::string(section) + ".toy_images exceeds the " +
                                  std::to_string(ToyVocabulary::standard().combinations()) + " distinct toy images");
            if (s.toy_captions < 1) throw ConfigError(std::string(section) + ".toy_captions must be positive");
        }
    };
    check_source(corpus, "corpus");
    check_source(validation, "validation");
    model.validate();
    if (model.image_size != image_size || eval.encoder.image_size != image_size)
        throw ConfigError("model and eval image sizes must equal corpus.image_size");
    if (pretrain.checkpoint.empty()) {
        if (pretrain.epochs < 0) throw ConfigError("pretrain.epochs must be non-negative");
        if (!(pretrain.learning_rate > 0.0)) throw ConfigError("pretrain.learning_rate must be positive");
        if (pretrain.batch_size < 2) throw ConfigError("pretrain.batch_size must be at least 2");
    }
    train.validate();
    if (synthesis.pair_count < 1 || synthesis.cpi < 1) throw ConfigError("synthesis.pair_count and synthesis.cpi must be positive");
    if (synthesis.pair_count % synthesis.cpi) throw ConfigError("synthesis.pair_count must be divisible by synthesis.cpi");
    if (synthesis.sampler_steps < 1 || synthesis.sampler_steps > model.timesteps)
        throw ConfigError("synthesis.sampler_steps must lie in [1, model.timesteps]");
    if (captioner.kind != "template" && captioner.kind != "mllm")
        throw ConfigError("captioner.kind must be 'template' or 'mllm'");
    prompt_by_name(captioner.prompt);
    if (captioner.max_in_flight < 1) throw ConfigError("captioner.max_in_flight must be positive");
    if (captioner.client.retries < 0) throw ConfigError("captioner.retries must be non-negative");
    eval.encoder.validate();
    if (eval.seeds.empty()) throw ConfigError("eval.seeds is empty");
    for (int k : eval.ks)
        if (k < 1) throw ConfigError("eval.ks entries must be positive");
}

ExperimentConfig parse_config(const std::string& text, const std::map<std::string, std::string>& overrides) {
    boost::property_tree::ptree tree;
    std::istringstream in(text);
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError("config syntax error at line " + std::to_string(e.line()) + ": " + e.message());
    }
    ExperimentConfig c;
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty())
            throw ConfigError("config key '" + section + "' at line " + std::to_string(line_of(text, section + ".")) +
                              " is outside any section");
        for (const auto& [key, value] : body) {
            const std::string dotted = section + "." + key;
            const int line = line_of(text, dotted);
            apply(c, dotted, value.data(), line ? "line " + std::to_string(line) + ": " : "");
        }
    }
    for (const auto& [key, value] : overrides) apply(c, key, value, "override: ");
    if (const char* env = std::getenv(kCaptionerEndpointEnv); env && *env) c.captioner.client.endpoint = env;
    c.model.image_size = c.image_size;
    c.eval.encoder.image_size = c.image_size;
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path, const std::map<std::string, std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse_config(ss.str(), overrides);
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

std::map<std::string, std::string> flatten_config(const ExperimentConfig& config) {
    std::map<std::string, std::string> out;
    for (const auto& f : fields()) out[f.key] = f.get(config);
    return out;
}

std::string render_config(const ExperimentConfig& config) {
    std::ostringstream os;
    std::string section;
    for (const auto& f : fields()) {
        const auto dot = f.key.find('.');
        const std::string s = f.key.substr(0, dot);
        if (s != section) {
            os << (section.empty() ? "" : "\n") << "[" << s << "]\n";
            section = s;
        }
        os << f.key.substr(dot + 1) << " = " << f.get(config) << "\n";
    }
    return os.str();
}

}  // namespace edge
