#include "edge/text_encoder.hpp"

#include <cctype>
#include <cstdint>

#include "edge/errors.hpp"
#include "edge/kernels.hpp"

namespace edge {

std::vector<std::string> tokenize(std::string_view caption) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : caption) {
        const auto u = static_cast<unsigned char>(ch);
        if (std::isalnum(u) || u >= 0x80) {
            cur += static_cast<char>(std::tolower(u));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

int token_bucket(std::string_view token, int buckets) {
    std::uint64_t h = 1469598103934665603ull;
    for (char ch : token) {
        h ^= static_cast<unsigned char>(ch);
        h *= 1099511628211ull;
    }
    h ^= h >> 29;
    return static_cast<int>(h % static_cast<std::uint64_t>(buckets));
}

std::vector<int> caption_tokens(std::string_view caption, int buckets) {
    const auto toks = tokenize(caption);
    if (toks.empty()) throw ValidationError("caption has no tokens: '" + std::string(caption) + "'");
    std::vector<int> ids;
    ids.reserve(toks.size());
    for (const auto& t : toks) ids.push_back(token_bucket(t, buckets));
    return ids;
}

void init_text_encoder(ParamMap& params, const TextEncoderSpec& spec, Rng& rng, double stddev) {
    if (spec.buckets < 1 || spec.dim < 1) throw ConfigError("text encoder needs positive bucket count and dimension");
    add_param(params, spec.table_name(), Tensor::randn({spec.buckets, spec.dim}, rng, stddev));
}

namespace {
std::vector<std::vector<int>> tokens_for(const TextEncoderSpec& spec, const std::vector<std::string>& captions) {
    std::vector<std::vector<int>> tokens;
    tokens.reserve(captions.size());
    for (const auto& c : captions) tokens.push_back(caption_tokens(c, spec.buckets));
    return tokens;
}
}  // namespace

Var text_forward(Tape& tape, ParamMap& params, const TextEncoderSpec& spec, const std::vector<std::string>& captions) {
    Var table = tape.param(params.at(spec.table_name()));
    return ops::embedding_mean(tape, table, tokens_for(spec, captions));
}

Tensor text_embed(const ParamMap& params, const TextEncoderSpec& spec, const std::vector<std::string>& captions) {
    const Tensor& table = params.at(spec.table_name()).value;
    const auto tokens = tokens_for(spec, captions);
    Tensor out({static_cast<int>(captions.size()), spec.dim});
    for (std::size_t n = 0; n < tokens.size(); ++n) {
        const double inv = 1.0 / static_cast<double>(tokens[n].size());
        for (int t : tokens[n]) kernels::axpy(inv, table.row(static_cast<std::size_t>(t)), out.row(n));
    }
    return out;
}

}  // namespace edge
