#pragma once
// Bag-of-tokens text encoder: lowercase alphanumeric tokens hashed into a fixed
// number of buckets, looked up in a learned table and mean-pooled.

#include <string>
#include <string_view>
#include <vector>

#include "edge/autograd.hpp"

namespace edge {

std::vector<std::string> tokenize(std::string_view caption);
int token_bucket(std::string_view token, int buckets);
// Throws ValidationError for captions without any token.
std::vector<int> caption_tokens(std::string_view caption, int buckets);

struct TextEncoderSpec {
    std::string prefix = "text";
    int buckets = 1024;
    int dim = 32;

    std::string table_name() const { return prefix + ".embed"; }
};

void init_text_encoder(ParamMap& params, const TextEncoderSpec& spec, Rng& rng, double stddev);
Var text_forward(Tape& tape, ParamMap& params, const TextEncoderSpec& spec, const std::vector<std::string>& captions);
// Forward pass without gradient bookkeeping.
Tensor text_embed(const ParamMap& params, const TextEncoderSpec& spec, const std::vector<std::string>& captions);

}  // namespace edge
