#include "edge/caption.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"

#include "edge/errors.hpp"
#include "edge/tensor.hpp"

namespace edge {

const PromptTemplate& llava_prompt() {
    static const PromptTemplate p{"llava_style", "Describe the image in one sentence"};
    return p;
}

const PromptTemplate& gpt_prompt() {
    static const PromptTemplate p{"gpt_style", "Describe the image briefly in one sentence. Do not start with 'the image.'"};
    return p;
}

const std::vector<PromptTemplate>& builtin_prompts() {
    static const std::vector<PromptTemplate> all{llava_prompt(), gpt_prompt()};
    return all;
}

const PromptTemplate& prompt_by_name(const std::string& name) {
    if (name == "llava_style" || name == "llava") return llava_prompt();
    if (name == "gpt_style" || name == "gpt") return gpt_prompt();
    throw ConfigError("unknown prompt template '" + name + "' (expected llava_style or gpt_style)");
}

void CaptionRequest::validate() const {
    if (prompt.empty()) throw ValidationError("caption request prompt is empty");
    if (max_captions < 1) throw ValidationError("caption request max_captions must be positive");
    if (variation < 0) throw ValidationError("caption request variation must be non-negative");
    validate_image(image);
}

// ---------------------------------------------------------------- template captioner

TemplateCaptioner::TemplateCaptioner(ToyVocabulary vocab, double background)
    : vocab_(std::move(vocab)), background_(background) {}

namespace {

std::uint64_t fnv1a(std::uint64_t h, std::uint8_t byte) {
    return (h ^ byte) * 1099511628211ULL;
}

std::string generic_sentence(const Image& img, int variation) {
    static const std::vector<std::string> openers{"a picture of", "a view of", "an image showing", "a scene with",
                                                  "a photo of", "a rendering of"};
    static const std::vector<std::string> adjectives{"bright", "dark", "blurry", "colorful", "muted",
                                                     "textured", "smooth", "grainy"};
    static const std::vector<std::string> nouns{"pattern", "shape", "object", "surface", "texture", "figure"};
    static const std::vector<std::string> places{"in the center", "near the edge", "on a plain background",
                                                 "against a dark backdrop", "in soft light"};
    std::uint64_t h = 14695981039346656037ULL;
    for (double v : img.pixels) h = fnv1a(h, static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
    Rng rng(h);
    auto pick = [&](const std::vector<std::string>& words) {
        return words[std::uniform_int_distribution<std::size_t>(0, words.size() - 1)(rng)];
    };
    const std::string adj = pick(adjectives), noun = pick(nouns), place = pick(places);
    const std::size_t n_open = openers.size();
    std::string s = openers[static_cast<std::size_t>(variation) % n_open] + " a " + adj + " " + noun + " " + place;
    if (static_cast<std::size_t>(variation) >= n_open) s += " variant " + std::to_string(static_cast<std::size_t>(variation) / n_open);
    return s;
}

}  // namespace

std::string TemplateCaptioner::caption(const CaptionRequest& request) {
    request.validate();
    if (request.image.channels == 3) {
        if (auto attrs = estimate_toy_attributes(request.image, vocab_, background_))
            return toy_caption(vocab_, *attrs, request.variation);
    }
    return generic_sentence(request.image, request.variation);
}

// ---------------------------------------------------------------- MLLM client

MllmClient::MllmClient(MllmClientConfig config) : config_(std::move(config)) {
    if (config_.retries < 0) throw ConfigError("captioner retries must be non-negative");
    const std::string& url = config_.endpoint;
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos || url.substr(0, scheme_end) != "http")
        throw ConfigError("captioner endpoint must be an http:// URL, got '" + url + "'");
    const auto path_start = url.find('/', scheme_end + 3);
    base_ = path_start == std::string::npos ? url : url.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
    if (base_.size() <= scheme_end + 3) throw ConfigError("captioner endpoint has no host: '" + url + "'");
}

std::string validate_caption_reply(const std::string& raw, std::size_t max_words) {
    const std::string text = trim(raw);
    if (text.empty()) throw ValidationError("captioner returned an empty caption");
    std::istringstream words(text);
    std::size_t n = 0;
    for (std::string w; words >> w;) ++n;
    if (n > max_words)
        throw ValidationError("captioner reply has " + std::to_string(n) + " words (limit " + std::to_string(max_words) + ")");
    return text;
}

std::string MllmClient::post(const std::string& image_b64, const std::string& prompt) {
    const std::string body = nlohmann::json{{"image", image_b64}, {"prompt", prompt}}.dump();
    std::string last_error;
    const int attempts = 1 + config_.retries;
    for (int attempt = 0; attempt < attempts; ++attempt) {
        if (attempt > 0) std::this_thread::sleep_for(config_.backoff * (1 << std::min(attempt - 1, 10)));
        httplib::Client client(base_);
        const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
        const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
        client.set_connection_timeout(secs.count(), usecs.count());
        client.set_read_timeout(secs.count(), usecs.count());
        client.set_write_timeout(secs.count(), usecs.count());
        auto res = client.Post(path_, body, "application/json");
        if (!res) {
            last_error = httplib::to_string(res.error());
            continue;
        }
        if (res->status != 200) {
            last_error = "HTTP status " + std::to_string(res->status);
            continue;
        }
        nlohmann::json reply;
        try {
            reply = nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception&) {
            throw ValidationError("captioner reply is not JSON");
        }
        if (!reply.is_object() || !reply.contains("caption") || !reply["caption"].is_string())
            throw ValidationError("captioner reply lacks a string 'caption' field");
        return validate_caption_reply(reply["caption"].get<std::string>(), config_.max_words);
    }
    throw TransportError("captioner at " + config_.endpoint + " failed after " + std::to_string(attempts) +
                         " attempts: " + last_error);
}

std::string MllmClient::caption(const CaptionRequest& request) {
    request.validate();
    return post(base64_encode(encode_png(request.image)), request.prompt);
}

std::string MllmClient::rephrase(const std::string& caption) {
    return post("", std::string(kRephrasePrompt) + caption);
}

// ---------------------------------------------------------------- expansion

DistilledDataset expand(const DistilledDataset& dataset, int cpi, Captioner& captioner, const ExpandOptions& options) {
    if (cpi < 1) throw ValidationError("cpi must be positive");
    if (options.max_in_flight < 1) throw ValidationError("max_in_flight must be positive");
    dataset.validate();
    for (const auto& p : dataset.pairs)
        if (p.captions.size() > static_cast<std::size_t>(cpi))
            throw ValidationError("image '" + p.image_id + "' already has " + std::to_string(p.captions.size()) +
                                  " captions, more than cpi " + std::to_string(cpi));

    struct Job {
        std::size_t image;
        int slot;
    };
    std::vector<Job> jobs;
    for (std::size_t i = 0; i < dataset.pairs.size(); ++i)
        for (int s = static_cast<int>(dataset.pairs[i].captions.size()); s < cpi; ++s) jobs.push_back({i, s});

    DistilledDataset out = dataset;
    out.cpi = cpi;
    if (jobs.empty()) return out;

    std::vector<std::string> results(jobs.size());
    const std::size_t window = static_cast<std::size_t>(options.max_in_flight);
    for (std::size_t b = 0; b < jobs.size(); b += window) {
        const std::size_t e = std::min(jobs.size(), b + window);
        std::vector<std::future<std::string>> inflight;
        for (std::size_t j = b; j < e; ++j) {
            CaptionRequest req{dataset.pairs[jobs[j].image].image, options.prompt.text, cpi, captioner.id(), jobs[j].slot};
            inflight.push_back(std::async(std::launch::async, [&captioner, req = std::move(req)] {
                return captioner.caption(req);
            }));
        }
        std::string failure;
        for (std::size_t j = b; j < e; ++j) {
            try {
                results[j] = trim(inflight[j - b].get());
                if (results[j].empty()) throw ValidationError("empty caption");
            } catch (const std::exception& ex) {
                if (failure.empty())
                    failure = "caption expansion failed for image '" + dataset.pairs[jobs[j].image].image_id + "': " + ex.what();
            }
        }
        if (!failure.empty()) throw ExpansionError(failure);
    }
    for (std::size_t j = 0; j < jobs.size(); ++j) out.pairs[jobs[j].image].captions.push_back(results[j]);

    for (auto& rec : out.provenance) rec.captioner_id += "+" + captioner.id();
    out.validate(true);
    return out;
}

std::vector<std::string> rephrase_preprocess(const std::vector<std::string>& captions, Rephraser& client) {
    if (captions.empty()) throw ValidationError("rephrase_preprocess needs at least one caption");
    std::vector<std::string> out;
    out.reserve(captions.size());
    for (const auto& c : captions) {
        std::string r = trim(client.rephrase(c));
        if (r.empty()) throw ValidationError("rephrasing returned an empty caption for '" + c + "'");
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace edge
