#pragma once
// Caption synthesis: growing each synthesized image to cpi captions with a
// pluggable captioner (an HTTP multimodal-model client or an offline template
// captioner for the toy corpus).

#include <chrono>
#include <memory>
#include <string>
#include <vector>

#include "edge/dataset_io.hpp"
#include "edge/toy_corpus.hpp"

namespace edge {

struct PromptTemplate {
    std::string name;
    std::string text;
};

const PromptTemplate& llava_prompt();
const PromptTemplate& gpt_prompt();
const std::vector<PromptTemplate>& builtin_prompts();
// Accepts "llava_style"/"llava" and "gpt_style"/"gpt".
const PromptTemplate& prompt_by_name(const std::string& name);

struct CaptionRequest {
    Image image;
    std::string prompt;
    int max_captions = 1;
    std::string captioner_id;
    // Slot index of the caption being produced; lets deterministic captioners vary output.
    int variation = 0;

    void validate() const;
};

// Implementations must tolerate concurrent calls.
class Captioner {
public:
    virtual ~Captioner() = default;
    virtual std::string id() const = 0;
    virtual std::string caption(const CaptionRequest& request) = 0;
};

class Rephraser {
public:
    virtual ~Rephraser() = default;
    virtual std::string rephrase(const std::string& caption) = 0;
};

class TemplateCaptioner : public Captioner {
public:
    explicit TemplateCaptioner(ToyVocabulary vocab = ToyVocabulary::standard(), double background = 0.1);
    std::string id() const override { return "template"; }
    // Toy images are described by their estimated attributes; anything else gets
    // a sentence seeded by a hash of the 8-bit pixel bytes and the variation.
    std::string caption(const CaptionRequest& request) override;

private:
    ToyVocabulary vocab_;
    double background_;
};

struct MllmClientConfig {
    std::string endpoint = "http://127.0.0.1:8080/caption";
    int retries = 2;
    std::chrono::milliseconds backoff{200};
    std::chrono::milliseconds timeout{10000};
    std::size_t max_words = 64;
    std::string id = "mllm";
};

// Speaks {image: base64 PNG, prompt} -> {caption} as a JSON POST.
class MllmClient : public Captioner, public Rephraser {
public:
    explicit MllmClient(MllmClientConfig config);
    std::string id() const override { return config_.id; }
    std::string caption(const CaptionRequest& request) override;
    // Text-only request: empty image field, rephrasing instruction as prompt.
    std::string rephrase(const std::string& caption) override;
    const MllmClientConfig& config() const { return config_; }

private:
    std::string post(const std::string& image_b64, const std::string& prompt);

    MllmClientConfig config_;
    std::string base_;
    std::string path_;
};

// Instruction prefix used for the pre-processing strategy.
inline constexpr const char* kRephrasePrompt = "Rephrase the following caption in one sentence: ";

// Validates a raw model reply: trimmed, non-empty, at most max_words words.
std::string validate_caption_reply(const std::string& raw, std::size_t max_words);

struct ExpandOptions {
    PromptTemplate prompt = llava_prompt();
    int max_in_flight = 4;
};

// Fills every image up to cpi captions; the existing captions stay in front.
DistilledDataset expand(const DistilledDataset& dataset, int cpi, Captioner& captioner, const ExpandOptions& options = {});

// Rephrases each caption before it is used as a sampling condition.
std::vector<std::string> rephrase_preprocess(const std::vector<std::string>& captions, Rephraser& client);

}  // namespace edge
