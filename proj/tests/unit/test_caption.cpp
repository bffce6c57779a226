#include "doctest.h"

#include <atomic>
#include <mutex>
#include <thread>

#include "httplib.h"
#include "json.hpp"

#include "edge/caption.hpp"
#include "edge/errors.hpp"
#include "helpers.hpp"

using namespace edge;
using nlohmann::json;

TEST_SUITE("caption") {

namespace {

// Local HTTP captioner whose behaviour each test scripts.
class StubServer {
public:
    using Handler = std::function<void(const json& body, httplib::Response& res, int call)>;

    explicit StubServer(Handler h) : handler_(std::move(h)) {
        server_.Post("/caption", [this](const httplib::Request& req, httplib::Response& res) {
            const int call = calls_++;
            json body = json::parse(req.body);
            {
                std::lock_guard<std::mutex> lock(mu_);
                bodies_.push_back(body);
            }
            handler_(body, res, call);
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~StubServer() {
        server_.stop();
        thread_.join();
    }
    std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/caption"; }
    int calls() const { return calls_; }
    std::vector<json> bodies() {
        std::lock_guard<std::mutex> lock(mu_);
        return bodies_;
    }

private:
    httplib::Server server_;
    Handler handler_;
    std::thread thread_;
    int port_ = 0;
    std::atomic<int> calls_{0};
    std::mutex mu_;
    std::vector<json> bodies_;
};

MllmClientConfig fast(const std::string& endpoint, int retries = 2) {
    MllmClientConfig c;
    c.endpoint = endpoint;
    c.retries = retries;
    c.backoff = std::chrono::milliseconds(1);
    c.timeout = std::chrono::milliseconds(2000);
    return c;
}

Image tiny(double v) { return Image::blank(3, 4, 4, v); }

DistilledDataset seeded(int n) {
    DistilledDataset d;
    d.cpi = 1;
    for (int i = 0; i < n; ++i) {
        const std::string id = "syn_" + std::to_string(i);
        d.pairs.push_back({id, tiny(static_cast<double>(i) / 255.0), {"seed caption " + std::to_string(i)}});
        d.provenance.push_back({id, "seed caption " + std::to_string(i), static_cast<std::uint64_t>(i), "edge-finetuned"});
    }
    return d;
}

class FailingCaptioner : public Captioner {
public:
    explicit FailingCaptioner(std::string bad) : bad_(std::move(bad)) {}
    std::string id() const override { return "failing"; }
    std::string caption(const CaptionRequest& r) override {
        if (r.image == tiny(std::stod(bad_) / 255.0)) throw TransportError("down");
        return "fine caption " + std::to_string(r.variation);
    }

private:
    std::string bad_;
};

}  // namespace

TEST_CASE("prompt templates are byte-exact") {
    CHECK(llava_prompt().text == "Describe the image in one sentence");
    CHECK(gpt_prompt().text == "Describe the image briefly in one sentence. Do not start with 'the image.'");
    CHECK(&prompt_by_name("llava") == &llava_prompt());
    CHECK(&prompt_by_name("gpt_style") == &gpt_prompt());
    CHECK(builtin_prompts().size() == 2);
    CHECK_THROWS_AS(prompt_by_name("blip"), ConfigError);
}

TEST_CASE("client sends base64 png and the prompt, returns the trimmed caption") {
    StubServer srv([](const json&, httplib::Response& res, int) {
        res.set_content(R"({"caption": "  a red circle  "})", "application/json");
    });
    MllmClient client(fast(srv.endpoint()));
    const Image img = tiny(128.0 / 255.0);
    CaptionRequest req{img, gpt_prompt().text, 2, "mllm", 0};
    CHECK(client.caption(req) == "a red circle");
    const auto bodies = srv.bodies();
    REQUIRE(bodies.size() == 1);
    CHECK(bodies[0].at("prompt") == gpt_prompt().text);
    CHECK(decode_png(base64_decode(bodies[0].at("image").get<std::string>())) == img);

    CHECK(client.rephrase("a blue square") == "a red circle");
    const auto after = srv.bodies();
    CHECK(after[1].at("image") == "");
    CHECK(after[1].at("prompt") == std::string(kRephrasePrompt) + "a blue square");
}

TEST_CASE("transient failures are retried, persistent ones raise TransportError") {
    StubServer flaky([](const json&, httplib::Response& res, int call) {
        if (call < 2) {
            res.status = 503;
            return;
        }
        res.set_content(R"({"caption": "ok"})", "application/json");
    });
    MllmClient ok(fast(flaky.endpoint(), 2));
    CHECK(ok.caption({tiny(0.1), "p", 1, "mllm", 0}) == "ok");
    CHECK(flaky.calls() == 3);

    StubServer down([](const json&, httplib::Response& res, int) { res.status = 500; });
    MllmClient bad(fast(down.endpoint(), 1));
    CHECK_THROWS_AS(bad.caption({tiny(0.1), "p", 1, "mllm", 0}), TransportError);
    CHECK(down.calls() == 2);

    MllmClient unreachable(fast("http://127.0.0.1:1/caption", 0));
    CHECK_THROWS_AS(unreachable.caption({tiny(0.1), "p", 1, "mllm", 0}), TransportError);
}

TEST_CASE("malformed replies are validation errors and are not retried") {
    for (const char* body : {"not json", R"({"text": "x"})", R"({"caption": "   "})", R"({"caption": 3})"}) {
        StubServer srv([body](const json&, httplib::Response& res, int) { res.set_content(body, "application/json"); });
        MllmClient client(fast(srv.endpoint(), 3));
        CHECK_THROWS_AS(client.caption({tiny(0.1), "p", 1, "mllm", 0}), ValidationError);
        CHECK(srv.calls() == 1);
    }
    std::string longer;
    for (int i = 0; i < 65; ++i) longer += "w ";
    CHECK_THROWS_AS(validate_caption_reply(longer, 64), ValidationError);
    CHECK(validate_caption_reply(" one two ", 2) == "one two");
}

TEST_CASE("client rejects unusable endpoints") {
    CHECK_THROWS_AS(MllmClient(fast("https://host/caption")), ConfigError);
    CHECK_THROWS_AS(MllmClient(fast("127.0.0.1:8080")), ConfigError);
    CHECK_THROWS_AS(MllmClient(fast("http:///x")), ConfigError);
    CHECK_THROWS_AS(MllmClient(fast("http://h/c", -1)), ConfigError);
}

TEST_CASE("expansion conserves the pair budget and keeps seed captions first") {
    StubServer srv([](const json& b, httplib::Response& res, int call) {
        res.set_content(json{{"caption", "caption " + std::to_string(call) + " " + b.at("prompt").get<std::string>().substr(0, 8)}}.dump(),
                        "application/json");
    });
    MllmClient client(fast(srv.endpoint()));
    for (int cpi : {1, 2, 5}) {
        const int budget = 20;
        const auto out = expand(seeded(budget / cpi), cpi, client);
        CHECK(out.cpi == cpi);
        CHECK(out.image_count() == static_cast<std::size_t>(budget / cpi));
        CHECK(out.pair_count() == static_cast<std::size_t>(budget));
        for (std::size_t i = 0; i < out.pairs.size(); ++i) {
            CHECK(out.pairs[i].captions.front() == "seed caption " + std::to_string(i));
            if (cpi > 1) CHECK(out.provenance[i].captioner_id == "edge-finetuned+mllm");
        }
    }
    for (const auto& b : srv.bodies()) CHECK(b.at("prompt") == llava_prompt().text);
}

TEST_CASE("expansion failures name the image") {
    FailingCaptioner cap("2");
    try {
        expand(seeded(4), 3, cap, {llava_prompt(), 2});
        FAIL("expected ExpansionError");
    } catch (const ExpansionError& e) {
        CHECK(std::string(e.what()).find("syn_2") != std::string::npos);
    }
    auto over = seeded(2);
    over.pairs[0].captions.push_back("extra");
    over.cpi = 2;
    CHECK_THROWS_AS(expand(over, 1, cap), ValidationError);
    CHECK_THROWS_AS(expand(seeded(2), 0, cap), ValidationError);
}

TEST_CASE("template captioner describes toy images truthfully and varies with the slot") {
    ToyCorpusSpec spec;
    spec.num_images = 20;
    TemplateCaptioner cap;
    const auto items = render_toy_corpus(spec, 3);
    for (const auto& it : items) {
        const std::string a = cap.caption({it.pair.image, llava_prompt().text, 3, "template", 1});
        const std::string b = cap.caption({it.pair.image, llava_prompt().text, 3, "template", 2});
        CHECK(a != b);
        CHECK(a == cap.caption({it.pair.image, llava_prompt().text, 3, "template", 1}));
        const auto est = estimate_toy_attributes(it.pair.image, spec.vocab);
        REQUIRE(est.has_value());
        CHECK(a == toy_caption(spec.vocab, *est, 1));
    }
    const std::string generic = cap.caption({Image::blank(3, 16, 16, 0.1), "p", 2, "template", 0});
    CHECK_FALSE(generic.empty());
}

TEST_CASE("rephrasing preprocess") {
    struct Upper : Rephraser {
        std::string rephrase(const std::string& c) override { return " rephrased " + c + " "; }
    } r;
    CHECK(rephrase_preprocess({"a", "b"}, r) == std::vector<std::string>{"rephrased a", "rephrased b"});
    CHECK_THROWS_AS(rephrase_preprocess({}, r), ValidationError);
}

}
