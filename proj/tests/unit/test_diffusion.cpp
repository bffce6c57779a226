#include "doctest.h"

#include <cmath>

#include "edge/diffusion.hpp"
#include "edge/errors.hpp"
#include "edge/optimizer.hpp"
#include "edge/toy_corpus.hpp"
#include "helpers.hpp"

using namespace edge;

TEST_SUITE("diffusion") {

namespace {

DiffusionConfig tiny_config() {
    DiffusionConfig c;
    c.image_size = 8;
    c.base_channels = 8;
    c.emb_dim = 16;
    c.cond_dim = 8;
    c.text_buckets = 64;
    c.timesteps = 20;
    c.cond_map_channels = 2;
    return c;
}

NoiseSchedule two_step(double ab0, double ab1) { return NoiseSchedule::from_alpha_bar({ab0, ab1}); }

}  // namespace

TEST_CASE("cosine schedule is strictly decreasing inside (0,1)") {
    for (int T : {1, 10, 100, 1000}) {
        const auto s = NoiseSchedule::cosine(T);
        REQUIRE(s.timesteps() == T);
        for (int t = 0; t < T; ++t) {
            CHECK(s.alpha_bar[static_cast<std::size_t>(t)] > 0.0);
            CHECK(s.alpha_bar[static_cast<std::size_t>(t)] < 1.0);
            if (t) CHECK(s.alpha_bar[static_cast<std::size_t>(t)] < s.alpha_bar[static_cast<std::size_t>(t - 1)]);
            const double a = s.signal_scale(t), b = s.noise_scale(t);
            CHECK(a * a + b * b == doctest::Approx(1.0).epsilon(1e-15));
        }
    }
    CHECK_THROWS_AS(NoiseSchedule::from_alpha_bar({0.5, 0.6}), ValidationError);
    CHECK_THROWS_AS(NoiseSchedule::from_alpha_bar({1.0}), ValidationError);
    CHECK_THROWS_AS(NoiseSchedule::cosine(100).check_timestep(100), IndexError);
    CHECK_THROWS_AS(NoiseSchedule::cosine(100).check_timestep(-1), IndexError);
}

TEST_CASE("forward noising by hand") {
    const auto s = two_step(0.64, 0.25);
    const std::vector<int> t{0};
    const auto b = forward_noise_with(Tensor({1, 1}, {1.0}), t, Tensor({1, 1}, {1.0}), s);
    CHECK(b.z.data[0] == doctest::Approx(1.4).epsilon(1e-15));

    Rng rng(3);
    const Tensor eps = Tensor::randn({2, 5}, rng, 1.0);
    const std::vector<int> t2{0, 1};
    const auto zero = forward_noise_with(Tensor::zeros({2, 5}), t2, eps, s);
    for (std::size_t k = 0; k < 5; ++k) CHECK(zero.z.data[k] == doctest::Approx(0.6 * eps.data[k]));
    for (std::size_t k = 5; k < 10; ++k) CHECK(zero.z.data[k] == doctest::Approx(std::sqrt(0.75) * eps.data[k]));
}

TEST_CASE("forward noising near t=0 stays close to the clean latent") {
    const auto s = NoiseSchedule::cosine(100);
    Rng rng(4);
    const Tensor z0 = Tensor::randn({4, 16}, rng, 1.0);
    const std::vector<int> t(4, 0);
    const auto b = forward_noise(z0, t, s, rng);
    double num = 0, den = 0, eps2 = 0;
    for (std::size_t k = 0; k < z0.data.size(); ++k) {
        num += std::pow(b.z.data[k] - z0.data[k], 2);
        den += z0.data[k] * z0.data[k];
        eps2 += b.eps.data[k] * b.eps.data[k];
    }
    const double bound = (1.0 - s.signal_scale(0)) * std::sqrt(den / den) + s.noise_scale(0) * std::sqrt(eps2 / den);
    CHECK(std::sqrt(num / den) <= bound + 1e-12);
}

TEST_CASE("reconstruction by hand and the inversion identity") {
    const auto s = two_step(0.64, 0.25);
    const std::vector<int> t1{1};
    CHECK(reconstruct_latent(Tensor({1, 1}, {1.0}), Tensor({1, 1}, {0.5}), t1, s).data[0] ==
          doctest::Approx(1.1339746).epsilon(1e-7));
    CHECK(reconstruct_latent(Tensor({1, 1}, {1.0}), Tensor({1, 1}, {0.0}), t1, s).data[0] == doctest::Approx(2.0));

    const auto cos = NoiseSchedule::cosine(100);
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const Tensor z0 = Tensor::randn({3, 7}, rng, 2.0);
        std::vector<int> t{trial % 100, (trial * 37) % 100, 99};
        const auto b = forward_noise(z0, t, cos, rng);
        const Tensor back = reconstruct_latent(b.z, b.eps, t, cos);
        for (std::size_t k = 0; k < z0.data.size(); ++k) CHECK(std::abs(back.data[k] - z0.data[k]) < 1e-6);
    }
}

TEST_CASE("noised marginal keeps unit variance at every timestep") {
    const auto s = NoiseSchedule::cosine(100);
    Rng rng(6);
    const Tensor z0 = Tensor::randn({1, 10000}, rng, 1.0);
    for (int t = 0; t < 100; t += 9) {
        const std::vector<int> tv{t};
        const auto b = forward_noise(z0, tv, s, rng);
        double m = 0, v = 0;
        for (double x : b.z.data) m += x;
        m /= 10000.0;
        for (double x : b.z.data) v += (x - m) * (x - m);
        v /= 9999.0;
        CHECK(std::abs(v - 1.0) < 0.05);
    }
}

TEST_CASE("timestep and shape errors") {
    const auto s = NoiseSchedule::cosine(10);
    Rng rng(1);
    const std::vector<int> bad{10};
    CHECK_THROWS_AS(forward_noise(Tensor::zeros({1, 3}), bad, s, rng), IndexError);
    const std::vector<int> two{0, 1};
    CHECK_THROWS_AS(forward_noise(Tensor::zeros({1, 3}), two, s, rng), ConfigError);
    CHECK_THROWS_AS(sampling_timesteps(10, 11), ConfigError);
    CHECK_THROWS_AS(sampling_timesteps(10, 0), ConfigError);
    const auto ts = sampling_timesteps(100, 50);
    CHECK(ts.front() == 0);
    CHECK(ts.back() == 99);
    CHECK(ts.size() == 50);
}

TEST_CASE("identity codec round trip is bit-exact and has the configured latent size") {
    ToyCorpusSpec spec;
    spec.num_images = 6;
    const auto items = render_toy_corpus(spec, 1);
    DiffusionConfig c;
    const DiffusionModel m(c, 0);
    std::vector<Image> imgs;
    for (const auto& it : items) imgs.push_back(it.pair.image);
    const Tensor z = m.encode_images(imgs);
    CHECK(static_cast<int>(z.stride0()) == c.latent_dim());
    CHECK(m.decode_latents(z) == imgs);
    CHECK_THROWS_AS(m.encode_image(Image::blank(3, 8, 8)), ConfigError);
}

TEST_CASE("training the tiny autoencoder lowers reconstruction error") {
    ToyCorpusSpec spec;
    spec.image_size = 8;
    spec.num_images = 32;
    std::vector<Image> imgs;
    for (auto& it : render_toy_corpus(spec, 2)) imgs.push_back(it.pair.image);
    DiffusionConfig c = tiny_config();
    c.codec = CodecMode::autoencoder;
    c.ae_latent_channels = 6;
    c.ae_hidden = 16;
    DiffusionModel m(c, 1);
    const double before = m.reconstruction_mse(imgs);
    const auto unet_before = m.params().at("unet.conv_in.weight").value;
    m.train_autoencoder(imgs, 20, 3e-3, 5);
    CHECK(m.reconstruction_mse(imgs) < before);
    CHECK(m.params().at("unet.conv_in.weight").value.data == unet_before.data);
}

TEST_CASE("text conditioning embeddings") {
    const DiffusionModel m(tiny_config(), 0);
    const Tensor a = m.encode_text({"a red circle", "a red circle", "a blue circle"});
    CHECK(a.dim(1) == tiny_config().cond_dim);
    CHECK(std::equal(a.row(0).begin(), a.row(0).end(), a.row(1).begin()));
    CHECK_FALSE(std::equal(a.row(0).begin(), a.row(0).end(), a.row(2).begin()));
    CHECK_THROWS_AS(m.encode_text({"  ..  "}), ValidationError);
}

TEST_CASE("noise predictor is deterministic, shape preserving and validates inputs") {
    const DiffusionModel m(tiny_config(), 3);
    Rng rng(1);
    const Tensor z = Tensor::randn(m.latent_shape(3), rng, 1.0);
    const Tensor y = m.encode_text({"red", "green", "blue"});
    const std::vector<int> t{0, 5, 19};
    const Tensor a = m.predict_noise(z, t, y);
    CHECK(a.shape == z.shape);
    CHECK(a.data == m.predict_noise(z, t, y).data);
    const std::vector<int> bad{0, 5, 20};
    CHECK_THROWS_AS(m.predict_noise(z, bad, y), IndexError);
    CHECK_THROWS_AS(m.predict_noise(z, t, m.encode_text({"red"})), ConfigError);
    CHECK_THROWS_AS(m.predict_noise(Tensor::zeros({3, 12, 3, 3}), t, y), ConfigError);
}

TEST_CASE("noise predictor parameter gradients match finite differences") {
    for (Prediction pred : {Prediction::epsilon, Prediction::v}) {
        DiffusionConfig c = tiny_config();
        c.prediction = pred;
        DiffusionModel m(c, 4);
        Rng rng(2);
        const Tensor z = Tensor::randn(m.latent_shape(2), rng, 1.0);
        const std::vector<int> t{3, 15};
        const std::vector<std::string> caps{"red circle", "blue square"};
        auto loss = [&] {
            const Tensor e = m.predict_noise(z, t, m.encode_text(caps));
            double s = 0;
            for (double v : e.data) s += v * v;
            return s / static_cast<double>(e.data.size());
        };
        for (auto& [n, p] : m.params()) p.zero_grad();
        Tape tape;
        Var e = m.predict_noise(tape, tape.constant(z), t, m.encode_text(tape, caps));
        Tensor g = tape.value(e);
        for (double& v : g.data) v *= 2.0 / static_cast<double>(g.data.size());
        tape.seed(e, g);
        tape.backward();
        for (const char* name : {"unet.conv_out.weight", "unet.cond_proj.weight", "unet.cond_map.weight", "text.embed"}) {
            Param& p = m.params().at(name);
            std::size_t checked = 0;
            for (std::size_t k = 0; k < p.value.data.size() && checked < 4; k += 7) {
                if (p.grad.data[k] == 0.0) continue;
                ++checked;
                const double fd = testing::central_diff(loss, p.value.data[k]);
                INFO(std::string(name) << "[" << k << "] fd " << fd << " analytic " << p.grad.data[k]);
                CHECK(testing::rel_err(fd, p.grad.data[k], 1e-6) < 1e-4);
            }
            CHECK(checked > 0);
        }
    }
}

TEST_CASE("reconstruct on the tape has the analytic gradient") {
    const DiffusionModel m(tiny_config(), 0);
    Rng rng(3);
    const Tensor zt = Tensor::randn({2, 3}, rng, 1.0);
    Tensor eps = Tensor::randn({2, 3}, rng, 1.0);
    const std::vector<int> t{2, 17};
    ParamMap pm;
    Param& p = add_param(pm, "eps", eps);
    p.zero_grad();
    Tape tape;
    Var z = m.reconstruct(tape, zt, tape.param(p), t);
    CHECK(tape.value(z).data == reconstruct_latent(zt, eps, t, m.schedule()).data);
    tape.seed(z, Tensor({2, 3}, std::vector<double>(6, 1.0)));
    tape.backward();
    for (int n = 0; n < 2; ++n)
        for (int k = 0; k < 3; ++k)
            CHECK(p.grad.data[static_cast<std::size_t>(n * 3 + k)] ==
                  doctest::Approx(-m.schedule().noise_scale(t[static_cast<std::size_t>(n)]) /
                                  m.schedule().signal_scale(t[static_cast<std::size_t>(n)])));
}

TEST_CASE("noise-prediction loss decreases on a frozen batch") {
    DiffusionModel m(tiny_config(), 5);
    ToyCorpusSpec spec;
    spec.image_size = 8;
    spec.num_images = 8;
    std::vector<Image> imgs;
    std::vector<std::string> caps;
    for (auto& it : render_toy_corpus(spec, 3)) {
        imgs.push_back(it.pair.image);
        caps.push_back(it.pair.captions[0]);
    }
    Rng rng(8);
    std::vector<int> t;
    for (int i = 0; i < 8; ++i) t.push_back(i * 2);
    const auto batch = forward_noise(m.encode_images(imgs), t, m.schedule(), rng);
    Optimizer opt(OptimizerKind::adam, 1e-3);
    std::vector<double> losses;
    for (int step = 0; step < 50; ++step) {
        opt.zero_grad(m.params());
        Tape tape;
        Var e = m.predict_noise(tape, tape.constant(batch.z), t, m.encode_text(tape, caps));
        Tensor g = tape.value(e);
        double l = 0;
        for (std::size_t k = 0; k < g.data.size(); ++k) {
            const double d = g.data[k] - batch.eps.data[k];
            l += d * d / static_cast<double>(g.data.size());
            g.data[k] = 2.0 * d / static_cast<double>(g.data.size());
        }
        losses.push_back(l);
        tape.seed(e, g);
        tape.backward();
        opt.step(m.params());
    }
    std::vector<double> smooth;
    for (std::size_t i = 0; i + 5 <= losses.size(); ++i) {
        double s = 0;
        for (std::size_t k = i; k < i + 5; ++k) s += losses[k];
        smooth.push_back(s / 5);
    }
    for (std::size_t i = 1; i < smooth.size(); ++i) CHECK(smooth[i] < smooth[i - 1]);
}

TEST_CASE("sampling is deterministic, batch independent and shaped like a latent") {
    const DiffusionModel m(tiny_config(), 6);
    const Tensor y = m.encode_text({"red circle", "green cross"});
    Rng r1(4), r2(4);
    const Tensor a = m.sample(y, 10, r1);
    CHECK(a.shape == m.latent_shape(2));
    CHECK(a.data == m.sample(y, 10, r2).data);

    std::vector<Rng> rows{Rng(10), Rng(11)};
    const Tensor both = m.sample(y, 10, rows);
    std::vector<Rng> solo{Rng(11)};
    const Tensor second = m.sample(m.encode_text({"green cross"}), 10, solo);
    CHECK(std::equal(second.data.begin(), second.data.end(), both.row(1).begin()));
    Rng r3(1);
    CHECK_THROWS_AS(m.sample(y, 21, r3), ConfigError);
    CHECK_THROWS_AS(sample(m, y, NoiseSchedule::cosine(50), 10, r3), ConfigError);
}

TEST_CASE("a model overfit to one image samples something closer to it than to other images") {
    DiffusionConfig c = tiny_config();
    c.timesteps = 50;
    DiffusionModel m(c, 7);
    ToyCorpusSpec spec;
    spec.image_size = 8;
    spec.num_images = 8;
    const auto items = render_toy_corpus(spec, 4);
    const Image& target = items[0].pair.image;
    const std::string caption = items[0].pair.captions[0];
    const std::vector<Image> one{target};
    const Tensor z0 = m.encode_images(one);
    Optimizer opt(OptimizerKind::adam, 3e-3);
    Rng rng(9);
    std::uniform_int_distribution<int> pick(0, c.timesteps - 1);
    for (int step = 0; step < 300; ++step) {
        Tensor z0b({8, z0.dim(1), z0.dim(2), z0.dim(3)});
        for (int i = 0; i < 8; ++i) std::copy(z0.data.begin(), z0.data.end(), z0b.row(static_cast<std::size_t>(i)).begin());
        std::vector<int> t;
        for (int i = 0; i < 8; ++i) t.push_back(pick(rng));
        const auto b = forward_noise(z0b, t, m.schedule(), rng);
        opt.zero_grad(m.params());
        Tape tape;
        Var e = m.predict_noise(tape, tape.constant(b.z), t, m.encode_text(tape, std::vector<std::string>(8, caption)));
        Tensor g = tape.value(e);
        for (std::size_t k = 0; k < g.data.size(); ++k) g.data[k] = 2.0 * (g.data[k] - b.eps.data[k]) / static_cast<double>(g.data.size());
        tape.seed(e, g);
        tape.backward();
        opt.step(m.params());
    }
    Rng srng(1);
    const Image s = m.decode_latent(m.sample(m.encode_text({caption}), 25, srng));
    auto mse = [](const Image& a, const Image& b) {
        double e = 0;
        for (std::size_t k = 0; k < a.pixels.size(); ++k) e += std::pow(a.pixels[k] - b.pixels[k], 2);
        return e / static_cast<double>(a.pixels.size());
    };
    const double to_target = mse(s, target);
    for (std::size_t i = 1; i < items.size(); ++i) CHECK(to_target < mse(s, items[i].pair.image));
}

}
