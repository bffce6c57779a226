#include "edge/toy_corpus.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "edge/errors.hpp"
#include "edge/tensor.hpp"

namespace edge {

namespace fs = std::filesystem;

ToyVocabulary ToyVocabulary::standard() {
    ToyVocabulary v;
    v.shapes = {"circle", "square", "triangle", "cross"};
    v.colors = {{"red", {0.90, 0.10, 0.10}},    {"green", {0.10, 0.80, 0.10}}, {"blue", {0.15, 0.25, 0.95}},
                {"yellow", {0.95, 0.90, 0.10}}, {"cyan", {0.10, 0.85, 0.90}},  {"magenta", {0.90, 0.10, 0.85}},
                {"white", {0.95, 0.95, 0.95}},  {"orange", {0.95, 0.55, 0.05}}};
    v.positions = {"upper left", "upper right", "lower left", "lower right"};
    v.sizes = {"small", "large"};
    return v;
}

std::vector<std::string> ToyVocabulary::words() const {
    std::vector<std::string> w = shapes;
    for (const auto& c : colors) w.push_back(c.name);
    for (const auto& s : sizes) w.push_back(s);
    w.insert(w.end(), {"upper", "lower", "left", "right"});
    return w;
}

namespace {

// Coverage of a unit-radius shape at offset (dx, dy) measured in radii.
bool inside_shape(const std::string& shape, double dx, double dy) {
    if (shape == "circle") return dx * dx + dy * dy <= 1.0;
    if (shape == "square") return std::abs(dx) <= 0.85 && std::abs(dy) <= 0.85;
    if (shape == "triangle") return dy >= -1.0 && dy <= 0.9 && std::abs(dx) <= (dy + 1.0) * 0.55;
    if (shape == "cross") return (std::abs(dx) <= 0.33 && std::abs(dy) <= 1.0) || (std::abs(dy) <= 0.33 && std::abs(dx) <= 1.0);
    throw ConfigError("unknown toy shape '" + shape + "'");
}

double radius_for(const std::string& size, int image_size) {
    const double quadrant = image_size / 2.0;
    return size == "small" ? 0.25 * quadrant : 0.42 * quadrant;
}

// 4x4 supersampled coverage map of a shape centred at (cx, cy).
std::vector<double> coverage(const std::string& shape, double radius, double cx, double cy, int image_size) {
    std::vector<double> cov(static_cast<std::size_t>(image_size) * image_size, 0.0);
    constexpr int ss = 4;
    for (int y = 0; y < image_size; ++y)
        for (int x = 0; x < image_size; ++x) {
            int hits = 0;
            for (int sy = 0; sy < ss; ++sy)
                for (int sx = 0; sx < ss; ++sx) {
                    const double px = x + (sx + 0.5) / ss, py = y + (sy + 0.5) / ss;
                    hits += inside_shape(shape, (px - cx) / radius, (py - cy) / radius);
                }
            cov[static_cast<std::size_t>(y) * image_size + x] = hits / double(ss * ss);
        }
    return cov;
}

std::pair<double, double> quadrant_center(int position, int image_size) {
    const double q = image_size / 2.0;
    return {(position % 2) * q + q / 2.0, (position / 2) * q + q / 2.0};
}

const std::vector<std::string>& caption_templates() {
    static const std::vector<std::string> t = {
        "a {size} {color} {shape} in the {position}",
        "{size} {color} {shape} located at the {position}",
        "there is a {color} {shape} in the {position} and it is {size}",
        "the {position} shows a {size} {color} {shape}",
        "a {color} {shape} of {size} size at the {position}",
        "one {size} {shape} colored {color} in the {position} corner",
        "{color} {shape}, {size}, {position}",
        "a picture of a {size} {color} {shape} in the {position}",
    };
    return t;
}

const std::vector<std::string>& caption_suffixes() {
    static const std::vector<std::string> s = {"", " on a dark background", " on black", " against a plain backdrop"};
    return s;
}

void replace_all(std::string& s, const std::string& key, const std::string& value) {
    for (std::size_t p = s.find(key); p != std::string::npos; p = s.find(key, p + value.size())) s.replace(p, key.size(), value);
}

}  // namespace

std::string toy_caption(const ToyVocabulary& vocab, const ToyAttributes& a, int variation) {
    if (variation < 0) throw ValidationError("caption variation must be non-negative");
    const auto& templates = caption_templates();
    const auto& suffixes = caption_suffixes();
    const int nt = static_cast<int>(templates.size());
    const int ns = static_cast<int>(suffixes.size());
    std::string s = templates[static_cast<std::size_t>(variation % nt)];
    replace_all(s, "{size}", vocab.sizes.at(static_cast<std::size_t>(a.size)));
    replace_all(s, "{color}", vocab.colors.at(static_cast<std::size_t>(a.color)).name);
    replace_all(s, "{shape}", vocab.shapes.at(static_cast<std::size_t>(a.shape)));
    replace_all(s, "{position}", vocab.positions.at(static_cast<std::size_t>(a.position)));
    s += suffixes[static_cast<std::size_t>((variation / nt) % ns)];
    if (variation >= nt * ns) s += " variant " + std::to_string(variation / (nt * ns));
    return s;
}

Image render_toy_image(const ToyCorpusSpec& spec, const ToyAttributes& a, std::uint64_t seed) {
    const int S = spec.image_size;
    if (S < 8 || S % 2) throw ConfigError("toy image size must be even and at least 8");
    Rng rng(seed);
    std::uniform_real_distribution<double> jitter(-S / 16.0, S / 16.0);
    auto [cx, cy] = quadrant_center(a.position, S);
    cx += jitter(rng);
    cy += jitter(rng);
    const auto& shape = spec.vocab.shapes.at(static_cast<std::size_t>(a.shape));
    const auto cov = coverage(shape, radius_for(spec.vocab.sizes.at(static_cast<std::size_t>(a.size)), S), cx, cy, S);
    const auto& rgb = spec.vocab.colors.at(static_cast<std::size_t>(a.color)).rgb;
    Image img = Image::blank(3, S, S);
    std::normal_distribution<double> noise(0.0, spec.noise_stddev);
    for (int c = 0; c < 3; ++c)
        for (int p = 0; p < S * S; ++p) {
            const double bg = spec.background + noise(rng);
            img.pixels[static_cast<std::size_t>(c) * S * S + p] = bg * (1.0 - cov[p]) + rgb[c] * cov[p];
        }
    return quantize(std::move(img));
}

std::vector<ToyItem> render_toy_corpus(const ToyCorpusSpec& spec, std::uint64_t seed) {
    const auto& v = spec.vocab;
    if (spec.num_images < 0) throw ConfigError("toy corpus image count must be non-negative");
    if (spec.captions_per_image < 1) throw ConfigError("toy corpus needs at least one caption per image");
    const std::size_t capacity = v.combinations();
    if (static_cast<std::size_t>(spec.num_images) > capacity)
        throw CapacityError("requested " + std::to_string(spec.num_images) + " toy images but the vocabulary has only " +
                            std::to_string(capacity) + " unique attribute combinations");
    std::vector<std::size_t> combos(capacity);
    std::iota(combos.begin(), combos.end(), std::size_t{0});
    Rng rng(seed);
    std::shuffle(combos.begin(), combos.end(), rng);

    const int ntemplates = static_cast<int>(caption_templates().size() * caption_suffixes().size());
    std::vector<ToyItem> out;
    out.reserve(static_cast<std::size_t>(spec.num_images));
    for (int i = 0; i < spec.num_images; ++i) {
        std::size_t k = combos[static_cast<std::size_t>(i)];
        ToyAttributes a;
        a.shape = static_cast<int>(k % v.shapes.size());
        k /= v.shapes.size();
        a.color = static_cast<int>(k % v.colors.size());
        k /= v.colors.size();
        a.position = static_cast<int>(k % v.positions.size());
        k /= v.positions.size();
        a.size = static_cast<int>(k);

        ToyItem item;
        item.attributes = a;
        item.pair.image_id = "toy_" + std::to_string(seed) + "_" + std::to_string(i);
        item.pair.image = render_toy_image(spec, a, rng());
        // Distinct templates per image, in a per-image random order.
        std::vector<int> vars(static_cast<std::size_t>(std::max(ntemplates, spec.captions_per_image)));
        std::iota(vars.begin(), vars.end(), 0);
        std::shuffle(vars.begin(), vars.begin() + std::min<std::ptrdiff_t>(ntemplates, static_cast<std::ptrdiff_t>(vars.size())), rng);
        for (int c = 0; c < spec.captions_per_image; ++c)
            item.pair.captions.push_back(toy_caption(v, a, vars[static_cast<std::size_t>(c)]));
        out.push_back(std::move(item));
    }
    return out;
}

DatasetManifest generate_toy_corpus(const ToyCorpusSpec& spec, std::uint64_t seed, const fs::path& out_dir, Split split) {
    const auto items = render_toy_corpus(spec, seed);
    std::error_code ec;
    fs::create_directories(out_dir / "images", ec);
    if (ec) throw WriteError("cannot create " + out_dir.string() + ": " + ec.message());
    DatasetManifest m;
    m.root_path = out_dir;
    m.split = split;
    for (const auto& it : items) {
        const std::string rel = "images/" + it.pair.image_id + ".png";
        write_png(out_dir / rel, it.pair.image);
        m.records.push_back({it.pair.image_id, rel, it.pair.captions});
    }
    write_manifest(m, out_dir / "manifest.jsonl");
    return load_manifest(out_dir / "manifest.jsonl", split);
}

std::optional<ToyAttributes> estimate_toy_attributes(const Image& img, const ToyVocabulary& vocab, double background) {
    if (img.channels != 3 || img.height != img.width || img.height < 8) return std::nullopt;
    const int S = img.height;
    const std::size_t HW = static_cast<std::size_t>(S) * S;

    // Foreground strength: largest channel excess over the background level.
    std::vector<double> strength(HW);
    for (std::size_t p = 0; p < HW; ++p) {
        double m = 0.0;
        for (int c = 0; c < 3; ++c) m = std::max(m, img.pixels[c * HW + p] - background);
        strength[p] = m;
    }
    double mass = 0.0, sx = 0.0, sy = 0.0;
    std::array<double, 3> col{0, 0, 0};
    double col_w = 0.0;
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * S + x;
            const double w = strength[p] > 0.25 ? strength[p] : 0.0;
            mass += w;
            sx += w * (x + 0.5);
            sy += w * (y + 0.5);
            if (strength[p] > 0.5) {
                for (int c = 0; c < 3; ++c) col[c] += strength[p] * img.pixels[c * HW + p];
                col_w += strength[p];
            }
        }
    if (mass <= 0.0) return std::nullopt;
    if (col_w <= 0.0) {
        for (std::size_t p = 0; p < HW; ++p)
            if (strength[p] > 0.25)
                for (int c = 0; c < 3; ++c) col[c] += strength[p] * img.pixels[c * HW + p];
        col_w = mass;
    }
    for (double& c : col) c /= col_w;
    const double cx = sx / mass, cy = sy / mass;

    ToyAttributes a;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < vocab.colors.size(); ++i) {
        double d = 0.0;
        for (int c = 0; c < 3; ++c) d += (col[c] - vocab.colors[i].rgb[c]) * (col[c] - vocab.colors[i].rgb[c]);
        if (d < best) {
            best = d;
            a.color = static_cast<int>(i);
        }
    }
    const int qx = cx < S / 2.0 ? 0 : 1, qy = cy < S / 2.0 ? 0 : 1;
    const std::string want = std::string(qy ? "lower" : "upper") + " " + (qx ? "right" : "left");
    a.position = 0;
    for (std::size_t i = 0; i < vocab.positions.size(); ++i)
        if (vocab.positions[i] == want) a.position = static_cast<int>(i);

    // Observed coverage: projection of the pixel onto the background->color segment.
    const auto& rgb = vocab.colors[static_cast<std::size_t>(a.color)].rgb;
    double denom = 0.0;
    for (int c = 0; c < 3; ++c) denom += (rgb[c] - background) * (rgb[c] - background);
    std::vector<double> observed(HW, 0.0);
    for (std::size_t p = 0; p < HW; ++p) {
        double num = 0.0;
        for (int c = 0; c < 3; ++c) num += (img.pixels[c * HW + p] - background) * (rgb[c] - background);
        observed[p] = std::clamp(denom > 0 ? num / denom : 0.0, 0.0, 1.0);
    }
    // The rendered shape's coverage centroid can sit off its anchor (triangles), so
    // search anchors around the measured centroid.
    best = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < vocab.shapes.size(); ++s)
        for (std::size_t z = 0; z < vocab.sizes.size(); ++z) {
            const double r = radius_for(vocab.sizes[z], S);
            for (int oy = -4; oy <= 4; ++oy)
                for (int ox = -2; ox <= 2; ++ox) {
                    const auto cov = coverage(vocab.shapes[s], r, cx + 0.25 * ox, cy + 0.25 * oy, S);
                    double err = 0.0;
                    for (std::size_t p = 0; p < HW; ++p) err += (cov[p] - observed[p]) * (cov[p] - observed[p]);
                    if (err < best) {
                        best = err;
                        a.shape = static_cast<int>(s);
                        a.size = static_cast<int>(z);
                    }
                }
        }
    return a;
}

}  // namespace edge
