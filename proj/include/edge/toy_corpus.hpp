#pragma once
// Procedural shapes corpus with exactly known image/caption correspondence.
//
// Each image shows one shape on a dark noisy background; its attributes are
// (shape, color, position, size). Captions come from a fixed grammar over those
// attributes, so any caption is a true description of its image.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "edge/dataset_io.hpp"

namespace edge {

struct ToyColor {
    std::string name;
    std::array<double, 3> rgb;
};

struct ToyVocabulary {
    std::vector<std::string> shapes;     // subset of circle, square, triangle, cross
    std::vector<ToyColor> colors;
    std::vector<std::string> positions;  // quadrants: upper left, upper right, lower left, lower right
    std::vector<std::string> sizes;      // small, large

    static ToyVocabulary standard();
    std::size_t combinations() const { return shapes.size() * colors.size() * positions.size() * sizes.size(); }
    std::vector<std::string> words() const;
};

struct ToyAttributes {
    int shape = 0;
    int color = 0;
    int position = 0;
    int size = 0;
    bool operator==(const ToyAttributes&) const = default;
};

struct ToyCorpusSpec {
    int image_size = 16;
    int num_images = 64;
    int captions_per_image = 5;
    ToyVocabulary vocab = ToyVocabulary::standard();
    double background = 0.1;
    double noise_stddev = 0.02;
};

struct ToyItem {
    ImageTextPair pair;
    ToyAttributes attributes;
};

// In-memory corpus; attribute combinations drawn without replacement.
// Throws CapacityError when num_images exceeds vocab.combinations().
std::vector<ToyItem> render_toy_corpus(const ToyCorpusSpec& spec, std::uint64_t seed);

// Writes images/ and manifest.jsonl under out_dir and returns the loaded manifest.
DatasetManifest generate_toy_corpus(const ToyCorpusSpec& spec, std::uint64_t seed,
                                    const std::filesystem::path& out_dir, Split split = Split::train);

Image render_toy_image(const ToyCorpusSpec& spec, const ToyAttributes& attrs, std::uint64_t seed);

// Distinct variation indices give distinct sentences for the same attributes.
std::string toy_caption(const ToyVocabulary& vocab, const ToyAttributes& attrs, int variation);

// Inverts the renderer: foreground segmentation, palette lookup, quadrant of the
// centroid, and template matching over shape × size. nullopt when no foreground.
std::optional<ToyAttributes> estimate_toy_attributes(const Image& img, const ToyVocabulary& vocab,
                                                     double background = 0.1);

}  // namespace edge
