#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace edge {

// Channels × height × width, values in [0,1]. Everything the pipeline stores is
// quantized to multiples of 1/255 so that PNG round trips are exact.
struct Image {
    int channels = 3;
    int height = 0;
    int width = 0;
    std::vector<double> pixels;

    static Image blank(int channels, int height, int width, double value = 0.0);

    double& at(int c, int y, int x) { return pixels[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    double at(int c, int y, int x) const { return pixels[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    std::size_t size() const { return pixels.size(); }
    bool operator==(const Image&) const = default;
};

// Clamp to [0,1] and snap to the 8-bit grid.
Image quantize(Image img);
void validate_image(const Image& img);

std::vector<std::uint8_t> encode_png(const Image& img);
Image decode_png(std::span<const std::uint8_t> bytes);
void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace edge
