#include "edge/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>

#include "edge/errors.hpp"

namespace edge {

Image Image::blank(int channels, int height, int width, double value) {
    Image img;
    img.channels = channels;
    img.height = height;
    img.width = width;
    img.pixels.assign(static_cast<std::size_t>(channels) * height * width, value);
    return img;
}

Image quantize(Image img) {
    for (double& v : img.pixels) {
        const double c = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0);
        v = std::round(c * 255.0) / 255.0;
    }
    return img;
}

void validate_image(const Image& img) {
    if (img.channels != 1 && img.channels != 3)
        throw ValidationError("image must have 1 or 3 channels, got " + std::to_string(img.channels));
    if (img.height <= 0 || img.width <= 0) throw ValidationError("image has empty spatial extent");
    if (img.pixels.size() != static_cast<std::size_t>(img.channels) * img.height * img.width)
        throw ValidationError("image pixel buffer does not match its shape");
    for (double v : img.pixels)
        if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("pixel value outside [0,1]");
}

std::vector<std::uint8_t> encode_png(const Image& img) {
    validate_image(img);
    png_image pi{};
    pi.version = PNG_IMAGE_VERSION;
    pi.width = static_cast<png_uint_32>(img.width);
    pi.height = static_cast<png_uint_32>(img.height);
    pi.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    const std::size_t hw = static_cast<std::size_t>(img.height) * img.width;
    std::vector<std::uint8_t> interleaved(hw * img.channels);
    for (std::size_t p = 0; p < hw; ++p)
        for (int c = 0; c < img.channels; ++c)
            interleaved[p * img.channels + c] =
                static_cast<std::uint8_t>(std::lround(std::clamp(img.pixels[c * hw + p], 0.0, 1.0) * 255.0));
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&pi, nullptr, &size, 0, interleaved.data(), 0, nullptr))
        throw WriteError(std::string("png sizing failed: ") + pi.message);
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&pi, out.data(), &size, 0, interleaved.data(), 0, nullptr))
        throw WriteError(std::string("png encode failed: ") + pi.message);
    out.resize(size);
    return out;
}

Image decode_png(std::span<const std::uint8_t> bytes) {
    png_image pi{};
    pi.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&pi, bytes.data(), bytes.size()))
        throw LoadError(std::string("png decode failed: ") + pi.message);
    const bool gray = (pi.format & PNG_FORMAT_FLAG_COLOR) == 0;
    pi.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    const int channels = gray ? 1 : 3;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(pi));
    if (!png_image_finish_read(&pi, nullptr, buf.data(), 0, nullptr))
        throw LoadError(std::string("png decode failed: ") + pi.message);
    Image img = Image::blank(channels, static_cast<int>(pi.height), static_cast<int>(pi.width));
    const std::size_t hw = static_cast<std::size_t>(img.height) * img.width;
    for (std::size_t p = 0; p < hw; ++p)
        for (int c = 0; c < channels; ++c) img.pixels[c * hw + p] = buf[p * channels + c] / 255.0;
    return img;
}

void write_png(const std::filesystem::path& path, const Image& img) {
    const auto bytes = encode_png(img);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw WriteError("cannot open " + path.string() + " for writing");
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw WriteError("failed writing " + path.string());
}

Image read_png(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw LoadError("cannot open image " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return decode_png(bytes);
}

namespace {
constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 3 <= bytes.size(); i += 3) {
        const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out += kB64[(v >> 18) & 63];
        out += kB64[(v >> 12) & 63];
        out += kB64[(v >> 6) & 63];
        out += kB64[v & 63];
    }
    if (const std::size_t rest = bytes.size() - i; rest) {
        std::uint32_t v = bytes[i] << 16;
        if (rest == 2) v |= bytes[i + 1] << 8;
        out += kB64[(v >> 18) & 63];
        out += kB64[(v >> 12) & 63];
        out += rest == 2 ? kB64[(v >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
    std::array<int, 256> table;
    table.fill(-1);
    for (int i = 0; i < 64; ++i) table[static_cast<unsigned char>(kB64[i])] = i;
    std::vector<std::uint8_t> out;
    std::uint32_t acc = 0;
    int bits = 0;
    for (char ch : text) {
        if (ch == '=') break;
        const int v = table[static_cast<unsigned char>(ch)];
        if (v < 0) throw ValidationError("invalid base64 character");
        acc = (acc << 6) | static_cast<std::uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xFF));
        }
    }
    return out;
}

}  // namespace edge
