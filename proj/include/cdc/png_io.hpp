#pragma once

// 8-bit PNG load/save plus raw float maps (PFM). PNG load maps [0,255] -> [0,1]
// by /255; save writes round(clamp(v,0,1)*255). Requires linking libpng.

#include <png.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdc/image.hpp"

namespace cdc {

inline std::uint8_t to_byte(float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

/// Loads any PNG as RGB (or as Y when `as_gray`).
inline Image load_png(const std::filesystem::path& path, bool as_gray = false) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.string().c_str()))
        throw std::runtime_error("cannot read PNG '" + path.string() + "': " + img.message);
    img.format = as_gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&img);
        throw std::runtime_error("cannot decode PNG '" + path.string() + "': " + img.message);
    }
    const int h = static_cast<int>(img.height);
    const int w = static_cast<int>(img.width);
    const int c = as_gray ? 1 : 3;
    Image out(h, w, c, as_gray ? ColorSpace::Y : ColorSpace::RGB);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int k = 0; k < c; ++k)
                out(y, x, k) = buf[(static_cast<std::size_t>(y) * w + x) * c + k] / 255.0f;
    return out;
}

/// Saves a 1- or 3-channel image. Other channel counts are rejected.
inline void save_png(const Image& image, const std::filesystem::path& path) {
    const int c = image.channels();
    if (c != 1 && c != 3) throw std::invalid_argument("save_png: need 1 or 3 channels, got " + std::to_string(c));
    const int h = image.height();
    const int w = image.width();
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(h) * w * c);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int k = 0; k < c; ++k) buf[(static_cast<std::size_t>(y) * w + x) * c + k] = to_byte(image(y, x, k));

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(w);
    img.height = static_cast<png_uint_32>(h);
    img.format = c == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&img, path.string().c_str(), 0, buf.data(), 0, nullptr))
        throw std::runtime_error("cannot write PNG '" + path.string() + "': " + img.message);
}

/// Binary mask as a 0/255 grayscale PNG.
inline void save_mask_png(const Mask& mask, const std::filesystem::path& path) {
    auto img = Image::gray(mask.height, mask.width);
    for (std::size_t i = 0; i < mask.size(); ++i) img.storage()[i] = mask.data[i] ? 1.0f : 0.0f;
    save_png(img, path);
}

/// Quantizes through the 8-bit PNG representation without touching disk.
inline Image quantize8(const Image& image) {
    Image out = image;
    for (float& v : out.storage()) v = to_byte(v) / 255.0f;
    return out;
}

/// Single-channel float map as little-endian grayscale PFM (rows stored bottom-up).
inline void save_pfm(const Map2D<float>& map, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    f << "Pf\n" << map.width << ' ' << map.height << "\n-1.0\n";
    for (int y = map.height - 1; y >= 0; --y)
        for (int x = 0; x < map.width; ++x) {
            const auto bits = std::bit_cast<std::uint32_t>(map(y, x));
            const char bytes[4] = {static_cast<char>(bits & 0xFF), static_cast<char>((bits >> 8) & 0xFF),
                                   static_cast<char>((bits >> 16) & 0xFF), static_cast<char>((bits >> 24) & 0xFF)};
            f.write(bytes, 4);
        }
    if (!f) throw std::runtime_error("write failed for '" + path.string() + "'");
}

inline Map2D<float> load_pfm(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open '" + path.string() + "'");
    std::string magic;
    int w = 0, h = 0;
    double scale = 0;
    f >> magic >> w >> h >> scale;
    f.get();
    if (magic != "Pf" || w < 1 || h < 1 || scale >= 0)
        throw std::runtime_error("'" + path.string() + "' is not a little-endian grayscale PFM");
    Map2D<float> map(h, w);
    for (int y = h - 1; y >= 0; --y)
        for (int x = 0; x < w; ++x) {
            unsigned char b[4];
            f.read(reinterpret_cast<char*>(b), 4);
            map(y, x) = std::bit_cast<float>(static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                                             (static_cast<std::uint32_t>(b[2]) << 16) |
                                             (static_cast<std::uint32_t>(b[3]) << 24));
        }
    if (!f) throw std::runtime_error("'" + path.string() + "' is truncated");
    return map;
}

}  // namespace cdc
