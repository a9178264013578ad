#pragma once

#include <png.h>

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "image.hpp"

namespace opendas {

namespace detail {

struct PngImage {
    png_image img;
    PngImage() {
        std::memset(&img, 0, sizeof img);
        img.version = PNG_IMAGE_VERSION;
    }
    ~PngImage() { png_image_free(&img); }
    PngImage(const PngImage&) = delete;
    PngImage& operator=(const PngImage&) = delete;
};

inline std::vector<std::uint8_t> read_png(const std::string& path, png_uint_32 format, int& h, int& w) {
    PngImage p;
    if (!png_image_begin_read_from_file(&p.img, path.c_str()))
        throw IoError("cannot read PNG " + path + ": " + p.img.message);
    p.img.format = format;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(p.img));
    if (!png_image_finish_read(&p.img, nullptr, buf.data(), 0, nullptr))
        throw IoError("cannot decode PNG " + path + ": " + p.img.message);
    h = static_cast<int>(p.img.height);
    w = static_cast<int>(p.img.width);
    return buf;
}

inline void write_png(const std::string& path, png_uint_32 format, int h, int w, const std::vector<std::uint8_t>& buf) {
    PngImage p;
    p.img.format = format;
    p.img.height = static_cast<png_uint_32>(h);
    p.img.width = static_cast<png_uint_32>(w);
    if (!png_image_write_to_file(&p.img, path.c_str(), 0, buf.data(), 0, nullptr))
        throw IoError("cannot write PNG " + path + ": " + p.img.message);
}

} // namespace detail

inline std::uint8_t to_u8(float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

/// 8-bit RGB PNG -> Image in [0, 1].
inline Image load_png_rgb(const std::string& path) {
    int h = 0, w = 0;
    auto buf = detail::read_png(path, PNG_FORMAT_RGB, h, w);
    Image img(h, w);
    for (std::size_t i = 0; i < buf.size(); ++i) img.pixels[i] = buf[i] / 255.0f;
    return img;
}

inline void save_png_rgb(const std::string& path, const Image& img) {
    std::vector<std::uint8_t> buf(img.pixels.size());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = to_u8(img.pixels[i]);
    detail::write_png(path, PNG_FORMAT_RGB, img.height, img.width, buf);
}

/// 8-bit single channel PNG, nonzero = inside.
inline Mask load_png_mask(const std::string& path) {
    int h = 0, w = 0;
    auto buf = detail::read_png(path, PNG_FORMAT_GRAY, h, w);
    Mask m(h, w);
    for (std::size_t i = 0; i < buf.size(); ++i) m.values[i] = buf[i] != 0 ? 1 : 0;
    return m;
}

inline void save_png_mask(const std::string& path, const Mask& m) {
    std::vector<std::uint8_t> buf(m.values.size());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = m.values[i] ? 255 : 0;
    detail::write_png(path, PNG_FORMAT_GRAY, m.height, m.width, buf);
}

} // namespace opendas
