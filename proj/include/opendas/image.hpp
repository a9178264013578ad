#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "error.hpp"

namespace opendas {

using Rgb = std::array<float, 3>;

/// Channel means and standard deviations of the image statistics the usual
/// dual-encoder preprocessing normalizes with. The mean doubles as the
/// default background fill for segment crops.
inline constexpr Rgb kPixelMean{0.48145466f, 0.4578275f, 0.40821073f};
inline constexpr Rgb kPixelStd{0.26862954f, 0.26130258f, 0.27577711f};

/// Interleaved RGB, row-major, values in [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(int h, int w, Rgb fill = {0, 0, 0}) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3) {
        for (std::size_t i = 0; i < pixels.size(); i += 3) std::copy(fill.begin(), fill.end(), pixels.begin() + i);
    }

    float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

    bool operator==(const Image&) const = default;
};

/// Binary mask, row-major, nonzero means inside.
struct Mask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> values;

    Mask() = default;
    Mask(int h, int w, bool fill = false)
        : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill ? 1 : 0) {}

    bool inside(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x] != 0; }
    void set(int y, int x, bool v) { values[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }
    std::size_t count() const {
        return static_cast<std::size_t>(std::count_if(values.begin(), values.end(), [](auto v) { return v != 0; }));
    }

    bool operator==(const Mask&) const = default;
};

/// Bilinear resampling with half-pixel centers and edge clamping.
inline Image resize_bilinear(const Image& src, int out_h, int out_w) {
    if (src.height < 1 || src.width < 1 || out_h < 1 || out_w < 1)
        throw ShapeError("resize_bilinear: empty source or target");
    if (src.height == out_h && src.width == out_w) return src;
    Image dst(out_h, out_w);
    const double sy = static_cast<double>(src.height) / out_h;
    const double sx = static_cast<double>(src.width) / out_w;
    for (int y = 0; y < out_h; ++y) {
        double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
        int y0 = static_cast<int>(fy);
        int y1 = std::min(y0 + 1, src.height - 1);
        double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
            int x0 = static_cast<int>(fx);
            int x1 = std::min(x0 + 1, src.width - 1);
            double wx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                double top = src.at(y0, x0, c) * (1 - wx) + src.at(y0, x1, c) * wx;
                double bot = src.at(y1, x0, c) * (1 - wx) + src.at(y1, x1, c) * wx;
                dst.at(y, x, c) = static_cast<float>(top * (1 - wy) + bot * wy);
            }
        }
    }
    return dst;
}

inline Image crop(const Image& src, int y0, int x0, int h, int w) {
    if (y0 < 0 || x0 < 0 || h < 1 || w < 1 || y0 + h > src.height || x0 + w > src.width)
        throw ShapeError("crop window out of bounds");
    Image out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = src.at(y0 + y, x0 + x, c);
    return out;
}

} // namespace opendas
