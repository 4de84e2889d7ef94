#pragma once

// Deterministic image primitives: resampling, luma conversion, forward-difference
// gradients and sub-pixel rearrangement.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "cdc/image.hpp"

namespace cdc {

/// Keys cubic convolution kernel.
template <typename T>
constexpr T cubic_kernel(T x, T a = T(-0.5)) {
    const T ax = x < 0 ? -x : x;
    if (ax <= T(1)) return ((a + 2) * ax - (a + 3)) * ax * ax + 1;
    if (ax < T(2)) return ((a * ax - 5 * a) * ax + 8 * a) * ax - 4 * a;
    return T(0);
}

namespace detail {

struct ResampleTap {
    int index[4];
    double weight[4];
};

// Center-of-pixel aligned source positions for one axis.
inline std::vector<ResampleTap> cubic_taps(int in_size, int out_size) {
    std::vector<ResampleTap> taps(out_size);
    const double ratio = static_cast<double>(in_size) / out_size;
    for (int o = 0; o < out_size; ++o) {
        const double src = (o + 0.5) * ratio - 0.5;
        const int base = static_cast<int>(std::floor(src));
        double sum = 0;
        for (int k = 0; k < 4; ++k) {
            const int i = base - 1 + k;
            taps[o].index[k] = std::clamp(i, 0, in_size - 1);
            taps[o].weight[k] = cubic_kernel<double>(src - i);
            sum += taps[o].weight[k];
        }
        for (double& w : taps[o].weight) w /= sum;
    }
    return taps;
}

}  // namespace detail

/// Separable bicubic resampling (a = -0.5), replicate border, clamped to [0,1].
template <typename T>
BasicImage<T> resize_bicubic(const BasicImage<T>& img, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize_bicubic: target size must be positive");
    const auto ty = detail::cubic_taps(img.height(), out_h);
    const auto tx = detail::cubic_taps(img.width(), out_w);

    BasicImage<T> out(out_h, out_w, img.channels(), img.colorspace());
    std::vector<double> rows(static_cast<std::size_t>(img.height()) * out_w);
    for (int c = 0; c < img.channels(); ++c) {
        for (int y = 0; y < img.height(); ++y)
            for (int x = 0; x < out_w; ++x) {
                const auto& t = tx[x];
                double acc = 0;
                for (int k = 0; k < 4; ++k) acc += t.weight[k] * static_cast<double>(img(y, t.index[k], c));
                rows[static_cast<std::size_t>(y) * out_w + x] = acc;
            }
        for (int y = 0; y < out_h; ++y) {
            const auto& t = ty[y];
            for (int x = 0; x < out_w; ++x) {
                double acc = 0;
                for (int k = 0; k < 4; ++k) acc += t.weight[k] * rows[static_cast<std::size_t>(t.index[k]) * out_w + x];
                out(y, x, c) = static_cast<T>(std::clamp(acc, 0.0, 1.0));
            }
        }
    }
    return out;
}

/// Studio-swing luma. Returns Y/255 where Y = 16 + 65.481 R + 128.553 G + 24.966 B.
template <typename T>
BasicImage<T> rgb_to_y(const BasicImage<T>& img) {
    if (img.colorspace() != ColorSpace::RGB) throw std::invalid_argument("rgb_to_y: input must be RGB");
    auto out = BasicImage<T>::gray(img.height(), img.width());
    const T* r = img.plane(0);
    const T* g = img.plane(1);
    const T* b = img.plane(2);
    T* y = out.plane(0);
    for (std::size_t i = 0; i < out.plane_size(); ++i) {
        const double v = 16.0 + 65.481 * r[i] + 128.553 * g[i] + 24.966 * b[i];
        y[i] = static_cast<T>(v / 255.0);
    }
    return out;
}

template <typename T>
struct GradientMaps {
    BasicImage<T> gx;
    BasicImage<T> gy;
};

/// Per-channel forward differences; the last column of gx and last row of gy are 0.
template <typename T>
GradientMaps<T> spatial_gradients(const BasicImage<T>& img) {
    GradientMaps<T> g{BasicImage<T>(img.height(), img.width(), img.channels(), img.colorspace()),
                      BasicImage<T>(img.height(), img.width(), img.channels(), img.colorspace())};
    const int h = img.height();
    const int w = img.width();
    for (int c = 0; c < img.channels(); ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                g.gx(y, x, c) = x + 1 < w ? img(y, x + 1, c) - img(y, x, c) : T(0);
                g.gy(y, x, c) = y + 1 < h ? img(y + 1, x, c) - img(y, x, c) : T(0);
            }
    return g;
}

/// out[h*r+dy, w*r+dx, c] = feat[h, w, c*r*r + dy*r + dx]
template <typename T>
BasicImage<T> pixel_shuffle(const BasicImage<T>& feat, int r) {
    if (r < 1) throw std::invalid_argument("pixel_shuffle: factor must be >= 1");
    const int rr = r * r;
    if (feat.channels() % rr != 0)
        throw std::invalid_argument("pixel_shuffle: channel count " + std::to_string(feat.channels()) +
                                    " not divisible by r^2 = " + std::to_string(rr));
    const int oc = feat.channels() / rr;
    BasicImage<T> out(feat.height() * r, feat.width() * r, oc,
                      oc == 3 ? ColorSpace::RGB : (oc == 1 ? ColorSpace::Y : ColorSpace::Feature));
    for (int c = 0; c < oc; ++c)
        for (int dy = 0; dy < r; ++dy)
            for (int dx = 0; dx < r; ++dx) {
                const T* src = feat.plane(c * rr + dy * r + dx);
                for (int y = 0; y < feat.height(); ++y)
                    for (int x = 0; x < feat.width(); ++x)
                        out(y * r + dy, x * r + dx, c) = src[static_cast<std::size_t>(y) * feat.width() + x];
            }
    return out;
}

/// Inverse of pixel_shuffle. Also the adjoint, so it carries gradients backwards.
template <typename T>
BasicImage<T> pixel_unshuffle(const BasicImage<T>& img, int r) {
    if (r < 1) throw std::invalid_argument("pixel_unshuffle: factor must be >= 1");
    if (img.height() % r != 0 || img.width() % r != 0)
        throw std::invalid_argument("pixel_unshuffle: spatial size not divisible by r");
    const int rr = r * r;
    const int h = img.height() / r;
    const int w = img.width() / r;
    BasicImage<T> out(h, w, img.channels() * rr, ColorSpace::Feature);
    for (int c = 0; c < img.channels(); ++c)
        for (int dy = 0; dy < r; ++dy)
            for (int dx = 0; dx < r; ++dx) {
                T* dst = out.plane(c * rr + dy * r + dx);
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) dst[static_cast<std::size_t>(y) * w + x] = img(y * r + dy, x * r + dx, c);
            }
    return out;
}

/// Normalized separable Gaussian blur, kernel radius ceil(3 sigma), replicate border.
template <typename T>
BasicImage<T> gaussian_blur(const BasicImage<T>& img, double sigma) {
    if (sigma <= 0) return img;
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * radius + 1);
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (double& v : k) v /= sum;

    BasicImage<T> out(img.height(), img.width(), img.channels(), img.colorspace());
    std::vector<double> tmp(img.plane_size());
    const int h = img.height();
    const int w = img.width();
    for (int c = 0; c < img.channels(); ++c) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0;
                for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * img.at_clamped(y, x + i, c);
                tmp[static_cast<std::size_t>(y) * w + x] = acc;
            }
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0;
                for (int i = -radius; i <= radius; ++i)
                    acc += k[i + radius] * tmp[static_cast<std::size_t>(std::clamp(y + i, 0, h - 1)) * w + x];
                out(y, x, c) = static_cast<T>(acc);
            }
    }
    return out;
}

/// Replicate-pad on the bottom/right so both dimensions become multiples of `multiple`.
template <typename T>
BasicImage<T> pad_to_multiple(const BasicImage<T>& img, int multiple) {
    const int h = (img.height() + multiple - 1) / multiple * multiple;
    const int w = (img.width() + multiple - 1) / multiple * multiple;
    if (h == img.height() && w == img.width()) return img;
    BasicImage<T> out(h, w, img.channels(), img.colorspace());
    for (int c = 0; c < img.channels(); ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out(y, x, c) = img.at_clamped(y, x, c);
    return out;
}

template <typename T>
BasicImage<T> flip_horizontal(const BasicImage<T>& img) {
    BasicImage<T> out(img.height(), img.width(), img.channels(), img.colorspace());
    for (int c = 0; c < img.channels(); ++c)
        for (int y = 0; y < img.height(); ++y)
            for (int x = 0; x < img.width(); ++x) out(y, img.width() - 1 - x, c) = img(y, x, c);
    return out;
}

/// Rotate 90 degrees counter-clockwise: out(W-1-x, y) = in(y, x).
template <typename T>
BasicImage<T> rotate90(const BasicImage<T>& img) {
    BasicImage<T> out(img.width(), img.height(), img.channels(), img.colorspace());
    for (int c = 0; c < img.channels(); ++c)
        for (int y = 0; y < img.height(); ++y)
            for (int x = 0; x < img.width(); ++x) out(img.width() - 1 - x, y, c) = img(y, x, c);
    return out;
}

template <typename T>
Map2D<T> rotate90(const Map2D<T>& m) {
    Map2D<T> out(m.width, m.height);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) out(m.width - 1 - x, y) = m(y, x);
    return out;
}

}  // namespace cdc
