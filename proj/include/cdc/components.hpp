#pragma once

// Flat / edge / corner parsing of HR images from the Harris structure tensor.
// These masks only ever supervise the intermediate losses; the network never
// sees them.

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "cdc/image.hpp"
#include "cdc/imgcore.hpp"

namespace cdc {

enum class Component { Flat = 0, Edge = 1, Corner = 2 };
inline constexpr std::array<Component, 3> kComponents{Component::Flat, Component::Edge, Component::Corner};

inline const char* to_string(Component e) {
    switch (e) {
        case Component::Flat: return "flat";
        case Component::Edge: return "edge";
        case Component::Corner: return "corner";
    }
    return "?";
}

struct HarrisConfig {
    double sigma = 1.0;
    double k = 0.04;
    double corner_thresh = 0.01;  // fraction of the max positive response
    double edge_thresh = 0.01;    // fraction of |min response|
    int corner_dilate_radius = 2;

    void validate() const {
        if (!(sigma > 0)) throw std::invalid_argument("HarrisConfig: sigma must be > 0");
        if (!(k > 0 && k < 0.25)) throw std::invalid_argument("HarrisConfig: k must lie in (0, 0.25)");
        if (!(corner_thresh > 0 && corner_thresh < 1))
            throw std::invalid_argument("HarrisConfig: corner threshold must lie in (0, 1)");
        if (!(edge_thresh > 0 && edge_thresh < 1))
            throw std::invalid_argument("HarrisConfig: edge threshold must lie in (0, 1)");
        if (corner_dilate_radius < 0) throw std::invalid_argument("HarrisConfig: dilate radius must be >= 0");
    }
};

struct ComponentMasks {
    Mask flat;
    Mask edge;
    Mask corner;

    Mask& operator[](Component e) { return e == Component::Flat ? flat : (e == Component::Edge ? edge : corner); }
    const Mask& operator[](Component e) const {
        return e == Component::Flat ? flat : (e == Component::Edge ? edge : corner);
    }
    int height() const { return flat.height; }
    int width() const { return flat.width; }

    /// m_flat + m_edge + m_corner == 1 everywhere.
    bool is_partition() const {
        if (edge.height != flat.height || corner.height != flat.height || edge.width != flat.width ||
            corner.width != flat.width)
            return false;
        for (std::size_t i = 0; i < flat.size(); ++i)
            if (flat.data[i] + edge.data[i] + corner.data[i] != 1) return false;
        return true;
    }

    bool operator==(const ComponentMasks&) const = default;
};

namespace detail {

inline std::vector<double> gaussian_weights(double sigma) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> w(2 * radius + 1);
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) sum += w[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (double& v : w) v /= sum;
    return w;
}

// Separable weighted window sum with replicate border.
inline Map2D<double> smooth(const Map2D<double>& m, const std::vector<double>& w) {
    const int r = static_cast<int>(w.size() / 2);
    Map2D<double> tmp(m.height, m.width);
    Map2D<double> out(m.height, m.width);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            double acc = 0;
            for (int i = -r; i <= r; ++i) acc += w[i + r] * m(y, std::clamp(x + i, 0, m.width - 1));
            tmp(y, x) = acc;
        }
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            double acc = 0;
            for (int i = -r; i <= r; ++i) acc += w[i + r] * tmp(std::clamp(y + i, 0, m.height - 1), x);
            out(y, x) = acc;
        }
    return out;
}

}  // namespace detail

/// R = det(S) - k trace(S)^2 with S the Gaussian-windowed structure tensor of 3x3 Sobel gradients.
inline Map2D<double> harris_response(const Image& gray, const HarrisConfig& cfg) {
    if (gray.channels() != 1) throw std::invalid_argument("harris_response: expected a single-channel image");
    cfg.validate();
    const int h = gray.height();
    const int w = gray.width();
    Map2D<double> ixx(h, w), iyy(h, w), ixy(h, w);
    auto px = [&](int y, int x) { return static_cast<double>(gray.at_clamped(y, x)); };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double gx = (px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1)) -
                              (px(y - 1, x - 1) + 2 * px(y, x - 1) + px(y + 1, x - 1));
            const double gy = (px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1)) -
                              (px(y - 1, x - 1) + 2 * px(y - 1, x) + px(y - 1, x + 1));
            ixx(y, x) = gx * gx;
            iyy(y, x) = gy * gy;
            ixy(y, x) = gx * gy;
        }
    const auto wts = detail::gaussian_weights(cfg.sigma);
    const auto sxx = detail::smooth(ixx, wts);
    const auto syy = detail::smooth(iyy, wts);
    const auto sxy = detail::smooth(ixy, wts);
    Map2D<double> r(h, w);
    for (std::size_t i = 0; i < r.size(); ++i) {
        const double tr = sxx.data[i] + syy.data[i];
        r.data[i] = sxx.data[i] * syy.data[i] - sxy.data[i] * sxy.data[i] - cfg.k * tr * tr;
    }
    return r;
}

/// Threshold a response map into a hard partition. Priority: corner > edge > flat.
inline ComponentMasks classify_components(const Map2D<double>& response, const HarrisConfig& cfg) {
    double rmax = -std::numeric_limits<double>::infinity();
    double rmin = std::numeric_limits<double>::infinity();
    for (double v : response.data) {
        if (!std::isfinite(v)) throw std::invalid_argument("classify_components: non-finite response");
        rmax = std::max(rmax, v);
        rmin = std::min(rmin, v);
    }
    ComponentMasks m{Mask(response.height, response.width), Mask(response.height, response.width),
                     Mask(response.height, response.width)};
    const bool has_corners = rmax > 0;
    const bool has_edges = rmin < 0;
    const double corner_level = cfg.corner_thresh * rmax;
    const double edge_level = -cfg.edge_thresh * std::abs(rmin);
    for (std::size_t i = 0; i < response.size(); ++i) {
        const double v = response.data[i];
        if (has_corners && v > corner_level)
            m.corner.data[i] = 1;
        else if (has_edges && v < edge_level)
            m.edge.data[i] = 1;
        else
            m.flat.data[i] = 1;
    }
    return m;
}

/// Dilate corners by a (2r+1)^2 square; dilated pixels leave flat/edge.
inline ComponentMasks refine_masks(const ComponentMasks& masks, const HarrisConfig& cfg) {
    if (!masks.is_partition()) throw std::invalid_argument("refine_masks: input masks are not a partition");
    const int r = cfg.corner_dilate_radius;
    if (r < 0) throw std::invalid_argument("refine_masks: negative dilation radius");
    if (r == 0) return masks;
    ComponentMasks out = masks;
    const int h = masks.height();
    const int w = masks.width();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!masks.corner(y, x)) continue;
            for (int yy = std::max(0, y - r); yy <= std::min(h - 1, y + r); ++yy)
                for (int xx = std::max(0, x - r); xx <= std::min(w - 1, x + r); ++xx) {
                    out.corner(yy, xx) = 1;
                    out.edge(yy, xx) = 0;
                    out.flat(yy, xx) = 0;
                }
        }
    return out;
}

/// Full pipeline on an HR image (RGB images are reduced to luma first).
inline ComponentMasks compute_masks(const Image& hr, const HarrisConfig& cfg = {}) {
    const Image gray = hr.channels() == 1 ? hr : rgb_to_y(hr);
    return refine_masks(classify_components(harris_response(gray, cfg), cfg), cfg);
}

/// Color-coded composite for inspection: flat black, edge blue, corner red.
inline Image masks_composite(const ComponentMasks& m) {
    auto out = Image::rgb(m.height(), m.width());
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) {
            if (m.corner(y, x)) out(y, x, 0) = 1.0f;
            if (m.edge(y, x)) out(y, x, 2) = 1.0f;
        }
    return out;
}

}  // namespace cdc
