#pragma once

// Training objectives: L1, masked intermediate-supervision L1, the
// gradient-weighted reconstruction loss and their sum. Every loss has a
// matching backward that accumulates dL/d(prediction) into a caller buffer.

#include <array>
#include <cmath>
#include <stdexcept>

#include "cdc/components.hpp"
#include "cdc/image.hpp"
#include "cdc/imgcore.hpp"

namespace cdc {

enum class BaseLoss { L1 };

struct LossConfig {
    double alpha = 4.0;
    double is_weight = 1.0;
    BaseLoss base_loss = BaseLoss::L1;
    /// Treat D_gw as a constant during backprop (off: gradients flow through the weight map).
    bool detach_weight = false;

    void validate() const {
        if (!std::isfinite(alpha) || alpha < 0) throw std::invalid_argument("LossConfig: alpha must be finite and >= 0");
        if (!std::isfinite(is_weight) || is_weight < 0) throw std::invalid_argument("LossConfig: is_weight must be >= 0");
    }
};

struct LossBreakdown {
    double total = 0;
    double rec = 0;
    double is_flat = 0;
    double is_edge = 0;
    double is_corner = 0;

    double is_term(Component e) const {
        return e == Component::Flat ? is_flat : (e == Component::Edge ? is_edge : is_corner);
    }
    double& is_term(Component e) { return e == Component::Flat ? is_flat : (e == Component::Edge ? is_edge : is_corner); }

    LossBreakdown& operator+=(const LossBreakdown& o) {
        total += o.total;
        rec += o.rec;
        is_flat += o.is_flat;
        is_edge += o.is_edge;
        is_corner += o.is_corner;
        return *this;
    }
    LossBreakdown& operator/=(double n) {
        total /= n;
        rec /= n;
        is_flat /= n;
        is_edge /= n;
        is_corner /= n;
        return *this;
    }
};

namespace detail {
template <typename T>
constexpr T sign(T v) {
    return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

inline void require_mask_shape(const Mask& m, int h, int w, const char* what) {
    if (m.height != h || m.width != w) throw std::invalid_argument(std::string(what) + ": mask shape mismatch");
}
}  // namespace detail

template <typename T>
T l1_loss(const BasicImage<T>& a, const BasicImage<T>& b) {
    require_same_shape(a, b, "l1_loss");
    double acc = 0;
    const auto& av = a.storage();
    const auto& bv = b.storage();
    for (std::size_t i = 0; i < av.size(); ++i) acc += std::abs(static_cast<double>(av[i]) - static_cast<double>(bv[i]));
    return static_cast<T>(acc / static_cast<double>(av.size()));
}

template <typename T>
T l1_loss_backward(const BasicImage<T>& a, const BasicImage<T>& b, BasicImage<T>& grad, T scale = T(1)) {
    require_same_shape(a, grad, "l1_loss grad");
    const T value = l1_loss(a, b);
    const T inv_n = scale / static_cast<T>(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) grad.storage()[i] += inv_n * detail::sign(a.storage()[i] - b.storage()[i]);
    return value;
}

/// mean(D_gw * |hr - sr|), D_gw = (1 + alpha |dGx|)(1 + alpha |dGy|).
template <typename T>
T gw_loss(const BasicImage<T>& sr, const BasicImage<T>& hr, const LossConfig& cfg) {
    require_same_shape(sr, hr, "gw_loss");
    cfg.validate();
    const auto gs = spatial_gradients(sr);
    const auto gh = spatial_gradients(hr);
    const double alpha = cfg.alpha;
    double acc = 0;
    for (std::size_t i = 0; i < sr.size(); ++i) {
        const double dx = std::abs(static_cast<double>(gs.gx.storage()[i]) - static_cast<double>(gh.gx.storage()[i]));
        const double dy = std::abs(static_cast<double>(gs.gy.storage()[i]) - static_cast<double>(gh.gy.storage()[i]));
        const double weight = (1.0 + alpha * dx) * (1.0 + alpha * dy);
        acc += std::abs(weight * static_cast<double>(hr.storage()[i]) - weight * static_cast<double>(sr.storage()[i]));
    }
    return static_cast<T>(acc / static_cast<double>(sr.size()));
}

/// Returns gw_loss and adds scale * dL/dsr into grad.
template <typename T>
T gw_loss_backward(const BasicImage<T>& sr, const BasicImage<T>& hr, const LossConfig& cfg, BasicImage<T>& grad,
                   T scale = T(1)) {
    require_same_shape(sr, hr, "gw_loss");
    require_same_shape(sr, grad, "gw_loss grad");
    cfg.validate();
    const int h = sr.height();
    const int w = sr.width();
    const T alpha = static_cast<T>(cfg.alpha);
    const T inv_n = scale / static_cast<T>(sr.size());
    double acc = 0;
    for (int c = 0; c < sr.channels(); ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const T r = sr(y, x, c) - hr(y, x, c);
                const T gx = x + 1 < w ? (sr(y, x + 1, c) - sr(y, x, c)) - (hr(y, x + 1, c) - hr(y, x, c)) : T(0);
                const T gy = y + 1 < h ? (sr(y + 1, x, c) - sr(y, x, c)) - (hr(y + 1, x, c) - hr(y, x, c)) : T(0);
                const T wx = T(1) + alpha * std::abs(gx);
                const T wy = T(1) + alpha * std::abs(gy);
                const T a = std::abs(r);
                acc += static_cast<double>(wx * wy * a);

                grad(y, x, c) += inv_n * wx * wy * detail::sign(r);
                if (cfg.detach_weight) continue;
                // d|gx|/d sr(y,x+1) = sign(gx), d|gx|/d sr(y,x) = -sign(gx); same for gy along rows.
                const T kx = inv_n * a * alpha * wy * detail::sign(gx);
                const T ky = inv_n * a * alpha * wx * detail::sign(gy);
                if (x + 1 < w) {
                    grad(y, x + 1, c) += kx;
                    grad(y, x, c) -= kx;
                }
                if (y + 1 < h) {
                    grad(y + 1, x, c) += ky;
                    grad(y, x, c) -= ky;
                }
            }
    return static_cast<T>(acc / static_cast<double>(sr.size()));
}

/// mean over all pixels and channels of |M*hr - M*sr|; zeros outside the mask count in the mean.
template <typename T>
T intermediate_loss(const BasicImage<T>& sr_e, const BasicImage<T>& hr, const Mask& mask) {
    require_same_shape(sr_e, hr, "intermediate_loss");
    detail::require_mask_shape(mask, hr.height(), hr.width(), "intermediate_loss");
    double acc = 0;
    const std::size_t plane = hr.plane_size();
    for (int c = 0; c < hr.channels(); ++c) {
        const T* s = sr_e.plane(c);
        const T* g = hr.plane(c);
        for (std::size_t i = 0; i < plane; ++i) {
            const T m = mask.data[i] ? T(1) : T(0);
            acc += static_cast<double>(std::abs(m * g[i] - m * s[i]));
        }
    }
    return static_cast<T>(acc / static_cast<double>(hr.size()));
}

template <typename T>
T intermediate_loss_backward(const BasicImage<T>& sr_e, const BasicImage<T>& hr, const Mask& mask,
                             BasicImage<T>& grad, T scale = T(1)) {
    require_same_shape(sr_e, grad, "intermediate_loss grad");
    const T value = intermediate_loss(sr_e, hr, mask);
    const T inv_n = scale / static_cast<T>(hr.size());
    const std::size_t plane = hr.plane_size();
    for (int c = 0; c < hr.channels(); ++c) {
        const T* s = sr_e.plane(c);
        const T* g = hr.plane(c);
        T* d = grad.plane(c);
        for (std::size_t i = 0; i < plane; ++i)
            if (mask.data[i]) d[i] += inv_n * detail::sign(s[i] - g[i]);
    }
    return value;
}

template <typename T>
using IntermediateSet = std::array<BasicImage<T>, 3>;

/// rec = gw_loss(final); is_e = is_weight * intermediate_loss(inter[e], masks[e]); total = rec + sum is_e.
template <typename T>
LossBreakdown total_loss(const BasicImage<T>& final_sr, const IntermediateSet<T>& inter_srs, const BasicImage<T>& hr,
                         const ComponentMasks& masks, const LossConfig& cfg) {
    LossBreakdown out;
    out.rec = static_cast<double>(gw_loss(final_sr, hr, cfg));
    out.total = out.rec;
    for (Component e : kComponents) {
        const auto i = static_cast<std::size_t>(e);
        const double v = cfg.is_weight * static_cast<double>(intermediate_loss(inter_srs[i], hr, masks[e]));
        out.is_term(e) = v;
        out.total += v;
    }
    return out;
}

template <typename T>
struct PredictionGrads {
    BasicImage<T> final_sr;
    IntermediateSet<T> inter_srs;

    static PredictionGrads zeros_like(const BasicImage<T>& like) {
        const BasicImage<T> z(like.height(), like.width(), like.channels(), like.colorspace());
        return {z, {z, z, z}};
    }
};

/// total_loss plus scale * dL/d(prediction) accumulated into `grads`.
template <typename T>
LossBreakdown total_loss_backward(const BasicImage<T>& final_sr, const IntermediateSet<T>& inter_srs,
                                  const BasicImage<T>& hr, const ComponentMasks& masks, const LossConfig& cfg,
                                  PredictionGrads<T>& grads, T scale = T(1)) {
    LossBreakdown out;
    out.rec = static_cast<double>(gw_loss_backward(final_sr, hr, cfg, grads.final_sr, scale));
    out.total = out.rec;
    const T w = static_cast<T>(cfg.is_weight);
    for (Component e : kComponents) {
        const auto i = static_cast<std::size_t>(e);
        const double v =
            cfg.is_weight * static_cast<double>(intermediate_loss_backward(inter_srs[i], hr, masks[e],
                                                                           grads.inter_srs[i], scale * w));
        out.is_term(e) = v;
        out.total += v;
    }
    return out;
}

}  // namespace cdc
