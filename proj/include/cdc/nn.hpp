#pragma once

// Minimal CPU layers with hand-written backward passes. Feature maps are
// BasicImage<T> in planar C×H×W layout; convolutions are im2col + Eigen GEMM.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdc/image.hpp"
#include "cdc/imgcore.hpp"

namespace cdc {

template <typename T>
struct ParamArray {
    std::vector<int> shape;
    AlignedVector<T> values;
};

/// Named, ordered parameter store. Insertion order is the canonical order
/// used for checkpoints and optimizer state.
template <typename T>
class Params {
public:
    std::size_t add(const std::string& name, std::vector<int> shape) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
        std::size_t n = 1;
        for (int d : shape) {
            if (d < 1) throw std::invalid_argument("parameter '" + name + "' has a non-positive dimension");
            n *= static_cast<std::size_t>(d);
        }
        index_[name] = arrays_.size();
        names_.push_back(name);
        arrays_.push_back({std::move(shape), AlignedVector<T>(n, T(0))});
        return arrays_.size() - 1;
    }

    std::size_t size() const { return arrays_.size(); }
    ParamArray<T>& operator[](std::size_t i) { return arrays_[i]; }
    const ParamArray<T>& operator[](std::size_t i) const { return arrays_[i]; }
    const std::string& name(std::size_t i) const { return names_[i]; }
    const std::vector<std::string>& names() const { return names_; }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    std::size_t index_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
        return it->second;
    }
    ParamArray<T>& at(const std::string& name) { return arrays_[index_of(name)]; }
    const ParamArray<T>& at(const std::string& name) const { return arrays_[index_of(name)]; }

    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& a : arrays_) n += a.values.size();
        return n;
    }

    Params zeros_like() const {
        Params p = *this;
        for (auto& a : p.arrays_) std::fill(a.values.begin(), a.values.end(), T(0));
        return p;
    }

    void set_zero() {
        for (auto& a : arrays_) std::fill(a.values.begin(), a.values.end(), T(0));
    }

    /// this += other, array by array (same layout required).
    void accumulate(const Params& other) {
        for (std::size_t i = 0; i < arrays_.size(); ++i) {
            auto& dst = arrays_[i].values;
            const auto& src = other.arrays_[i].values;
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
        }
    }

    bool same_layout(const Params& o) const {
        if (names_ != o.names_) return false;
        for (std::size_t i = 0; i < arrays_.size(); ++i)
            if (arrays_[i].shape != o.arrays_[i].shape) return false;
        return true;
    }

    bool all_finite() const {
        for (const auto& a : arrays_)
            for (T v : a.values)
                if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    Params<U> cast() const {
        Params<U> out;
        for (std::size_t i = 0; i < arrays_.size(); ++i) {
            out.add(names_[i], arrays_[i].shape);
            auto& dst = out[i].values;
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<U>(arrays_[i].values[k]);
        }
        return out;
    }

    bool operator==(const Params& o) const {
        if (!same_layout(o)) return false;
        for (std::size_t i = 0; i < arrays_.size(); ++i)
            if (arrays_[i].values != o.arrays_[i].values) return false;
        return true;
    }

private:
    std::vector<std::string> names_;
    std::vector<ParamArray<T>> arrays_;
    std::map<std::string, std::size_t> index_;
};

namespace nn {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
BasicImage<T> relu(const BasicImage<T>& x) {
    BasicImage<T> out = x;
    for (T& v : out.storage()) v = v > T(0) ? v : T(0);
    return out;
}

/// grad * (activation > 0); `activated` is the ReLU output.
template <typename T>
BasicImage<T> relu_backward(const BasicImage<T>& activated, BasicImage<T> grad) {
    auto& g = grad.storage();
    const auto& a = activated.storage();
    for (std::size_t i = 0; i < g.size(); ++i)
        if (!(a[i] > T(0))) g[i] = T(0);
    return grad;
}

template <typename T>
void add_inplace(BasicImage<T>& dst, const BasicImage<T>& src) {
    auto& d = dst.storage();
    const auto& s = src.storage();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

template <typename T>
void scale_inplace(BasicImage<T>& x, T s) {
    for (T& v : x.storage()) v *= s;
}

template <typename T>
BasicImage<T> concat_channels(const std::vector<const BasicImage<T>*>& parts) {
    int c = 0;
    for (const auto* p : parts) c += p->channels();
    BasicImage<T> out(parts.front()->height(), parts.front()->width(), c);
    auto it = out.storage().begin();
    for (const auto* p : parts) it = std::copy(p->storage().begin(), p->storage().end(), it);
    return out;
}

template <typename T>
BasicImage<T> slice_channels(const BasicImage<T>& x, int first, int count) {
    BasicImage<T> out(x.height(), x.width(), count);
    std::copy_n(x.plane(first), out.size(), out.storage().begin());
    return out;
}

struct PoolIndex {
    std::vector<std::uint32_t> argmax;  // flat source offset within the plane, per output element
};

/// 2×2 max pooling, stride 2. Ties go to the first element in raster order.
template <typename T>
BasicImage<T> maxpool2(const BasicImage<T>& x, PoolIndex* index) {
    if (x.height() % 2 || x.width() % 2) throw std::invalid_argument("maxpool2: spatial size must be even");
    const int h = x.height() / 2;
    const int w = x.width() / 2;
    BasicImage<T> out(h, w, x.channels());
    if (index) index->argmax.resize(out.size());
    for (int c = 0; c < x.channels(); ++c)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                int by = 2 * y, bx = 2 * xx;
                T best = x(by, bx, c);
                for (int k = 1; k < 4; ++k) {
                    const int sy = 2 * y + k / 2, sx = 2 * xx + k % 2;
                    if (x(sy, sx, c) > best) {
                        best = x(sy, sx, c);
                        by = sy;
                        bx = sx;
                    }
                }
                out(y, xx, c) = best;
                if (index)
                    index->argmax[(static_cast<std::size_t>(c) * h + y) * w + xx] =
                        static_cast<std::uint32_t>(by * x.width() + bx);
            }
    return out;
}

template <typename T>
BasicImage<T> maxpool2_backward(const BasicImage<T>& grad, const PoolIndex& index, int in_h, int in_w) {
    BasicImage<T> out(in_h, in_w, grad.channels());
    const std::size_t plane = grad.plane_size();
    for (int c = 0; c < grad.channels(); ++c) {
        T* dst = out.plane(c);
        const T* g = grad.plane(c);
        for (std::size_t i = 0; i < plane; ++i) dst[index.argmax[c * plane + i]] += g[i];
    }
    return out;
}

template <typename T>
BasicImage<T> upsample_nearest2(const BasicImage<T>& x) {
    BasicImage<T> out(x.height() * 2, x.width() * 2, x.channels());
    for (int c = 0; c < x.channels(); ++c)
        for (int y = 0; y < out.height(); ++y)
            for (int xx = 0; xx < out.width(); ++xx) out(y, xx, c) = x(y / 2, xx / 2, c);
    return out;
}

/// Adjoint of upsample_nearest2: sum over each 2×2 block.
template <typename T>
BasicImage<T> upsample_nearest2_backward(const BasicImage<T>& grad) {
    BasicImage<T> out(grad.height() / 2, grad.width() / 2, grad.channels());
    for (int c = 0; c < grad.channels(); ++c)
        for (int y = 0; y < grad.height(); ++y)
            for (int x = 0; x < grad.width(); ++x) out(y / 2, x / 2, c) += grad(y, x, c);
    return out;
}

namespace detail {

// Rows ordered (ci, ky, kx); columns are output pixels. Zero padding of k/2.
template <typename T>
void im2col(const BasicImage<T>& x, int k, AlignedVector<T>& col) {
    const int h = x.height(), w = x.width(), pad = k / 2;
    const std::size_t hw = x.plane_size();
    col.assign(static_cast<std::size_t>(x.channels()) * k * k * hw, T(0));
    std::size_t row = 0;
    for (int c = 0; c < x.channels(); ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx, ++row) {
                T* dst = col.data() + row * hw;
                const int dy = ky - pad, dx = kx - pad;
                const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                for (int y = 0; y < h; ++y) {
                    const int sy = y + dy;
                    if (sy < 0 || sy >= h || x1 <= x0) continue;
                    std::copy_n(&x(sy, x0 + dx, c), x1 - x0, dst + static_cast<std::size_t>(y) * w + x0);
                }
            }
}

template <typename T>
BasicImage<T> col2im(const AlignedVector<T>& col, int channels, int h, int w, int k) {
    BasicImage<T> out(h, w, channels);
    const int pad = k / 2;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    std::size_t row = 0;
    for (int c = 0; c < channels; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx, ++row) {
                const T* src = col.data() + row * hw;
                const int dy = ky - pad, dx = kx - pad;
                const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                for (int y = 0; y < h; ++y) {
                    const int sy = y + dy;
                    if (sy < 0 || sy >= h) continue;
                    T* d = &out(sy, x0 + dx, c);
                    const T* s = src + static_cast<std::size_t>(y) * w + x0;
                    for (int i = 0; i < x1 - x0; ++i) d[i] += s[i];
                }
            }
    return out;
}

}  // namespace detail

/// Stride-1 "same" convolution with bias. Kernel shape [cout, cin, k, k].
struct Conv2d {
    std::size_t weight = 0;
    std::size_t bias = 0;
    int cin = 0;
    int cout = 0;
    int k = 1;

    template <typename T>
    static Conv2d create(Params<T>& p, const std::string& name, int cin, int cout, int k) {
        Conv2d c;
        c.cin = cin;
        c.cout = cout;
        c.k = k;
        c.weight = p.add(name + ".weight", {cout, cin, k, k});
        c.bias = p.add(name + ".bias", {cout});
        return c;
    }

    std::size_t fan_in() const { return static_cast<std::size_t>(cin) * k * k; }

    template <typename T>
    BasicImage<T> forward(const Params<T>& p, const BasicImage<T>& x) const {
        if (x.channels() != cin)
            throw std::invalid_argument("conv: expected " + std::to_string(cin) + " input channels, got " +
                                        std::to_string(x.channels()));
        const auto hw = static_cast<Eigen::Index>(x.plane_size());
        BasicImage<T> out(x.height(), x.width(), cout);
        ConstMatMap<T> wmat(p[weight].values.data(), cout, static_cast<Eigen::Index>(fan_in()));
        MatMap<T> y(out.storage().data(), cout, hw);
        if (k == 1) {
            y.noalias() = wmat * ConstMatMap<T>(x.storage().data(), cin, hw);
        } else {
            AlignedVector<T> col;
            detail::im2col(x, k, col);
            y.noalias() = wmat * ConstMatMap<T>(col.data(), static_cast<Eigen::Index>(fan_in()), hw);
        }
        const auto& b = p[bias].values;
        for (int o = 0; o < cout; ++o) y.row(o).array() += b[o];
        return out;
    }

    /// Accumulates weight/bias gradients; returns dL/dx unless `need_input_grad` is false.
    template <typename T>
    BasicImage<T> backward(const Params<T>& p, const BasicImage<T>& x, const BasicImage<T>& grad_out, Params<T>& grads,
                           bool need_input_grad = true) const {
        const auto hw = static_cast<Eigen::Index>(x.plane_size());
        const auto fi = static_cast<Eigen::Index>(fan_in());
        ConstMatMap<T> dy(grad_out.storage().data(), cout, hw);
        MatMap<T> dw(grads[weight].values.data(), cout, fi);
        auto& db = grads[bias].values;
        for (int o = 0; o < cout; ++o) db[o] += dy.row(o).sum();
        ConstMatMap<T> wmat(p[weight].values.data(), cout, fi);

        if (k == 1) {
            ConstMatMap<T> xm(x.storage().data(), cin, hw);
            dw.noalias() += dy * xm.transpose();
            if (!need_input_grad) return {};
            BasicImage<T> dx(x.height(), x.width(), cin);
            MatMap<T>(dx.storage().data(), cin, hw).noalias() = wmat.transpose() * dy;
            return dx;
        }
        AlignedVector<T> col;
        detail::im2col(x, k, col);
        ConstMatMap<T> cm(col.data(), fi, hw);
        dw.noalias() += dy * cm.transpose();
        if (!need_input_grad) return {};
        MatMap<T>(col.data(), fi, hw).noalias() = wmat.transpose() * dy;
        return detail::col2im(col, cin, x.height(), x.width(), k);
    }
};

/// Pre-activation bottleneck: x + conv1x1(relu(conv3x3(relu(conv1x1(relu(x)))))), width C -> C/2 -> C/2 -> C.
struct ResidualBlock {
    Conv2d reduce, spatial, expand;

    template <typename T>
    static ResidualBlock create(Params<T>& p, const std::string& name, int channels) {
        const int mid = std::max(1, channels / 2);
        return {Conv2d::create(p, name + ".conv1", channels, mid, 1), Conv2d::create(p, name + ".conv2", mid, mid, 3),
                Conv2d::create(p, name + ".conv3", mid, channels, 1)};
    }

    template <typename T>
    struct Cache {
        BasicImage<T> a0, a1, a2;
    };

    template <typename T>
    BasicImage<T> forward(const Params<T>& p, const BasicImage<T>& x, Cache<T>* cache) const {
        auto a0 = relu(x);
        auto a1 = relu(reduce.forward(p, a0));
        auto a2 = relu(spatial.forward(p, a1));
        auto y = expand.forward(p, a2);
        add_inplace(y, x);
        if (cache) *cache = {std::move(a0), std::move(a1), std::move(a2)};
        return y;
    }

    template <typename T>
    BasicImage<T> backward(const Params<T>& p, const Cache<T>& c, const BasicImage<T>& dy, Params<T>& g) const {
        auto d2 = relu_backward(c.a2, expand.backward(p, c.a2, dy, g));
        auto d1 = relu_backward(c.a1, spatial.backward(p, c.a1, d2, g));
        auto d0 = relu_backward(c.a0, reduce.backward(p, c.a0, d1, g));
        add_inplace(d0, dy);
        return d0;
    }
};

/// Residual Inception Block: parallel 1×1 / 1×1→3×3 / 1×1→3×3→3×3 branches,
/// concatenated, projected back by 1×1, plus the identity.
struct InceptionBlock {
    Conv2d b1, b2a, b2b, b3a, b3b, b3c, proj;
    int channels = 0;

    template <typename T>
    static InceptionBlock create(Params<T>& p, const std::string& name, int channels) {
        const int w = std::max(1, channels / 2);
        InceptionBlock r;
        r.channels = channels;
        r.b1 = Conv2d::create(p, name + ".branch1.conv1", channels, w, 1);
        r.b2a = Conv2d::create(p, name + ".branch2.conv1", channels, w, 1);
        r.b2b = Conv2d::create(p, name + ".branch2.conv2", w, w, 3);
        r.b3a = Conv2d::create(p, name + ".branch3.conv1", channels, w, 1);
        r.b3b = Conv2d::create(p, name + ".branch3.conv2", w, w, 3);
        r.b3c = Conv2d::create(p, name + ".branch3.conv3", w, w, 3);
        r.proj = Conv2d::create(p, name + ".proj", 3 * w, channels, 1);
        return r;
    }

    template <typename T>
    struct Cache {
        BasicImage<T> a0, t2, t3, u3, cat;  // post-ReLU conv inputs
    };

    template <typename T>
    BasicImage<T> forward(const Params<T>& p, const BasicImage<T>& x, Cache<T>* cache) const {
        if (x.channels() != channels)
            throw std::invalid_argument("inception block: expected " + std::to_string(channels) + " channels, got " +
                                        std::to_string(x.channels()));
        auto a0 = relu(x);
        auto o1 = b1.forward(p, a0);
        auto t2 = relu(b2a.forward(p, a0));
        auto o2 = b2b.forward(p, t2);
        auto t3 = relu(b3a.forward(p, a0));
        auto u3 = relu(b3b.forward(p, t3));
        auto o3 = b3c.forward(p, u3);
        auto cat = relu(concat_channels<T>({&o1, &o2, &o3}));
        auto y = proj.forward(p, cat);
        add_inplace(y, x);
        if (cache) *cache = {std::move(a0), std::move(t2), std::move(t3), std::move(u3), std::move(cat)};
        return y;
    }

    template <typename T>
    BasicImage<T> backward(const Params<T>& p, const Cache<T>& c, const BasicImage<T>& dy, Params<T>& g) const {
        const auto dcat = relu_backward(c.cat, proj.backward(p, c.cat, dy, g));
        const int w = b1.cout;
        auto da0 = b1.backward(p, c.a0, slice_channels(dcat, 0, w), g);
        auto d2 = relu_backward(c.t2, b2b.backward(p, c.t2, slice_channels(dcat, w, w), g));
        add_inplace(da0, b2a.backward(p, c.a0, d2, g));
        auto d3 = relu_backward(c.u3, b3c.backward(p, c.u3, slice_channels(dcat, 2 * w, w), g));
        d3 = relu_backward(c.t3, b3b.backward(p, c.t3, d3, g));
        add_inplace(da0, b3a.backward(p, c.a0, d3, g));
        auto dx = relu_backward(c.a0, std::move(da0));
        add_inplace(dx, dy);
        return dx;
    }
};

/// Encoder/decoder with a residual skip at each resolution.
///   level l: skip_l = RB(x_l); x_{l+1} = maxpool(RB(x_l))
///   bottom:  y_D = RB(x_D)
///   decode:  y_l = (upsample(RB(y_{l+1})) + skip_l) / 2
/// The merge is averaged: both paths carry an identity, so a plain sum
/// multiplies the activation scale by about depth+1 per hourglass.
struct Hourglass {
    std::vector<ResidualBlock> skip, enc, dec;
    ResidualBlock bottom;

    template <typename T>
    static Hourglass create(Params<T>& p, const std::string& name, int channels, int depth) {
        Hourglass hg;
        for (int l = 0; l < depth; ++l) {
            const std::string lv = name + ".level" + std::to_string(l);
            hg.skip.push_back(ResidualBlock::create(p, lv + ".skip", channels));
            hg.enc.push_back(ResidualBlock::create(p, lv + ".down", channels));
            hg.dec.push_back(ResidualBlock::create(p, lv + ".up", channels));
        }
        hg.bottom = ResidualBlock::create(p, name + ".bottom", channels);
        return hg;
    }

    int depth() const { return static_cast<int>(skip.size()); }

    template <typename T>
    struct Cache {
        std::vector<typename ResidualBlock::Cache<T>> skip, enc, dec;
        typename ResidualBlock::Cache<T> bottom;
        std::vector<PoolIndex> pool;
        std::vector<std::pair<int, int>> sizes;  // per-level spatial size before pooling
    };

    template <typename T>
    BasicImage<T> forward(const Params<T>& p, const BasicImage<T>& x, Cache<T>* cache) const {
        const int d = depth();
        const int unit = 1 << d;
        if (x.height() % unit || x.width() % unit)
            throw std::invalid_argument("hourglass: spatial size " + std::to_string(x.height()) + "x" +
                                        std::to_string(x.width()) + " not divisible by " + std::to_string(unit));
        if (cache) {
            cache->skip.resize(d);
            cache->enc.resize(d);
            cache->dec.resize(d);
            cache->pool.resize(d);
            cache->sizes.resize(d);
        }
        std::vector<BasicImage<T>> skips(d);
        BasicImage<T> cur = x;
        for (int l = 0; l < d; ++l) {
            skips[l] = skip[l].forward(p, cur, cache ? &cache->skip[l] : nullptr);
            if (cache) cache->sizes[l] = {cur.height(), cur.width()};
            cur = maxpool2(enc[l].forward(p, cur, cache ? &cache->enc[l] : nullptr), cache ? &cache->pool[l] : nullptr);
        }
        cur = bottom.forward(p, cur, cache ? &cache->bottom : nullptr);
        for (int l = d - 1; l >= 0; --l) {
            cur = upsample_nearest2(dec[l].forward(p, cur, cache ? &cache->dec[l] : nullptr));
            add_inplace(cur, skips[l]);
            scale_inplace(cur, T(0.5));
        }
        return cur;
    }

    template <typename T>
    BasicImage<T> backward(const Params<T>& p, const Cache<T>& c, const BasicImage<T>& dy, Params<T>& g) const {
        const int d = depth();
        std::vector<BasicImage<T>> dskip(d);
        BasicImage<T> cur = dy;
        for (int l = 0; l < d; ++l) {
            scale_inplace(cur, T(0.5));
            dskip[l] = cur;
            cur = dec[l].backward(p, c.dec[l], upsample_nearest2_backward(cur), g);
        }
        cur = bottom.backward(p, c.bottom, cur, g);
        for (int l = d - 1; l >= 0; --l) {
            const auto [h, w] = c.sizes[l];
            cur = enc[l].backward(p, c.enc[l], maxpool2_backward(cur, c.pool[l], h, w), g);
            add_inplace(cur, skip[l].backward(p, c.skip[l], dskip[l], g));
        }
        return cur;
    }
};

/// Fan-in scaled uniform init U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every
/// 4-D kernel; biases (1-D arrays) stay zero. Deterministic for a given seed.
template <typename T>
void init_uniform_fan_in(Params<T>& p, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < p.size(); ++i) {
        auto& a = p[i];
        if (a.shape.size() != 4) {
            std::fill(a.values.begin(), a.values.end(), T(0));
            continue;
        }
        const double fan_in = static_cast<double>(a.shape[1]) * a.shape[2] * a.shape[3];
        const double bound = 1.0 / std::sqrt(fan_in);
        for (T& v : a.values) {
            const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;  // [0,1)
            v = static_cast<T>((2.0 * u - 1.0) * bound);
        }
    }
}

}  // namespace nn
}  // namespace cdc
