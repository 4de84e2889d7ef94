#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cdc {

/// Allocator with a fixed 64-byte alignment. Vectorized kernels peel loops by
/// runtime alignment, so buffers whose alignment varies between allocations
/// give run-to-run rounding differences; fixing it keeps training reproducible.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

enum class ColorSpace { RGB, Y, Feature };

inline const char* to_string(ColorSpace cs) {
    switch (cs) {
        case ColorSpace::RGB: return "RGB";
        case ColorSpace::Y: return "Y";
        case ColorSpace::Feature: return "FEATURE";
    }
    return "?";
}

/// H×W×C pixel or feature array.
///
/// Storage is planar (channel-major): all of channel 0, then channel 1, ...
/// Element access is `img(y, x, c)`. RGB images always have three channels
/// and Y images one; FEATURE arrays may have any channel count.
template <typename T>
class BasicImage {
public:
    using value_type = T;

    BasicImage() = default;

    BasicImage(int height, int width, int channels, ColorSpace cs = ColorSpace::Feature, T fill = T(0))
        : h_(height), w_(width), c_(channels), cs_(cs) {
        if (height < 1 || width < 1 || channels < 1)
            throw std::invalid_argument("image dimensions must be positive, got " + std::to_string(height) + "x" +
                                        std::to_string(width) + "x" + std::to_string(channels));
        if (cs == ColorSpace::RGB && channels != 3) throw std::invalid_argument("RGB image must have 3 channels");
        if (cs == ColorSpace::Y && channels != 1) throw std::invalid_argument("Y image must have 1 channel");
        data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
    }

    static BasicImage rgb(int h, int w, T fill = T(0)) { return BasicImage(h, w, 3, ColorSpace::RGB, fill); }
    static BasicImage gray(int h, int w, T fill = T(0)) { return BasicImage(h, w, 1, ColorSpace::Y, fill); }

    int height() const { return h_; }
    int width() const { return w_; }
    int channels() const { return c_; }
    ColorSpace colorspace() const { return cs_; }
    bool empty() const { return data_.empty(); }
    std::size_t size() const { return data_.size(); }
    std::size_t plane_size() const { return static_cast<std::size_t>(h_) * w_; }

    T& operator()(int y, int x, int c = 0) { return data_[(static_cast<std::size_t>(c) * h_ + y) * w_ + x]; }
    const T& operator()(int y, int x, int c = 0) const {
        return data_[(static_cast<std::size_t>(c) * h_ + y) * w_ + x];
    }

    /// Clamped (replicate-border) read.
    T at_clamped(int y, int x, int c = 0) const {
        return (*this)(std::clamp(y, 0, h_ - 1), std::clamp(x, 0, w_ - 1), c);
    }

    T* plane(int c) { return data_.data() + static_cast<std::size_t>(c) * plane_size(); }
    const T* plane(int c) const { return data_.data() + static_cast<std::size_t>(c) * plane_size(); }

    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }
    AlignedVector<T>& storage() { return data_; }
    const AlignedVector<T>& storage() const { return data_; }

    void set_colorspace(ColorSpace cs) {
        if ((cs == ColorSpace::RGB && c_ != 3) || (cs == ColorSpace::Y && c_ != 1))
            throw std::invalid_argument("colorspace does not match channel count");
        cs_ = cs;
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const BasicImage& o) const { return h_ == o.h_ && w_ == o.w_ && c_ == o.c_; }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(static_cast<double>(v)); });
    }

    /// Sub-rectangle copy (all channels).
    BasicImage crop(int y0, int x0, int h, int w) const {
        if (y0 < 0 || x0 < 0 || h < 1 || w < 1 || y0 + h > h_ || x0 + w > w_)
            throw std::invalid_argument("crop window out of bounds");
        BasicImage out(h, w, c_, cs_);
        for (int c = 0; c < c_; ++c)
            for (int y = 0; y < h; ++y)
                std::copy_n(&(*this)(y0 + y, x0, c), w, &out(y, 0, c));
        return out;
    }

    template <typename U>
    BasicImage<U> cast() const {
        BasicImage<U> out(h_, w_, c_, cs_);
        std::transform(data_.begin(), data_.end(), out.storage().begin(), [](T v) { return static_cast<U>(v); });
        return out;
    }

    bool operator==(const BasicImage& o) const { return same_shape(o) && cs_ == o.cs_ && data_ == o.data_; }

private:
    int h_ = 0;
    int w_ = 0;
    int c_ = 0;
    ColorSpace cs_ = ColorSpace::Feature;
    AlignedVector<T> data_;
};

using Image = BasicImage<float>;

/// Plain H×W scalar map (Harris responses, binary masks, attention maps).
template <typename T>
struct Map2D {
    int height = 0;
    int width = 0;
    std::vector<T> data;

    Map2D() = default;
    Map2D(int h, int w, T fill = T(0)) : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

    T& operator()(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
    const T& operator()(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return data.size(); }
    bool operator==(const Map2D&) const = default;
};

using Mask = Map2D<std::uint8_t>;

inline void require_same_shape(const auto& a, const auto& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch (" + std::to_string(a.height()) + "x" +
                                    std::to_string(a.width()) + "x" + std::to_string(a.channels()) + " vs " +
                                    std::to_string(b.height()) + "x" + std::to_string(b.width()) + "x" +
                                    std::to_string(b.channels()) + ")");
}

}  // namespace cdc
