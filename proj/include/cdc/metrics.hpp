#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cdc/image.hpp"
#include "cdc/imgcore.hpp"

namespace cdc {

inline constexpr double kPsnrCap = 100.0;

/// PSNR (dB) on the studio-swing Y channel, 0-255 scale, after cropping `border` pixels per side.
inline double psnr_y(const Image& sr, const Image& hr, int border) {
    require_same_shape(sr, hr, "psnr_y");
    if (border < 0 || 2 * border >= std::min(sr.height(), sr.width()))
        throw std::invalid_argument("psnr_y: border " + std::to_string(border) + " too large for image");
    const Image ys = rgb_to_y(sr);
    const Image yh = rgb_to_y(hr);
    double se = 0;
    std::size_t n = 0;
    for (int y = border; y < sr.height() - border; ++y)
        for (int x = border; x < sr.width() - border; ++x) {
            const double d = 255.0 * (static_cast<double>(ys(y, x)) - static_cast<double>(yh(y, x)));
            se += d * d;
            ++n;
        }
    const double mse = se / static_cast<double>(n);
    if (mse == 0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

namespace detail {

inline std::vector<double> ssim_window() {
    constexpr int size = 11;
    constexpr double sigma = 1.5;
    std::vector<double> w(size * size);
    double sum = 0;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double dy = y - size / 2, dx = x - size / 2;
            sum += w[y * size + x] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
        }
    for (double& v : w) v /= sum;
    return w;
}

}  // namespace detail

/// Mean SSIM of one channel pair on the 0-255 scale; window positions fully inside the image only.
inline double ssim_channel(const Image& a, const Image& b, int ca, int cb) {
    constexpr int size = 11;
    constexpr double c1 = (0.01 * 255) * (0.01 * 255);
    constexpr double c2 = (0.03 * 255) * (0.03 * 255);
    static const std::vector<double> win = detail::ssim_window();
    double total = 0;
    std::size_t n = 0;
    for (int y0 = 0; y0 + size <= a.height(); ++y0)
        for (int x0 = 0; x0 + size <= a.width(); ++x0) {
            double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    const double w = win[y * size + x];
                    const double u = 255.0 * a(y0 + y, x0 + x, ca);
                    const double v = 255.0 * b(y0 + y, x0 + x, cb);
                    mx += w * u;
                    my += w * v;
                    sxx += w * u * u;
                    syy += w * v * v;
                    sxy += w * u * v;
                }
            const double vx = sxx - mx * mx, vy = syy - my * my, cov = sxy - mx * my;
            total += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            ++n;
        }
    return total / static_cast<double>(n);
}

/// SSIM on RGB: 11x11 Gaussian window (sigma 1.5), averaged over the three channels.
inline double ssim_rgb(const Image& sr, const Image& hr) {
    require_same_shape(sr, hr, "ssim_rgb");
    if (std::min(sr.height(), sr.width()) < 11) throw std::invalid_argument("ssim_rgb: image smaller than 11x11 window");
    if (sr.channels() != 3) throw std::invalid_argument("ssim_rgb: expected 3 channels");
    double acc = 0;
    for (int c = 0; c < 3; ++c) acc += ssim_channel(sr, hr, c, c);
    return acc / 3.0;
}

struct EvalRecord {
    std::string name;
    double psnr_db = 0;
    double ssim = 0;
};

struct EvalReport {
    int scale = 0;
    int border = 0;
    std::string checkpoint;
    std::vector<EvalRecord> images;
    double mean_psnr_db = 0;
    double mean_ssim = 0;

    void add(EvalRecord r) { images.push_back(std::move(r)); }

    void finalize() {
        mean_psnr_db = mean_ssim = 0;
        if (images.empty()) return;
        for (const auto& r : images) {
            mean_psnr_db += r.psnr_db;
            mean_ssim += r.ssim;
        }
        mean_psnr_db /= static_cast<double>(images.size());
        mean_ssim /= static_cast<double>(images.size());
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["meta"] = {{"scale", scale}, {"border", border}, {"checkpoint", checkpoint}};
        j["images"] = nlohmann::json::array();
        for (const auto& r : images) j["images"].push_back({{"name", r.name}, {"psnr_db", r.psnr_db}, {"ssim", r.ssim}});
        j["mean"] = {{"psnr_db", mean_psnr_db}, {"ssim", mean_ssim}, {"count", images.size()}};
        return j;
    }
};

}  // namespace cdc
