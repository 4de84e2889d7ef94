#pragma once

// Dataset tooling: synthetic degradation, translation + brightness
// registration of LR/HR pairs, patch extraction and JSON-lines manifests.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cdc/image.hpp"
#include "cdc/imgcore.hpp"

namespace cdc {

struct DegradeConfig {
    int scale = 4;
    double blur_sigma = 0.0;   // 0 disables blur
    double noise_sigma = 0.0;  // in [0,1] units; 0 disables noise
    std::uint64_t seed = 0;

    void validate() const {
        if (scale < 2 || scale > 4) throw std::invalid_argument("DegradeConfig: scale must be 2, 3 or 4");
        if (blur_sigma < 0 || noise_sigma < 0) throw std::invalid_argument("DegradeConfig: sigmas must be >= 0");
    }
};

/// Blur (optional) -> bicubic downsample -> additive Gaussian noise (optional) -> clamp.
inline Image degrade(const Image& hr, const DegradeConfig& cfg) {
    cfg.validate();
    if (hr.height() % cfg.scale || hr.width() % cfg.scale)
        throw std::invalid_argument("degrade: HR size " + std::to_string(hr.height()) + "x" +
                                    std::to_string(hr.width()) + " not divisible by scale " +
                                    std::to_string(cfg.scale));
    Image lr = resize_bicubic(gaussian_blur(hr, cfg.blur_sigma), hr.height() / cfg.scale, hr.width() / cfg.scale);
    if (cfg.noise_sigma > 0) {
        std::mt19937_64 rng(cfg.seed);
        std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
        for (float& v : lr.storage()) v = static_cast<float>(std::clamp(v + noise(rng), 0.0, 1.0));
    }
    return lr;
}

/// Crops HR to the largest top-left window whose sides are multiples of `scale`.
inline Image crop_to_multiple(const Image& img, int scale) {
    const int h = img.height() / scale * scale;
    const int w = img.width() / scale * scale;
    if (h < 1 || w < 1) throw std::invalid_argument("image smaller than the scale factor");
    return (h == img.height() && w == img.width()) ? img : img.crop(0, 0, h, w);
}

struct BrightnessMatch {
    double gain = 1;
    double bias = 0;
    Image corrected;
    bool degenerate = false;  // src had zero variance; gain fixed to 1
};

/// Least-squares gain/bias so that gain*src + bias ~ ref over all pixels and channels.
inline BrightnessMatch brightness_match(const Image& src, const Image& ref) {
    require_same_shape(src, ref, "brightness_match");
    const auto& s = src.storage();
    const auto& r = ref.storage();
    const double n = static_cast<double>(s.size());
    double ms = 0, mr = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        ms += s[i];
        mr += r[i];
    }
    ms /= n;
    mr /= n;
    double var = 0, cov = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        var += (s[i] - ms) * (s[i] - ms);
        cov += (s[i] - ms) * (r[i] - mr);
    }
    BrightnessMatch out;
    if (var <= 1e-12 * n) {
        out.degenerate = true;
        out.gain = 1;
        out.bias = mr - ms;
    } else {
        out.gain = cov / var;
        out.bias = mr - out.gain * ms;
    }
    out.corrected = src;
    for (float& v : out.corrected.storage())
        v = static_cast<float>(std::clamp(out.gain * v + out.bias, 0.0, 1.0));
    return out;
}

struct Alignment {
    int dx = 0;
    int dy = 0;
    double score = 0;
    bool low_confidence = false;  // score < 0.5
    Image src_crop;
    Image ref_crop;
};

inline constexpr double kLowConfidenceScore = 0.5;

namespace detail {

// Normalized cross-correlation of src(y-dy, x-dx) against ref(y, x) over their overlap.
inline double ncc_at(const Image& src, const Image& ref, int dx, int dy) {
    const int h = src.height(), w = src.width();
    const int y0 = std::max(0, dy), y1 = std::min(h, h + dy);
    const int x0 = std::max(0, dx), x1 = std::min(w, w + dx);
    double sa = 0, sb = 0, n = 0;
    for (int c = 0; c < src.channels(); ++c)
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) {
                sa += src(y - dy, x - dx, c);
                sb += ref(y, x, c);
                n += 1;
            }
    const double ma = sa / n, mb = sb / n;
    double saa = 0, sbb = 0, sab = 0;
    for (int c = 0; c < src.channels(); ++c)
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) {
                const double a = src(y - dy, x - dx, c) - ma;
                const double b = ref(y, x, c) - mb;
                saa += a * a;
                sbb += b * b;
                sab += a * b;
            }
    if (saa <= 0 || sbb <= 0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

}  // namespace detail

/// Exhaustive integer-shift search in [-radius, radius]^2 maximizing NCC.
/// Convention: ref(y, x) ~ src(y - dy, x - dx). Ties prefer smaller |dx|+|dy|, then (dy, dx) lexicographically.
inline Alignment align_translation(const Image& src, const Image& ref, int radius) {
    require_same_shape(src, ref, "align_translation");
    if (radius < 0) throw std::invalid_argument("align_translation: radius must be >= 0");
    if (src.height() - radius < 8 || src.width() - radius < 8)
        throw std::invalid_argument("align_translation: overlap smaller than 8x8 for radius " + std::to_string(radius));

    std::vector<std::pair<int, int>> order;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) order.emplace_back(dy, dx);
    std::stable_sort(order.begin(), order.end(), [](auto a, auto b) {
        const int ma = std::abs(a.first) + std::abs(a.second), mb = std::abs(b.first) + std::abs(b.second);
        return ma != mb ? ma < mb : a < b;
    });

    Alignment best;
    best.score = -std::numeric_limits<double>::infinity();
    for (auto [dy, dx] : order) {
        const double s = detail::ncc_at(src, ref, dx, dy);
        if (s > best.score + 1e-12) {
            best.score = s;
            best.dx = dx;
            best.dy = dy;
        }
    }
    best.low_confidence = best.score < kLowConfidenceScore;
    const int h = src.height() - std::abs(best.dy), w = src.width() - std::abs(best.dx);
    best.ref_crop = ref.crop(std::max(0, best.dy), std::max(0, best.dx), h, w);
    best.src_crop = src.crop(std::max(0, -best.dy), std::max(0, -best.dx), h, w);
    return best;
}

struct Registration {
    Image lr;          // cropped LR, brightness-matched to HR
    Image lr_original; // same crop, uncorrected
    Image hr;          // cropped HR, dims = lr dims * scale
    int lr_offset_y = 0, lr_offset_x = 0;  // crop origin in the input LR
    int hr_offset_y = 0, hr_offset_x = 0;  // crop origin in the input HR
    int iterations = 0;
    double gain = 1, bias = 0;
    double score = 0;
};

/// Iterative translation + brightness registration of an LR/HR pair on the HR grid.
/// Each round upsamples the current LR crop, matches its brightness to HR, finds the
/// best shift and converts it to whole LR pixels; stops once that shift is zero.
inline Registration register_pair(const Image& lr, const Image& hr, int scale, int radius, int iters) {
    if (scale < 1) throw std::invalid_argument("register_pair: scale must be >= 1");
    if (iters < 1) throw std::invalid_argument("register_pair: iters must be >= 1");
    Registration reg;
    int lh = std::min(lr.height(), hr.height() / scale);
    int lw = std::min(lr.width(), hr.width() / scale);
    if (lh < 1 || lw < 1) throw std::invalid_argument("register_pair: HR smaller than one LR pixel");

    auto current_match = [&] {
        return brightness_match(
            resize_bicubic(lr.crop(reg.lr_offset_y, reg.lr_offset_x, lh, lw), lh * scale, lw * scale),
            hr.crop(reg.hr_offset_y, reg.hr_offset_x, lh * scale, lw * scale));
    };

    for (int it = 1; it <= iters; ++it) {
        reg.iterations = it;
        const BrightnessMatch bm = current_match();
        const Alignment a =
            align_translation(bm.corrected, hr.crop(reg.hr_offset_y, reg.hr_offset_x, lh * scale, lw * scale), radius);
        reg.score = a.score;
        const int sy = static_cast<int>(std::lround(static_cast<double>(a.dy) / scale));
        const int sx = static_cast<int>(std::lround(static_cast<double>(a.dx) / scale));
        if (sy == 0 && sx == 0) break;
        // hr(Y + sy*s, X + sx*s) ~ up(Y, X): advance whichever side leads.
        reg.lr_offset_y += std::max(0, -sy);
        reg.lr_offset_x += std::max(0, -sx);
        reg.hr_offset_y += std::max(0, sy) * scale;
        reg.hr_offset_x += std::max(0, sx) * scale;
        lh = std::min(lh - std::max(0, -sy), (hr.height() - reg.hr_offset_y) / scale);
        lw = std::min(lw - std::max(0, -sx), (hr.width() - reg.hr_offset_x) / scale);
        if (lh < 8 || lw < 8) throw std::invalid_argument("register_pair: registered overlap too small");
    }
    const BrightnessMatch bm = current_match();
    reg.gain = bm.gain;
    reg.bias = bm.bias;
    reg.lr_original = lr.crop(reg.lr_offset_y, reg.lr_offset_x, lh, lw);
    reg.hr = hr.crop(reg.hr_offset_y, reg.hr_offset_x, lh * scale, lw * scale);
    reg.lr = reg.lr_original;
    for (float& v : reg.lr.storage()) v = static_cast<float>(std::clamp(bm.gain * v + bm.bias, 0.0, 1.0));
    return reg;
}

/// Mean |bicubic_up(lr) - hr| on the HR grid (lr*scale window of hr).
inline double upsampled_mad(const Image& lr, const Image& hr, int scale) {
    const int h = std::min(lr.height() * scale, hr.height() / scale * scale);
    const int w = std::min(lr.width() * scale, hr.width() / scale * scale);
    const Image up = resize_bicubic(lr.crop(0, 0, h / scale, w / scale), h, w);
    const Image ref = hr.crop(0, 0, h, w);
    double acc = 0;
    for (std::size_t i = 0; i < up.size(); ++i) acc += std::abs(up.storage()[i] - ref.storage()[i]);
    return acc / static_cast<double>(up.size());
}

struct ImagePair {
    Image lr;
    Image hr;
    std::string name;
};

/// Regular grid of hr_patch windows over HR with matching LR windows; partial windows are dropped.
inline std::vector<ImagePair> extract_patches(const ImagePair& pair, int scale, int hr_patch, int stride) {
    if (scale < 1 || hr_patch < 1 || hr_patch % scale)
        throw std::invalid_argument("extract_patches: patch size must be a positive multiple of scale");
    if (stride < 1 || stride % scale)
        throw std::invalid_argument("extract_patches: stride must be a positive multiple of scale");
    if (pair.hr.height() != pair.lr.height() * scale || pair.hr.width() != pair.lr.width() * scale)
        throw std::invalid_argument("extract_patches: HR dims must equal LR dims times scale");
    std::vector<ImagePair> out;
    const int lp = hr_patch / scale;
    for (int y = 0; y + hr_patch <= pair.hr.height(); y += stride)
        for (int x = 0; x + hr_patch <= pair.hr.width(); x += stride)
            out.push_back({pair.lr.crop(y / scale, x / scale, lp, lp), pair.hr.crop(y, x, hr_patch, hr_patch),
                           pair.name + "_y" + std::to_string(y) + "_x" + std::to_string(x)});
    return out;
}

/// Closed-form count for extract_patches.
inline std::size_t patch_grid_count(int h, int w, int patch, int stride) {
    if (h < patch || w < patch) return 0;
    return static_cast<std::size_t>((h - patch) / stride + 1) * static_cast<std::size_t>((w - patch) / stride + 1);
}

struct PairRecord {
    std::string hr_path;
    std::string lr_path;
    int scale = 0;
    std::string split = "train";
};

struct PairManifest {
    std::vector<PairRecord> records;
};

inline nlohmann::json to_json(const PairRecord& r) {
    return {{"hr_path", r.hr_path}, {"lr_path", r.lr_path}, {"scale", r.scale}, {"split", r.split}};
}

/// Appends one record as a JSON line.
inline void append_manifest(const std::filesystem::path& path, const PairRecord& r) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::app);
    if (!f) throw std::runtime_error("cannot open manifest '" + path.string() + "' for appending");
    f << to_json(r).dump() << '\n';
}

inline void write_manifest(const std::filesystem::path& path, const PairManifest& m) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open manifest '" + path.string() + "' for writing");
    for (const auto& r : m.records) f << to_json(r).dump() << '\n';
}

/// Reads a JSON-lines manifest. Relative paths resolve against the manifest's directory;
/// every referenced file must exist.
inline PairManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open manifest '" + path.string() + "'");
    const auto base = path.parent_path();
    PairManifest m;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        PairRecord r;
        r.hr_path = j.at("hr_path").get<std::string>();
        r.lr_path = j.at("lr_path").get<std::string>();
        r.scale = j.at("scale").get<int>();
        r.split = j.value("split", std::string("train"));
        for (std::string* p : {&r.hr_path, &r.lr_path}) {
            std::filesystem::path fp(*p);
            if (fp.is_relative()) fp = base / fp;
            if (!std::filesystem::exists(fp))
                throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": missing file '" +
                                         fp.string() + "'");
            *p = fp.string();
        }
        m.records.push_back(std::move(r));
    }
    return m;
}

}  // namespace cdc
