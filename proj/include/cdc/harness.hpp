#pragma once

// Training loop, learning-rate schedule, evaluation and inference.

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "cdc/checkpoint.hpp"
#include "cdc/components.hpp"
#include "cdc/data.hpp"
#include "cdc/losses.hpp"
#include "cdc/metrics.hpp"
#include "cdc/model.hpp"
#include "cdc/optim.hpp"
#include "cdc/png_io.hpp"

namespace cdc {

enum class Objective {
    Cdc,      // GW reconstruction + masked intermediate supervision
    PlainL1,  // L1 on the final SR only
};

struct TrainConfig {
    int scale = 4;
    double lr0 = 2e-4;
    int lr_halving_period = 100;  // epochs
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int batch = 16;
    int lr_patch = 48;
    int epochs = 300;
    std::int64_t max_steps = 0;  // 0 = no limit
    std::uint64_t seed = 0;
    double alpha = 4.0;
    double is_weight = 1.0;
    bool detach_weight = false;
    Objective objective = Objective::Cdc;
    std::string preset = "paper";  // "paper" or "tiny"
    std::optional<int> base_channels, hg_modules, hg_depth;
    std::string train_manifest;
    std::string checkpoint_dir;
    std::string log_path;
    int log_every = 1;
    HarrisConfig harris;

    ModelConfig model_config() const {
        ModelConfig m;
        if (preset == "tiny")
            m = ModelConfig::tiny(scale);
        else if (preset == "paper")
            m = ModelConfig::paper(scale);
        else
            throw std::invalid_argument("TrainConfig: unknown preset '" + preset + "'");
        if (base_channels) m.base_channels = *base_channels;
        if (hg_modules) m.hg_modules = *hg_modules;
        if (hg_depth) m.hg_depth = *hg_depth;
        return m;
    }

    LossConfig loss_config() const { return {alpha, is_weight, BaseLoss::L1, detach_weight}; }

    void validate() const {
        const auto m = model_config();
        m.validate();
        if (!(lr0 > 0) || lr_halving_period < 1 || batch < 1 || lr_patch < 1 || epochs < 1 || log_every < 1 ||
            max_steps < 0)
            throw std::invalid_argument("TrainConfig: lr0, lr_halving_period, batch, lr_patch, epochs, log_every must be positive");
        if (lr_patch % m.size_multiple())
            throw std::invalid_argument("TrainConfig: lr_patch " + std::to_string(lr_patch) + " not divisible by " +
                                        std::to_string(m.size_multiple()));
        loss_config().validate();
        harris.validate();
    }

    static TrainConfig from_json(const nlohmann::json& j) {
        TrainConfig c;
        c.scale = j.value("scale", c.scale);
        c.lr0 = j.value("lr0", c.lr0);
        c.lr_halving_period = j.value("lr_halving_period", c.lr_halving_period);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.eps = j.value("eps", c.eps);
        c.batch = j.value("batch", c.batch);
        c.lr_patch = j.value("lr_patch", c.lr_patch);
        c.epochs = j.value("epochs", c.epochs);
        c.max_steps = j.value("max_steps", c.max_steps);
        c.seed = j.value("seed", c.seed);
        c.alpha = j.value("alpha", c.alpha);
        c.is_weight = j.value("is_weight", c.is_weight);
        c.detach_weight = j.value("detach_weight", c.detach_weight);
        const std::string obj = j.value("objective", std::string("cdc"));
        if (obj == "cdc")
            c.objective = Objective::Cdc;
        else if (obj == "plain_l1")
            c.objective = Objective::PlainL1;
        else
            throw std::invalid_argument("TrainConfig: unknown objective '" + obj + "'");
        c.preset = j.value("preset", c.preset);
        if (j.contains("base_channels")) c.base_channels = j.at("base_channels").get<int>();
        if (j.contains("hg_modules")) c.hg_modules = j.at("hg_modules").get<int>();
        if (j.contains("hg_depth")) c.hg_depth = j.at("hg_depth").get<int>();
        c.train_manifest = j.value("train_manifest", c.train_manifest);
        c.checkpoint_dir = j.value("checkpoint_dir", c.checkpoint_dir);
        c.log_path = j.value("log_path", c.log_path);
        c.log_every = j.value("log_every", c.log_every);
        if (j.contains("harris")) {
            const auto& h = j.at("harris");
            c.harris.sigma = h.value("sigma", c.harris.sigma);
            c.harris.k = h.value("k", c.harris.k);
            c.harris.corner_thresh = h.value("corner_thresh", c.harris.corner_thresh);
            c.harris.edge_thresh = h.value("edge_thresh", c.harris.edge_thresh);
            c.harris.corner_dilate_radius = h.value("corner_dilate_radius", c.harris.corner_dilate_radius);
        }
        return c;
    }

    static TrainConfig load(const std::filesystem::path& path) {
        std::ifstream f(path);
        if (!f) throw std::runtime_error("cannot open config '" + path.string() + "'");
        try {
            return from_json(nlohmann::json::parse(f));
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error("'" + path.string() + "': " + e.what());
        }
    }
};

/// lr0 / 2^floor(epoch / lr_halving_period)
inline double lr_at(const TrainConfig& cfg, int epoch) {
    if (epoch < 0) throw std::invalid_argument("lr_at: negative epoch");
    return std::ldexp(cfg.lr0, -(epoch / cfg.lr_halving_period));
}

struct TrainLogRecord {
    std::int64_t step = 0;
    int epoch = 0;
    double lr = 0;
    LossBreakdown loss;
    double wall_time = 0;

    nlohmann::json to_json() const {
        return {{"step", step},
                {"epoch", epoch},
                {"lr", lr},
                {"loss",
                 {{"total", loss.total},
                  {"rec", loss.rec},
                  {"is_flat", loss.is_flat},
                  {"is_edge", loss.is_edge},
                  {"is_corner", loss.is_corner}}},
                {"wall_time", wall_time}};
    }
};

/// True when CDC_DETERMINISTIC=1: everything runs on one thread.
inline bool deterministic_mode() {
    const char* v = std::getenv("CDC_DETERMINISTIC");
    return v && std::string(v) == "1";
}

inline int worker_count(std::size_t jobs) {
    if (deterministic_mode() || jobs <= 1) return 1;
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    return static_cast<int>(std::min<std::size_t>(hw, jobs));
}

/// Runs fn(i) for i in [0, n). Each index is independent; results must be written per index.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const int workers = worker_count(n);
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

inline std::uint64_t hash_image(const Image& img) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xFF;
            h *= 1099511628211ull;
        }
    };
    mix(static_cast<std::uint64_t>(img.height()));
    mix(static_cast<std::uint64_t>(img.width()));
    mix(static_cast<std::uint64_t>(img.channels()));
    for (float v : img.storage()) mix(std::bit_cast<std::uint32_t>(v));
    return h;
}

class NonFiniteLossError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Owns the model during training (single writer).
class Trainer {
public:
    Trainer(TrainConfig cfg, std::vector<ImagePair> data)
        : cfg_(std::move(cfg)),
          net_(cfg_.model_config()),
          params_(net_.init(cfg_.seed)),
          opt_(params_, {cfg_.beta1, cfg_.beta2, cfg_.eps}),
          data_(std::move(data)),
          rng_(cfg_.seed ^ 0x9E3779B97F4A7C15ull) {
        cfg_.validate();
        if (data_.empty()) throw std::invalid_argument("Trainer: empty dataset");
        for (const auto& p : data_) {
            if (p.lr.colorspace() != ColorSpace::RGB || p.hr.colorspace() != ColorSpace::RGB)
                throw std::invalid_argument("Trainer: pair '" + p.name + "' is not RGB");
            if (p.lr.height() < cfg_.lr_patch || p.lr.width() < cfg_.lr_patch)
                throw std::invalid_argument("Trainer: pair '" + p.name + "' smaller than the LR patch");
            if (p.hr.height() != p.lr.height() * cfg_.scale || p.hr.width() != p.lr.width() * cfg_.scale)
                throw std::invalid_argument("Trainer: pair '" + p.name + "' HR dims are not LR dims x scale");
        }
    }

    const TrainConfig& config() const { return cfg_; }
    const CdcNetwork& network() const { return net_; }
    const ModelParams& params() const { return params_; }
    void set_params(ModelParams p) {
        net_.check_params(p);
        params_ = std::move(p);
    }
    const std::vector<TrainLogRecord>& log() const { return log_; }
    std::int64_t steps_done() const { return step_; }

    /// Full schedule: epochs of seeded shuffled passes, capped by max_steps.
    void run() {
        std::ofstream log_file;
        if (!cfg_.log_path.empty()) {
            const std::filesystem::path lp(cfg_.log_path);
            if (lp.has_parent_path()) std::filesystem::create_directories(lp.parent_path());
            log_file.open(lp, std::ios::trunc);
            if (!log_file) throw std::runtime_error("cannot open log '" + cfg_.log_path + "'");
        }
        const auto start = std::chrono::steady_clock::now();
        double best = std::numeric_limits<double>::infinity();
        for (int epoch = 0; epoch < cfg_.epochs && !limit_reached(); ++epoch) {
            std::vector<std::size_t> order(data_.size());
            std::iota(order.begin(), order.end(), 0);
            std::shuffle(order.begin(), order.end(), rng_);
            double epoch_loss = 0;
            int batches = 0;
            for (std::size_t first = 0; first < order.size() && !limit_reached(); first += cfg_.batch) {
                const std::vector<std::size_t> batch(order.begin() + first,
                                                     order.begin() + std::min(order.size(), first + cfg_.batch));
                const auto loss = step(batch, epoch);
                epoch_loss += loss.total;
                ++batches;
                if (step_ % cfg_.log_every == 0) {
                    TrainLogRecord rec{step_, epoch, lr_at(cfg_, epoch), loss,
                                       std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()};
                    log_.push_back(rec);
                    if (log_file) log_file << rec.to_json().dump() << '\n' << std::flush;
                }
            }
            if (!cfg_.checkpoint_dir.empty()) {
                const std::filesystem::path dir(cfg_.checkpoint_dir);
                save_checkpoint(dir / "last.ckpt", net_.config(), params_);
                if (batches && epoch_loss / batches < best) {
                    best = epoch_loss / batches;
                    save_checkpoint(dir / "best.ckpt", net_.config(), params_);
                }
            }
        }
    }

    /// One optimizer step on the given dataset indices. Returns the batch-mean loss.
    LossBreakdown step(const std::vector<std::size_t>& indices, int epoch) {
        const std::size_t n = indices.size();
        std::vector<Image> lr(n), hr(n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& pair = data_[indices[i]];
            std::uniform_int_distribution<int> uy(0, pair.lr.height() - cfg_.lr_patch);
            std::uniform_int_distribution<int> ux(0, pair.lr.width() - cfg_.lr_patch);
            const int y = uy(rng_), x = ux(rng_);
            lr[i] = pair.lr.crop(y, x, cfg_.lr_patch, cfg_.lr_patch);
            hr[i] = pair.hr.crop(y * cfg_.scale, x * cfg_.scale, cfg_.lr_patch * cfg_.scale, cfg_.lr_patch * cfg_.scale);
        }
        std::vector<const ComponentMasks*> masks(n, nullptr);
        if (cfg_.objective == Objective::Cdc)
            for (std::size_t i = 0; i < n; ++i) masks[i] = &masks_for(hr[i]);

        const LossConfig lc = cfg_.loss_config();
        const float scale = 1.0f / static_cast<float>(n);
        std::vector<ModelParams> grads(n);
        std::vector<LossBreakdown> losses(n);
        parallel_for(n, [&](std::size_t i) {
            CdcNetwork::Trace<float> trace;
            const auto out = net_.forward(params_, lr[i], &trace);
            auto dpred = PredictionGrads<float>::zeros_like(out.final_sr);
            if (cfg_.objective == Objective::Cdc) {
                losses[i] = total_loss_backward(out.final_sr, out.inter_srs, hr[i], *masks[i], lc, dpred, scale);
            } else {
                losses[i].rec = losses[i].total = l1_loss_backward(out.final_sr, hr[i], dpred.final_sr, scale);
            }
            grads[i] = params_.zeros_like();
            net_.backward(params_, trace, dpred, grads[i]);
        });

        LossBreakdown mean;
        for (const auto& l : losses) mean += l;
        mean /= static_cast<double>(n);
        if (!std::isfinite(mean.total)) dump_and_abort(indices, losses);

        for (std::size_t i = 1; i < n; ++i) grads[0].accumulate(grads[i]);
        opt_.step(params_, grads[0], lr_at(cfg_, epoch));
        ++step_;
        return mean;
    }

private:
    bool limit_reached() const { return cfg_.max_steps > 0 && step_ >= cfg_.max_steps; }

    const ComponentMasks& masks_for(const Image& hr) {
        const auto key = hash_image(hr);
        auto it = mask_cache_.find(key);
        if (it == mask_cache_.end()) it = mask_cache_.emplace(key, compute_masks(hr, cfg_.harris)).first;
        return it->second;
    }

    [[noreturn]] void dump_and_abort(const std::vector<std::size_t>& indices, const std::vector<LossBreakdown>& losses) {
        nlohmann::json dump;
        dump["step"] = step_;
        for (std::size_t i = 0; i < indices.size(); ++i)
            dump["batch"].push_back({{"index", indices[i]},
                                     {"name", data_[indices[i]].name},
                                     {"total", losses[i].total},
                                     {"rec", losses[i].rec}});
        std::string where;
        if (!cfg_.checkpoint_dir.empty()) {
            const auto path = std::filesystem::path(cfg_.checkpoint_dir) / "nan_dump.json";
            std::filesystem::create_directories(path.parent_path());
            std::ofstream(path) << dump.dump(2) << '\n';
            where = " (batch dumped to " + path.string() + ")";
        }
        throw NonFiniteLossError("non-finite loss at step " + std::to_string(step_) + where + ": " + dump.dump());
    }

    TrainConfig cfg_;
    CdcNetwork net_;
    ModelParams params_;
    Adam<float> opt_;
    std::vector<ImagePair> data_;
    std::mt19937_64 rng_;
    std::int64_t step_ = 0;
    std::vector<TrainLogRecord> log_;
    std::unordered_map<std::uint64_t, ComponentMasks> mask_cache_;
};

/// Loads the pairs of a manifest (optionally one split), checking the scale.
inline std::vector<ImagePair> load_pairs(const PairManifest& manifest, int scale, const std::string& split = "") {
    std::vector<ImagePair> out;
    for (const auto& r : manifest.records) {
        if (!split.empty() && r.split != split) continue;
        if (r.scale != scale)
            throw std::invalid_argument("manifest record '" + r.hr_path + "' has scale " + std::to_string(r.scale) +
                                        ", expected " + std::to_string(scale));
        ImagePair p{load_png(r.lr_path), load_png(r.hr_path), std::filesystem::path(r.hr_path).stem().string()};
        const int h = p.lr.height() * scale, w = p.lr.width() * scale;
        if (p.hr.height() < h || p.hr.width() < w)
            throw std::invalid_argument("pair '" + p.name + "': HR smaller than LR x scale");
        if (p.hr.height() != h || p.hr.width() != w) p.hr = p.hr.crop(0, 0, h, w);
        out.push_back(std::move(p));
    }
    return out;
}

/// Trains from the config's manifest; writes checkpoints/log as configured.
inline Trainer train(const TrainConfig& cfg) {
    cfg.validate();
    if (cfg.train_manifest.empty()) throw std::invalid_argument("train: no train_manifest in config");
    auto pairs = load_pairs(read_manifest(cfg.train_manifest), cfg.scale, "train");
    if (pairs.empty()) throw std::invalid_argument("train: manifest has no train pairs");
    Trainer t(cfg, std::move(pairs));
    t.run();
    return t;
}

struct SuperResolution {
    Image sr;                               // clamped to [0,1]
    CdcOutput raw;                          // unclamped network output, cropped to the true size
};

/// Full-image inference: replicate-pad to the hourglass multiple, run, crop back.
inline SuperResolution super_resolve(const CdcNetwork& net, const ModelParams& params, const Image& lr) {
    const int s = net.config().scale;
    const Image padded = pad_to_multiple(lr, net.config().size_multiple());
    CdcOutput out = net.forward(params, padded);
    const int h = lr.height() * s, w = lr.width() * s;
    if (padded.height() != lr.height() || padded.width() != lr.width()) {
        out.final_sr = out.final_sr.crop(0, 0, h, w);
        for (auto& im : out.inter_srs) im = im.crop(0, 0, h, w);
        for (auto& m : out.attn_masks) {
            Map2D<float> c(h, w);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) c(y, x) = m(y, x);
            m = std::move(c);
        }
    }
    Image sr = out.final_sr;
    for (float& v : sr.storage()) v = std::clamp(v, 0.0f, 1.0f);
    return {std::move(sr), std::move(out)};
}

using Upscaler = std::function<Image(const Image&)>;

/// Per-pair PSNR-Y / SSIM of upscaler(lr) against hr (HR cropped to LR x scale).
inline EvalReport evaluate_pairs(const std::vector<ImagePair>& pairs, int scale, int border, const Upscaler& up) {
    EvalReport report;
    report.scale = scale;
    report.border = border;
    report.images.resize(pairs.size());
    parallel_for(pairs.size(), [&](std::size_t i) {
        const auto& p = pairs[i];
        Image hr = p.hr;
        const int h = p.lr.height() * scale, w = p.lr.width() * scale;
        if (hr.height() != h || hr.width() != w) hr = hr.crop(0, 0, h, w);
        Image sr = up(p.lr);
        for (float& v : sr.storage()) v = std::clamp(v, 0.0f, 1.0f);
        report.images[i] = {p.name, psnr_y(sr, hr, border), ssim_rgb(sr, hr)};
    });
    report.finalize();
    return report;
}

inline EvalReport evaluate(const std::filesystem::path& ckpt_path, const std::filesystem::path& manifest_path,
                           std::optional<int> border = std::nullopt) {
    const Checkpoint ck = load_checkpoint(ckpt_path);
    const CdcNetwork net(ck.config);
    const auto manifest = read_manifest(manifest_path);
    for (const auto& r : manifest.records)
        if (r.scale != ck.config.scale)
            throw std::invalid_argument("evaluate: checkpoint scale " + std::to_string(ck.config.scale) +
                                        " does not match manifest scale " + std::to_string(r.scale));
    const auto pairs = load_pairs(manifest, ck.config.scale);
    EvalReport report = evaluate_pairs(pairs, ck.config.scale, border.value_or(ck.config.scale),
                                       [&](const Image& lr) { return super_resolve(net, ck.params, lr).sr; });
    report.checkpoint = ckpt_path.string();
    return report;
}

/// Writes the SR PNG; with a dump directory also the attention maps (PNG heatmap + raw PFM)
/// and the three intermediate SR images.
inline SuperResolution infer(const std::filesystem::path& ckpt_path, const std::filesystem::path& lr_path,
                             const std::filesystem::path& out_path,
                             const std::optional<std::filesystem::path>& dump_dir = std::nullopt) {
    const Checkpoint ck = load_checkpoint(ckpt_path);
    const CdcNetwork net(ck.config);
    const Image lr = load_png(lr_path);
    SuperResolution res = super_resolve(net, ck.params, lr);
    save_png(res.sr, out_path);
    if (dump_dir) {
        for (Component e : kComponents) {
            const auto i = static_cast<std::size_t>(e);
            const std::string tag = to_string(e);
            const auto& a = res.raw.attn_masks[i];
            save_pfm(a, *dump_dir / ("attention_" + tag + ".pfm"));
            auto heat = Image::gray(a.height, a.width);
            std::copy(a.data.begin(), a.data.end(), heat.storage().begin());
            save_png(heat, *dump_dir / ("attention_" + tag + ".png"));
            save_png(res.raw.inter_srs[i], *dump_dir / ("intermediate_" + tag + ".png"));
        }
    }
    return res;
}

}  // namespace cdc
