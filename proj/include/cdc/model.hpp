#pragma once

// The component divide-and-conquer network.
//
//   stem conv -> HG_0 -> [RIB, RIB] -> HG_1 -> ... -> HG_{n-1}
//
// The hourglasses are split into three equal groups. The last hourglass of
// group g feeds CAB_g (flat, edge, corner in that order); each CAB emits an
// intermediate SR and a mask logit via two pixel-shuffle heads. CAB outputs
// never flow back into the trunk. The final SR is the softmax(mask)-weighted
// sum of the three intermediate SRs.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdc/components.hpp"
#include "cdc/image.hpp"
#include "cdc/imgcore.hpp"
#include "cdc/losses.hpp"
#include "cdc/nn.hpp"

namespace cdc {

struct ModelConfig {
    int scale = 4;
    int base_channels = 64;
    int hg_modules = 6;
    int hg_depth = 4;

    static ModelConfig paper(int scale = 4) { return {scale, 64, 6, 4}; }
    /// Small preset for tests and desk-scale experiments: 16 channels, one hourglass per group.
    static ModelConfig tiny(int scale = 2) { return {scale, 16, 3, 4}; }

    int groups() const { return 3; }
    int modules_per_group() const { return hg_modules / 3; }
    int size_multiple() const { return 1 << hg_depth; }

    void validate() const {
        if (scale < 1 || scale > 4) throw std::invalid_argument("ModelConfig: scale must be in {1,2,3,4}");
        if (hg_modules < 3 || hg_modules % 3 != 0)
            throw std::invalid_argument("ModelConfig: hg_modules must be a positive multiple of 3");
        if (hg_depth < 1) throw std::invalid_argument("ModelConfig: hg_depth must be >= 1");
        if (base_channels < 4) throw std::invalid_argument("ModelConfig: base_channels must be >= 4");
    }

    bool operator==(const ModelConfig&) const = default;
};

using ModelParams = Params<float>;

/// Component-attentive head: two conv + pixel-shuffle branches.
struct AttentiveHead {
    nn::Conv2d sr;
    nn::Conv2d mask;
    int scale = 1;

    template <typename T>
    static AttentiveHead create(Params<T>& p, const std::string& name, int channels, int scale) {
        return {nn::Conv2d::create(p, name + ".sr", channels, 3 * scale * scale, 3),
                nn::Conv2d::create(p, name + ".mask", channels, scale * scale, 3), scale};
    }

    template <typename T>
    std::pair<BasicImage<T>, BasicImage<T>> forward(const Params<T>& p, const BasicImage<T>& feat) const {
        auto inter = pixel_shuffle(sr.forward(p, feat), scale);
        inter.set_colorspace(ColorSpace::RGB);
        auto logit = pixel_shuffle(mask.forward(p, feat), scale);
        logit.set_colorspace(ColorSpace::Feature);
        return {std::move(inter), std::move(logit)};
    }

    template <typename T>
    BasicImage<T> backward(const Params<T>& p, const BasicImage<T>& feat, const BasicImage<T>& d_inter,
                           const BasicImage<T>& d_logit, Params<T>& g) const {
        auto df = sr.backward(p, feat, pixel_unshuffle(d_inter, scale), g);
        nn::add_inplace(df, mask.backward(p, feat, pixel_unshuffle(d_logit, scale), g));
        return df;
    }
};

template <typename T>
struct BasicCdcOutput {
    BasicImage<T> final_sr;
    IntermediateSet<T> inter_srs;       // flat, edge, corner
    std::array<Map2D<T>, 3> attn_masks;  // softmax over the three logits
};

using CdcOutput = BasicCdcOutput<float>;

template <typename T>
Map2D<T> plane_to_map(const BasicImage<T>& img) {
    Map2D<T> m(img.height(), img.width());
    std::copy_n(img.plane(0), m.size(), m.data.begin());
    return m;
}

class CdcNetwork {
public:
    explicit CdcNetwork(const ModelConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        build(layout_);
    }

    const ModelConfig& config() const { return cfg_; }

    /// Zero-valued parameter set with this network's names and shapes.
    template <typename T = float>
    Params<T> make_params() const {
        return layout_.template cast<T>();
    }

    /// Deterministic initialization.
    ModelParams init(std::uint64_t seed) const {
        auto p = make_params<float>();
        nn::init_uniform_fan_in(p, seed);
        return p;
    }

    template <typename T>
    void check_params(const Params<T>& p) const {
        if (p.size() != layout_.size()) throw std::invalid_argument("parameter set does not match the network layout");
        for (std::size_t i = 0; i < p.size(); ++i)
            if (p.name(i) != layout_.name(i) || p[i].shape != layout_[i].shape)
                throw std::invalid_argument("parameter '" + p.name(i) + "' does not match the network layout");
    }

    template <typename T>
    struct Trace {
        BasicImage<T> lr;
        BasicImage<T> stem_out;
        std::vector<typename nn::Hourglass::Cache<T>> hg;
        std::vector<std::array<typename nn::InceptionBlock::Cache<T>, 2>> connectors;  // before HG i (i >= 1)
        std::array<BasicImage<T>, 3> group_features;                                     // CAB inputs
        std::array<BasicImage<T>, 3> mask_logits;
        BasicCdcOutput<T> out;
    };

    template <typename T>
    BasicCdcOutput<T> forward(const Params<T>& p, const BasicImage<T>& lr, Trace<T>* trace = nullptr) const {
        if (lr.colorspace() != ColorSpace::RGB) throw std::invalid_argument("cdc_forward: input must be RGB");
        const int unit = cfg_.size_multiple();
        if (lr.height() % unit || lr.width() % unit)
            throw std::invalid_argument("cdc_forward: input " + std::to_string(lr.height()) + "x" +
                                        std::to_string(lr.width()) + " not divisible by " + std::to_string(unit));
        if (trace) {
            trace->lr = lr;
            trace->hg.resize(hourglasses_.size());
            trace->connectors.resize(hourglasses_.size());
        }
        BasicImage<T> f = stem_.forward(p, lr);
        if (trace) trace->stem_out = f;

        std::array<BasicImage<T>, 3> logits;
        BasicCdcOutput<T> out;
        const int per_group = cfg_.modules_per_group();
        for (std::size_t i = 0; i < hourglasses_.size(); ++i) {
            if (i > 0) {
                f = connectors_[i][0].forward(p, f, trace ? &trace->connectors[i][0] : nullptr);
                f = connectors_[i][1].forward(p, f, trace ? &trace->connectors[i][1] : nullptr);
            }
            f = hourglasses_[i].forward(p, f, trace ? &trace->hg[i] : nullptr);
            if ((static_cast<int>(i) + 1) % per_group == 0) {
                const int g = static_cast<int>(i) / per_group;
                auto [inter, logit] = heads_[g].forward(p, f);
                out.inter_srs[g] = std::move(inter);
                logits[g] = std::move(logit);
                if (trace) trace->group_features[g] = f;
            }
        }
        merge(logits, out);
        if (trace) {
            trace->mask_logits = logits;
            trace->out = out;
        }
        return out;
    }

    /// Backprop from prediction gradients into `grads` (accumulated).
    template <typename T>
    void backward(const Params<T>& p, const Trace<T>& t, const PredictionGrads<T>& dpred, Params<T>& grads) const {
        const auto& out = t.out;
        const int h = out.final_sr.height(), w = out.final_sr.width();

        // Merge: final = sum_e A_e * x_e, A = softmax(logits).
        std::array<BasicImage<T>, 3> d_inter;
        std::array<BasicImage<T>, 3> d_logit;
        Map2D<T> ga[3] = {Map2D<T>(h, w), Map2D<T>(h, w), Map2D<T>(h, w)};
        for (int e = 0; e < 3; ++e) {
            d_inter[e] = dpred.inter_srs[e];
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) {
                        const T g = dpred.final_sr(y, x, c);
                        d_inter[e](y, x, c) += g * out.attn_masks[e](y, x);
                        ga[e](y, x) += g * out.inter_srs[e](y, x, c);
                    }
        }
        for (int e = 0; e < 3; ++e) d_logit[e] = BasicImage<T>(h, w, 1);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                T dot = 0;
                for (int e = 0; e < 3; ++e) dot += out.attn_masks[e](y, x) * ga[e](y, x);
                for (int e = 0; e < 3; ++e) d_logit[e](y, x) = out.attn_masks[e](y, x) * (ga[e](y, x) - dot);
            }

        const int per_group = cfg_.modules_per_group();
        BasicImage<T> df;
        for (int i = static_cast<int>(hourglasses_.size()) - 1; i >= 0; --i) {
            if ((i + 1) % per_group == 0) {
                const int g = i / per_group;
                auto dtap = heads_[g].backward(p, t.group_features[g], d_inter[g], d_logit[g], grads);
                if (df.empty())
                    df = std::move(dtap);
                else
                    nn::add_inplace(df, dtap);
            }
            df = hourglasses_[i].backward(p, t.hg[i], df, grads);
            if (i > 0) {
                df = connectors_[i][1].backward(p, t.connectors[i][1], df, grads);
                df = connectors_[i][0].backward(p, t.connectors[i][0], df, grads);
            }
        }
        stem_.backward(p, t.lr, df, grads, /*need_input_grad=*/false);
    }

    // Sub-blocks, exposed for tests and tooling.
    const nn::Conv2d& stem() const { return stem_; }
    const nn::Hourglass& hourglass(std::size_t i) const { return hourglasses_.at(i); }
    const nn::InceptionBlock& connector(std::size_t i, int which) const { return connectors_.at(i).at(which); }
    const AttentiveHead& head(Component e) const { return heads_[static_cast<int>(e)]; }
    std::size_t hourglass_count() const { return hourglasses_.size(); }

    /// Names of all parameters belonging to one CAB head.
    static std::string head_prefix(Component e) { return std::string("cab.") + to_string(e) + "."; }

private:
    void build(ModelParams& p) {
        const int c = cfg_.base_channels;
        stem_ = nn::Conv2d::create(p, "stem.conv", 3, c, 3);
        hourglasses_.clear();
        connectors_.clear();
        for (int i = 0; i < cfg_.hg_modules; ++i) {
            std::array<nn::InceptionBlock, 2> conn{};
            if (i > 0) {
                const std::string prefix = "connector" + std::to_string(i);
                conn[0] = nn::InceptionBlock::create(p, prefix + ".rib0", c);
                conn[1] = nn::InceptionBlock::create(p, prefix + ".rib1", c);
            }
            connectors_.push_back(conn);
            hourglasses_.push_back(nn::Hourglass::create(p, "hg" + std::to_string(i), c, cfg_.hg_depth));
        }
        for (Component e : kComponents)
            heads_[static_cast<int>(e)] = AttentiveHead::create(p, std::string("cab.") + to_string(e), c, cfg_.scale);
    }

    template <typename T>
    static void merge(const std::array<BasicImage<T>, 3>& logits, BasicCdcOutput<T>& out) {
        const int h = logits[0].height(), w = logits[0].width();
        for (auto& m : out.attn_masks) m = Map2D<T>(h, w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const T mx = std::max({logits[0](y, x), logits[1](y, x), logits[2](y, x)});
                T e[3];
                T sum = 0;
                for (int k = 0; k < 3; ++k) sum += e[k] = std::exp(logits[k](y, x) - mx);
                for (int k = 0; k < 3; ++k) out.attn_masks[k](y, x) = e[k] / sum;
            }
        out.final_sr = BasicImage<T>::rgb(h, w);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    T acc = 0;
                    for (int k = 0; k < 3; ++k) acc += out.attn_masks[k](y, x) * out.inter_srs[k](y, x, c);
                    out.final_sr(y, x, c) = acc;
                }
    }

    ModelConfig cfg_;
    ModelParams layout_;
    nn::Conv2d stem_;
    std::vector<nn::Hourglass> hourglasses_;
    std::vector<std::array<nn::InceptionBlock, 2>> connectors_;
    std::array<AttentiveHead, 3> heads_{};
};

inline ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed) { return CdcNetwork(cfg).init(seed); }

inline CdcOutput cdc_forward(const CdcNetwork& net, const ModelParams& params, const Image& lr) {
    return net.forward(params, lr);
}

}  // namespace cdc
