#include <gtest/gtest.h>

#include <map>
#include <random>

#include "cdc/checkpoint.hpp"
#include "cdc/components.hpp"
#include "cdc/model.hpp"
#include "test_util.hpp"

using namespace cdc;
using cdc::testing::random_image;

namespace {

std::size_t conv_count(std::size_t cin, std::size_t cout, std::size_t k) { return cout * cin * k * k + cout; }

// Parameter count from the architecture description alone.
std::size_t expected_params(const ModelConfig& m) {
    const std::size_t c = m.base_channels, h = c / 2, s2 = m.scale * m.scale;
    const std::size_t rb = conv_count(c, h, 1) + conv_count(h, h, 3) + conv_count(h, c, 1);
    const std::size_t hg = (3 * m.hg_depth + 1) * rb;
    const std::size_t rib = 3 * conv_count(c, h, 1) + 3 * conv_count(h, h, 3) + conv_count(3 * h, c, 1);
    const std::size_t cab = conv_count(c, 3 * s2, 3) + conv_count(c, s2, 3);
    return conv_count(3, c, 3) + m.hg_modules * hg + 2 * (m.hg_modules - 1) * rib + 3 * cab;
}

}  // namespace

TEST(ModelConfig, PresetsAndValidation) {
    EXPECT_EQ(ModelConfig::paper(), (ModelConfig{4, 64, 6, 4}));
    EXPECT_EQ(ModelConfig::tiny(), (ModelConfig{2, 16, 3, 4}));
    EXPECT_THROW((ModelConfig{5, 16, 3, 4}).validate(), std::invalid_argument);
    EXPECT_THROW((ModelConfig{2, 16, 4, 4}).validate(), std::invalid_argument);  // not a multiple of 3 groups
    EXPECT_THROW((ModelConfig{2, 2, 3, 4}).validate(), std::invalid_argument);
    EXPECT_THROW((ModelConfig{2, 16, 3, 0}).validate(), std::invalid_argument);
}

TEST(CdcNetwork, ParameterCountMatchesArchitecture) {
    for (const auto& cfg : {ModelConfig::tiny(2), ModelConfig::tiny(4), ModelConfig::paper(4), ModelConfig{3, 8, 6, 2}}) {
        const CdcNetwork net(cfg);
        EXPECT_EQ(net.make_params<float>().count(), expected_params(cfg));
    }
    EXPECT_EQ(CdcNetwork(ModelConfig::tiny(2)).make_params<float>().count(), 51344u);
}

TEST(CdcNetwork, ParameterNames) {
    const auto p = CdcNetwork(ModelConfig::tiny(2)).make_params<float>();
    for (const char* name : {"stem.conv.weight", "hg0.level0.skip.conv1.weight", "hg2.bottom.conv3.bias",
                             "connector1.rib0.branch3.conv3.weight", "connector2.rib1.proj.bias",
                             "cab.flat.sr.weight", "cab.corner.mask.bias"})
        EXPECT_TRUE(p.contains(name)) << name;
    EXPECT_FALSE(p.contains("connector0.rib0.proj.weight"));
}

TEST(CdcNetwork, OutputContractsAllScales) {
    std::mt19937_64 rng(1);
    for (int s : {2, 3, 4}) {
        const CdcNetwork net(ModelConfig::tiny(s));
        const auto p = net.init(7);
        const Image lr = random_image(rng, 16, 32);
        const auto out = cdc_forward(net, p, lr);
        ASSERT_EQ(out.final_sr.height(), 16 * s);
        ASSERT_EQ(out.final_sr.width(), 32 * s);
        ASSERT_EQ(out.final_sr.channels(), 3);
        for (const auto& im : out.inter_srs) ASSERT_TRUE(im.same_shape(out.final_sr));
        for (int y = 0; y < 16 * s; ++y)
            for (int x = 0; x < 32 * s; ++x) {
                double sum = 0;
                for (const auto& a : out.attn_masks) {
                    EXPECT_GE(a(y, x), 0.0f);
                    sum += a(y, x);
                }
                EXPECT_NEAR(sum, 1.0, 1e-6);
                for (int c = 0; c < 3; ++c) {
                    double merged = 0;
                    for (int e = 0; e < 3; ++e) merged += double(out.attn_masks[e](y, x)) * out.inter_srs[e](y, x, c);
                    EXPECT_NEAR(out.final_sr(y, x, c), merged, 1e-6);
                }
            }
    }
}

TEST(CdcNetwork, InputValidation) {
    const CdcNetwork net(ModelConfig::tiny(2));
    const auto p = net.init(1);
    EXPECT_THROW(cdc_forward(net, p, Image::rgb(12, 16)), std::invalid_argument);
    EXPECT_THROW(cdc_forward(net, p, Image::gray(16, 16)), std::invalid_argument);
    auto bad = p;
    bad[0].shape[0] += 1;
    EXPECT_THROW(net.check_params(bad), std::invalid_argument);
}

TEST(CdcNetwork, ZeroingAHeadLeavesTrunkBitIdentical) {
    std::mt19937_64 rng(2);
    const CdcNetwork net(ModelConfig::tiny(3));
    const auto p = net.init(11);
    const Image lr = random_image(rng, 16, 16);
    CdcNetwork::Trace<float> ref;
    net.forward(p, lr, &ref);
    for (Component e : kComponents) {
        auto q = p;
        for (std::size_t i = 0; i < q.size(); ++i)
            if (q.name(i).rfind(CdcNetwork::head_prefix(e), 0) == 0)
                std::fill(q[i].values.begin(), q[i].values.end(), 0.0f);
        CdcNetwork::Trace<float> t;
        const auto out = net.forward(q, lr, &t);
        for (int g = 0; g < 3; ++g) EXPECT_EQ(t.group_features[g], ref.group_features[g]) << to_string(e) << " group " << g;
        const auto k = static_cast<std::size_t>(e);
        for (float v : out.inter_srs[k].storage()) EXPECT_EQ(v, 0.0f);
        for (std::size_t j = 0; j < 3; ++j) {
            if (j == k) continue;
            EXPECT_EQ(out.inter_srs[j], ref.out.inter_srs[j]);
        }
    }
}

TEST(CdcNetwork, ForwardIsDeterministic) {
    std::mt19937_64 rng(3);
    const CdcNetwork net(ModelConfig::tiny(2));
    const auto p = net.init(5);
    EXPECT_EQ(p, net.init(5));
    const Image lr = random_image(rng, 16, 16);
    EXPECT_EQ(cdc_forward(net, p, lr).final_sr, cdc_forward(net, p, lr).final_sr);
}

TEST(CdcNetwork, EveryParameterGroupReceivesGradient) {
    const CdcNetwork net(ModelConfig::tiny(2));
    const auto p = net.init(21);
    std::mt19937_64 rng(22);
    const Image lr = random_image(rng, 16, 16), hr = random_image(rng, 32, 32);
    CdcNetwork::Trace<float> trace;
    const auto out = net.forward(p, lr, &trace);
    auto dpred = PredictionGrads<float>::zeros_like(out.final_sr);
    total_loss_backward(out.final_sr, out.inter_srs, hr, compute_masks(hr), LossConfig{}, dpred);
    auto grads = p.zeros_like();
    net.backward(p, trace, dpred, grads);
    std::map<std::string, double> norm;
    for (std::size_t i = 0; i < grads.size(); ++i) {
        const std::string& n = grads.name(i);
        const std::string group = n.rfind("cab.", 0) == 0 ? n.substr(0, n.find('.', 4)) : n.substr(0, n.find('.'));
        for (float g : grads[i].values) norm[group] += double(g) * g;
    }
    EXPECT_EQ(norm.size(), 1u + 3u + 2u + 3u);  // stem, hg0-2, connector1-2, three heads
    for (const auto& [group, n2] : norm) EXPECT_GT(n2, 0.0) << group;
}

TEST(CdcNetwork, CommonLogitShiftLeavesAttentionUnchanged) {
    const CdcNetwork net(ModelConfig::tiny(2));
    const auto p = net.init(31);
    std::mt19937_64 rng(32);
    const Image lr = random_image(rng, 16, 16);
    auto q = p;
    for (Component e : kComponents)
        for (float& b : q.at(CdcNetwork::head_prefix(e) + "mask.bias").values) b += 3.0f;
    const auto a = net.forward(p, lr), b = net.forward(q, lr);
    for (int e = 0; e < 3; ++e)
        for (std::size_t i = 0; i < a.attn_masks[e].size(); ++i)
            EXPECT_NEAR(a.attn_masks[e].data[i], b.attn_masks[e].data[i], 1e-6);
}

TEST(CdcNetwork, EndToEndGradientCheck) {
    // Micro network in double precision; biases randomized so no unit sits exactly on a ReLU kink.
    const ModelConfig cfg{2, 4, 3, 1};
    const CdcNetwork net(cfg);
    auto p = net.init(3).cast<double>();
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i].shape.size() == 1)
            for (double& v : p[i].values) v = u(rng);
    const auto lr = random_image<double>(rng, 4, 6);
    const auto hr = random_image<double>(rng, 8, 12);
    const auto masks = compute_masks(hr.cast<float>());
    const LossConfig lc;

    CdcNetwork::Trace<double> trace;
    const auto out = net.forward(p, lr, &trace);
    auto dpred = PredictionGrads<double>::zeros_like(out.final_sr);
    total_loss_backward(out.final_sr, out.inter_srs, hr, masks, lc, dpred);
    auto grads = p.zeros_like();
    net.backward(p, trace, dpred, grads);

    auto f = [&] {
        const auto o = net.forward(p, lr);
        return total_loss(o.final_sr, o.inter_srs, hr, masks, lc).total;
    };
    constexpr double eps = 1e-6;
    std::vector<double> analytic, numeric;
    for (std::size_t a = 0; a < p.size(); ++a) {
        auto& vals = p[a].values;
        const std::size_t stride = std::max<std::size_t>(1, vals.size() / 4);
        for (std::size_t k = 0; k < vals.size(); k += stride) {
            const double keep = vals[k];
            vals[k] = keep + eps;
            const double fp = f();
            vals[k] = keep - eps;
            const double fm = f();
            vals[k] = keep;
            numeric.push_back((fp - fm) / (2 * eps));
            analytic.push_back(grads[a].values[k]);
        }
    }
    // |L| is piecewise smooth: count entries that disagree beyond 1e-4 relative (kink crossings) and require few.
    std::size_t bad = 0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-6});
        if (std::abs(analytic[i] - numeric[i]) / denom > 1e-4) ++bad;
    }
    EXPECT_LE(bad, analytic.size() / 50) << bad << " of " << analytic.size();
}

TEST(Checkpoint, RoundTripIsByteExact) {
    const CdcNetwork net(ModelConfig::tiny(3));
    const auto p = net.init(9);
    const std::string bytes = serialize_checkpoint(net.config(), p);
    EXPECT_EQ(bytes.substr(0, 4), "CDC1");
    const auto ck = deserialize_checkpoint(bytes);
    EXPECT_EQ(ck.config, net.config());
    EXPECT_EQ(ck.params, p);
    EXPECT_EQ(serialize_checkpoint(ck.config, ck.params), bytes);

    const auto dir = cdc::testing::scratch_dir("ckpt");
    save_checkpoint(dir / "a.ckpt", net.config(), p);
    const auto loaded = load_checkpoint(dir / "a.ckpt");
    save_checkpoint(dir / "b.ckpt", loaded.config, loaded.params);
    EXPECT_EQ(std::filesystem::file_size(dir / "a.ckpt"), bytes.size());
    std::ifstream fa(dir / "a.ckpt", std::ios::binary), fb(dir / "b.ckpt", std::ios::binary);
    EXPECT_EQ(std::string(std::istreambuf_iterator<char>(fa), {}), std::string(std::istreambuf_iterator<char>(fb), {}));
}

TEST(Checkpoint, RejectsCorruptInput) {
    const CdcNetwork net(ModelConfig::tiny(2));
    const std::string bytes = serialize_checkpoint(net.config(), net.init(1));
    EXPECT_THROW(deserialize_checkpoint("XXXX" + bytes.substr(4)), std::runtime_error);
    EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), std::runtime_error);
    EXPECT_THROW(deserialize_checkpoint(bytes + "x"), std::runtime_error);
    // Config of a different network with this payload -> layout mismatch.
    std::string other = bytes;
    other[4] = 3;  // scale 2 -> 3 changes CAB shapes
    EXPECT_THROW(deserialize_checkpoint(other), std::invalid_argument);
    EXPECT_THROW(load_checkpoint("/nonexistent/x.ckpt"), std::runtime_error);
}
