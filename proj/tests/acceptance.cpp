// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
// The two training criteria share one 2000-step run per alpha (about 6 min each on one core).

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <sstream>

#include "cdc/cdc.hpp"
#include "test_util.hpp"

using namespace cdc;
using cdc::testing::random_image;

namespace {

using ImageD = BasicImage<double>;

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

int failures = 0;

void report(int id, const std::string& title, Outcome& o) {
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << id << ". " << title << " --" << o.detail.str() << std::endl;
    if (!o.pass) ++failures;
}

// ---------------------------------------------------------------------------
// 1. gw_loss with alpha = 0 is L1; the 1x2 hand case.

void criterion_gw_alpha_zero() {
    Outcome o;
    std::mt19937_64 rng(101);
    LossConfig cfg;
    cfg.alpha = 0;
    double worst = 0;
    for (int i = 0; i < 100; ++i) {
        const auto a = random_image<double>(rng, 8, 8), b = random_image<double>(rng, 8, 8);
        worst = std::max(worst, std::abs(gw_loss(a, b, cfg) - l1_loss(a, b)));
    }
    o.require(worst <= 1e-12, "alpha=0 deviation");
    ImageD sr(1, 2, 1, ColorSpace::Y), hr(1, 2, 1, ColorSpace::Y);
    hr(0, 0) = 1;  // hr = [1, 0], sr = [0, 0]
    const double v = gw_loss(sr, hr, LossConfig{});
    o.require(v == 2.5, "1x2 case");
    o.detail << " max |gw - l1| over 100 pairs = " << worst << "; 1x2 case = " << v;
    report(1, "gw_loss(alpha=0) == l1 (1e-12), 1x2 case == 2.5", o);
}

// ---------------------------------------------------------------------------
// 2. Finite-difference gradients in double.

// Central differences are meaningless across a |.| kink, so instances keep every
// absolute-value argument at least `margin` away from zero.
bool away_from_kinks(const ImageD& sr, const ImageD& hr, double margin) {
    for (std::size_t i = 0; i < sr.size(); ++i)
        if (std::abs(sr.storage()[i] - hr.storage()[i]) < margin) return false;
    const auto gs = spatial_gradients(sr), gh = spatial_gradients(hr);
    for (int c = 0; c < sr.channels(); ++c)
        for (int y = 0; y < sr.height(); ++y)
            for (int x = 0; x < sr.width(); ++x) {
                if (x + 1 < sr.width() && std::abs(gs.gx(y, x, c) - gh.gx(y, x, c)) < margin) return false;
                if (y + 1 < sr.height() && std::abs(gs.gy(y, x, c) - gh.gy(y, x, c)) < margin) return false;
            }
    return true;
}

void criterion_finite_differences() {
    Outcome o;
    std::mt19937_64 rng(202);
    constexpr double eps = 1e-4, margin = 1e-3;
    double worst_gw = 0, worst_total = 0;
    int rejected = 0;
    for (int inst = 0; inst < 20;) {
        auto sr = random_image<double>(rng, 5, 5);
        const auto hr = random_image<double>(rng, 5, 5);
        IntermediateSet<double> inter{random_image<double>(rng, 5, 5), random_image<double>(rng, 5, 5),
                                      random_image<double>(rng, 5, 5)};
        bool smooth = away_from_kinks(sr, hr, margin);
        for (const auto& im : inter)
            for (std::size_t i = 0; i < im.size(); ++i) smooth = smooth && std::abs(im.storage()[i] - hr.storage()[i]) >= margin;
        if (!smooth) {
            ++rejected;
            continue;
        }
        ++inst;
        ComponentMasks masks{Mask(5, 5), Mask(5, 5), Mask(5, 5)};
        std::uniform_int_distribution<int> pick(0, 2);
        for (std::size_t i = 0; i < masks.flat.size(); ++i) {
            const int k = pick(rng);
            (k == 0 ? masks.flat : k == 1 ? masks.edge : masks.corner).data[i] = 1;
        }
        const LossConfig cfg;

        ImageD g(5, 5, 3, ColorSpace::RGB);
        gw_loss_backward(sr, hr, cfg, g);
        const auto num = cdc::testing::numeric_gradient<double>(sr.storage(), [&] { return gw_loss(sr, hr, cfg); }, eps);
        worst_gw = std::max(worst_gw, cdc::testing::max_rel_error(g.storage(), num));

        auto grads = PredictionGrads<double>::zeros_like(sr);
        total_loss_backward(sr, inter, hr, masks, cfg, grads);
        auto f = [&] { return total_loss(sr, inter, hr, masks, cfg).total; };
        worst_total = std::max(worst_total, cdc::testing::max_rel_error(
                                                grads.final_sr.storage(),
                                                cdc::testing::numeric_gradient<double>(sr.storage(), f, eps)));
        for (int e = 0; e < 3; ++e)
            worst_total = std::max(worst_total, cdc::testing::max_rel_error(
                                                    grads.inter_srs[e].storage(),
                                                    cdc::testing::numeric_gradient<double>(inter[e].storage(), f, eps)));
    }
    o.require(worst_gw < 1e-4, "gw_loss");
    o.require(worst_total < 1e-4, "total_loss");
    o.detail << " 20 instances (" << rejected << " redrawn near |.| kinks), eps 1e-4: max rel err gw_loss = " << worst_gw
             << ", total_loss = " << worst_total;
    report(2, "finite-difference gradients (float64, max rel err < 1e-4)", o);
}

// ---------------------------------------------------------------------------
// 3. Mask partition and Harris oracle.

void criterion_masks() {
    Outcome o;
    std::mt19937_64 rng(303);
    std::uniform_int_distribution<int> dim(8, 40);
    int partitions = 0;
    for (int i = 0; i < 50; ++i) partitions += compute_masks(random_image(rng, dim(rng), dim(rng))).is_partition();
    for (int i = 0; i < 6; ++i) partitions += compute_masks(cdc::testing::blocks_scene(rng, 32, 40)).is_partition();
    for (int cell : {2, 3, 5, 8}) partitions += compute_masks(cdc::testing::checkerboard(32, 32, cell, 3)).is_partition();
    o.require(partitions == 60, "partition");

    double worst = 0;
    std::uniform_int_distribution<int> small(3, 16);
    for (int i = 0; i < 20; ++i) {
        const Image g = random_image(rng, small(rng), small(rng), 1);
        for (double sigma : {0.8, 1.0, 1.5}) {
            HarrisConfig hc;
            hc.sigma = sigma;
            const auto r = harris_response(g, hc);
            const auto ref = cdc::testing::harris_oracle(g, sigma, hc.k);
            for (std::size_t k = 0; k < r.size(); ++k) worst = std::max(worst, std::abs(r.data[k] - ref.data[k]));
        }
    }
    o.require(worst <= 1e-6, "harris oracle");
    o.detail << " partitions " << partitions << "/60; max |R - oracle| on <=16x16 = " << worst;
    report(3, "masks partition (50 random + 10 structured), Harris == brute force (1e-6)", o);
}

// ---------------------------------------------------------------------------
// 4. Model output contracts at scales 2, 3, 4.

void criterion_model_contracts() {
    Outcome o;
    std::mt19937_64 rng(404);
    double worst_sum = 0, worst_merge = 0;
    bool shapes = true, trunk = true;
    for (int s : {2, 3, 4}) {
        const CdcNetwork net(ModelConfig::tiny(s));
        const auto p = net.init(40 + s);
        const Image lr = random_image(rng, 32, 48);
        CdcNetwork::Trace<float> ref;
        const auto out = net.forward(p, lr, &ref);
        shapes = shapes && out.final_sr.height() == 32 * s && out.final_sr.width() == 48 * s && out.final_sr.channels() == 3;
        for (int y = 0; y < out.final_sr.height(); ++y)
            for (int x = 0; x < out.final_sr.width(); ++x) {
                double sum = 0;
                for (const auto& a : out.attn_masks) sum += a(y, x);
                worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
                for (int c = 0; c < 3; ++c) {
                    double m = 0;
                    for (int e = 0; e < 3; ++e) m += double(out.attn_masks[e](y, x)) * out.inter_srs[e](y, x, c);
                    worst_merge = std::max(worst_merge, std::abs(m - out.final_sr(y, x, c)));
                }
            }
        for (Component e : kComponents) {
            auto q = p;
            for (std::size_t i = 0; i < q.size(); ++i)
                if (q.name(i).rfind(CdcNetwork::head_prefix(e), 0) == 0) std::fill(q[i].values.begin(), q[i].values.end(), 0.0f);
            CdcNetwork::Trace<float> t;
            net.forward(q, lr, &t);
            for (int g = static_cast<int>(e) + 1; g < 3; ++g) trunk = trunk && t.group_features[g] == ref.group_features[g];
        }
    }
    o.require(shapes, "output shape");
    o.require(worst_sum <= 1e-6, "attention sum");
    o.require(worst_merge <= 1e-6, "merge identity");
    o.require(trunk, "trunk independence");
    o.detail << " shapes ok=" << shapes << "; max |sum A - 1| = " << worst_sum << "; max |final - sum A x| = " << worst_merge
             << "; trunk bit-identical after zeroing each head = " << trunk;
    report(4, "scales {2,3,4}: shape, sum A = 1, merge identity, head zeroing", o);
}

// ---------------------------------------------------------------------------
// 5/6. Overfitting on 8 synthetic x2 patch pairs, alpha = 4 vs alpha = 0.

struct OverfitResult {
    double initial = 0, final_loss = 0, psnr = 0, corner_l1 = 0, seconds = 0;
};

std::vector<ImagePair> overfit_pairs() {
    std::mt19937_64 rng(7);
    std::vector<ImagePair> pairs;
    for (int i = 0; i < 8; ++i) {
        const Image hr = cdc::testing::blocks_scene(rng, 96, 96);
        pairs.push_back({degrade(hr, {2, 0, 0, 0}), hr, "synthetic" + std::to_string(i)});
    }
    return pairs;
}

OverfitResult overfit(double alpha, const std::vector<ImagePair>& pairs) {
    TrainConfig c;
    c.scale = 2;
    c.preset = "tiny";
    c.batch = 8;
    c.lr_patch = 48;  // whole 48x48 LR patch
    c.epochs = 2000;  // one step per epoch
    c.lr_halving_period = 100000;
    c.seed = 1;
    c.alpha = alpha;
    const auto t0 = std::chrono::steady_clock::now();
    Trainer t(c, pairs);
    t.run();
    OverfitResult r;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.initial = t.log().front().loss.total;
    r.final_loss = t.log().back().loss.total;
    const auto rep = evaluate_pairs(pairs, 2, 2, [&](const Image& lr) { return super_resolve(t.network(), t.params(), lr).sr; });
    r.psnr = rep.mean_psnr_db;
    double err = 0;
    std::size_t n = 0;
    for (const auto& p : pairs) {
        const auto out = t.network().forward(t.params(), p.lr);
        const auto masks = compute_masks(p.hr);
        for (int c3 = 0; c3 < 3; ++c3)
            for (int y = 0; y < p.hr.height(); ++y)
                for (int x = 0; x < p.hr.width(); ++x)
                    if (masks.corner(y, x)) {
                        err += std::abs(out.final_sr(y, x, c3) - p.hr(y, x, c3));
                        ++n;
                    }
    }
    r.corner_l1 = n ? err / n : 0.0;
    return r;
}

void criteria_training() {
    const auto pairs = overfit_pairs();
    const auto a4 = overfit(4.0, pairs);
    const auto a0 = overfit(0.0, pairs);

    Outcome o5;
    o5.require(a4.final_loss <= 0.1 * a4.initial, "loss ratio");
    o5.require(a4.psnr >= 30.0, "psnr");
    o5.detail << " 2000 steps (" << a4.seconds << " s): loss " << a4.initial << " -> " << a4.final_loss << " ("
              << 100 * a4.final_loss / a4.initial << "% of initial); mean PSNR-Y " << a4.psnr << " dB";
    report(5, "tiny overfit: final loss <= 10% of initial, PSNR >= 30 dB", o5);

    Outcome o6;
    o6.require(a4.corner_l1 <= a0.corner_l1, "corner L1");
    o6.detail << " corner-masked L1: alpha=4 " << a4.corner_l1 << ", alpha=0 " << a0.corner_l1 << " (alpha=0 run "
              << a0.seconds << " s)";
    report(6, "alpha=4 corner-masked L1 <= alpha=0", o6);
}

// ---------------------------------------------------------------------------
// 7. Metric oracles.

void criterion_metrics() {
    Outcome o;
    // A gray step d moves studio-swing Y by 219 d (0-255 scale).
    auto pair = [](double dy) {
        return std::pair{Image(16, 16, 3, ColorSpace::RGB, 0.25f),
                         Image(16, 16, 3, ColorSpace::RGB, static_cast<float>(0.25 + dy / 219.0))};
    };
    const auto [a1, b1] = pair(1.0);
    const auto [a16, b16] = pair(16.0);
    const double p1 = psnr_y(a1, b1, 0), p16 = psnr_y(a16, b16, 0);
    const double expect16 = 20 * std::log10(255.0 / 16.0);
    o.require(std::abs(p1 - 48.1308) <= 1e-3, "psnr delta 1");
    o.require(std::abs(p16 - expect16) <= 1e-3, "psnr delta 16");

    std::mt19937_64 rng(707);
    const Image img = random_image(rng, 24, 24);
    const double same = ssim_rgb(img, img);
    o.require(same == 1.0, "ssim identical");

    const double C1 = 6.5025, C2 = 58.5225;
    double worst = 0;
    for (auto [u, v] : {std::pair{0.0f, 1.0f}, {0.3f, 0.6f}, {0.9f, 0.1f}}) {
        const double mu = 255.0 * u, mv = 255.0 * v;
        const double closed = (2 * mu * mv + C1) * C2 / ((mu * mu + mv * mv + C1) * C2);
        worst = std::max(worst, std::abs(ssim_rgb(Image(16, 16, 3, ColorSpace::RGB, u), Image(16, 16, 3, ColorSpace::RGB, v)) - closed));
    }
    o.require(worst <= 1e-6, "ssim constants");
    o.detail << " PSNR(dY=1) = " << p1 << " dB (48.1308); PSNR(dY=16) = " << p16 << " dB (20 log10(255/16) = " << expect16
             << "; the literal 24.0338 is not equal to that expression); SSIM(x,x) = " << same
             << "; max |SSIM(const) - closed form| = " << worst;
    report(7, "PSNR/SSIM oracles", o);
}

// ---------------------------------------------------------------------------
// 8. Registration.

void criterion_registration() {
    Outcome o;
    std::mt19937_64 rng(808);
    std::uniform_int_distribution<int> shift(-4, 4);
    int exact = 0;
    for (int i = 0; i < 20; ++i) {
        const Image big = cdc::testing::textured_scene(rng, 48, 48);
        const int dy = shift(rng), dx = shift(rng);
        const auto a = align_translation(big.crop(8, 8, 32, 32), big.crop(8 - dy, 8 - dx, 32, 32), 4);
        exact += a.dy == dy && a.dx == dx;
    }
    o.require(exact == 20, "planted shifts");

    double worst_gb = 0;
    for (auto [gain, bias] : {std::pair{1.2, -0.05}, {0.7, 0.1}, {1.05, 0.02}}) {
        const Image src = random_image(rng, 24, 24, 3, 0.15, 0.65);
        Image ref = src;
        for (float& v : ref.storage()) v = static_cast<float>(gain * v + bias);
        const auto m = brightness_match(src, ref);
        worst_gb = std::max({worst_gb, std::abs(m.gain - gain), std::abs(m.bias - bias)});
    }
    o.require(worst_gb <= 1e-3, "gain/bias");

    double worst_ratio = 0;
    for (int i = 0; i < 5; ++i) {
        const Image big = cdc::testing::textured_scene(rng, 112, 112);
        const int oy = 4 + 2 * (i % 3), ox = 8 - 2 * (i % 2);
        const Image hr = big.crop(8, 8, 96, 96);
        Image lr = degrade(big.crop(oy, ox, 96, 96), {2, 0, 0, 0});
        for (float& v : lr.storage()) v = static_cast<float>(std::clamp(0.85 * v + 0.08, 0.0, 1.0));
        const auto reg = register_pair(lr, hr, 2, 4, 3);
        worst_ratio = std::max(worst_ratio, upsampled_mad(reg.lr, reg.hr, 2) / upsampled_mad(lr, hr, 2));
    }
    o.require(worst_ratio <= 0.5, "MAD reduction");
    o.detail << " shifts recovered " << exact << "/20 (radius 4); max gain/bias error " << worst_gb
             << "; worst MAD after/before " << worst_ratio << " over 5 shifted+rescaled pairs";
    report(8, "registration: exact shifts, gain/bias 1e-3, MAD reduced >= 50%", o);
}

// ---------------------------------------------------------------------------
// 9. Determinism and checkpoint round trip.

void criterion_determinism() {
    Outcome o;
    setenv("CDC_DETERMINISTIC", "1", 1);
    std::mt19937_64 rng(909);
    std::vector<ImagePair> pairs;
    for (int i = 0; i < 4; ++i) {
        const Image hr = cdc::testing::textured_scene(rng, 64, 64);
        pairs.push_back({degrade(hr, {2, 0, 0, 0}), hr, "d" + std::to_string(i)});
    }
    TrainConfig c;
    c.scale = 2;
    c.preset = "tiny";
    c.batch = 2;
    c.lr_patch = 16;
    c.epochs = 10;
    c.seed = 9;
    Trainer a(c, pairs), b(c, pairs);
    a.run();
    b.run();
    double worst = 0;
    bool same_len = a.log().size() == b.log().size();
    for (std::size_t i = 0; same_len && i < a.log().size(); ++i)
        worst = std::max(worst, std::abs(a.log()[i].loss.total - b.log()[i].loss.total));
    o.require(same_len && worst <= 1e-6, "loss traces");

    const auto dir = cdc::testing::scratch_dir("acceptance_ckpt");
    save_checkpoint(dir / "a.ckpt", a.network().config(), a.params());
    const auto ck = load_checkpoint(dir / "a.ckpt");
    save_checkpoint(dir / "b.ckpt", ck.config, ck.params);
    std::ifstream fa(dir / "a.ckpt", std::ios::binary), fb(dir / "b.ckpt", std::ios::binary);
    const std::string ba((std::istreambuf_iterator<char>(fa)), {}), bb((std::istreambuf_iterator<char>(fb)), {});
    o.require(ba == bb && !ba.empty() && ck.params == a.params(), "checkpoint round trip");
    o.detail << " " << a.log().size() << " steps x2: max |trace diff| = " << worst << "; checkpoint " << ba.size()
             << " bytes, round trip byte-identical = " << (ba == bb);
    report(9, "determinism (CDC_DETERMINISTIC=1) and checkpoint round trip", o);
}

}  // namespace

int main() {
    try {
        criterion_gw_alpha_zero();
        criterion_finite_differences();
        criterion_masks();
        criterion_model_contracts();
        criteria_training();
        criterion_metrics();
        criterion_registration();
        criterion_determinism();
    } catch (const std::exception& e) {
        std::cout << "FAIL  aborted: " << e.what() << std::endl;
        return 1;
    }
    std::cout << (failures ? "acceptance: FAILED (" + std::to_string(failures) + ")" : std::string("acceptance: all criteria passed"))
              << std::endl;
    return failures ? 1 : 0;
}
