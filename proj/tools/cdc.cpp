// cdc command line: masks, degrade, register, patches, train, eval, sr.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cdc/cdc.hpp"

namespace fs = std::filesystem;

namespace {

std::vector<fs::path> list_pngs(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw std::runtime_error("'" + dir.string() + "' is not a directory");
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        std::string ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (e.is_regular_file() && ext == ".png") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

// Manifest entries are stored relative to the manifest's directory.
std::string manifest_path(const fs::path& file, const fs::path& manifest) {
    return fs::proximate(fs::absolute(file), fs::absolute(manifest).parent_path()).generic_string();
}

int run_masks(const fs::path& in, const std::string& prefix, const cdc::HarrisConfig& cfg) {
    const auto masks = cdc::compute_masks(cdc::load_png(in), cfg);
    for (auto e : cdc::kComponents)
        cdc::save_mask_png(masks[e], prefix + "_" + cdc::to_string(e) + ".png");
    cdc::save_png(cdc::masks_composite(masks), prefix + "_composite.png");
    std::size_t counts[3] = {};
    for (auto e : cdc::kComponents)
        for (auto v : masks[e].data) counts[static_cast<int>(e)] += v != 0;
    std::cout << "flat " << counts[0] << " edge " << counts[1] << " corner " << counts[2] << " pixels\n";
    return 0;
}

int run_degrade(const cdc::DegradeConfig& base, const fs::path& in, const fs::path& out, const fs::path& manifest) {
    base.validate();
    cdc::PairManifest m;
    std::uint64_t index = 0;
    for (const auto& file : list_pngs(in)) {
        const auto hr = cdc::crop_to_multiple(cdc::load_png(file), base.scale);
        auto cfg = base;
        cfg.seed = base.seed + index++;  // distinct, reproducible noise per image
        const auto lr = cdc::degrade(hr, cfg);
        const auto hr_out = out / "hr" / file.filename();
        const auto lr_out = out / "lr" / file.filename();
        cdc::save_png(hr, hr_out);
        cdc::save_png(lr, lr_out);
        m.records.push_back({manifest_path(hr_out, manifest), manifest_path(lr_out, manifest), base.scale});
    }
    cdc::write_manifest(manifest, m);
    std::cout << "degraded " << m.records.size() << " images -> " << manifest << '\n';
    return 0;
}

int run_register(const fs::path& lr_dir, const fs::path& hr_dir, int radius, int iters, std::optional<int> scale,
                 const fs::path& out) {
    const fs::path manifest = out / "manifest.jsonl";
    cdc::PairManifest m;
    for (const auto& lr_file : list_pngs(lr_dir)) {
        const auto hr_file = hr_dir / lr_file.filename();
        if (!fs::exists(hr_file)) {
            std::cerr << "skip " << lr_file.filename() << ": no HR counterpart\n";
            continue;
        }
        const auto lr = cdc::load_png(lr_file);
        const auto hr = cdc::load_png(hr_file);
        const int s = scale.value_or(static_cast<int>(std::lround(static_cast<double>(hr.height()) / lr.height())));
        const double before = cdc::upsampled_mad(lr, hr, s);
        const auto reg = cdc::register_pair(lr, hr, s, radius, iters);
        const double after = cdc::upsampled_mad(reg.lr, reg.hr, s);
        const auto lr_out = out / "lr" / lr_file.filename();
        const auto hr_out = out / "hr" / lr_file.filename();
        cdc::save_png(reg.lr, lr_out);
        cdc::save_png(reg.hr, hr_out);
        m.records.push_back({manifest_path(hr_out, manifest), manifest_path(lr_out, manifest), s});
        std::cout << lr_file.filename().string() << ": lr offset (" << reg.lr_offset_y << "," << reg.lr_offset_x
                  << ") hr offset (" << reg.hr_offset_y << "," << reg.hr_offset_x << ") gain " << reg.gain << " bias "
                  << reg.bias << " ncc " << reg.score << " iters " << reg.iterations << " mad " << before << " -> "
                  << after << (reg.score < cdc::kLowConfidenceScore ? " LOW-CONFIDENCE" : "") << '\n';
    }
    cdc::write_manifest(manifest, m);
    return 0;
}

int run_patches(const fs::path& manifest_in, int size, int stride, const fs::path& out) {
    const fs::path manifest = out / "manifest.jsonl";
    cdc::PairManifest m;
    for (const auto& r : cdc::read_manifest(manifest_in).records) {
        const cdc::ImagePair pair{cdc::load_png(r.lr_path), cdc::load_png(r.hr_path), fs::path(r.hr_path).stem().string()};
        for (const auto& p : cdc::extract_patches(pair, r.scale, size, stride)) {
            const auto lr_out = out / "lr" / (p.name + ".png");
            const auto hr_out = out / "hr" / (p.name + ".png");
            cdc::save_png(p.lr, lr_out);
            cdc::save_png(p.hr, hr_out);
            m.records.push_back({manifest_path(hr_out, manifest), manifest_path(lr_out, manifest), r.scale, r.split});
        }
    }
    cdc::write_manifest(manifest, m);
    std::cout << m.records.size() << " patch pairs -> " << manifest << '\n';
    return 0;
}

int run_train(const fs::path& config) {
    const auto cfg = cdc::TrainConfig::load(config);
    const auto trainer = cdc::train(cfg);
    const auto& log = trainer.log();
    std::cout << "trained " << trainer.steps_done() << " steps";
    if (!log.empty()) std::cout << ", loss " << log.front().loss.total << " -> " << log.back().loss.total;
    std::cout << '\n';
    return 0;
}

int run_eval(const fs::path& ckpt, const fs::path& manifest, std::optional<int> border, const fs::path& out) {
    const auto report = cdc::evaluate(ckpt, manifest, border);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream f(out);
    if (!f) throw std::runtime_error("cannot write '" + out.string() + "'");
    f << report.to_json().dump(2) << '\n';
    std::cout << report.images.size() << " images: PSNR-Y " << report.mean_psnr_db << " dB, SSIM " << report.mean_ssim
              << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Component divide-and-conquer super-resolution"};
    app.require_subcommand(1);

    std::string in, out, prefix, lr_dir, hr_dir, manifest, config, ckpt, dump_dir;
    cdc::HarrisConfig harris;
    auto* masks = app.add_subcommand("masks", "Flat/edge/corner masks of an HR image");
    masks->add_option("--in", in, "input PNG")->required()->check(CLI::ExistingFile);
    masks->add_option("--out-prefix", prefix, "output path prefix")->required();
    masks->add_option("--sigma", harris.sigma, "Harris window sigma")->capture_default_str();
    masks->add_option("--k", harris.k, "Harris k")->capture_default_str();
    masks->add_option("--corner-thresh", harris.corner_thresh)->capture_default_str();
    masks->add_option("--edge-thresh", harris.edge_thresh)->capture_default_str();
    masks->add_option("--dilate", harris.corner_dilate_radius, "corner dilation radius")->capture_default_str();

    cdc::DegradeConfig deg;
    auto* degrade = app.add_subcommand("degrade", "Synthesize LR images from a directory of HR PNGs");
    degrade->add_option("--scale", deg.scale)->required();
    degrade->add_option("--blur", deg.blur_sigma, "Gaussian blur sigma")->capture_default_str();
    degrade->add_option("--noise", deg.noise_sigma, "noise sigma in [0,1] units")->capture_default_str();
    degrade->add_option("--seed", deg.seed)->capture_default_str();
    degrade->add_option("--in", in)->required()->check(CLI::ExistingDirectory);
    degrade->add_option("--out", out)->required();
    degrade->add_option("--manifest", manifest)->required();

    int radius = 4, iters = 3;
    std::optional<int> scale;
    auto* reg = app.add_subcommand("register", "Align LR/HR pairs matched by file name");
    reg->add_option("--lr", lr_dir)->required()->check(CLI::ExistingDirectory);
    reg->add_option("--hr", hr_dir)->required()->check(CLI::ExistingDirectory);
    reg->add_option("--radius", radius, "search radius in HR pixels")->capture_default_str();
    reg->add_option("--iters", iters)->capture_default_str();
    reg->add_option("--scale", scale, "defaults to round(HR height / LR height)");
    reg->add_option("--out", out)->required();

    int size = 192, stride = 192;
    auto* patches = app.add_subcommand("patches", "Cut manifest pairs into aligned patches");
    patches->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
    patches->add_option("--size", size, "HR patch size")->capture_default_str();
    patches->add_option("--stride", stride, "HR stride")->capture_default_str();
    patches->add_option("--out", out)->required();

    auto* train = app.add_subcommand("train", "Train from a JSON config");
    train->add_option("--config", config)->required()->check(CLI::ExistingFile);

    std::optional<int> border;
    auto* eval = app.add_subcommand("eval", "PSNR-Y / SSIM of a checkpoint on a manifest");
    eval->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
    eval->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
    eval->add_option("--border", border, "border crop, defaults to the scale");
    eval->add_option("--out", out)->required();

    auto* sr = app.add_subcommand("sr", "Super-resolve one image");
    sr->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
    sr->add_option("--in", in)->required()->check(CLI::ExistingFile);
    sr->add_option("--out", out)->required();
    sr->add_option("--dump-components", dump_dir, "write attention maps and intermediate SRs here");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*masks) return run_masks(in, prefix, harris);
        if (*degrade) return run_degrade(deg, in, out, manifest);
        if (*reg) return run_register(lr_dir, hr_dir, radius, iters, scale, out);
        if (*patches) return run_patches(manifest, size, stride, out);
        if (*train) return run_train(config);
        if (*eval) return run_eval(ckpt, manifest, border, out);
        if (*sr) {
            std::optional<fs::path> dump;
            if (!dump_dir.empty()) dump = dump_dir;
            const auto res = cdc::infer(ckpt, in, out, dump);
            std::cout << out << ": " << res.sr.width() << "x" << res.sr.height() << '\n';
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
