// udc: dataset synthesis, training, evaluation and verification entry point.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.

#include "udc/degrade.hpp"
#include "udc/error.hpp"
#include "udc/gradcheck.hpp"
#include "udc/io.hpp"
#include "udc/net.hpp"
#include "udc/parallel.hpp"
#include "udc/train.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct PsfArgs {
    std::size_t size = 15;
    double core_sigma = 1.0;
    int sidelobes = 4;
    double gain = 0.05;
    std::uint64_t seed = 0;
    std::string out;
};

struct DataArgs {
    std::size_t count = 4;
    std::size_t hw = 64;
    std::string psf;
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;
    std::string out;
    int lights = 3;
    double max_radiance = 500.0;
    double saturation = udc::degrade::kDefaultSaturation;
    bool tonemap_input = false;
};

struct TrainArgs {
    std::string config;
    std::string data;
    std::string out;
};

struct EvalArgs {
    std::string ckpt;
    std::string data;
    bool ema = true;
    std::string report;
};

struct InferArgs {
    std::string ckpt;
    std::string in;
    std::string psf;
    std::string out;
    std::string preview;
    bool ema = true;
};

struct GradArgs {
    std::string scope = "ops";
    std::uint64_t seed = 0;
    std::size_t seeds = 20;
    std::string inject_fault;
};

struct PreviewArgs {
    std::string in;
    std::string out;
};

int run_synth_psf(const PsfArgs& a) {
    const auto psf = udc::degrade::psf_synthesize(a.core_sigma, a.sidelobes, a.gain, a.size, a.seed);
    udc::io::write_psf(a.out, psf);
    double total = 0.0;
    std::size_t peak = 0;
    for (std::size_t i = 0; i < psf.values().size(); ++i) {
        total += psf.values()[i];
        if (psf.values()[i] > psf.values()[peak]) peak = i;
    }
    std::printf("energy %.6f\npeak (%zu,%zu) value %.6f\n", total, peak / psf.width(), peak % psf.width(),
                psf.values()[peak]);
    return 0;
}

int run_synth_data(const DataArgs& a) {
    if (fs::exists(a.out) && !(fs::is_directory(a.out) && fs::is_empty(a.out))) {
        throw udc::DataError("output directory exists and is not empty: " + a.out);
    }
    if (!fs::exists(a.psf)) throw udc::DataError("psf file not found: " + a.psf);
    udc::degrade::DegradationConfig cfg;
    cfg.noise_sigma = a.noise_sigma;
    cfg.saturation_level = a.saturation;
    cfg.apply_tonemap_to_input = a.tonemap_input;
    cfg.validate();

    udc::train::Dataset data;
    data.psf = udc::io::read_psf(a.psf);
    data.names.resize(a.count);
    data.clean.resize(a.count);
    data.degraded.resize(a.count);
    udc::parallel_for(a.count, [&](std::size_t i) {
        const std::uint64_t seed = a.seed ^ static_cast<std::uint64_t>(i);
        char name[16];
        std::snprintf(name, sizeof name, "%04zu", i);
        const udc::Tensor clean = udc::degrade::scene_synthesize(a.hw, a.hw, a.lights, a.max_radiance, seed);
        auto pair = udc::degrade::simulate(clean, data.psf, cfg, seed, a.psf);
        data.names[i] = name;
        data.clean[i] = pair.clean;
        data.degraded[i] = pair.degraded;
    });

    std::ostringstream meta;
    meta << "count = " << a.count << "\nhw = " << a.hw << "\npsf = " << a.psf << "\nseed = " << a.seed
         << "\nlights = " << a.lights << "\nmax_radiance = " << a.max_radiance
         << "\ndegrade.noise_sigma = " << cfg.noise_sigma << "\ndegrade.saturation_level = " << cfg.saturation_level
         << "\ndegrade.apply_tonemap_to_input = " << (cfg.apply_tonemap_to_input ? "true" : "false") << "\n";
    udc::io::write_dataset(a.out, data, meta.str());
    std::printf("wrote %zu pairs to %s\n", a.count, a.out.c_str());
    return 0;
}

int run_train(const TrainArgs& a) {
    const udc::io::RunConfig cfg = a.config.empty() ? udc::io::RunConfig{} : udc::io::parse_config(a.config);
    fs::create_directories(a.out);
    {
        std::ofstream echo(fs::path(a.out) / "config.txt");
        echo << udc::io::format_config(cfg);
    }
    const auto result = udc::train::train_to_dir(cfg.model, cfg.train, a.data, a.out);
    if (!result.log.empty()) {
        std::printf("trained %zu iterations, final loss %.6g\n", cfg.train.total_iters, result.log.back().loss);
    }
    return 0;
}

int run_eval(const EvalArgs& a) {
    const auto report = udc::train::evaluate(a.ckpt, a.data, a.ema);
    const std::string path = a.report.empty() ? (fs::path(a.ckpt) / "eval_report.csv").string() : a.report;
    udc::train::write_report_csv(path, report);
    for (const auto& r : report.rows) std::printf("%s psnr %.4f dB ssim %.6f\n", r.name.c_str(), r.psnr_db, r.ssim);
    std::printf("mean psnr %.4f dB ssim %.6f\n", report.mean.psnr_db, report.mean.ssim);
    return 0;
}

int run_infer(const InferArgs& a) {
    fs::path dir(a.ckpt);
    if (!fs::exists(dir / "manifest.txt")) dir /= a.ema ? "ema" : "raw";
    const auto ckpt = udc::io::load_checkpoint(dir.string());
    const udc::Tensor input = udc::io::read_udct(a.in);
    const auto psf = udc::io::read_psf(a.psf);
    const udc::Tensor out = udc::net::infer(input, psf, ckpt.params, ckpt.model);
    udc::io::write_udct(a.out, out);
    const std::string preview = a.preview.empty() ? fs::path(a.out).replace_extension(".png").string() : a.preview;
    std::vector<double> floored(out.data().begin(), out.data().end());
    for (double& v : floored) v = std::max(v, 0.0);
    udc::io::export_preview(udc::Tensor(out.shape(), std::move(floored)), preview);
    std::printf("restored %s -> %s (preview %s)\n", out.shape().str().c_str(), a.out.c_str(), preview.c_str());
    return 0;
}

int run_gradcheck(const GradArgs& a) {
    udc::check::GradcheckOptions opt;
    opt.seed = a.seed;
    opt.seeds = a.seeds;
    opt.inject_fault = a.inject_fault;
    std::vector<udc::check::GradReport> reports;
    if (a.scope == "ops" || a.scope == "all") reports = udc::check::run_op_gradchecks(opt);
    if (a.scope == "model" || a.scope == "all") reports.push_back(udc::check::run_model_gradcheck(opt));
    std::string failed;
    for (const auto& r : reports) {
        std::printf("%-18s worst_rel_err %.3e  tol %.0e  checks %zu", r.name.c_str(), r.worst_rel_error, r.tolerance,
                    r.checks);
        if (r.kinks_skipped > 0) std::printf("  kinks_skipped %zu", r.kinks_skipped);
        std::printf("  %s\n", r.passed() ? "ok" : "FAIL");
        if (!r.passed() && failed.empty()) failed = r.name;
    }
    if (!failed.empty()) {
        std::fprintf(stderr, "gradcheck failed: %s\n", failed.c_str());
        return kExitNumeric;
    }
    return 0;
}

int run_preview(const PreviewArgs& a) {
    udc::io::export_preview(udc::io::read_udct(a.in), a.out);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Under-display-camera HDR restoration toolkit", "udc"};
    app.require_subcommand(1);

    PsfArgs psf;
    auto* c_psf = app.add_subcommand("synth-psf", "Synthesize a point-spread function and write it as UDCT");
    c_psf->add_option("--size", psf.size, "Odd kernel extent")->capture_default_str();
    c_psf->add_option("--core-sigma", psf.core_sigma, "Std of the Gaussian core (pixels)")->capture_default_str();
    c_psf->add_option("--sidelobes", psf.sidelobes, "Number of axis-aligned side lobes")->capture_default_str();
    c_psf->add_option("--gain", psf.gain, "Side lobe amplitude relative to the core")->capture_default_str();
    c_psf->add_option("--seed", psf.seed, "Random seed")->capture_default_str();
    c_psf->add_option("--out", psf.out, "Output psf.udct path")->required();

    DataArgs data;
    auto* c_data = app.add_subcommand("synth-data", "Simulate degraded/clean HDR pairs into a dataset directory");
    c_data->add_option("--count", data.count, "Number of pairs")->capture_default_str();
    c_data->add_option("--hw", data.hw, "Square image extent")->capture_default_str();
    c_data->add_option("--psf", data.psf, "PSF UDCT file")->required();
    c_data->add_option("--noise-sigma", data.noise_sigma, "Gaussian noise std (radiance units)")->capture_default_str();
    c_data->add_option("--seed", data.seed, "Base seed; sample i uses seed XOR i")->capture_default_str();
    c_data->add_option("--out", data.out, "Output dataset directory (must be empty or absent)")->required();
    c_data->add_option("--lights", data.lights, "Bright light sources per scene")->capture_default_str();
    c_data->add_option("--max-radiance", data.max_radiance, "Peak light radiance")->capture_default_str();
    c_data->add_option("--saturation", data.saturation, "Sensor clipping level")->capture_default_str();
    c_data->add_flag("--tonemap-input", data.tonemap_input, "Store tone-mapped degraded images");

    TrainArgs tr;
    auto* c_train = app.add_subcommand("train", "Train a model on a dataset directory");
    c_train->add_option("--config", tr.config, "Run configuration file (section.key = value); defaults if omitted");
    c_train->add_option("--data", tr.data, "Dataset directory")->required();
    c_train->add_option("--out", tr.out, "Output directory for checkpoints and train_log.csv")->required();

    EvalArgs ev;
    auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint with tone-mapped PSNR/SSIM");
    c_eval->add_option("--ckpt", ev.ckpt, "Training output or checkpoint directory")->required();
    c_eval->add_option("--data", ev.data, "Dataset directory")->required();
    c_eval->add_flag("--ema,!--raw", ev.ema, "Use EMA weights (default) or raw weights")->capture_default_str();
    c_eval->add_option("--report", ev.report, "Report CSV path (default <ckpt>/eval_report.csv)");

    InferArgs inf;
    auto* c_infer = app.add_subcommand("infer", "Restore one degraded image");
    c_infer->add_option("--ckpt", inf.ckpt, "Training output or checkpoint directory")->required();
    c_infer->add_option("--in", inf.in, "Degraded (1,3,H,W) UDCT image, H and W multiples of 8")->required();
    c_infer->add_option("--psf", inf.psf, "PSF UDCT file")->required();
    c_infer->add_option("--out", inf.out, "Restored UDCT output path")->required();
    c_infer->add_option("--preview", inf.preview, "Preview PNG path (default: --out with .png)");
    c_infer->add_flag("--ema,!--raw", inf.ema, "Use EMA weights (default) or raw weights")->capture_default_str();

    GradArgs gc;
    auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference verification of every differentiable op");
    c_grad->add_option("--scope", gc.scope, "ops, model or all")
        ->check(CLI::IsMember({"ops", "model", "all"}))
        ->capture_default_str();
    c_grad->add_option("--seed", gc.seed, "Base seed")->capture_default_str();
    c_grad->add_option("--seeds", gc.seeds, "Random trials per op")->capture_default_str();
    c_grad->add_option("--inject-fault", gc.inject_fault, "Corrupt one op's gradient (negative control)")
        ->group("");

    PreviewArgs pv;
    auto* c_prev = app.add_subcommand("preview", "Export a tone-mapped 8-bit PNG of a UDCT image");
    c_prev->add_option("--in", pv.in, "(1,3,H,W) UDCT image")->required();
    c_prev->add_option("--out", pv.out, "PNG output path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (c_psf->parsed()) return run_synth_psf(psf);
        if (c_data->parsed()) return run_synth_data(data);
        if (c_train->parsed()) return run_train(tr);
        if (c_eval->parsed()) return run_eval(ev);
        if (c_infer->parsed()) return run_infer(inf);
        if (c_grad->parsed()) return run_gradcheck(gc);
        if (c_prev->parsed()) return run_preview(pv);
    } catch (const udc::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const udc::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
