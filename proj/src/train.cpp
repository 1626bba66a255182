#include "udc/train.hpp"

#include "udc/error.hpp"
#include "udc/io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>

namespace fs = std::filesystem;

namespace udc::train {

std::vector<std::size_t> scaled_restarts(std::size_t total_iters) {
    std::vector<std::size_t> out;
    for (double r : kReferenceRestarts) {
        const auto v = static_cast<std::size_t>(std::llround(r * static_cast<double>(total_iters) / kReferenceTotalIters));
        if (v > 0 && v < total_iters && (out.empty() || v > out.back())) out.push_back(v);
    }
    return out;
}

void TrainConfig::validate() const {
    if (!(lr_min > 0.0 && lr_min < lr_max)) throw ConfigError("train: need 0 < lr_min < lr_max");
    if (total_iters == 0) throw ConfigError("train.total_iters must be >= 1");
    for (std::size_t i = 0; i < restart_iters.size(); ++i) {
        if (restart_iters[i] == 0 || restart_iters[i] >= total_iters) {
            throw ConfigError("train.restart_iters must lie in (0, total_iters)");
        }
        if (i > 0 && restart_iters[i] <= restart_iters[i - 1]) {
            throw ConfigError("train.restart_iters must be strictly ascending");
        }
    }
    if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
    if (patch == 0 || patch % 8 != 0) throw ConfigError("train.patch must be a positive multiple of 8");
    if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) throw ConfigError("train.ema_decay must lie in [0,1]");
    if (log_interval == 0) throw ConfigError("train.log_interval must be >= 1");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0 && adam_eps > 0.0)) {
        throw ConfigError("train: Adam needs beta1, beta2 in [0,1) and eps > 0");
    }
}

double lr_schedule(std::size_t iter, const TrainConfig& cfg) {
    if (iter >= cfg.total_iters) {
        throw std::out_of_range("iteration " + std::to_string(iter) + " outside [0, " +
                                std::to_string(cfg.total_iters) + ")");
    }
    std::size_t start = 0;
    std::size_t end = cfg.total_iters;
    for (std::size_t r : cfg.restart_iters) {
        if (r <= iter) {
            start = r;
        } else {
            end = r;
            break;
        }
    }
    const double phase = static_cast<double>(iter - start) / static_cast<double>(end - start);
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * phase));
}

void adam_step(net::ModelParams& params, AdamState& state, double lr, const AdamOptions& opt) {
    for (const auto& [name, t] : params.tensors) {
        if (!t.has_grad()) continue;
        for (double g : t.grad()) {
            if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + name);
        }
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
    for (auto& [name, t] : params.tensors) {
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.empty()) {
            m.assign(t.numel(), 0.0);
            v.assign(t.numel(), 0.0);
        }
        auto w = t.mutable_data();
        const auto g = t.has_grad() ? t.grad() : std::span<const double>{};
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g.empty() ? 0.0 : g[i];
            m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * gi;
            v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * gi * gi;
            w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + opt.eps);
        }
    }
}

void ema_update(net::ModelParams& shadow, const net::ModelParams& params, double decay) {
    if (shadow.size() != params.size()) throw ShapeError("ema_update: parameter sets differ");
    for (auto& [name, s] : shadow.tensors) {
        const Tensor& p = params.at(name);
        if (p.shape() != s.shape()) throw ShapeError("ema_update: shape mismatch for " + name);
        auto sv = s.mutable_data();
        const auto pv = p.data();
        for (std::size_t i = 0; i < sv.size(); ++i) sv[i] = decay * sv[i] + (1.0 - decay) * pv[i];
    }
}

Batch sample_batch(const Dataset& data, std::size_t batch_size, std::size_t patch, std::mt19937_64& rng) {
    if (data.size() == 0) throw DataError("dataset is empty");
    const Shape ps{batch_size, 3, patch, patch};
    std::vector<double> deg(ps.numel()), clean(ps.numel());
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    for (std::size_t b = 0; b < batch_size; ++b) {
        const std::size_t idx = pick(rng);
        const Shape& s = data.clean[idx].shape();
        if (s.h < patch || s.w < patch) {
            throw DataError("patch " + std::to_string(patch) + " exceeds image " + data.names[idx] + " " + s.str());
        }
        const std::size_t y0 = std::uniform_int_distribution<std::size_t>(0, s.h - patch)(rng);
        const std::size_t x0 = std::uniform_int_distribution<std::size_t>(0, s.w - patch)(rng);
        for (std::size_t c = 0; c < 3; ++c) {
            for (std::size_t y = 0; y < patch; ++y) {
                const std::size_t src = (c * s.h + y0 + y) * s.w + x0;
                const std::size_t dst = ((b * 3 + c) * patch + y) * patch;
                std::copy_n(data.degraded[idx].data().begin() + static_cast<std::ptrdiff_t>(src), patch,
                            deg.begin() + static_cast<std::ptrdiff_t>(dst));
                std::copy_n(data.clean[idx].data().begin() + static_cast<std::ptrdiff_t>(src), patch,
                            clean.begin() + static_cast<std::ptrdiff_t>(dst));
            }
        }
    }
    return {Tensor(ps, std::move(deg)), Tensor(ps, std::move(clean))};
}

TrainResult train(const net::ModelConfig& model_cfg, const TrainConfig& cfg, const Dataset& data,
                  const TrainHooks& hooks) {
    model_cfg.validate();
    cfg.validate();
    if (data.size() == 0) throw DataError("dataset is empty");

    TrainResult result;
    result.params = net::init_params(model_cfg, cfg.seed);
    TrainState& state = result.state;
    state.ema = result.params.clone();
    state.rng.seed(cfg.seed ^ 0x5DEECE66DULL);
    const auto code = net::kernel_code(data.psf, model_cfg.kernel_code_dim);
    const AdamOptions adam{cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};

    double interval_loss = 0.0;
    std::size_t interval_count = 0;
    for (std::size_t it = 0; it < cfg.total_iters; ++it) {
        Batch batch = sample_batch(data, cfg.batch_size, cfg.patch, state.rng);
        Tape tape;
        Tensor pred = net::model_forward(tape, batch.degraded, code, result.params, model_cfg);
        Tensor loss = objective::training_loss(tape, cfg.loss, pred, batch.clean);
        const double value = loss.item();
        if (!std::isfinite(value)) {
            throw NumericError("loss became non-finite at iteration " + std::to_string(it) + " (lr " +
                               std::to_string(lr_schedule(it, cfg)) + ")");
        }
        result.params.zero_grad();
        tape.backward(loss);
        const double lr = lr_schedule(it, cfg);
        adam_step(result.params, state.adam, lr, adam);
        ema_update(state.ema, result.params, cfg.ema_decay);
        state.iter = it + 1;

        interval_loss += value;
        ++interval_count;
        if ((it + 1) % cfg.log_interval == 0 || it + 1 == cfg.total_iters) {
            LogRow row{it, lr, interval_loss / static_cast<double>(interval_count)};
            result.log.push_back(row);
            if (hooks.on_log) hooks.on_log(row);
            interval_loss = 0.0;
            interval_count = 0;
        }
    }
    for (auto& [_, t] : result.params.tensors) t.drop_grad();
    result.ema = state.ema.clone();
    return result;
}

TrainResult train_to_dir(const net::ModelConfig& model_cfg, const TrainConfig& cfg, const std::string& data_dir,
                         const std::string& out_dir) {
    const Dataset data = io::load_dataset(data_dir);
    fs::create_directories(out_dir);
    std::ofstream log(fs::path(out_dir) / "train_log.csv");
    if (!log) throw DataError("cannot write train_log.csv in " + out_dir);
    log << "iter,lr,loss\n" << std::setprecision(10);
    TrainHooks hooks;
    hooks.on_log = [&](const LogRow& row) { log << row.iter << "," << row.lr << "," << row.loss << "\n" << std::flush; };
    TrainResult result = train(model_cfg, cfg, data, hooks);
    io::save_checkpoint((fs::path(out_dir) / "raw").string(), {model_cfg, result.params, cfg.total_iters, false});
    io::save_checkpoint((fs::path(out_dir) / "ema").string(), {model_cfg, result.ema, cfg.total_iters, true});
    return result;
}

EvalReport evaluate_predictions(const std::vector<std::string>& names, const std::vector<Tensor>& predictions,
                                const std::vector<Tensor>& targets) {
    if (names.size() != predictions.size() || names.size() != targets.size()) {
        throw std::invalid_argument("evaluate: names, predictions and targets differ in count");
    }
    EvalReport report;
    report.mean = {"mean", 0.0, 0.0};
    for (std::size_t i = 0; i < names.size(); ++i) {
        std::vector<double> floored(predictions[i].data().begin(), predictions[i].data().end());
        for (double& v : floored) v = std::max(v, 0.0);
        const Tensor pred(predictions[i].shape(), std::move(floored));
        EvalRow row{names[i], objective::psnr_tonemapped(pred, targets[i]), objective::ssim_tonemapped(pred, targets[i])};
        report.mean.psnr_db += row.psnr_db;
        report.mean.ssim += row.ssim;
        report.rows.push_back(std::move(row));
    }
    if (!report.rows.empty()) {
        report.mean.psnr_db /= static_cast<double>(report.rows.size());
        report.mean.ssim /= static_cast<double>(report.rows.size());
    }
    return report;
}

EvalReport evaluate(const net::ModelParams& params, const net::ModelConfig& cfg, const Dataset& data) {
    std::vector<Tensor> preds;
    preds.reserve(data.size());
    for (const Tensor& y : data.degraded) preds.push_back(net::infer(y, data.psf, params, cfg));
    return evaluate_predictions(data.names, preds, data.clean);
}

EvalReport evaluate(const std::string& checkpoint_dir, const std::string& data_dir, bool use_ema) {
    fs::path dir(checkpoint_dir);
    if (!fs::exists(dir / "manifest.txt")) dir /= use_ema ? "ema" : "raw";
    const io::Checkpoint ckpt = io::load_checkpoint(dir.string());
    return evaluate(ckpt.params, ckpt.model, io::load_dataset(data_dir));
}

void write_report_csv(const std::string& path, const EvalReport& report) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write report " + path);
    out << "name,psnr_db,ssim\n" << std::setprecision(10);
    for (const auto& r : report.rows) out << r.name << "," << r.psnr_db << "," << r.ssim << "\n";
    out << report.mean.name << "," << report.mean.psnr_db << "," << report.mean.ssim << "\n";
}

} // namespace udc::train
