#pragma once

#include "udc/degrade.hpp"
#include "udc/net.hpp"
#include "udc/objective.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace udc::train {

/// Reference schedule: restarts at 5e4, 1.5e5, 3e5, 4.5e5 of 6e5 iterations.
inline constexpr std::array<double, 4> kReferenceRestarts{5e4, 1.5e5, 3e5, 4.5e5};
inline constexpr double kReferenceTotalIters = 6e5;

/// Reference restart points scaled to `total_iters`, rounded, deduplicated, kept in (0, total_iters).
std::vector<std::size_t> scaled_restarts(std::size_t total_iters);

struct TrainConfig {
    double lr_max = 2e-4;
    double lr_min = 1e-7;
    std::size_t total_iters = 5000;
    std::vector<std::size_t> restart_iters = scaled_restarts(5000);
    std::size_t batch_size = 4;
    std::size_t patch = 64;
    double ema_decay = 0.999;
    objective::LossKind loss = objective::LossKind::MappingL1;
    std::uint64_t seed = 0;
    std::size_t log_interval = 50;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const;
};

double lr_schedule(std::size_t iter, const TrainConfig& cfg);

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::size_t step = 0;
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;
};

/// One bias-corrected Adam update from the gradients stored on `params`. A parameter with no
/// gradient buffer is treated as having a zero gradient. Throws NumericError naming the first
/// non-finite gradient before any parameter is touched.
void adam_step(net::ModelParams& params, AdamState& state, double lr, const AdamOptions& opt = {});

/// shadow <- decay * shadow + (1 - decay) * params, elementwise.
void ema_update(net::ModelParams& shadow, const net::ModelParams& params, double decay);

struct TrainState {
    std::size_t iter = 0;
    AdamState adam;
    net::ModelParams ema;
    std::mt19937_64 rng;
};

/// In-memory pair set sharing one PSF.
struct Dataset {
    std::vector<std::string> names;
    std::vector<Tensor> clean;
    std::vector<Tensor> degraded;
    degrade::Psf psf = degrade::Psf::delta(1);

    std::size_t size() const noexcept { return names.size(); }
};

struct Batch {
    Tensor degraded;
    Tensor clean;
};

/// Random aligned crops: clean and degraded patches always share coordinates.
Batch sample_batch(const Dataset& data, std::size_t batch_size, std::size_t patch, std::mt19937_64& rng);

struct LogRow {
    std::size_t iter;
    double lr;
    double loss;
};

struct TrainResult {
    net::ModelParams params;
    net::ModelParams ema;
    std::vector<LogRow> log;
    TrainState state;
};

struct TrainHooks {
    /// Called after each log row is produced.
    std::function<void(const LogRow&)> on_log;
};

TrainResult train(const net::ModelConfig& model_cfg, const TrainConfig& cfg, const Dataset& data,
                  const TrainHooks& hooks = {});

/// Runs train() on a dataset directory, writing raw/ and ema/ checkpoints plus train_log.csv into `out_dir`.
TrainResult train_to_dir(const net::ModelConfig& model_cfg, const TrainConfig& cfg, const std::string& data_dir,
                         const std::string& out_dir);

struct EvalRow {
    std::string name;
    double psnr_db;
    double ssim;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    EvalRow mean;
};

/// Metrics of predictions (floored at zero) against targets.
EvalReport evaluate_predictions(const std::vector<std::string>& names, const std::vector<Tensor>& predictions,
                                const std::vector<Tensor>& targets);
EvalReport evaluate(const net::ModelParams& params, const net::ModelConfig& cfg, const Dataset& data);
/// `checkpoint_dir` is a training output (raw/ + ema/) or a single checkpoint directory.
EvalReport evaluate(const std::string& checkpoint_dir, const std::string& data_dir, bool use_ema);

/// Header `name,psnr_db,ssim`, one row per image, then a `mean` row.
void write_report_csv(const std::string& path, const EvalReport& report);

} // namespace udc::train
