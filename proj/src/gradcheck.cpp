#include "udc/gradcheck.hpp"

#include "udc/degrade.hpp"
#include "udc/error.hpp"
#include "udc/net.hpp"
#include "udc/objective.hpp"
#include "udc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace udc::check {

double central_difference(const std::function<double()>& f, std::span<double> values, std::size_t index, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("finite difference step must be positive");
    const double original = values[index];
    values[index] = original + eps;
    const double plus = f();
    values[index] = original - eps;
    const double minus = f();
    values[index] = original;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
        throw NumericError("finite difference: function returned a non-finite value");
    }
    return (plus - minus) / (2.0 * eps);
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& at, double eps) {
    Tensor probe = at.detached();
    std::vector<double> grad(at.numel());
    auto values = probe.mutable_data();
    for (std::size_t i = 0; i < grad.size(); ++i) {
        grad[i] = central_difference([&] { return f(probe); }, values, i, eps);
    }
    return Tensor(at.shape(), std::move(grad));
}

double relative_error(double analytic, double numeric, double floor) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

namespace {

constexpr double kOpTolerance = 1e-4;
constexpr double kModelTolerance = 1e-3;
constexpr double kOpFloor = 1e-6;
constexpr double kModelFloor = 1e-4;
constexpr double kFaultFactor = 1.01;

using Rng = std::mt19937_64;

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Uniform values in [lo, hi] whose magnitude stays at least `gap` away from zero when `avoid_zero`.
Tensor random_tensor(Rng& rng, Shape s, double lo, double hi, bool avoid_zero = false, double gap = 1e-2) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(s.numel());
    for (double& x : v) {
        do {
            x = dist(rng);
        } while (avoid_zero && std::abs(x) < gap);
    }
    return Tensor(s, std::move(v), true);
}

struct OpCase {
    std::string name;
    std::function<std::vector<Tensor>(Rng&)> inputs;
    std::function<Tensor(Tape&, const std::vector<Tensor>&)> apply;
};

Shape small_shape(Rng& rng, std::size_t min_hw = 2) {
    return {1, pick(rng, 1, 4), pick(rng, min_hw, 8), pick(rng, min_hw, 8)};
}

std::vector<OpCase> op_cases() {
    std::vector<OpCase> cases;
    auto conv_case = [&](std::string name, std::size_t k, std::size_t stride, std::size_t pad) {
        cases.push_back({std::move(name),
                         [=](Rng& rng) {
                             Shape s = small_shape(rng, 4);
                             const std::size_t out = pick(rng, 1, 4);
                             return std::vector<Tensor>{random_tensor(rng, s, -1, 1),
                                                        random_tensor(rng, {out, s.c, k, k}, -1, 1),
                                                        random_tensor(rng, {1, out, 1, 1}, -1, 1)};
                         },
                         [=](Tape& t, const std::vector<Tensor>& in) {
                             return ops::conv2d(t, in[0], in[1], in[2], stride, pad);
                         }});
    };
    conv_case("conv2d", 3, 1, 1);
    conv_case("conv2d_stride2", 3, 2, 1);
    conv_case("conv2d_1x1", 1, 1, 0);

    cases.push_back({"upsample2x_conv",
                     [](Rng& rng) {
                         Shape s{1, pick(rng, 1, 4), pick(rng, 1, 4), pick(rng, 1, 4)};
                         const std::size_t out = pick(rng, 1, 4);
                         return std::vector<Tensor>{random_tensor(rng, s, -1, 1),
                                                    random_tensor(rng, {out, s.c, 3, 3}, -1, 1),
                                                    random_tensor(rng, {1, out, 1, 1}, -1, 1)};
                     },
                     [](Tape& t, const std::vector<Tensor>& in) { return ops::upsample2x_conv(t, in[0], in[1], in[2]); }});

    auto binary_case = [&](std::string name, bool per_channel, Tensor (*fn)(Tape&, const Tensor&, const Tensor&)) {
        cases.push_back({std::move(name),
                         [=](Rng& rng) {
                             Shape s = small_shape(rng);
                             Shape sb = per_channel ? Shape{1, s.c, 1, 1} : s;
                             return std::vector<Tensor>{random_tensor(rng, s, -1, 1), random_tensor(rng, sb, -1, 1)};
                         },
                         [=](Tape& t, const std::vector<Tensor>& in) { return fn(t, in[0], in[1]); }});
    };
    binary_case("add", false, &ops::add);
    binary_case("add_per_channel", true, &ops::add);
    binary_case("sub", false, &ops::sub);
    binary_case("mul", false, &ops::mul);
    binary_case("mul_per_channel", true, &ops::mul);

    auto unary_case = [&](std::string name, double lo, double hi, bool avoid_zero,
                          std::function<Tensor(Tape&, const Tensor&)> fn) {
        cases.push_back({std::move(name),
                         [=](Rng& rng) { return std::vector<Tensor>{random_tensor(rng, small_shape(rng), lo, hi, avoid_zero)}; },
                         [=](Tape& t, const std::vector<Tensor>& in) { return fn(t, in[0]); }});
    };
    unary_case("scale", -1, 1, false, [](Tape& t, const Tensor& x) { return ops::scale(t, x, -1.7); });
    unary_case("add_scalar", -1, 1, false, [](Tape& t, const Tensor& x) { return ops::add_scalar(t, x, 0.3); });
    unary_case("leaky_relu", -1, 1, true, [](Tape& t, const Tensor& x) { return ops::leaky_relu(t, x, 0.2); });
    unary_case("abs", -1, 1, true, [](Tape& t, const Tensor& x) { return ops::abs(t, x); });
    unary_case("square", -1, 1, false, [](Tape& t, const Tensor& x) { return ops::square(t, x); });
    unary_case("log1p", 0, 3, false, [](Tape& t, const Tensor& x) { return ops::log1p(t, x); });
    unary_case("tone_map", 0, 3, false, [](Tape& t, const Tensor& x) { return ops::tone_map(t, x, 0.25); });
    unary_case("sum", -1, 1, false, [](Tape& t, const Tensor& x) { return ops::sum(t, x); });
    unary_case("mean", -1, 1, false, [](Tape& t, const Tensor& x) { return ops::mean(t, x); });

    cases.push_back({"concat_channels",
                     [](Rng& rng) {
                         Shape a = small_shape(rng);
                         Shape b = a;
                         b.c = pick(rng, 1, 3);
                         return std::vector<Tensor>{random_tensor(rng, a, -1, 1), random_tensor(rng, b, -1, 1)};
                     },
                     [](Tape& t, const std::vector<Tensor>& in) { return ops::concat_channels(t, in[0], in[1]); }});

    cases.push_back({"sft_apply",
                     [](Rng& rng) {
                         Shape s = small_shape(rng);
                         return std::vector<Tensor>{random_tensor(rng, s, -1, 1), random_tensor(rng, s, 0, 2),
                                                    random_tensor(rng, s, -1, 1)};
                     },
                     [](Tape& t, const std::vector<Tensor>& in) { return net::sft_apply(t, in[0], in[1], in[2]); }});

    for (std::size_t k : {std::size_t{1}, std::size_t{3}}) {
        cases.push_back({"dynamic_conv_k" + std::to_string(k),
                         [k](Rng& rng) {
                             Shape s = small_shape(rng);
                             return std::vector<Tensor>{random_tensor(rng, s, -1, 1),
                                                        random_tensor(rng, {1, s.c * k * k, s.h, s.w}, -1, 1)};
                         },
                         [k](Tape& t, const std::vector<Tensor>& in) { return net::dynamic_conv(t, in[0], in[1], k); }});
    }

    auto loss_case = [&](std::string name, objective::LossKind kind) {
        cases.push_back({std::move(name),
                         [](Rng& rng) {
                             Shape s = small_shape(rng);
                             Tensor x = random_tensor(rng, s, 0, 2);
                             x.set_requires_grad(false);
                             std::vector<double> y(s.numel());
                             std::uniform_real_distribution<double> d(0, 2);
                             for (std::size_t i = 0; i < y.size(); ++i) {
                                 do {
                                     y[i] = d(rng);
                                 } while (std::abs(y[i] - x.data()[i]) < 1e-2 || y[i] < 1e-2);
                             }
                             return std::vector<Tensor>{Tensor(s, std::move(y), true), x};
                         },
                         [kind](Tape& t, const std::vector<Tensor>& in) { return objective::loss(t, kind, in[0], in[1]); }});
    };
    loss_case("mapping_l1", objective::LossKind::MappingL1);
    loss_case("mapping_l2", objective::LossKind::MappingL2);
    loss_case("plain_l1", objective::LossKind::PlainL1);
    return cases;
}

double weighted_sum(const Tensor& out, const Tensor& weights) {
    double total = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i) total += out.data()[i] * weights.data()[i];
    return total;
}

} // namespace

std::vector<std::string> registered_ops() {
    std::vector<std::string> names;
    for (const auto& c : op_cases()) names.push_back(c.name);
    return names;
}

std::vector<GradReport> run_op_gradchecks(const GradcheckOptions& opt) {
    std::vector<GradReport> reports;
    for (const OpCase& c : op_cases()) {
        GradReport report{c.name, 0.0, 0, kOpTolerance};
        for (std::size_t s = 0; s < opt.seeds; ++s) {
            Rng rng(opt.seed * 1000003ULL + s);
            std::vector<Tensor> in = c.inputs(rng);

            Tape tape;
            tape.set_gradient_fault(opt.inject_fault, kFaultFactor);
            Tensor out = c.apply(tape, in);
            Tensor weights = random_tensor(rng, out.shape(), -1, 1);
            weights.set_requires_grad(false);
            Tensor loss = ops::sum(tape, ops::mul(tape, out, weights));
            tape.backward(loss);

            auto f = [&] {
                Tape off(false);
                return weighted_sum(c.apply(off, in), weights);
            };
            for (Tensor& t : in) {
                if (!t.requires_grad()) continue;
                auto values = t.mutable_data();
                for (std::size_t i = 0; i < values.size(); ++i) {
                    const double analytic = t.grad()[i];
                    const double numeric = central_difference(f, values, i, opt.eps);
                    report.worst_rel_error = std::max(report.worst_rel_error, relative_error(analytic, numeric, kOpFloor));
                    ++report.checks;
                }
            }
        }
        reports.push_back(report);
    }
    return reports;
}

GradReport run_model_gradcheck(const GradcheckOptions& opt, std::size_t elements_per_tensor) {
    net::ModelConfig cfg;
    cfg.channels = 4;
    cfg.blocks = {1, 1, 1, 1, 1, 1, 1};
    GradReport report{"model_forward", 0.0, 0, kModelTolerance};
    for (std::size_t s = 0; s < opt.seeds; ++s) {
        const std::uint64_t seed = opt.seed * 1000003ULL + s;
        Rng rng(seed);
        net::ModelParams params = net::init_params(cfg, seed);
        // Non-zero heads so both branches carry gradient.
        std::normal_distribution<double> head(0.0, 0.1);
        for (auto& [name, t] : params.tensors) {
            const bool is_head = name.find(".alpha.") != std::string::npos || name.find(".beta.") != std::string::npos ||
                                 name.find(".head.") != std::string::npos;
            if (is_head) {
                for (double& v : t.mutable_data()) v = head(rng);
            }
        }
        Tensor y = random_tensor(rng, {1, 3, 16, 16}, 0, 2);
        y.set_requires_grad(false);
        for (int i = 0; i < 3; ++i) y.mutable_data()[pick(rng, 0, y.numel() - 1)] = 50.0;
        const auto code = net::kernel_code(degrade::psf_synthesize(1.0, 2, 0.1, 7, seed), cfg.kernel_code_dim);

        Tape tape;
        tape.set_gradient_fault(opt.inject_fault, kFaultFactor);
        tape.backward(ops::sum(tape, net::model_forward(tape, y, code, params, cfg)));
        // Forward on a recording tape so the sign pattern of every activation input is visible.
        auto evaluate = [&](std::vector<bool>& signs) {
            Tape probe;
            const Tensor out = net::model_forward(probe, y, code, params, cfg);
            signs.clear();
            for (std::size_t n = 0; n < probe.size(); ++n) {
                if (probe.node_op(n) != "leaky_relu") continue;
                for (double v : probe.node_inputs(n)[0].data()) signs.push_back(v >= 0.0);
            }
            double total = 0.0;
            for (double v : out.data()) total += v;
            return total;
        };
        std::vector<bool> plus_signs, minus_signs;
        for (auto& [name, t] : params.tensors) {
            auto values = t.mutable_data();
            const std::size_t wanted = std::min(elements_per_tensor, values.size());
            std::size_t done = 0;
            for (std::size_t attempt = 0; done < wanted && attempt < 20 * wanted; ++attempt) {
                const std::size_t i = pick(rng, 0, values.size() - 1);
                const double original = values[i];
                values[i] = original + opt.eps;
                const double plus = evaluate(plus_signs);
                values[i] = original - opt.eps;
                const double minus = evaluate(minus_signs);
                values[i] = original;
                if (!std::isfinite(plus) || !std::isfinite(minus)) {
                    throw NumericError("model gradcheck: non-finite output while perturbing " + name);
                }
                if (plus_signs != minus_signs) {
                    ++report.kinks_skipped;
                    continue;
                }
                const double analytic = t.has_grad() ? t.grad()[i] : 0.0;
                const double numeric = (plus - minus) / (2.0 * opt.eps);
                report.worst_rel_error = std::max(report.worst_rel_error, relative_error(analytic, numeric, kModelFloor));
                ++report.checks;
                ++done;
            }
        }
    }
    return report;
}

} // namespace udc::check
