#pragma once

#include "udc/tensor.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace udc::check {

/// Central difference (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) for element `index` of
/// `values`; the element is restored afterwards.
double central_difference(const std::function<double()>& f, std::span<double> values, std::size_t index, double eps);

/// Central-difference gradient of a tensor-to-scalar function.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& at, double eps);

/// |a - b| / max(|a|, |b|, floor).
double relative_error(double analytic, double numeric, double floor);

struct GradcheckOptions {
    std::uint64_t seed = 0;
    std::size_t seeds = 20;
    double eps = 1e-5;
    /// Recorded op name (as in Tape::recorded_ops) whose backward is scaled by 1.01 (negative control).
    std::string inject_fault;
};

struct GradReport {
    std::string name;
    double worst_rel_error = 0.0;
    std::size_t checks = 0;
    double tolerance = 0.0;
    /// Samples discarded because the +-eps step flipped an activation's sign (a kink).
    std::size_t kinks_skipped = 0;
    bool passed() const { return worst_rel_error <= tolerance; }
};

/// Names of every differentiable op covered by run_op_gradchecks().
std::vector<std::string> registered_ops();

/// Every registered op over `seeds` random small inputs (<= 1x4x8x8), rel err <= 1e-4.
std::vector<GradReport> run_op_gradchecks(const GradcheckOptions& opt);

/// sum(model_forward) on the micro config (channels 4, one block per stage, 1x3x16x16) with
/// randomized branch heads; a sample of elements from every parameter tensor, rel err <= 1e-3.
/// Elements whose difference step crosses a leaky_relu kink are redrawn.
GradReport run_model_gradcheck(const GradcheckOptions& opt, std::size_t elements_per_tensor = 2);

} // namespace udc::check
