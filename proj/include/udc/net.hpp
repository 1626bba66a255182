#pragma once

#include "udc/degrade.hpp"
#include "udc/tensor.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace udc::net {

/// Number of resolution scales: three encoder scales plus the bottleneck.
inline constexpr std::size_t kScales = 4;

struct ModelConfig {
    std::size_t channels = 32;
    /// Residual SFT blocks per stage: encoder 0..2, bottleneck, decoder 2..0.
    std::vector<std::size_t> blocks{2, 2, 2, 8, 2, 2, 2};
    std::size_t kernel_code_dim = 5;
    std::size_t dyn_kernel = 3;
    double leaky_slope = 0.2;
    std::size_t in_channels = 3;
    /// Residual blocks per scale in the condition and kernel branches.
    std::size_t branch_blocks = 2;

    bool skip_connections = true;
    bool condition_branch = true;
    bool kernel_branch = true;
    bool global_residual = true;

    void validate() const;
    /// Feature width at `scale`: channels doubled per scale, capped at 8x.
    std::size_t channels_at(std::size_t scale) const;
};

/// Learnable weights keyed by parameter path, e.g. "base.enc.0.block.1.conv_a.weight".
struct ModelParams {
    std::map<std::string, Tensor> tensors;

    const Tensor& at(const std::string& name) const;
    bool contains(const std::string& name) const { return tensors.count(name) != 0; }
    std::size_t size() const noexcept { return tensors.size(); }
    std::size_t element_count() const;
    std::vector<Tensor> list() const;
    ModelParams clone() const;
    void zero_grad();
};

/// Per-scale SFT coefficients (alpha, beta), scale 0 is full resolution.
struct SftMaps {
    std::vector<Tensor> alpha;
    std::vector<Tensor> beta;
};

/// Per-scale dynamic filters shaped (B, C_s * k^2, H_s, W_s).
struct KernelFeatures {
    std::vector<Tensor> kernels;
};

/// alpha * x + beta with all three operands of identical shape.
Tensor sft_apply(Tape& tape, const Tensor& x, const Tensor& alpha, const Tensor& beta);

/// Per-pixel depthwise filtering: out[b,c,i,j] is the inner product of the k*k filter stored in
/// kernels[b, c*k*k : (c+1)*k*k, i, j] with the zero-padded k*k patch of features centered at (i, j).
Tensor dynamic_conv(Tape& tape, const Tensor& features, const Tensor& kernels, std::size_t k);

/// First `b` coefficients of the orthonormal 2-D DCT-II of `values` (kh x kw), zig-zag order.
std::vector<double> dct_code(std::span<const double> values, std::size_t kh, std::size_t kw, std::size_t b);
std::vector<double> kernel_code(const degrade::Psf& psf, std::size_t b);

/// Zig-zag traversal of a rows x cols grid as (row, col) pairs.
std::vector<std::pair<std::size_t, std::size_t>> zigzag_order(std::size_t rows, std::size_t cols);

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

SftMaps condition_branch_forward(Tape& tape, const Tensor& input, const ModelParams& params, const ModelConfig& cfg);
KernelFeatures kernel_branch_forward(Tape& tape, const Tensor& input, std::span<const double> code,
                                     const ModelParams& params, const ModelConfig& cfg);

Tensor model_forward(Tape& tape, const Tensor& y_hat, std::span<const double> code, const ModelParams& params,
                     const ModelConfig& cfg);
Tensor model_forward(Tape& tape, const Tensor& y_hat, const degrade::Psf& psf, const ModelParams& params,
                     const ModelConfig& cfg);

/// Gradient-free forward pass.
Tensor infer(const Tensor& y_hat, const degrade::Psf& psf, const ModelParams& params, const ModelConfig& cfg);

} // namespace udc::net
