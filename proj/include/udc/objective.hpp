#pragma once

#include "udc/tensor.hpp"

#include <string>
#include <string_view>

namespace udc::objective {

enum class LossKind { MappingL1, MappingL2, PlainL1 };

std::string to_string(LossKind kind);
/// Accepts "mapping_l1", "mapping_l2", "l1" (case-insensitive).
LossKind parse_loss_kind(std::string_view text);

inline constexpr double kPsnrCapDb = 120.0;

// Differentiable losses over a prediction Y and a target X; mean reduction; both inputs >= 0.
Tensor mapping_l1(Tape& tape, const Tensor& y, const Tensor& x);
Tensor mapping_l2(Tape& tape, const Tensor& y, const Tensor& x);
Tensor plain_l1(Tape& tape, const Tensor& y, const Tensor& x);
Tensor loss(Tape& tape, LossKind kind, const Tensor& y, const Tensor& x);

/// Loss on raw network output: negative predictions are floored at zero with a
/// straight-through gradient before the loss is taken.
Tensor training_loss(Tape& tape, LossKind kind, const Tensor& prediction, const Tensor& target);

/// PSNR in dB of the tone-mapped images with peak 1.0; capped at 120 dB.
double psnr_tonemapped(const Tensor& y, const Tensor& x);

/// Mean single-scale SSIM of the tone-mapped images (11x11 Gaussian window, sigma 1.5,
/// K1 = 0.01, K2 = 0.03, L = 1), averaged over valid window positions and channels.
double ssim_tonemapped(const Tensor& y, const Tensor& x);

/// SSIM of two images already in display range.
double ssim(const Tensor& a, const Tensor& b);

} // namespace udc::objective
