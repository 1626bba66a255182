#pragma once

#include "udc/tensor.hpp"

namespace udc::ops {

/// 2-D cross-correlation. `weight` is (outC, inC, kh, kw) with odd kh/kw; `bias` may be
/// undefined or (1, outC, 1, 1). Output extents are floor((H + 2p - kh)/stride) + 1.
Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride = 1,
              std::size_t padding = 0);

Tensor upsample_nearest2x(Tape& tape, const Tensor& input);

/// Nearest 2x replication followed by a 3x3, stride 1, pad 1 convolution.
Tensor upsample2x_conv(Tape& tape, const Tensor& input, const Tensor& weight, const Tensor& bias);

// Binary elementwise ops accept equal shapes, or a (1, C, 1, 1) right-hand operand that
// is broadcast per channel.
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);

Tensor scale(Tape& tape, const Tensor& x, double factor);
Tensor add_scalar(Tape& tape, const Tensor& x, double value);
Tensor leaky_relu(Tape& tape, const Tensor& x, double slope);
Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b);
Tensor abs(Tape& tape, const Tensor& x);
Tensor square(Tape& tape, const Tensor& x);
Tensor log1p(Tape& tape, const Tensor& x);

/// x / (x + c). Caller guarantees x > -c.
Tensor tone_map(Tape& tape, const Tensor& x, double c = 0.25);

/// max(x, lo) in the forward pass; the gradient passes through unchanged.
Tensor clamp_min_straight_through(Tape& tape, const Tensor& x, double lo);

Tensor sum(Tape& tape, const Tensor& x);
Tensor mean(Tape& tape, const Tensor& x);

} // namespace udc::ops
