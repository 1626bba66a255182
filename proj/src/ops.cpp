#include "udc/ops.hpp"

#include "udc/error.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace udc::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using Index = Eigen::Index;

struct ConvGeom {
    std::size_t c, h, w, kh, kw, stride, pad, oh, ow;
    std::size_t rows() const { return c * kh * kw; }
    std::size_t cols() const { return oh * ow; }
    bool is_pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

void im2col(const double* img, const ConvGeom& g, double* cols) {
    for (std::size_t ch = 0; ch < g.c; ++ch) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                double* row = cols + ((ch * g.kh + ky) * g.kw + kx) * g.cols();
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                    double* dst = row + oy * g.ow;
                    if (iy < 0 || iy >= static_cast<long>(g.h)) {
                        std::fill(dst, dst + g.ow, 0.0);
                        continue;
                    }
                    const double* src = img + (ch * g.h + static_cast<std::size_t>(iy)) * g.w;
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                        dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[ix];
                    }
                }
            }
        }
    }
}

void col2im_add(const double* cols, const ConvGeom& g, double* img) {
    for (std::size_t ch = 0; ch < g.c; ++ch) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const double* row = cols + ((ch * g.kh + ky) * g.kw + kx) * g.cols();
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                    if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
                    double* dst = img + (ch * g.h + static_cast<std::size_t>(iy)) * g.w;
                    const double* src = row + oy * g.ow;
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                        if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

enum class Broadcast { same, per_channel };

Broadcast check_binary(const char* op, const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa == sb) return Broadcast::same;
    if (sb.n == 1 && sb.c == sa.c && sb.h == 1 && sb.w == 1) return Broadcast::per_channel;
    throw ShapeError(std::string(op) + ": incompatible shapes " + sa.str() + " and " + sb.str() +
                     " (need equal shapes or a (1,C,1,1) right operand)");
}

// Shared driver for unary elementwise ops: forward f(x), backward g'(x, y).
template <class Fwd, class Deriv>
Tensor unary(Tape& tape, const char* name, const Tensor& x, Fwd fwd, Deriv deriv) {
    const auto in = x.data();
    Buffer out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
    const bool track = tape.needs_grad({&x});
    Tensor y = Tensor::from_buffer(x.shape(), std::move(out), track);
    if (track) {
        tape.record(name, {x}, y, [x, y, deriv]() mutable {
            const auto gy = y.grad();
            const auto xv = x.data();
            const auto yv = y.data();
            auto gx = x.grad_buffer();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * deriv(xv[i], yv[i]);
        });
    }
    return y;
}

} // namespace

Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
    const Shape& si = input.shape();
    const Shape& sw = weight.shape();
    if (si.c != sw.c) {
        throw ShapeError("conv2d: input has " + std::to_string(si.c) + " channels but weight " + sw.str() + " expects " +
                         std::to_string(sw.c));
    }
    if (sw.h % 2 == 0 || sw.w % 2 == 0) throw ShapeError("conv2d: kernel extents must be odd, got " + sw.str());
    if (stride == 0) throw ShapeError("conv2d: stride must be positive");
    if (bias.defined() && bias.shape() != Shape{1, sw.n, 1, 1}) {
        throw ShapeError("conv2d: bias must be (1," + std::to_string(sw.n) + ",1,1), got " + bias.shape().str());
    }
    if (si.h + 2 * padding < sw.h || si.w + 2 * padding < sw.w) {
        throw ShapeError("conv2d: zero-sized output for input " + si.str() + " and kernel " + sw.str());
    }
    ConvGeom g{si.c, si.h, si.w, sw.h, sw.w, stride, padding, 0, 0};
    g.oh = (si.h + 2 * padding - sw.h) / stride + 1;
    g.ow = (si.w + 2 * padding - sw.w) / stride + 1;
    if (g.oh == 0 || g.ow == 0 || si.n == 0) throw ShapeError("conv2d: zero-sized output");

    const Shape so{si.n, sw.n, g.oh, g.ow};
    Buffer out(so.numel());
    const ConstMatMap wm(weight.data().data(), static_cast<Index>(sw.n), static_cast<Index>(g.rows()));
    Buffer cols(g.is_pointwise() ? 0 : g.rows() * g.cols());
    const std::size_t in_stride = si.c * si.h * si.w;
    const std::size_t out_stride = sw.n * g.cols();
    for (std::size_t n = 0; n < si.n; ++n) {
        const double* src = input.data().data() + n * in_stride;
        if (!g.is_pointwise()) im2col(src, g, cols.data());
        const ConstMatMap cm(g.is_pointwise() ? src : cols.data(), static_cast<Index>(g.rows()),
                             static_cast<Index>(g.cols()));
        MatMap om(out.data() + n * out_stride, static_cast<Index>(sw.n), static_cast<Index>(g.cols()));
        om.noalias() = wm * cm;
        if (bias.defined()) {
            const auto b = bias.data();
            for (std::size_t o = 0; o < sw.n; ++o) om.row(static_cast<Index>(o)).array() += b[o];
        }
    }

    const bool track = tape.needs_grad({&input, &weight, &bias});
    Tensor y = Tensor::from_buffer(so, std::move(out), track);
    if (track) {
        std::vector<Tensor> inputs{input, weight};
        if (bias.defined()) inputs.push_back(bias);
        tape.record("conv2d", std::move(inputs), y, [input, weight, bias, y, g]() mutable {
            const Shape& sw = weight.shape();
            const Shape& si = input.shape();
            const ConstMatMap wm(weight.data().data(), static_cast<Index>(sw.n), static_cast<Index>(g.rows()));
            Buffer cols(g.rows() * g.cols());
            const std::size_t in_stride = si.c * si.h * si.w;
            const std::size_t out_stride = sw.n * g.cols();
            for (std::size_t n = 0; n < si.n; ++n) {
                const ConstMatMap gom(y.grad().data() + n * out_stride, static_cast<Index>(sw.n),
                                      static_cast<Index>(g.cols()));
                if (weight.requires_grad()) {
                    const double* src = input.data().data() + n * in_stride;
                    if (!g.is_pointwise()) im2col(src, g, cols.data());
                    const ConstMatMap cm(g.is_pointwise() ? src : cols.data(), static_cast<Index>(g.rows()),
                                         static_cast<Index>(g.cols()));
                    MatMap gw(weight.grad_buffer().data(), static_cast<Index>(sw.n), static_cast<Index>(g.rows()));
                    gw.noalias() += gom * cm.transpose();
                }
                if (bias.defined() && bias.requires_grad()) {
                    auto gb = bias.grad_buffer();
                    for (std::size_t o = 0; o < sw.n; ++o) gb[o] += gom.row(static_cast<Index>(o)).sum();
                }
                if (input.requires_grad()) {
                    double* dst = input.grad_buffer().data() + n * in_stride;
                    if (g.is_pointwise()) {
                        MatMap gi(dst, static_cast<Index>(g.rows()), static_cast<Index>(g.cols()));
                        gi.noalias() += wm.transpose() * gom;
                    } else {
                        MatMap gc(cols.data(), static_cast<Index>(g.rows()), static_cast<Index>(g.cols()));
                        gc.noalias() = wm.transpose() * gom;
                        col2im_add(cols.data(), g, dst);
                    }
                }
            }
        });
    }
    return y;
}

Tensor upsample_nearest2x(Tape& tape, const Tensor& input) {
    const Shape& s = input.shape();
    if (s.h == 0 || s.w == 0) throw ShapeError("upsample: empty input " + s.str());
    const Shape so{s.n, s.c, 2 * s.h, 2 * s.w};
    Buffer out(so.numel());
    const auto in = input.data();
    for (std::size_t p = 0; p < s.n * s.c; ++p) {
        for (std::size_t y = 0; y < so.h; ++y) {
            const double* src = in.data() + (p * s.h + y / 2) * s.w;
            double* dst = out.data() + (p * so.h + y) * so.w;
            for (std::size_t x = 0; x < so.w; ++x) dst[x] = src[x / 2];
        }
    }
    const bool track = tape.needs_grad({&input});
    Tensor y = Tensor::from_buffer(so, std::move(out), track);
    if (track) {
        tape.record("upsample_nearest2x", {input}, y, [input, y]() mutable {
            const Shape& s = input.shape();
            const auto gy = y.grad();
            auto gx = input.grad_buffer();
            const std::size_t oh = 2 * s.h, ow = 2 * s.w;
            for (std::size_t p = 0; p < s.n * s.c; ++p) {
                for (std::size_t yy = 0; yy < oh; ++yy) {
                    const double* src = gy.data() + (p * oh + yy) * ow;
                    double* dst = gx.data() + (p * s.h + yy / 2) * s.w;
                    for (std::size_t x = 0; x < ow; ++x) dst[x / 2] += src[x];
                }
            }
        });
    }
    return y;
}

Tensor upsample2x_conv(Tape& tape, const Tensor& input, const Tensor& weight, const Tensor& bias) {
    if (weight.shape().h != 3 || weight.shape().w != 3) {
        throw ShapeError("upsample2x_conv: expects a 3x3 weight, got " + weight.shape().str());
    }
    return conv2d(tape, upsample_nearest2x(tape, input), weight, bias, 1, 1);
}

namespace {

template <class Fwd, class GradA, class GradB>
Tensor binary(Tape& tape, const char* name, const Tensor& a, const Tensor& b, Fwd fwd, GradA ga_fn, GradB gb_fn) {
    const Broadcast mode = check_binary(name, a, b);
    const Shape& s = a.shape();
    const auto av = a.data();
    const auto bv = b.data();
    Buffer out(av.size());
    const std::size_t plane = s.plane();
    auto b_index = [&, mode, plane](std::size_t i) { return mode == Broadcast::same ? i : (i / plane) % s.c; };
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i], bv[b_index(i)]);
    const bool track = tape.needs_grad({&a, &b});
    Tensor y = Tensor::from_buffer(s, std::move(out), track);
    if (track) {
        tape.record(name, {a, b}, y, [a, b, y, mode, ga_fn, gb_fn]() mutable {
            const Shape& s = a.shape();
            const std::size_t plane = s.plane();
            const auto av = a.data();
            const auto bv = b.data();
            const auto gy = y.grad();
            auto bi = [&](std::size_t i) { return mode == Broadcast::same ? i : (i / plane) % s.c; };
            if (a.requires_grad()) {
                auto ga = a.grad_buffer();
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * ga_fn(av[i], bv[bi(i)]);
            }
            if (b.requires_grad()) {
                auto gb = b.grad_buffer();
                for (std::size_t i = 0; i < av.size(); ++i) gb[bi(i)] += gy[i] * gb_fn(av[i], bv[bi(i)]);
            }
        });
    }
    return y;
}

} // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    return binary(
        tape, "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
    return binary(
        tape, "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
    return binary(
        tape, "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

Tensor scale(Tape& tape, const Tensor& x, double factor) {
    return unary(
        tape, "scale", x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(Tape& tape, const Tensor& x, double value) {
    return unary(
        tape, "add_scalar", x, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor leaky_relu(Tape& tape, const Tensor& x, double slope) {
    return unary(
        tape, "leaky_relu", x, [slope](double v) { return v >= 0.0 ? v : slope * v; },
        [slope](double v, double) { return v >= 0.0 ? 1.0 : slope; });
}

Tensor abs(Tape& tape, const Tensor& x) {
    return unary(
        tape, "abs", x, [](double v) { return std::abs(v); },
        [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor square(Tape& tape, const Tensor& x) {
    return unary(
        tape, "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor log1p(Tape& tape, const Tensor& x) {
    return unary(
        tape, "log1p", x, [](double v) { return std::log1p(v); }, [](double v, double) { return 1.0 / (1.0 + v); });
}

Tensor tone_map(Tape& tape, const Tensor& x, double c) {
    return unary(
        tape, "tone_map", x, [c](double v) { return v / (v + c); },
        [c](double v, double) { return c / ((v + c) * (v + c)); });
}

Tensor clamp_min_straight_through(Tape& tape, const Tensor& x, double lo) {
    return unary(
        tape, "clamp_min_st", x, [lo](double v) { return std::max(v, lo); }, [](double, double) { return 1.0; });
}

Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
        throw ShapeError("concat_channels: mismatched shapes " + sa.str() + " and " + sb.str());
    }
    const Shape so{sa.n, sa.c + sb.c, sa.h, sa.w};
    Buffer out(so.numel());
    const std::size_t na = sa.c * sa.plane(), nb = sb.c * sb.plane();
    for (std::size_t n = 0; n < sa.n; ++n) {
        std::copy_n(a.data().data() + n * na, na, out.data() + n * (na + nb));
        std::copy_n(b.data().data() + n * nb, nb, out.data() + n * (na + nb) + na);
    }
    const bool track = tape.needs_grad({&a, &b});
    Tensor y = Tensor::from_buffer(so, std::move(out), track);
    if (track) {
        tape.record("concat_channels", {a, b}, y, [a, b, y, na, nb]() mutable {
            const auto gy = y.grad();
            const std::size_t batch = a.shape().n;
            for (std::size_t n = 0; n < batch; ++n) {
                const double* src = gy.data() + n * (na + nb);
                if (a.requires_grad()) {
                    double* ga = a.grad_buffer().data() + n * na;
                    for (std::size_t i = 0; i < na; ++i) ga[i] += src[i];
                }
                if (b.requires_grad()) {
                    double* gb = b.grad_buffer().data() + n * nb;
                    for (std::size_t i = 0; i < nb; ++i) gb[i] += src[na + i];
                }
            }
        });
    }
    return y;
}

Tensor sum(Tape& tape, const Tensor& x) {
    double total = 0.0;
    for (double v : x.data()) total += v;
    const bool track = tape.needs_grad({&x});
    Tensor y = Tensor::scalar(total, track);
    if (track) {
        tape.record("sum", {x}, y, [x, y]() mutable {
            const double g = y.grad()[0];
            for (double& v : x.grad_buffer()) v += g;
        });
    }
    return y;
}

Tensor mean(Tape& tape, const Tensor& x) {
    if (x.numel() == 0) throw ShapeError("mean of empty tensor");
    return scale(tape, sum(tape, x), 1.0 / static_cast<double>(x.numel()));
}

} // namespace udc::ops
