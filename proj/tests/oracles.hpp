#pragma once
// Independent nested-loop references used to check the optimized implementations.

#include "udc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

namespace oracle {

using udc::Shape;
using udc::Tensor;

inline Tensor random_tensor(std::mt19937_64& rng, Shape s, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(s.numel());
    for (double& x : v) x = d(rng);
    return Tensor(s, std::move(v));
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
    return worst;
}

/// Direct cross-correlation with zero padding.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, std::size_t stride, std::size_t pad) {
    const Shape& sx = x.shape();
    const Shape& sw = w.shape();
    const std::size_t oh = (sx.h + 2 * pad - sw.h) / stride + 1;
    const std::size_t ow = (sx.w + 2 * pad - sw.w) / stride + 1;
    std::vector<double> out(sx.n * sw.n * oh * ow, 0.0);
    for (std::size_t n = 0; n < sx.n; ++n)
        for (std::size_t o = 0; o < sw.n; ++o)
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j) {
                    double acc = bias ? bias->data()[o] : 0.0;
                    for (std::size_t c = 0; c < sx.c; ++c)
                        for (std::size_t ky = 0; ky < sw.h; ++ky)
                            for (std::size_t kx = 0; kx < sw.w; ++kx) {
                                const long yy = static_cast<long>(i * stride + ky) - static_cast<long>(pad);
                                const long xx = static_cast<long>(j * stride + kx) - static_cast<long>(pad);
                                if (yy < 0 || xx < 0 || yy >= static_cast<long>(sx.h) || xx >= static_cast<long>(sx.w))
                                    continue;
                                acc += x.at(n, c, yy, xx) * w.at(o, c, ky, kx);
                            }
                    out[((n * sw.n + o) * oh + i) * ow + j] = acc;
                }
    return Tensor({sx.n, sw.n, oh, ow}, std::move(out));
}

inline Tensor replicate2x(const Tensor& x) {
    const Shape& s = x.shape();
    std::vector<double> out(s.n * s.c * 4 * s.h * s.w);
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t y = 0; y < 2 * s.h; ++y)
                for (std::size_t xx = 0; xx < 2 * s.w; ++xx)
                    out[((n * s.c + c) * 2 * s.h + y) * 2 * s.w + xx] = x.at(n, c, y / 2, xx / 2);
    return Tensor({s.n, s.c, 2 * s.h, 2 * s.w}, std::move(out));
}

/// Mirror index without repeating the edge sample: -1 -> 1, n -> n - 2.
inline std::size_t reflect(long i, long n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * (n - 1) - i;
    }
    return static_cast<std::size_t>(i);
}

/// True convolution sum_{u,v} k[u,v] x[i - u + r, j - v + r] with reflected borders.
inline Tensor convolve_reflect(const Tensor& x, const std::vector<double>& k, std::size_t kh, std::size_t kw) {
    const Shape& s = x.shape();
    const long ry = static_cast<long>(kh / 2), rx = static_cast<long>(kw / 2);
    std::vector<double> out(s.numel(), 0.0);
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t i = 0; i < s.h; ++i)
                for (std::size_t j = 0; j < s.w; ++j) {
                    double acc = 0.0;
                    for (std::size_t u = 0; u < kh; ++u)
                        for (std::size_t v = 0; v < kw; ++v) {
                            const long yy = static_cast<long>(i) - static_cast<long>(u) + ry;
                            const long xx = static_cast<long>(j) - static_cast<long>(v) + rx;
                            acc += k[u * kw + v] *
                                   x.at(n, c, reflect(yy, static_cast<long>(s.h)), reflect(xx, static_cast<long>(s.w)));
                        }
                    out[((n * s.c + c) * s.h + i) * s.w + j] = acc;
                }
    return Tensor(s, std::move(out));
}

/// Per-pixel depthwise filtering, filters laid out as channel c * k * k + ty * k + tx.
inline Tensor dynamic_conv(const Tensor& f, const Tensor& kernels, std::size_t k) {
    const Shape& s = f.shape();
    const long r = static_cast<long>(k / 2);
    std::vector<double> out(s.numel(), 0.0);
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t i = 0; i < s.h; ++i)
                for (std::size_t j = 0; j < s.w; ++j) {
                    double acc = 0.0;
                    for (std::size_t ty = 0; ty < k; ++ty)
                        for (std::size_t tx = 0; tx < k; ++tx) {
                            const long yy = static_cast<long>(i + ty) - r;
                            const long xx = static_cast<long>(j + tx) - r;
                            const double fv = (yy < 0 || xx < 0 || yy >= static_cast<long>(s.h) ||
                                               xx >= static_cast<long>(s.w))
                                                  ? 0.0
                                                  : f.at(n, c, yy, xx);
                            acc += fv * kernels.at(n, c * k * k + ty * k + tx, i, j);
                        }
                    out[((n * s.c + c) * s.h + i) * s.w + j] = acc;
                }
    return Tensor(s, std::move(out));
}

inline double map(double v) { return v / (v + 0.25); }

inline double psnr_mapped(const Tensor& y, const Tensor& x) {
    double mse = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) {
        const double d = map(y.data()[i]) - map(x.data()[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(y.numel());
    return 10.0 * std::log10(1.0 / mse);
}

/// SSIM straight from the definition: for each valid 11x11 window, Gaussian-weighted
/// means, variances and covariance, then the usual ratio; averaged over windows and channels.
inline double ssim(const Tensor& a, const Tensor& b) {
    constexpr int kWin = 11;
    const double sigma = 1.5;
    double w[kWin][kWin];
    double total = 0.0;
    for (int u = 0; u < kWin; ++u)
        for (int v = 0; v < kWin; ++v) {
            w[u][v] = std::exp(-((u - 5) * (u - 5) + (v - 5) * (v - 5)) / (2.0 * sigma * sigma));
            total += w[u][v];
        }
    for (auto& row : w)
        for (double& v : row) v /= total;
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const Shape& s = a.shape();
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t i = 0; i + kWin <= s.h; ++i)
                for (std::size_t j = 0; j + kWin <= s.w; ++j) {
                    double ma = 0, mb = 0;
                    for (int u = 0; u < kWin; ++u)
                        for (int v = 0; v < kWin; ++v) {
                            ma += w[u][v] * a.at(n, c, i + u, j + v);
                            mb += w[u][v] * b.at(n, c, i + u, j + v);
                        }
                    double va = 0, vb = 0, cov = 0;
                    for (int u = 0; u < kWin; ++u)
                        for (int v = 0; v < kWin; ++v) {
                            const double da = a.at(n, c, i + u, j + v) - ma;
                            const double db = b.at(n, c, i + u, j + v) - mb;
                            va += w[u][v] * da * da;
                            vb += w[u][v] * db * db;
                            cov += w[u][v] * da * db;
                        }
                    sum += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    ++count;
                }
    return sum / static_cast<double>(count);
}

} // namespace oracle
