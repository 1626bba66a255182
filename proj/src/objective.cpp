#include "udc/objective.hpp"

#include "udc/degrade.hpp"
#include "udc/error.hpp"
#include "udc/ops.hpp"

#include <algorithm>
#include <cctype>
#include <array>
#include <cmath>
#include <vector>

namespace udc::objective {

std::string to_string(LossKind kind) {
    switch (kind) {
    case LossKind::MappingL1: return "mapping_l1";
    case LossKind::MappingL2: return "mapping_l2";
    case LossKind::PlainL1: return "l1";
    }
    return "unknown";
}

LossKind parse_loss_kind(std::string_view text) {
    std::string s(text);
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "mapping_l1" || s == "mappingl1") return LossKind::MappingL1;
    if (s == "mapping_l2" || s == "mappingl2") return LossKind::MappingL2;
    if (s == "l1" || s == "plain_l1" || s == "plainl1") return LossKind::PlainL1;
    throw ConfigError("unknown loss kind '" + std::string(text) + "' (expected mapping_l1, mapping_l2 or l1)");
}

namespace {

void check_pair(const char* what, const Tensor& y, const Tensor& x) {
    if (y.shape() != x.shape()) {
        throw ShapeError(std::string(what) + ": shape mismatch " + y.shape().str() + " vs " + x.shape().str());
    }
    auto negative = [](double v) { return v < 0.0; };
    if (std::any_of(y.data().begin(), y.data().end(), negative) ||
        std::any_of(x.data().begin(), x.data().end(), negative)) {
        throw std::invalid_argument(std::string(what) + ": inputs must be nonnegative");
    }
}

Tensor mapped_difference(Tape& tape, const Tensor& y, const Tensor& x) {
    Tensor target = degrade::tone_map(x);
    return ops::sub(tape, ops::tone_map(tape, y, degrade::kMappingConstant), target);
}

} // namespace

Tensor mapping_l1(Tape& tape, const Tensor& y, const Tensor& x) {
    check_pair("mapping_l1", y, x);
    return ops::mean(tape, ops::abs(tape, mapped_difference(tape, y, x)));
}

Tensor mapping_l2(Tape& tape, const Tensor& y, const Tensor& x) {
    check_pair("mapping_l2", y, x);
    return ops::mean(tape, ops::square(tape, mapped_difference(tape, y, x)));
}

Tensor plain_l1(Tape& tape, const Tensor& y, const Tensor& x) {
    check_pair("plain_l1", y, x);
    return ops::mean(tape, ops::abs(tape, ops::sub(tape, y, x.detached())));
}

Tensor loss(Tape& tape, LossKind kind, const Tensor& y, const Tensor& x) {
    switch (kind) {
    case LossKind::MappingL1: return mapping_l1(tape, y, x);
    case LossKind::MappingL2: return mapping_l2(tape, y, x);
    case LossKind::PlainL1: return plain_l1(tape, y, x);
    }
    throw std::invalid_argument("unknown loss kind");
}

Tensor training_loss(Tape& tape, LossKind kind, const Tensor& prediction, const Tensor& target) {
    return loss(tape, kind, ops::clamp_min_straight_through(tape, prediction, 0.0), target);
}

double psnr_tonemapped(const Tensor& y, const Tensor& x) {
    check_pair("psnr_tonemapped", y, x);
    const auto yv = y.data();
    const auto xv = x.data();
    double mse = 0.0;
    for (std::size_t i = 0; i < yv.size(); ++i) {
        const double d = degrade::tone_map(yv[i]) - degrade::tone_map(xv[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(yv.size());
    if (mse < 1e-12) return kPsnrCapDb;
    return std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / mse));
}

namespace {

constexpr std::size_t kWindow = 11;
constexpr double kWindowSigma = 1.5;

std::array<double, kWindow> gaussian_taps() {
    std::array<double, kWindow> g{};
    double total = 0.0;
    for (std::size_t i = 0; i < kWindow; ++i) {
        const double d = static_cast<double>(i) - static_cast<double>(kWindow / 2);
        g[i] = std::exp(-d * d / (2.0 * kWindowSigma * kWindowSigma));
        total += g[i];
    }
    for (double& v : g) v /= total;
    return g;
}

// Separable 'valid' Gaussian filter of one h x w plane.
std::vector<double> filter_valid(const std::vector<double>& plane, std::size_t h, std::size_t w,
                                 const std::array<double, kWindow>& g) {
    const std::size_t oh = h - kWindow + 1, ow = w - kWindow + 1;
    std::vector<double> rows(h * ow, 0.0);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (std::size_t k = 0; k < kWindow; ++k) acc += g[k] * plane[y * w + x + k];
            rows[y * ow + x] = acc;
        }
    }
    std::vector<double> out(oh * ow, 0.0);
    for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (std::size_t k = 0; k < kWindow; ++k) acc += g[k] * rows[(y + k) * ow + x];
            out[y * ow + x] = acc;
        }
    }
    return out;
}

} // namespace

double ssim(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw ShapeError("ssim: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    const Shape& s = a.shape();
    if (s.h < kWindow || s.w < kWindow) throw ShapeError("ssim: image " + s.str() + " is smaller than the 11x11 window");
    constexpr double c1 = (0.01 * 1.0) * (0.01 * 1.0);
    constexpr double c2 = (0.03 * 1.0) * (0.03 * 1.0);
    const auto g = gaussian_taps();
    const std::size_t plane = s.plane();
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t p = 0; p < s.n * s.c; ++p) {
        std::vector<double> pa(a.data().begin() + static_cast<std::ptrdiff_t>(p * plane),
                               a.data().begin() + static_cast<std::ptrdiff_t>((p + 1) * plane));
        std::vector<double> pb(b.data().begin() + static_cast<std::ptrdiff_t>(p * plane),
                               b.data().begin() + static_cast<std::ptrdiff_t>((p + 1) * plane));
        std::vector<double> aa(plane), bb(plane), ab(plane);
        for (std::size_t i = 0; i < plane; ++i) {
            aa[i] = pa[i] * pa[i];
            bb[i] = pb[i] * pb[i];
            ab[i] = pa[i] * pb[i];
        }
        const auto mu_a = filter_valid(pa, s.h, s.w, g);
        const auto mu_b = filter_valid(pb, s.h, s.w, g);
        const auto e_aa = filter_valid(aa, s.h, s.w, g);
        const auto e_bb = filter_valid(bb, s.h, s.w, g);
        const auto e_ab = filter_valid(ab, s.h, s.w, g);
        for (std::size_t i = 0; i < mu_a.size(); ++i) {
            const double va = e_aa[i] - mu_a[i] * mu_a[i];
            const double vb = e_bb[i] - mu_b[i] * mu_b[i];
            const double cov = e_ab[i] - mu_a[i] * mu_b[i];
            total += ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2)) /
                     ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
        }
        count += mu_a.size();
    }
    return total / static_cast<double>(count);
}

double ssim_tonemapped(const Tensor& y, const Tensor& x) {
    check_pair("ssim_tonemapped", y, x);
    return ssim(degrade::tone_map(y), degrade::tone_map(x));
}

} // namespace udc::objective
