#include "udc/degrade.hpp"

#include "udc/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

namespace udc::degrade {

Psf::Psf(std::size_t height, std::size_t width, std::vector<double> values)
    : height_(height), width_(width), values_(std::move(values)), energy_(0.0) {
    if (height_ == 0 || width_ == 0 || height_ % 2 == 0 || width_ % 2 == 0) {
        throw ShapeError("psf extents must be odd and positive, got " + std::to_string(height_) + "x" +
                         std::to_string(width_));
    }
    if (values_.size() != height_ * width_) throw ShapeError("psf value count does not match its extents");
    for (double v : values_) {
        if (!std::isfinite(v) || v < 0.0) throw std::invalid_argument("psf entries must be finite and nonnegative");
    }
    energy_ = std::accumulate(values_.begin(), values_.end(), 0.0);
    if (!(energy_ > 0.0)) throw std::invalid_argument("psf has zero energy");
    for (double& v : values_) v /= energy_;
}

Psf Psf::delta(std::size_t size) {
    std::vector<double> v(size * size, 0.0);
    v[(size / 2) * size + size / 2] = 1.0;
    return Psf(size, size, std::move(v));
}

void DegradationConfig::validate() const {
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
        throw ConfigError("degrade.noise_sigma must be >= 0");
    }
    if (!(saturation_level > 0.0 && saturation_level <= 1e6)) {
        throw ConfigError("degrade.saturation_level must lie in (0, 1e6]");
    }
}

namespace {

std::size_t reflect(long p, std::size_t n) {
    if (n == 1) return 0;
    const long last = static_cast<long>(n) - 1;
    while (p < 0 || p > last) p = p < 0 ? -p : 2 * last - p;
    return static_cast<std::size_t>(p);
}

Tensor map_values(const Tensor& image, double (*fn)(double)) {
    std::vector<double> out(image.data().begin(), image.data().end());
    for (double& v : out) v = fn(v);
    return Tensor(image.shape(), std::move(out));
}

} // namespace

Tensor convolve_psf(const Tensor& image, const Psf& psf) {
    const Shape& s = image.shape();
    if (psf.height() > s.h || psf.width() > s.w) {
        throw ShapeError("psf " + std::to_string(psf.height()) + "x" + std::to_string(psf.width()) +
                         " is larger than image " + s.str());
    }
    const long cy = static_cast<long>(psf.height() / 2);
    const long cx = static_cast<long>(psf.width() / 2);
    std::vector<double> out(s.numel(), 0.0);
    const auto in = image.data();

    // Precomputed reflected column indices per kernel column.
    std::vector<std::size_t> col_index(psf.width() * s.w);
    for (std::size_t j = 0; j < psf.width(); ++j) {
        for (std::size_t x = 0; x < s.w; ++x) {
            col_index[j * s.w + x] = reflect(static_cast<long>(x) - (static_cast<long>(j) - cx), s.w);
        }
    }
    for (std::size_t p = 0; p < s.n * s.c; ++p) {
        const double* src = in.data() + p * s.plane();
        double* dst = out.data() + p * s.plane();
        for (std::size_t y = 0; y < s.h; ++y) {
            for (std::size_t i = 0; i < psf.height(); ++i) {
                const double* row = src + reflect(static_cast<long>(y) - (static_cast<long>(i) - cy), s.h) * s.w;
                for (std::size_t j = 0; j < psf.width(); ++j) {
                    const double k = psf.at(i, j);
                    if (k == 0.0) continue;
                    const std::size_t* cols = col_index.data() + j * s.w;
                    for (std::size_t x = 0; x < s.w; ++x) dst[y * s.w + x] += k * row[cols[x]];
                }
            }
        }
    }
    return Tensor(s, std::move(out));
}

Tensor clip_sensor(const Tensor& image, double saturation_level) {
    if (!(saturation_level > 0.0)) throw std::invalid_argument("saturation level must be positive");
    std::vector<double> out(image.data().begin(), image.data().end());
    for (double& v : out) v = std::min(std::max(v, 0.0), saturation_level);
    return Tensor(image.shape(), std::move(out));
}

Tensor add_noise(const Tensor& image, double sigma, std::uint64_t seed) {
    if (!(sigma >= 0.0)) throw std::invalid_argument("noise sigma must be >= 0");
    if (sigma == 0.0) return image.detached();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, sigma);
    std::vector<double> out(image.data().begin(), image.data().end());
    for (double& v : out) v += noise(rng);
    return Tensor(image.shape(), std::move(out));
}

double tone_map(double v) {
    if (v < 0.0) throw std::domain_error("tone_map expects nonnegative radiance, got " + std::to_string(v));
    return v / (v + kMappingConstant);
}

double tone_unmap(double m) {
    if (!(m >= 0.0 && m < 1.0)) throw std::domain_error("tone_unmap expects values in [0,1), got " + std::to_string(m));
    return kMappingConstant * m / (1.0 - m);
}

Tensor tone_map(const Tensor& image) {
    return map_values(image, [](double v) { return tone_map(v); });
}

Tensor tone_unmap(const Tensor& image) {
    return map_values(image, [](double v) { return tone_unmap(v); });
}

HdrPair simulate(const Tensor& clean, const Psf& psf, const DegradationConfig& cfg, std::uint64_t seed,
                 std::string psf_id) {
    cfg.validate();
    for (double v : clean.data()) {
        if (!std::isfinite(v) || v < 0.0) throw std::invalid_argument("simulate: clean image must be finite and >= 0");
    }
    Tensor degraded = clip_sensor(add_noise(convolve_psf(clean, psf), cfg.noise_sigma, seed), cfg.saturation_level);
    if (cfg.apply_tonemap_to_input) degraded = tone_map(degraded);
    return {clean.detached(), std::move(degraded), std::move(psf_id)};
}

Psf psf_synthesize(double core_sigma, int n_sidelobes, double sidelobe_gain, std::size_t size, std::uint64_t seed) {
    if (size < 3 || size % 2 == 0) throw std::invalid_argument("psf size must be odd and >= 3");
    if (!(core_sigma >= 0.0) || n_sidelobes < 0 || !(sidelobe_gain >= 0.0)) {
        throw std::invalid_argument("psf parameters must be nonnegative");
    }
    const long half = static_cast<long>(size / 2);
    std::vector<double> k(size * size, 0.0);
    auto add_lobe = [&](double cy, double cx, double sigma, double amp) {
        for (long y = -half; y <= half; ++y) {
            for (long x = -half; x <= half; ++x) {
                const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                const double v = sigma > 0.0 ? std::exp(-d2 / (2.0 * sigma * sigma)) : (d2 == 0.0 ? 1.0 : 0.0);
                k[static_cast<std::size_t>((y + half) * static_cast<long>(size) + (x + half))] += amp * v;
            }
        }
    };
    add_lobe(0.0, 0.0, core_sigma, 1.0);

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double lobe_sigma = 1.5 * std::max(core_sigma, 0.5);
    static constexpr int kDirs[4][2] = {{0, 1}, {0, -1}, {1, 0}, {-1, 0}};
    for (int i = 0; i < n_sidelobes; ++i) {
        const double dist = 2.0 + unit(rng) * std::max(0.0, static_cast<double>(half) - 2.0);
        const double amp = sidelobe_gain * (0.5 + 0.5 * unit(rng));
        add_lobe(kDirs[i % 4][0] * dist, kDirs[i % 4][1] * dist, lobe_sigma, amp);
    }
    return Psf(size, size, std::move(k));
}

Tensor scene_synthesize(std::size_t h, std::size_t w, int n_lights, double max_radiance, std::uint64_t seed) {
    if (h == 0 || w == 0) throw ShapeError("scene extents must be positive");
    if (n_lights > 0 && !(max_radiance >= 10.0)) throw std::invalid_argument("max_radiance must be >= 10 with lights");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double two_pi = 2.0 * std::numbers::pi;
    std::vector<double> img(3 * h * w);

    const double brightness = 0.2 + 0.8 * unit(rng);
    for (std::size_t c = 0; c < 3; ++c) {
        constexpr int kWaves = 3;
        double amp[kWaves], fy[kWaves], fx[kWaves], phase[kWaves];
        double amp_total = 0.0;
        for (int k = 0; k < kWaves; ++k) {
            amp[k] = unit(rng);
            fy[k] = 3.0 * unit(rng);
            fx[k] = 3.0 * unit(rng);
            phase[k] = two_pi * unit(rng);
            amp_total += amp[k];
        }
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                double v = 0.0;
                for (int k = 0; k < kWaves; ++k) {
                    v += amp[k] * std::cos(two_pi * (fy[k] * y / h + fx[k] * x / w) + phase[k]);
                }
                img[(c * h + y) * w + x] = brightness * 0.5 * (1.0 + v / amp_total);
            }
        }
    }

    const double log_lo = std::log(10.0);
    const double log_hi = std::log(std::max(max_radiance, 10.0));
    for (int i = 0; i < n_lights; ++i) {
        const long cy = static_cast<long>(unit(rng) * static_cast<double>(h)) % static_cast<long>(h);
        const long cx = static_cast<long>(unit(rng) * static_cast<double>(w)) % static_cast<long>(w);
        const double sigma = 0.8 + 1.7 * unit(rng);
        const double peak = std::exp(log_lo + (log_hi - log_lo) * unit(rng));
        double tint[3];
        const std::size_t dominant = static_cast<std::size_t>(unit(rng) * 3.0) % 3;
        for (std::size_t c = 0; c < 3; ++c) tint[c] = c == dominant ? 1.0 : 0.6 + 0.4 * unit(rng);
        const long reach = static_cast<long>(std::ceil(4.0 * sigma));
        for (long y = std::max(0L, cy - reach); y <= std::min<long>(static_cast<long>(h) - 1, cy + reach); ++y) {
            for (long x = std::max(0L, cx - reach); x <= std::min<long>(static_cast<long>(w) - 1, cx + reach); ++x) {
                const double g = std::exp(-static_cast<double>((y - cy) * (y - cy) + (x - cx) * (x - cx)) /
                                          (2.0 * sigma * sigma));
                for (std::size_t c = 0; c < 3; ++c) {
                    img[(c * h + static_cast<std::size_t>(y)) * w + static_cast<std::size_t>(x)] += peak * tint[c] * g;
                }
            }
        }
    }
    if (n_lights > 0) {
        for (double& v : img) v = std::min(v, max_radiance);
    }
    return Tensor({1, 3, h, w}, std::move(img));
}

} // namespace udc::degrade
