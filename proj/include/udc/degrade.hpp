#pragma once

#include "udc/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace udc::degrade {

inline constexpr double kMappingConstant = 0.25;
inline constexpr double kDefaultSaturation = 500.0;

/// Nonnegative point-spread function with odd extents, normalized to unit sum.
class Psf {
public:
    Psf(std::size_t height, std::size_t width, std::vector<double> values);

    /// Unit impulse of the given odd size.
    static Psf delta(std::size_t size);

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::span<const double> values() const noexcept { return values_; }
    double at(std::size_t y, std::size_t x) const { return values_[y * width_ + x]; }
    /// Sum of entries before normalization.
    double energy() const noexcept { return energy_; }

private:
    std::size_t height_;
    std::size_t width_;
    std::vector<double> values_;
    double energy_;
};

struct DegradationConfig {
    double noise_sigma = 0.0;
    double saturation_level = kDefaultSaturation;
    bool apply_tonemap_to_input = false;

    void validate() const;
};

struct HdrPair {
    Tensor clean;
    Tensor degraded;
    std::string psf_id;
};

/// Per-channel true convolution (flipped kernel) with reflect-padded borders.
Tensor convolve_psf(const Tensor& image, const Psf& psf);

Tensor clip_sensor(const Tensor& image, double saturation_level);

Tensor add_noise(const Tensor& image, double sigma, std::uint64_t seed);

double tone_map(double v);
double tone_unmap(double m);
Tensor tone_map(const Tensor& image);
Tensor tone_unmap(const Tensor& image);

/// Degraded = clip(psf * x + noise), tone-mapped only when the config asks for it.
HdrPair simulate(const Tensor& clean, const Psf& psf, const DegradationConfig& cfg, std::uint64_t seed,
                 std::string psf_id = "psf");

/// Gaussian core plus axis-aligned Gaussian side lobes, a stand-in for display diffraction spikes.
Psf psf_synthesize(double core_sigma, int n_sidelobes, double sidelobe_gain, std::size_t size, std::uint64_t seed);

/// Smooth low-frequency base in [0,1] plus `n_lights` bright Gaussian blobs with peaks in [10, max_radiance].
Tensor scene_synthesize(std::size_t h, std::size_t w, int n_lights, double max_radiance, std::uint64_t seed);

} // namespace udc::degrade
