#pragma once

#include "udc/degrade.hpp"
#include "udc/net.hpp"
#include "udc/tensor.hpp"
#include "udc/train.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace udc::io {

// UDCT layout: "UDCT" | version u8 = 1 | dtype u8 (0 f32, 1 f64) | ndim u8 (1..4) | reserved u8 = 0 |
// ndim x u64 LE extents | row-major LE payload.
inline constexpr std::uint8_t kUdctVersion = 1;
inline constexpr std::size_t kUdctHeaderBytes = 8;

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };

/// Raw contents of a UDCT file; values widened to f64.
struct UdctArray {
    Dtype dtype = Dtype::f64;
    std::vector<std::uint64_t> dims;
    std::vector<double> values;
};

std::vector<std::uint8_t> encode_udct(const UdctArray& array);
/// Throws FormatError with the byte offset of the first invalid or missing byte.
UdctArray decode_udct(std::span<const std::uint8_t> bytes);

void write_udct_array(const std::string& path, const UdctArray& array);
UdctArray read_udct_array(const std::string& path);

/// Writes the tensor as a 4-D array.
void write_udct(const std::string& path, const Tensor& tensor, Dtype dtype = Dtype::f64);
/// Reads a 1-4 dimensional array as a tensor, left-padding missing extents with 1.
Tensor read_udct(const std::string& path);

void write_psf(const std::string& path, const degrade::Psf& psf);
degrade::Psf read_psf(const std::string& path);

/// 8-bit RGB PNG of round(Mapping(I) * 255) for a (1,3,H,W) radiance tensor.
void export_preview(const Tensor& image, const std::string& path);
std::uint8_t preview_pixel(double radiance);

/// Dataset directory: clean/NNNN.udct, degraded/NNNN.udct, psf.udct, meta.txt.
train::Dataset load_dataset(const std::string& dir);
void write_dataset(const std::string& dir, const train::Dataset& data, const std::string& meta);

struct RunConfig {
    net::ModelConfig model;
    train::TrainConfig train;
    degrade::DegradationConfig degrade;
};

/// Flat `section.key = value` lines; '#' starts a comment. Unknown keys, malformed values
/// and invariant violations raise ConfigError carrying the line number.
RunConfig parse_config_text(const std::string& text);
RunConfig parse_config(const std::string& path);
std::string format_config(const RunConfig& cfg);

struct Checkpoint {
    net::ModelConfig model;
    net::ModelParams params;
    std::size_t iteration = 0;
    bool ema = false;
};

/// Directory of <param path>.udct tensors plus manifest.txt.
void save_checkpoint(const std::string& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& dir);

} // namespace udc::io
