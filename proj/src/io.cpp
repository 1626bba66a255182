#include "udc/io.hpp"

#include "udc/error.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

namespace fs = std::filesystem;

namespace udc::io {

namespace {

constexpr char kMagic[4] = {'U', 'D', 'C', 'T'};

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

std::size_t dtype_size(Dtype d) { return d == Dtype::f32 ? 4 : 8; }

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for " + path);
}

std::string read_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

std::vector<std::uint8_t> encode_udct(const UdctArray& array) {
    if (array.dims.empty() || array.dims.size() > 4) throw ShapeError("UDCT arrays have 1 to 4 dimensions");
    std::uint64_t count = 1;
    for (auto d : array.dims) count *= d;
    if (count != array.values.size()) throw ShapeError("UDCT value count does not match dims");

    std::vector<std::uint8_t> out;
    out.reserve(kUdctHeaderBytes + 8 * array.dims.size() + count * dtype_size(array.dtype));
    out.insert(out.end(), kMagic, kMagic + 4);
    out.push_back(kUdctVersion);
    out.push_back(static_cast<std::uint8_t>(array.dtype));
    out.push_back(static_cast<std::uint8_t>(array.dims.size()));
    out.push_back(0);
    for (auto d : array.dims) put_u64(out, d);
    for (double v : array.values) {
        if (array.dtype == Dtype::f64) {
            put_u64(out, std::bit_cast<std::uint64_t>(v));
        } else {
            const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
            for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
        }
    }
    return out;
}

UdctArray decode_udct(std::span<const std::uint8_t> bytes) {
    const std::size_t size = bytes.size();
    for (std::size_t i = 0; i < 4; ++i) {
        if (i >= size) throw FormatError("truncated header", size);
        if (bytes[i] != static_cast<std::uint8_t>(kMagic[i])) throw FormatError("bad magic", i);
    }
    if (size < kUdctHeaderBytes) throw FormatError("truncated header", size);
    if (bytes[4] != kUdctVersion) throw FormatError("unsupported version " + std::to_string(bytes[4]), 4);
    if (bytes[5] > 1) throw FormatError("unsupported dtype " + std::to_string(bytes[5]), 5);
    const std::size_t ndim = bytes[6];
    if (ndim < 1 || ndim > 4) throw FormatError("invalid ndim " + std::to_string(ndim), 6);
    if (bytes[7] != 0) throw FormatError("reserved byte must be zero", 7);

    UdctArray out;
    out.dtype = static_cast<Dtype>(bytes[5]);
    std::size_t offset = kUdctHeaderBytes;
    std::uint64_t count = 1;
    for (std::size_t i = 0; i < ndim; ++i) {
        if (offset + 8 > size) throw FormatError("truncated dims", size);
        const std::uint64_t d = get_u64(bytes.data() + offset);
        if (d != 0 && count > std::numeric_limits<std::uint64_t>::max() / d) {
            throw FormatError("dims overflow", offset);
        }
        count *= d;
        out.dims.push_back(d);
        offset += 8;
    }
    const std::size_t elem = dtype_size(out.dtype);
    if (count > (size - offset) / elem) {
        throw FormatError("payload truncated: expected " + std::to_string(count * elem) + " bytes", size);
    }
    const std::size_t end = offset + count * elem;
    if (end != size) throw FormatError("trailing bytes after payload", end);

    out.values.resize(count);
    for (std::size_t i = 0; i < count; ++i, offset += elem) {
        if (out.dtype == Dtype::f64) {
            out.values[i] = std::bit_cast<double>(get_u64(bytes.data() + offset));
        } else {
            std::uint32_t bits = 0;
            for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[offset + b]) << (8 * b);
            out.values[i] = static_cast<double>(std::bit_cast<float>(bits));
        }
    }
    return out;
}

void write_udct_array(const std::string& path, const UdctArray& array) { write_file(path, encode_udct(array)); }

UdctArray read_udct_array(const std::string& path) {
    const auto bytes = read_file(path);
    try {
        return decode_udct(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what(), e.offset());
    }
}

void write_udct(const std::string& path, const Tensor& tensor, Dtype dtype) {
    const Shape& s = tensor.shape();
    UdctArray a{dtype, {s.n, s.c, s.h, s.w}, std::vector<double>(tensor.data().begin(), tensor.data().end())};
    write_udct_array(path, a);
}

Tensor read_udct(const std::string& path) {
    UdctArray a = read_udct_array(path);
    std::array<std::size_t, 4> d{1, 1, 1, 1};
    std::copy(a.dims.begin(), a.dims.end(), d.begin() + static_cast<std::ptrdiff_t>(4 - a.dims.size()));
    return Tensor({d[0], d[1], d[2], d[3]}, std::move(a.values));
}

void write_psf(const std::string& path, const degrade::Psf& psf) {
    write_udct_array(path, {Dtype::f64, {psf.height(), psf.width()}, {psf.values().begin(), psf.values().end()}});
}

degrade::Psf read_psf(const std::string& path) {
    UdctArray a = read_udct_array(path);
    const std::size_t n = a.dims.size();
    for (std::size_t i = 0; i + 2 < n; ++i) {
        if (a.dims[i] != 1) throw DataError(path + ": psf must be a 2-D array");
    }
    const std::size_t h = n >= 2 ? a.dims[n - 2] : 1;
    const std::size_t w = a.dims[n - 1];
    try {
        return degrade::Psf(h, w, std::move(a.values));
    } catch (const std::invalid_argument& e) {
        throw DataError(path + ": " + e.what());
    }
}

std::uint8_t preview_pixel(double radiance) {
    const double m = radiance > 0.0 ? degrade::tone_map(radiance) : 0.0;
    return static_cast<std::uint8_t>(std::clamp(std::round(m * 255.0), 0.0, 255.0));
}

void export_preview(const Tensor& image, const std::string& path) {
    const Shape& s = image.shape();
    if (s.n != 1 || s.c != 3) throw ShapeError("preview needs a (1,3,H,W) tensor, got " + s.str());
    std::vector<std::uint8_t> rgb(3 * s.plane());
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < s.plane(); ++i) rgb[3 * i + c] = preview_pixel(image.data()[c * s.plane() + i]);
    }
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(s.w);
    img.height = static_cast<png_uint_32>(s.h);
    img.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.c_str(), 0, rgb.data(), 0, nullptr)) {
        throw DataError("cannot write preview " + path + ": " + img.message);
    }
}

train::Dataset load_dataset(const std::string& dir) {
    const fs::path root(dir);
    if (!fs::is_directory(root)) throw DataError("dataset directory not found: " + dir);
    if (!fs::exists(root / "psf.udct")) throw DataError("dataset has no psf.udct: " + dir);
    auto list = [&](const char* sub) {
        std::vector<std::string> names;
        if (!fs::is_directory(root / sub)) throw DataError("dataset has no " + std::string(sub) + "/ directory");
        for (const auto& e : fs::directory_iterator(root / sub)) {
            if (e.path().extension() == ".udct") names.push_back(e.path().stem().string());
        }
        std::sort(names.begin(), names.end());
        return names;
    };
    train::Dataset data;
    data.names = list("clean");
    if (list("degraded") != data.names) throw DataError("clean/ and degraded/ file sets differ in " + dir);
    if (data.names.empty()) throw DataError("dataset is empty: " + dir);
    data.psf = read_psf((root / "psf.udct").string());
    for (const auto& name : data.names) {
        Tensor clean = read_udct((root / "clean" / (name + ".udct")).string());
        Tensor degraded = read_udct((root / "degraded" / (name + ".udct")).string());
        if (clean.shape() != degraded.shape() || clean.shape().c != 3) {
            throw DataError("pair " + name + " has mismatched or non-RGB shapes");
        }
        data.clean.push_back(std::move(clean));
        data.degraded.push_back(std::move(degraded));
    }
    return data;
}

void write_dataset(const std::string& dir, const train::Dataset& data, const std::string& meta) {
    const fs::path root(dir);
    fs::create_directories(root / "clean");
    fs::create_directories(root / "degraded");
    for (std::size_t i = 0; i < data.size(); ++i) {
        write_udct((root / "clean" / (data.names[i] + ".udct")).string(), data.clean[i]);
        write_udct((root / "degraded" / (data.names[i] + ".udct")).string(), data.degraded[i]);
    }
    write_psf((root / "psf.udct").string(), data.psf);
    std::ofstream out(root / "meta.txt");
    out << meta;
    if (!out) throw DataError("cannot write meta.txt in " + dir);
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

double to_double(const std::string& v, std::size_t line) {
    char* end = nullptr;
    errno = 0;
    const double d = std::strtod(v.c_str(), &end);
    if (v.empty() || *end != '\0' || errno == ERANGE || !std::isfinite(d)) {
        throw ConfigError("expected a number, got '" + v + "'", line);
    }
    return d;
}

std::uint64_t to_uint(const std::string& v, std::size_t line) {
    // Accept "5e3" style integers as long as they are exact.
    const double d = to_double(v, line);
    if (d < 0 || d != std::floor(d) || d > 9.007199254740992e15) {
        throw ConfigError("expected a nonnegative integer, got '" + v + "'", line);
    }
    return static_cast<std::uint64_t>(d);
}

bool to_bool(const std::string& v, std::size_t line) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("expected a boolean, got '" + v + "'", line);
}

std::vector<std::size_t> to_uint_list(const std::string& v, std::size_t line) {
    std::vector<std::size_t> out;
    std::string cleaned = v;
    std::erase_if(cleaned, [](char c) { return c == '[' || c == ']'; });
    std::stringstream ss(cleaned);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(static_cast<std::size_t>(to_uint(trim(item), line)));
    return out;
}

template <class T>
std::string join(const std::vector<T>& v) {
    std::ostringstream ss;
    for (std::size_t i = 0; i < v.size(); ++i) ss << (i ? "," : "") << v[i];
    return ss.str();
}

std::string num(double v) {
    std::ostringstream ss;
    ss << std::setprecision(17) << v;
    return ss.str();
}

struct CheckpointKeys {
    std::size_t iteration = 0;
    bool ema = false;
};

RunConfig parse_lines(const std::string& text, CheckpointKeys* ckpt) {
    RunConfig cfg;
    bool restarts_set = false;
    std::size_t model_line = 0, train_line = 0, degrade_line = 0;

    using Setter = std::function<void(const std::string&, std::size_t)>;
    const std::map<std::string, Setter> setters = {
        {"model.channels", [&](auto& v, auto l) { cfg.model.channels = to_uint(v, l); }},
        {"model.blocks", [&](auto& v, auto l) { cfg.model.blocks = to_uint_list(v, l); }},
        {"model.kernel_code_dim", [&](auto& v, auto l) { cfg.model.kernel_code_dim = to_uint(v, l); }},
        {"model.dyn_kernel", [&](auto& v, auto l) { cfg.model.dyn_kernel = to_uint(v, l); }},
        {"model.leaky_slope", [&](auto& v, auto l) { cfg.model.leaky_slope = to_double(v, l); }},
        {"model.in_channels", [&](auto& v, auto l) { cfg.model.in_channels = to_uint(v, l); }},
        {"model.branch_blocks", [&](auto& v, auto l) { cfg.model.branch_blocks = to_uint(v, l); }},
        {"model.skip_connections", [&](auto& v, auto l) { cfg.model.skip_connections = to_bool(v, l); }},
        {"model.condition_branch", [&](auto& v, auto l) { cfg.model.condition_branch = to_bool(v, l); }},
        {"model.kernel_branch", [&](auto& v, auto l) { cfg.model.kernel_branch = to_bool(v, l); }},
        {"model.global_residual", [&](auto& v, auto l) { cfg.model.global_residual = to_bool(v, l); }},
        {"train.lr_max", [&](auto& v, auto l) { cfg.train.lr_max = to_double(v, l); }},
        {"train.lr_min", [&](auto& v, auto l) { cfg.train.lr_min = to_double(v, l); }},
        {"train.restart_iters",
         [&](auto& v, auto l) {
             cfg.train.restart_iters = to_uint_list(v, l);
             restarts_set = true;
         }},
        {"train.total_iters", [&](auto& v, auto l) { cfg.train.total_iters = to_uint(v, l); }},
        {"train.batch_size", [&](auto& v, auto l) { cfg.train.batch_size = to_uint(v, l); }},
        {"train.patch", [&](auto& v, auto l) { cfg.train.patch = to_uint(v, l); }},
        {"train.ema_decay", [&](auto& v, auto l) { cfg.train.ema_decay = to_double(v, l); }},
        {"train.loss",
         [&](auto& v, auto l) {
             try {
                 cfg.train.loss = objective::parse_loss_kind(v);
             } catch (const ConfigError& e) {
                 throw ConfigError(e.what(), l);
             }
         }},
        {"train.seed", [&](auto& v, auto l) { cfg.train.seed = to_uint(v, l); }},
        {"train.log_interval", [&](auto& v, auto l) { cfg.train.log_interval = to_uint(v, l); }},
        {"train.adam_beta1", [&](auto& v, auto l) { cfg.train.adam_beta1 = to_double(v, l); }},
        {"train.adam_beta2", [&](auto& v, auto l) { cfg.train.adam_beta2 = to_double(v, l); }},
        {"train.adam_eps", [&](auto& v, auto l) { cfg.train.adam_eps = to_double(v, l); }},
        {"degrade.noise_sigma", [&](auto& v, auto l) { cfg.degrade.noise_sigma = to_double(v, l); }},
        {"degrade.saturation_level", [&](auto& v, auto l) { cfg.degrade.saturation_level = to_double(v, l); }},
        {"degrade.apply_tonemap_to_input",
         [&](auto& v, auto l) { cfg.degrade.apply_tonemap_to_input = to_bool(v, l); }},
    };

    std::istringstream in(text);
    std::string raw;
    std::size_t line = 0;
    while (std::getline(in, raw)) {
        ++line;
        std::string s = trim(raw.substr(0, raw.find('#')));
        if (s.empty()) continue;
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("expected 'section.key = value'", line);
        const std::string key = trim(s.substr(0, eq));
        const std::string value = trim(s.substr(eq + 1));
        if (ckpt && key == "checkpoint.iteration") {
            ckpt->iteration = to_uint(value, line);
            continue;
        }
        if (ckpt && key == "checkpoint.ema") {
            ckpt->ema = to_bool(value, line);
            continue;
        }
        auto it = setters.find(key);
        if (it == setters.end()) throw ConfigError("unknown key '" + key + "'", line);
        it->second(value, line);
        if (key.starts_with("model.")) model_line = line;
        if (key.starts_with("train.")) train_line = line;
        if (key.starts_with("degrade.")) degrade_line = line;
    }
    if (!restarts_set) cfg.train.restart_iters = train::scaled_restarts(cfg.train.total_iters);

    auto validate = [](auto&& fn, std::size_t at) {
        try {
            fn();
        } catch (const ConfigError& e) {
            throw ConfigError(e.what(), at);
        }
    };
    validate([&] { cfg.model.validate(); }, model_line);
    validate([&] { cfg.train.validate(); }, train_line);
    validate([&] { cfg.degrade.validate(); }, degrade_line);
    return cfg;
}

std::string format_model(const net::ModelConfig& m) {
    std::ostringstream o;
    o << "model.channels = " << m.channels << "\n"
      << "model.blocks = " << join(m.blocks) << "\n"
      << "model.kernel_code_dim = " << m.kernel_code_dim << "\n"
      << "model.dyn_kernel = " << m.dyn_kernel << "\n"
      << "model.leaky_slope = " << num(m.leaky_slope) << "\n"
      << "model.in_channels = " << m.in_channels << "\n"
      << "model.branch_blocks = " << m.branch_blocks << "\n"
      << "model.skip_connections = " << (m.skip_connections ? "true" : "false") << "\n"
      << "model.condition_branch = " << (m.condition_branch ? "true" : "false") << "\n"
      << "model.kernel_branch = " << (m.kernel_branch ? "true" : "false") << "\n"
      << "model.global_residual = " << (m.global_residual ? "true" : "false") << "\n";
    return o.str();
}

} // namespace

RunConfig parse_config_text(const std::string& text) { return parse_lines(text, nullptr); }

RunConfig parse_config(const std::string& path) { return parse_config_text(read_text(path)); }

std::string format_config(const RunConfig& cfg) {
    const auto& t = cfg.train;
    std::ostringstream o;
    o << format_model(cfg.model);
    o << "train.lr_max = " << num(t.lr_max) << "\n"
      << "train.lr_min = " << num(t.lr_min) << "\n"
      << "train.total_iters = " << t.total_iters << "\n"
      << "train.restart_iters = " << join(t.restart_iters) << "\n"
      << "train.batch_size = " << t.batch_size << "\n"
      << "train.patch = " << t.patch << "\n"
      << "train.ema_decay = " << num(t.ema_decay) << "\n"
      << "train.loss = " << objective::to_string(t.loss) << "\n"
      << "train.seed = " << t.seed << "\n"
      << "train.log_interval = " << t.log_interval << "\n"
      << "train.adam_beta1 = " << num(t.adam_beta1) << "\n"
      << "train.adam_beta2 = " << num(t.adam_beta2) << "\n"
      << "train.adam_eps = " << num(t.adam_eps) << "\n";
    o << "degrade.noise_sigma = " << num(cfg.degrade.noise_sigma) << "\n"
      << "degrade.saturation_level = " << num(cfg.degrade.saturation_level) << "\n"
      << "degrade.apply_tonemap_to_input = " << (cfg.degrade.apply_tonemap_to_input ? "true" : "false") << "\n";
    return o.str();
}

void save_checkpoint(const std::string& dir, const Checkpoint& ckpt) {
    fs::create_directories(dir);
    for (const auto& [name, t] : ckpt.params.tensors) write_udct((fs::path(dir) / (name + ".udct")).string(), t);
    std::ofstream out(fs::path(dir) / "manifest.txt");
    out << format_model(ckpt.model) << "checkpoint.iteration = " << ckpt.iteration << "\n"
        << "checkpoint.ema = " << (ckpt.ema ? "true" : "false") << "\n";
    if (!out) throw DataError("cannot write manifest in " + dir);
}

Checkpoint load_checkpoint(const std::string& dir) {
    const fs::path manifest = fs::path(dir) / "manifest.txt";
    if (!fs::exists(manifest)) throw DataError("checkpoint manifest not found: " + manifest.string());
    CheckpointKeys keys;
    Checkpoint ckpt;
    ckpt.model = parse_lines(read_text(manifest.string()), &keys).model;
    ckpt.iteration = keys.iteration;
    ckpt.ema = keys.ema;
    ckpt.params = net::init_params(ckpt.model, 0);
    for (auto& [name, t] : ckpt.params.tensors) {
        const fs::path file = fs::path(dir) / (name + ".udct");
        if (!fs::exists(file)) throw DataError("checkpoint is missing " + file.string());
        Tensor loaded = read_udct(file.string());
        if (loaded.shape() != t.shape()) {
            throw DataError("checkpoint tensor " + name + " has shape " + loaded.shape().str() + ", expected " +
                            t.shape().str());
        }
        t = loaded.clone_as(true);
    }
    return ckpt;
}

} // namespace udc::io
