#include "udc/net.hpp"

#include "udc/error.hpp"
#include "udc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace udc::net {

void ModelConfig::validate() const {
    if (channels == 0) throw ConfigError("model.channels must be >= 1");
    if (blocks.size() != 7) throw ConfigError("model.blocks needs exactly 7 entries");
    if (std::any_of(blocks.begin(), blocks.end(), [](std::size_t b) { return b == 0; })) {
        throw ConfigError("model.blocks entries must be >= 1");
    }
    if (kernel_code_dim == 0) throw ConfigError("model.kernel_code_dim must be >= 1");
    if (dyn_kernel == 0 || dyn_kernel % 2 == 0) throw ConfigError("model.dyn_kernel must be odd");
    if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ConfigError("model.leaky_slope must lie in [0,1)");
    if (in_channels != 3) throw ConfigError("model.in_channels must be 3");
}

std::size_t ModelConfig::channels_at(std::size_t scale) const {
    return channels * (std::size_t{1} << std::min<std::size_t>(scale, 3));
}

const Tensor& ModelParams::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::out_of_range("unknown parameter " + name);
    return it->second;
}

std::size_t ModelParams::element_count() const {
    std::size_t total = 0;
    for (const auto& [_, t] : tensors) total += t.numel();
    return total;
}

std::vector<Tensor> ModelParams::list() const {
    std::vector<Tensor> out;
    out.reserve(tensors.size());
    for (const auto& [_, t] : tensors) out.push_back(t);
    return out;
}

ModelParams ModelParams::clone() const {
    ModelParams out;
    for (const auto& [name, t] : tensors) out.tensors.emplace(name, t.clone());
    return out;
}

void ModelParams::zero_grad() {
    for (auto& [_, t] : tensors) t.zero_grad();
}

Tensor sft_apply(Tape& tape, const Tensor& x, const Tensor& alpha, const Tensor& beta) {
    if (alpha.shape() != x.shape() || beta.shape() != x.shape()) {
        throw ShapeError("sft_apply: alpha " + alpha.shape().str() + " / beta " + beta.shape().str() +
                         " must match features " + x.shape().str());
    }
    const auto xv = x.data();
    const auto av = alpha.data();
    const auto bv = beta.data();
    Buffer out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * xv[i] + bv[i];
    const bool track = tape.needs_grad({&x, &alpha, &beta});
    Tensor y = Tensor::from_buffer(x.shape(), std::move(out), track);
    if (track) {
        tape.record("sft_apply", {x, alpha, beta}, y, [x, alpha, beta, y]() mutable {
            const auto gy = y.grad();
            const auto xv = x.data();
            const auto av = alpha.data();
            if (x.requires_grad()) {
                auto g = x.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * av[i];
            }
            if (alpha.requires_grad()) {
                auto g = alpha.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * xv[i];
            }
            if (beta.requires_grad()) {
                auto g = beta.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
            }
        });
    }
    return y;
}

namespace {

// Calls fn(plane_index_of_filter_tap, dy, dx, i_begin, i_end, j_begin, j_end) per tap with the
// output row/column range whose shifted source stays in bounds.
template <class Fn>
void for_each_tap(std::size_t k, std::size_t h, std::size_t w, Fn fn) {
    const long pad = static_cast<long>(k / 2);
    for (std::size_t ty = 0; ty < k; ++ty) {
        for (std::size_t tx = 0; tx < k; ++tx) {
            const long dy = static_cast<long>(ty) - pad;
            const long dx = static_cast<long>(tx) - pad;
            const long i0 = std::max(0L, -dy), i1 = std::min(static_cast<long>(h), static_cast<long>(h) - dy);
            const long j0 = std::max(0L, -dx), j1 = std::min(static_cast<long>(w), static_cast<long>(w) - dx);
            if (i0 >= i1 || j0 >= j1) continue;
            fn(ty * k + tx, dy, dx, i0, i1, j0, j1);
        }
    }
}

} // namespace

Tensor dynamic_conv(Tape& tape, const Tensor& features, const Tensor& kernels, std::size_t k) {
    if (k == 0 || k % 2 == 0) throw ShapeError("dynamic_conv: filter size must be odd, got " + std::to_string(k));
    const Shape& sf = features.shape();
    const Shape& sk = kernels.shape();
    const std::size_t taps = k * k;
    if (sk.c % taps != 0) {
        throw ShapeError("dynamic_conv: kernel channels " + std::to_string(sk.c) + " not divisible by k^2 = " +
                         std::to_string(taps));
    }
    if (sk.n != sf.n || sk.h != sf.h || sk.w != sf.w || sk.c != sf.c * taps) {
        throw ShapeError("dynamic_conv: kernels " + sk.str() + " do not match features " + sf.str() + " with k = " +
                         std::to_string(k));
    }
    const std::size_t plane = sf.plane();
    Buffer out(sf.numel(), 0.0);
    const double* fv = features.data().data();
    const double* kv = kernels.data().data();
    for (std::size_t p = 0; p < sf.n * sf.c; ++p) {
        const double* src = fv + p * plane;
        double* dst = out.data() + p * plane;
        for_each_tap(k, sf.h, sf.w, [&](std::size_t t, long dy, long dx, long i0, long i1, long j0, long j1) {
            const double* kt = kv + (p * taps + t) * plane;
            for (long i = i0; i < i1; ++i) {
                const double* srow = src + (i + dy) * static_cast<long>(sf.w) + dx;
                const double* krow = kt + i * static_cast<long>(sf.w);
                double* drow = dst + i * static_cast<long>(sf.w);
                for (long j = j0; j < j1; ++j) drow[j] += krow[j] * srow[j];
            }
        });
    }
    const bool track = tape.needs_grad({&features, &kernels});
    Tensor y = Tensor::from_buffer(sf, std::move(out), track);
    if (track) {
        tape.record("dynamic_conv", {features, kernels}, y, [features, kernels, y, k]() mutable {
            const Shape& sf = features.shape();
            const std::size_t taps = k * k;
            const std::size_t plane = sf.plane();
            const long w = static_cast<long>(sf.w);
            const double* gy = y.grad().data();
            const double* fv = features.data().data();
            const double* kv = kernels.data().data();
            double* gf = features.requires_grad() ? features.grad_buffer().data() : nullptr;
            double* gk = kernels.requires_grad() ? kernels.grad_buffer().data() : nullptr;
            for (std::size_t p = 0; p < sf.n * sf.c; ++p) {
                const double* g = gy + p * plane;
                for_each_tap(k, sf.h, sf.w, [&](std::size_t t, long dy, long dx, long i0, long i1, long j0, long j1) {
                    const std::size_t kt = (p * taps + t) * plane;
                    for (long i = i0; i < i1; ++i) {
                        const long src = static_cast<long>(p * plane) + (i + dy) * w + dx;
                        if (gk) {
                            for (long j = j0; j < j1; ++j) gk[kt + i * w + j] += g[i * w + j] * fv[src + j];
                        }
                        if (gf) {
                            for (long j = j0; j < j1; ++j) gf[src + j] += g[i * w + j] * kv[kt + i * w + j];
                        }
                    }
                });
            }
        });
    }
    return y;
}

std::vector<std::pair<std::size_t, std::size_t>> zigzag_order(std::size_t rows, std::size_t cols) {
    std::vector<std::pair<std::size_t, std::size_t>> order;
    order.reserve(rows * cols);
    for (std::size_t d = 0; d + 1 < rows + cols; ++d) {
        const std::size_t lo = d >= cols ? d - cols + 1 : 0;
        const std::size_t hi = std::min(d, rows - 1);
        if (d % 2 == 1) {
            for (std::size_t r = lo; r <= hi; ++r) order.emplace_back(r, d - r);
        } else {
            for (std::size_t r = hi + 1; r-- > lo;) order.emplace_back(r, d - r);
        }
    }
    return order;
}

std::vector<double> dct_code(std::span<const double> values, std::size_t kh, std::size_t kw, std::size_t b) {
    if (values.size() != kh * kw) throw ShapeError("dct_code: value count does not match extents");
    if (b > kh * kw) {
        throw std::invalid_argument("kernel code dimension " + std::to_string(b) + " exceeds kernel size " +
                                    std::to_string(kh * kw));
    }
    auto basis = [](std::size_t u, std::size_t pos, std::size_t n) {
        const double a = u == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
        return a * std::cos(std::numbers::pi * (2.0 * pos + 1.0) * u / (2.0 * n));
    };
    const auto order = zigzag_order(kh, kw);
    std::vector<double> code(b, 0.0);
    for (std::size_t i = 0; i < b; ++i) {
        const auto [u, v] = order[i];
        double acc = 0.0;
        for (std::size_t y = 0; y < kh; ++y) {
            const double by = basis(u, y, kh);
            for (std::size_t x = 0; x < kw; ++x) acc += values[y * kw + x] * by * basis(v, x, kw);
        }
        code[i] = acc;
    }
    return code;
}

std::vector<double> kernel_code(const degrade::Psf& psf, std::size_t b) {
    return dct_code(psf.values(), psf.height(), psf.width(), b);
}

namespace {

// Small start for the residual output so the untrained model is close to the identity.
constexpr double kOutputGain = 0.1;

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

class ParamBuilder {
public:
    ParamBuilder(ModelParams& params, std::uint64_t seed) : params_(params), seed_(seed) {}

    // He-normal weights scaled by `gain`; gain 0 gives an all-zero head.
    void conv(const std::string& name, std::size_t in, std::size_t out, std::size_t k, double gain = 1.0) {
        const Shape ws{out, in, k, k};
        std::vector<double> w(ws.numel(), 0.0);
        if (gain != 0.0) {
            std::mt19937_64 rng(seed_ ^ fnv1a(name));
            std::normal_distribution<double> dist(0.0, gain * std::sqrt(2.0 / static_cast<double>(in * k * k)));
            for (double& v : w) v = dist(rng);
        }
        params_.tensors.emplace(name + ".weight", Tensor(ws, std::move(w), true));
        params_.tensors.emplace(name + ".bias", Tensor::zeros({1, out, 1, 1}, true));
    }

private:
    ModelParams& params_;
    std::uint64_t seed_;
};

std::string block_name(const std::string& prefix, std::size_t i) { return prefix + ".block." + std::to_string(i); }

} // namespace

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelParams params;
    ParamBuilder pb(params, seed);
    auto c = [&](std::size_t s) { return cfg.channels_at(s); };
    auto res_block = [&](const std::string& name, std::size_t ch) {
        pb.conv(name + ".conv_a", ch, ch, 3);
        pb.conv(name + ".conv_b", ch, ch, 3);
    };

    pb.conv("base.conv_first", cfg.in_channels, c(0), 3);
    for (std::size_t s = 0; s < 3; ++s) {
        for (std::size_t i = 0; i < cfg.blocks[s]; ++i) res_block(block_name("base.enc." + std::to_string(s), i), c(s));
        pb.conv("base.down." + std::to_string(s), c(s), c(s + 1), 3);
    }
    for (std::size_t i = 0; i < cfg.blocks[3]; ++i) res_block(block_name("base.mid", i), c(3));
    for (std::size_t s = 3; s-- > 0;) {
        const std::string ss = std::to_string(s);
        pb.conv("base.up." + ss, c(s + 1), c(s), 3);
        if (cfg.skip_connections) pb.conv("base.fuse." + ss, 2 * c(s), c(s), 1);
        for (std::size_t i = 0; i < cfg.blocks[6 - s]; ++i) res_block(block_name("base.dec." + ss, i), c(s));
    }
    pb.conv("base.conv_last", c(0), cfg.in_channels, 3, kOutputGain);

    auto branch = [&](const std::string& root, std::size_t in_ch) {
        pb.conv(root + ".conv_first", in_ch, c(0), 3);
        for (std::size_t s = 0; s < kScales; ++s) {
            const std::string ss = std::to_string(s);
            if (s > 0) pb.conv(root + ".down." + ss, c(s - 1), c(s), 3);
            for (std::size_t j = 0; j < cfg.branch_blocks; ++j) res_block(block_name(root + ".scale." + ss, j), c(s));
        }
    };
    if (cfg.condition_branch) {
        branch("cond", cfg.in_channels);
        for (std::size_t s = 0; s < kScales; ++s) {
            const std::string ss = std::to_string(s);
            pb.conv("cond.scale." + ss + ".alpha", c(s), c(s), 3, 0.0);
            pb.conv("cond.scale." + ss + ".beta", c(s), c(s), 3, 0.0);
        }
    }
    if (cfg.kernel_branch) {
        branch("kern", cfg.in_channels + cfg.kernel_code_dim);
        const std::size_t taps = cfg.dyn_kernel * cfg.dyn_kernel;
        for (std::size_t s = 0; s < kScales; ++s) {
            pb.conv("kern.scale." + std::to_string(s) + ".head", c(s), c(s) * taps, 3, 0.0);
        }
    }
    return params;
}

namespace {

class Forward {
public:
    Forward(Tape& tape, const ModelParams& params, const ModelConfig& cfg) : tape_(tape), p_(params), cfg_(cfg) {}

    Tensor conv(const std::string& name, const Tensor& x, std::size_t stride = 1) {
        const Tensor& w = p_.at(name + ".weight");
        return ops::conv2d(tape_, x, w, p_.at(name + ".bias"), stride, w.shape().h / 2);
    }

    Tensor lrelu(const Tensor& x) { return ops::leaky_relu(tape_, x, cfg_.leaky_slope); }

    // conv_a -> leaky_relu -> conv_b, added back onto `skip`.
    Tensor res_body(const std::string& name, const Tensor& x, const Tensor& skip) {
        Tensor h = conv(name + ".conv_b", lrelu(conv(name + ".conv_a", x)));
        return checked(ops::add(tape_, skip, h), name);
    }

    Tensor checked(const Tensor& t, const std::string& path) {
        for (double v : t.data()) {
            if (!std::isfinite(v)) throw NumericError("non-finite activation at " + path);
        }
        return t;
    }

    Tape& tape() { return tape_; }
    const ModelConfig& cfg() const { return cfg_; }

private:
    Tape& tape_;
    const ModelParams& p_;
    const ModelConfig& cfg_;
};

void check_extents(const Tensor& input, const ModelConfig& cfg) {
    const Shape& s = input.shape();
    if (s.c != cfg.in_channels) {
        throw ShapeError("model input needs " + std::to_string(cfg.in_channels) + " channels, got " + s.str());
    }
    if (s.h == 0 || s.w == 0 || s.h % 8 != 0 || s.w % 8 != 0) {
        throw ShapeError("model input extents must be positive multiples of 8, got " + s.str());
    }
}

// Per-scale branch trunk: conv_first, then per scale an optional stride-2 conv and residual blocks.
template <class Head>
void branch_trunk(Forward& f, const std::string& root, const Tensor& input, Head head) {
    Tensor chain = f.lrelu(f.conv(root + ".conv_first", input));
    for (std::size_t s = 0; s < kScales; ++s) {
        const std::string ss = std::to_string(s);
        if (s > 0) chain = f.lrelu(f.conv(root + ".down." + ss, chain, 2));
        Tensor r = chain;
        for (std::size_t j = 0; j < f.cfg().branch_blocks; ++j) {
            r = f.res_body(block_name(root + ".scale." + ss, j), r, r);
        }
        head(s, r);
    }
}

SftMaps condition_impl(Forward& f, const Tensor& conditioned) {
    SftMaps maps;
    branch_trunk(f, "cond", conditioned, [&](std::size_t s, const Tensor& r) {
        const std::string ss = std::to_string(s);
        maps.alpha.push_back(ops::add_scalar(f.tape(), f.conv("cond.scale." + ss + ".alpha", r), 1.0));
        maps.beta.push_back(f.conv("cond.scale." + ss + ".beta", r));
    });
    return maps;
}

Tensor broadcast_code(std::span<const double> code, const Shape& s) {
    std::vector<double> v(s.n * code.size() * s.plane());
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t i = 0; i < code.size(); ++i) {
            std::fill_n(v.begin() + static_cast<std::ptrdiff_t>((n * code.size() + i) * s.plane()), s.plane(), code[i]);
        }
    }
    return Tensor({s.n, code.size(), s.h, s.w}, std::move(v));
}

KernelFeatures kernel_impl(Forward& f, const Tensor& conditioned, std::span<const double> code) {
    const ModelConfig& cfg = f.cfg();
    if (code.size() != cfg.kernel_code_dim) {
        throw ShapeError("kernel code has " + std::to_string(code.size()) + " entries, config expects " +
                         std::to_string(cfg.kernel_code_dim));
    }
    const std::size_t taps = cfg.dyn_kernel * cfg.dyn_kernel;
    Tensor input = ops::concat_channels(f.tape(), conditioned, broadcast_code(code, conditioned.shape()));
    KernelFeatures out;
    branch_trunk(f, "kern", input, [&](std::size_t s, const Tensor& r) {
        // Zero-initialized heads start out emitting a centered delta filter.
        const std::size_t ch = cfg.channels_at(s);
        std::vector<double> delta(ch * taps, 0.0);
        for (std::size_t c = 0; c < ch; ++c) delta[c * taps + taps / 2] = 1.0;
        Tensor raw = f.conv("kern.scale." + std::to_string(s) + ".head", r);
        out.kernels.push_back(ops::add(f.tape(), raw, Tensor({1, ch * taps, 1, 1}, std::move(delta))));
    });
    return out;
}

// Fixed log compression of HDR radiance before any learned layer.
Tensor condition_input(Tape& tape, const Tensor& y_hat) {
    for (double v : y_hat.data()) {
        if (!std::isfinite(v) || v < 0.0) throw NumericError("model input must be finite and nonnegative");
    }
    return ops::log1p(tape, y_hat);
}

} // namespace

SftMaps condition_branch_forward(Tape& tape, const Tensor& input, const ModelParams& params, const ModelConfig& cfg) {
    check_extents(input, cfg);
    Forward f(tape, params, cfg);
    return condition_impl(f, condition_input(tape, input));
}

KernelFeatures kernel_branch_forward(Tape& tape, const Tensor& input, std::span<const double> code,
                                     const ModelParams& params, const ModelConfig& cfg) {
    check_extents(input, cfg);
    Forward f(tape, params, cfg);
    return kernel_impl(f, condition_input(tape, input), code);
}

Tensor model_forward(Tape& tape, const Tensor& y_hat, std::span<const double> code, const ModelParams& params,
                     const ModelConfig& cfg) {
    cfg.validate();
    check_extents(y_hat, cfg);
    Forward f(tape, params, cfg);
    const Tensor conditioned = condition_input(tape, y_hat);

    SftMaps maps;
    KernelFeatures kernels;
    if (cfg.condition_branch) maps = condition_impl(f, conditioned);
    if (cfg.kernel_branch) kernels = kernel_impl(f, conditioned, code);

    auto stage = [&](const std::string& prefix, std::size_t scale, std::size_t count, Tensor x) {
        for (std::size_t i = 0; i < count; ++i) {
            const std::string name = block_name(prefix, i);
            Tensor h = cfg.condition_branch ? sft_apply(tape, x, maps.alpha[scale], maps.beta[scale]) : x;
            x = f.res_body(name, h, x);
        }
        if (cfg.kernel_branch) x = f.checked(dynamic_conv(tape, x, kernels.kernels[scale], cfg.dyn_kernel), prefix);
        return x;
    };

    Tensor x = f.conv("base.conv_first", conditioned);
    std::vector<Tensor> skips;
    for (std::size_t s = 0; s < 3; ++s) {
        x = stage("base.enc." + std::to_string(s), s, cfg.blocks[s], x);
        skips.push_back(x);
        x = f.lrelu(f.conv("base.down." + std::to_string(s), x, 2));
    }
    x = stage("base.mid", 3, cfg.blocks[3], x);
    for (std::size_t s = 3; s-- > 0;) {
        const std::string ss = std::to_string(s);
        x = f.lrelu(ops::upsample2x_conv(tape, x, params.at("base.up." + ss + ".weight"),
                                         params.at("base.up." + ss + ".bias")));
        if (cfg.skip_connections) x = f.conv("base.fuse." + ss, ops::concat_channels(tape, x, skips[s]));
        x = stage("base.dec." + ss, s, cfg.blocks[6 - s], x);
    }
    Tensor out = f.conv("base.conv_last", x);
    if (cfg.global_residual) out = ops::add(tape, out, y_hat);
    return f.checked(out, "base.conv_last");
}

Tensor model_forward(Tape& tape, const Tensor& y_hat, const degrade::Psf& psf, const ModelParams& params,
                     const ModelConfig& cfg) {
    return model_forward(tape, y_hat, kernel_code(psf, cfg.kernel_code_dim), params, cfg);
}

Tensor infer(const Tensor& y_hat, const degrade::Psf& psf, const ModelParams& params, const ModelConfig& cfg) {
    Tape tape(false);
    return model_forward(tape, y_hat, psf, params, cfg);
}

} // namespace udc::net
