#include "oracles.hpp"

#include "udc/error.hpp"
#include "udc/net.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace udc;
using namespace udc::net;

namespace {

ModelConfig micro() {
    ModelConfig cfg;
    cfg.channels = 4;
    cfg.blocks = {1, 1, 1, 1, 1, 1, 1};
    cfg.branch_blocks = 1;
    return cfg;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.numel(); ++i)
        if (a.data()[i] != b.data()[i]) return false;
    return true;
}

} // namespace

TEST(Sft, IdentityConstantAndOracle) {
    Tape tape;
    std::mt19937_64 rng(1);
    const Tensor x = oracle::random_tensor(rng, {1, 2, 3, 3});
    EXPECT_TRUE(bitwise_equal(sft_apply(tape, x, Tensor::filled(x.shape(), 1.0), Tensor::zeros(x.shape())), x));
    const Tensor c = sft_apply(tape, x, Tensor::zeros(x.shape()), Tensor::filled(x.shape(), 0.7));
    for (double v : c.data()) EXPECT_EQ(v, 0.7);
    const Tensor a = oracle::random_tensor(rng, x.shape());
    const Tensor b = oracle::random_tensor(rng, x.shape());
    const Tensor y = sft_apply(tape, x, a, b);
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.data()[i], std::fma(a.data()[i], x.data()[i], b.data()[i]));
    EXPECT_THROW(sft_apply(tape, x, Tensor::zeros({1, 2, 3, 4}), b), ShapeError);
}

TEST(DynamicConv, DeltaFilterIsIdentity) {
    std::mt19937_64 rng(2);
    const Tensor f = oracle::random_tensor(rng, {2, 3, 5, 6});
    std::vector<double> k(2 * 27 * 30, 0.0);
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t p = 0; p < 30; ++p) k[((n * 27) + c * 9 + 4) * 30 + p] = 1.0;
    Tape tape;
    EXPECT_TRUE(bitwise_equal(dynamic_conv(tape, f, Tensor({2, 27, 5, 6}, k), 3), f));
}

TEST(DynamicConv, UniformFilterOnConstantInterior) {
    Tape tape;
    const Tensor f = Tensor::filled({1, 2, 6, 6}, 2.5);
    const Tensor y = dynamic_conv(tape, f, Tensor::filled({1, 18, 6, 6}, 1.0 / 9.0), 3);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 1; i < 5; ++i)
            for (std::size_t j = 1; j < 5; ++j) EXPECT_NEAR(y.at(0, c, i, j), 2.5, 1e-14);
    EXPECT_NEAR(y.at(0, 0, 0, 0), 2.5 * 4.0 / 9.0, 1e-14);
}

TEST(DynamicConv, MatchesPerPixelOracle) {
    std::mt19937_64 rng(3);
    for (std::size_t k : {1u, 3u, 5u}) {
        const Tensor f = oracle::random_tensor(rng, {1, 2, 4, 4});
        const Tensor kern = oracle::random_tensor(rng, {1, 2 * k * k, 4, 4});
        Tape tape;
        EXPECT_LE(oracle::max_abs_diff(dynamic_conv(tape, f, kern, k), oracle::dynamic_conv(f, kern, k)), 1e-10);
    }
    const Tensor f = oracle::random_tensor(rng, {2, 3, 7, 5});
    const Tensor kern = oracle::random_tensor(rng, {2, 27, 7, 5});
    Tape tape;
    EXPECT_LE(oracle::max_abs_diff(dynamic_conv(tape, f, kern, 3), oracle::dynamic_conv(f, kern, 3)), 1e-10);
}

TEST(DynamicConv, RejectsBadLayouts) {
    Tape tape;
    EXPECT_THROW(dynamic_conv(tape, Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 17, 4, 4}), 3), ShapeError);
    EXPECT_THROW(dynamic_conv(tape, Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 18, 4, 5}), 3), ShapeError);
    EXPECT_THROW(dynamic_conv(tape, Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 8, 4, 4}), 2), ShapeError);
}

TEST(KernelCode, ZigZagFollowsJpegOrder) {
    const auto z = zigzag_order(3, 3);
    const std::vector<std::pair<std::size_t, std::size_t>> expected{{0, 0}, {0, 1}, {1, 0}, {2, 0}, {1, 1},
                                                                    {0, 2}, {1, 2}, {2, 1}, {2, 2}};
    EXPECT_EQ(z, expected);
}

TEST(KernelCode, ZeroKernelGivesZeroCode) {
    for (double v : dct_code(std::vector<double>(25, 0.0), 5, 5, 5)) EXPECT_EQ(v, 0.0);
}

TEST(KernelCode, DeltaEqualsBasisAtCenter) {
    const std::size_t n = 7, c = 3;
    const auto code = kernel_code(degrade::Psf::delta(n), 6);
    const auto order = zigzag_order(n, n);
    auto basis = [&](std::size_t u, std::size_t x) {
        const double a = u == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
        return a * std::cos(std::numbers::pi * (2.0 * x + 1.0) * u / (2.0 * n));
    };
    for (std::size_t i = 0; i < code.size(); ++i) {
        EXPECT_NEAR(code[i], basis(order[i].first, c) * basis(order[i].second, c), 1e-14) << i;
    }
}

TEST(KernelCode, RandomPsfsGiveDistinctCodes) {
    std::vector<std::vector<double>> codes;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> d(0, 1);
        std::vector<double> v(49);
        for (double& x : v) x = d(rng);
        codes.push_back(kernel_code(degrade::Psf(7, 7, v), 5));
    }
    for (std::size_t i = 0; i < codes.size(); ++i)
        for (std::size_t j = i + 1; j < codes.size(); ++j) EXPECT_NE(codes[i], codes[j]);
    EXPECT_THROW(dct_code(std::vector<double>(9, 1.0), 3, 3, 10), std::invalid_argument);
}

TEST(Init, HeStatisticsAndZeroBiases) {
    ModelConfig cfg;
    const ModelParams p = init_params(cfg, 5);
    const Tensor& w = p.at("base.mid.block.0.conv_a.weight");
    const double fan_in = static_cast<double>(w.shape().c * w.shape().h * w.shape().w);
    double sq = 0.0;
    for (double v : w.data()) sq += v * v;
    const double sd = std::sqrt(sq / static_cast<double>(w.numel()));
    EXPECT_NEAR(sd / std::sqrt(2.0 / fan_in), 1.0, 0.1);
    for (const auto& [name, t] : p.tensors) {
        if (name.ends_with(".bias")) {
            for (double v : t.data()) EXPECT_EQ(v, 0.0) << name;
        }
    }
    const ModelParams q = init_params(cfg, 5);
    for (const auto& [name, t] : p.tensors) EXPECT_TRUE(bitwise_equal(t, q.at(name))) << name;
    EXPECT_FALSE(bitwise_equal(w, init_params(cfg, 6).at("base.mid.block.0.conv_a.weight")));
}

TEST(Init, FullScaleChannelSchedule) {
    ModelConfig cfg;
    EXPECT_EQ(cfg.channels_at(0), 32u);
    EXPECT_EQ(cfg.channels_at(3), 256u);
    const ModelParams p = init_params(cfg, 0);
    EXPECT_EQ(p.at("base.mid.block.7.conv_b.weight").shape(), (Shape{256, 256, 3, 3}));
    EXPECT_FALSE(p.contains("base.mid.block.8.conv_a.weight"));
}

TEST(ConditionBranch, ShapesAndInertStart) {
    const ModelConfig cfg = micro();
    const ModelParams p = init_params(cfg, 1);
    std::mt19937_64 rng(4);
    const Tensor y = oracle::random_tensor(rng, {2, 3, 16, 16}, 0, 5);
    Tape tape(false);
    const SftMaps maps = condition_branch_forward(tape, y, p, cfg);
    ASSERT_EQ(maps.alpha.size(), kScales);
    for (std::size_t s = 0; s < kScales; ++s) {
        EXPECT_EQ(maps.alpha[s].shape(), (Shape{2, cfg.channels_at(s), 16u >> s, 16u >> s}));
        for (double v : maps.alpha[s].data()) EXPECT_EQ(v, 1.0);
        for (double v : maps.beta[s].data()) EXPECT_EQ(v, 0.0);
    }
}

TEST(KernelBranch, ShapesAndCodeSensitivity) {
    const ModelConfig cfg = micro();
    ModelParams p = init_params(cfg, 2);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> d(0, 0.1);
    for (auto& [name, t] : p.tensors)
        if (name.find(".head.") != std::string::npos)
            for (double& v : t.mutable_data()) v = d(rng);
    const Tensor y = oracle::random_tensor(rng, {1, 3, 16, 16}, 0, 5);
    Tape tape(false);
    std::vector<double> zero(cfg.kernel_code_dim, 0.0), e1 = zero;
    e1[0] = 1.0;
    const KernelFeatures a = kernel_branch_forward(tape, y, zero, p, cfg);
    const KernelFeatures b = kernel_branch_forward(tape, y, e1, p, cfg);
    ASSERT_EQ(a.kernels.size(), kScales);
    for (std::size_t s = 0; s < kScales; ++s) {
        EXPECT_EQ(a.kernels[s].shape(), (Shape{1, cfg.channels_at(s) * 9, 16u >> s, 16u >> s}));
        EXPECT_GT(oracle::max_abs_diff(a.kernels[s], b.kernels[s]), 1e-6);
    }
    const KernelFeatures again = kernel_branch_forward(tape, y, zero, p, cfg);
    EXPECT_TRUE(bitwise_equal(a.kernels[0], again.kernels[0]));
    EXPECT_THROW(kernel_branch_forward(tape, y, std::vector<double>(3, 0.0), p, cfg), ShapeError);
}

TEST(Model, ShapeDeterminismAndExtentChecks) {
    const ModelConfig cfg = micro();
    const ModelParams p = init_params(cfg, 3);
    std::mt19937_64 rng(6);
    const Tensor y = oracle::random_tensor(rng, {1, 3, 64, 64}, 0, 50);
    const auto psf = degrade::psf_synthesize(1.0, 2, 0.1, 7, 0);
    const Tensor a = infer(y, psf, p, cfg);
    EXPECT_EQ(a.shape(), y.shape());
    EXPECT_TRUE(bitwise_equal(a, infer(y, psf, p, cfg)));
    EXPECT_THROW(infer(Tensor::zeros({1, 3, 20, 16}), psf, p, cfg), ShapeError);
    EXPECT_THROW(infer(Tensor::zeros({1, 4, 16, 16}), psf, p, cfg), ShapeError);
}

TEST(Model, BranchesStartInert) {
    ModelConfig full = micro();
    ModelConfig plain = full;
    plain.condition_branch = false;
    plain.kernel_branch = false;
    const ModelParams pf = init_params(full, 7);
    const ModelParams pp = init_params(plain, 7);
    std::mt19937_64 rng(8);
    const Tensor y = oracle::random_tensor(rng, {1, 3, 32, 32}, 0, 100);
    const auto psf = degrade::psf_synthesize(1.0, 3, 0.1, 9, 1);
    EXPECT_LE(oracle::max_abs_diff(infer(y, psf, pf, full), infer(y, psf, pp, plain)), 1e-9);
}

TEST(Model, NonFiniteInputRejected) {
    const ModelConfig cfg = micro();
    const ModelParams p = init_params(cfg, 0);
    Tensor y = Tensor::filled({1, 3, 16, 16}, 1.0);
    y.mutable_data()[5] = std::nan("");
    EXPECT_THROW(infer(y, degrade::Psf::delta(3), p, cfg), NumericError);
}

TEST(Model, NonFiniteActivationNamesLayer) {
    const ModelConfig cfg = micro();
    ModelParams p = init_params(cfg, 0);
    for (double& v : p.tensors.at("base.enc.1.block.0.conv_b.bias").mutable_data()) v = INFINITY;
    try {
        infer(Tensor::filled({1, 3, 16, 16}, 1.0), degrade::Psf::delta(3), p, cfg);
        FAIL();
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("base.enc.1"), std::string::npos) << e.what();
    }
}

TEST(Model, ConfigValidation) {
    ModelConfig cfg = micro();
    cfg.blocks = {1, 1, 1};
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = micro();
    cfg.dyn_kernel = 2;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = micro();
    cfg.channels = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
}
