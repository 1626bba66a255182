#include "oracles.hpp"

#include "udc/error.hpp"
#include "udc/io.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

using namespace udc;
using namespace udc::io;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("udc_io_test_" + name);
    fs::remove_all(p);
    return p;
}

UdctArray sample_array() {
    UdctArray a;
    a.dims = {2, 3};
    a.values = {1, 2, 3, 4, 5, 6};
    return a;
}

std::size_t offset_of_error(const std::vector<std::uint8_t>& bytes) {
    try {
        decode_udct(bytes);
    } catch (const FormatError& e) {
        return e.offset();
    }
    ADD_FAILURE() << "decode accepted corrupted bytes";
    return 0;
}

} // namespace

TEST(Udct, LayoutIsLittleEndian) {
    const auto bytes = encode_udct(sample_array());
    ASSERT_EQ(bytes.size(), 8u + 2 * 8 + 6 * 8);
    EXPECT_EQ(std::memcmp(bytes.data(), "UDCT", 4), 0);
    EXPECT_EQ(bytes[4], 1);
    EXPECT_EQ(bytes[5], 1);
    EXPECT_EQ(bytes[6], 2);
    EXPECT_EQ(bytes[7], 0);
    EXPECT_EQ(bytes[8], 2);
    for (int i = 9; i < 16; ++i) EXPECT_EQ(bytes[i], 0);
    // 1.0 as IEEE-754 binary64 little endian: 00 .. 00 f0 3f
    EXPECT_EQ(bytes[24 + 6], 0xf0);
    EXPECT_EQ(bytes[24 + 7], 0x3f);
}

TEST(Udct, RandomTensorRoundTripsBitwise) {
    std::mt19937_64 rng(1);
    const Tensor t = oracle::random_tensor(rng, {2, 3, 4, 5}, -1e6, 1e6);
    const fs::path p = scratch("rt.udct");
    write_udct(p.string(), t);
    const Tensor back = read_udct(p.string());
    ASSERT_EQ(back.shape(), t.shape());
    EXPECT_EQ(std::memcmp(back.data().data(), t.data().data(), t.numel() * sizeof(double)), 0);
}

TEST(Udct, F32RoundTripWidens) {
    UdctArray a = sample_array();
    a.dtype = Dtype::f32;
    a.values[0] = 0.1;
    const auto back = decode_udct(encode_udct(a));
    EXPECT_EQ(back.dtype, Dtype::f32);
    EXPECT_EQ(back.values[0], static_cast<double>(0.1f));
}

TEST(Udct, LowerRankReadsAsLeftPadded) {
    const fs::path p = scratch("rank2.udct");
    write_udct_array(p.string(), sample_array());
    EXPECT_EQ(read_udct(p.string()).shape(), (Shape{1, 1, 2, 3}));
}

TEST(Udct, CorruptedHeadersReportOffsets) {
    const auto good = encode_udct(sample_array());
    auto bad = good;
    bad[2] = 'X';
    EXPECT_EQ(offset_of_error(bad), 2u);
    bad = good;
    bad[4] = 2;
    EXPECT_EQ(offset_of_error(bad), 4u);
    bad = good;
    bad[5] = 7;
    EXPECT_EQ(offset_of_error(bad), 5u);
    try {
        decode_udct(bad);
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("unsupported dtype"), std::string::npos);
    }
    bad = good;
    bad[6] = 0;
    EXPECT_EQ(offset_of_error(bad), 6u);
    bad = good;
    bad[6] = 5;
    EXPECT_EQ(offset_of_error(bad), 6u);
    bad = good;
    bad[7] = 1;
    EXPECT_EQ(offset_of_error(bad), 7u);
    bad.assign(good.begin(), good.begin() + 3);
    EXPECT_EQ(offset_of_error(bad), 3u);
    bad.assign(good.begin(), good.begin() + 20);
    EXPECT_EQ(offset_of_error(bad), 20u);
    bad.assign(good.begin(), good.end() - 1);
    EXPECT_EQ(offset_of_error(bad), good.size() - 1);
    bad = good;
    bad.push_back(0);
    EXPECT_EQ(offset_of_error(bad), good.size());
}

TEST(Udct, MissingFileIsDataError) { EXPECT_THROW(read_udct("/nonexistent/x.udct"), DataError); }

TEST(Psf, RoundTrip) {
    const auto psf = degrade::psf_synthesize(1.2, 3, 0.1, 9, 4);
    const fs::path p = scratch("psf.udct");
    write_psf(p.string(), psf);
    const auto back = read_psf(p.string());
    ASSERT_EQ(back.height(), 9u);
    // Loading renormalises, which may move the last bit.
    for (std::size_t i = 0; i < psf.values().size(); ++i) EXPECT_NEAR(back.values()[i], psf.values()[i], 1e-16);
}

TEST(Preview, PixelValues) {
    EXPECT_EQ(preview_pixel(0.0), 0);
    EXPECT_EQ(preview_pixel(1.0), 204);
    EXPECT_EQ(preview_pixel(500.0), 255);
    EXPECT_EQ(preview_pixel(-3.0), 0);
    int prev = 0;
    for (int i = 0; i <= 10000; ++i) {
        const int v = preview_pixel(i * 0.05);
        EXPECT_GE(v, prev);
        prev = v;
    }
}

TEST(Preview, WritesPng) {
    const fs::path p = scratch("prev.png");
    export_preview(Tensor::filled({1, 3, 8, 16}, 1.0), p.string());
    std::ifstream in(p, std::ios::binary);
    char sig[8];
    in.read(sig, 8);
    EXPECT_EQ(std::memcmp(sig, "\x89PNG\r\n\x1a\n", 8), 0);
    EXPECT_THROW(export_preview(Tensor::filled({1, 2, 8, 8}, 1.0), p.string()), ShapeError);
}

TEST(Dataset, WriteLoadAndValidate) {
    train::Dataset d;
    d.psf = degrade::psf_synthesize(1.0, 2, 0.1, 7, 0);
    for (int i = 0; i < 2; ++i) {
        d.names.push_back(i ? "0001" : "0000");
        d.clean.push_back(degrade::scene_synthesize(16, 16, 1, 50, i));
        d.degraded.push_back(degrade::simulate(d.clean.back(), d.psf, {}, i).degraded);
    }
    const fs::path dir = scratch("ds");
    write_dataset(dir.string(), d, "note = test\n");
    EXPECT_TRUE(fs::exists(dir / "meta.txt"));
    EXPECT_TRUE(fs::exists(dir / "clean" / "0001.udct"));
    const auto back = load_dataset(dir.string());
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back.names[0], "0000");
    EXPECT_EQ(oracle::max_abs_diff(back.degraded[1], d.degraded[1]), 0.0);

    fs::remove(dir / "degraded" / "0001.udct");
    EXPECT_THROW(load_dataset(dir.string()), DataError);
    fs::remove(dir / "psf.udct");
    EXPECT_THROW(load_dataset(dir.string()), DataError);
}

TEST(Config, EmptyMeansDefaults) {
    const RunConfig c = parse_config_text("");
    EXPECT_EQ(c.model.channels, 32u);
    EXPECT_EQ(c.train.total_iters, 5000u);
    EXPECT_EQ(c.train.restart_iters, (std::vector<std::size_t>{417, 1250, 2500, 3750}));
}

TEST(Config, ParsesValuesAndComments) {
    const RunConfig c = parse_config_text(
        "# desk run\n"
        "model.blocks = 2,2,2,8,2,2,2\n"
        "model.channels = 16   # narrower\n"
        "train.total_iters = 1000\n"
        "train.loss = l1\n"
        "degrade.noise_sigma = 0.01\n"
        "model.skip_connections = false\n");
    EXPECT_EQ(c.model.blocks, (std::vector<std::size_t>{2, 2, 2, 8, 2, 2, 2}));
    EXPECT_EQ(c.model.channels, 16u);
    EXPECT_FALSE(c.model.skip_connections);
    EXPECT_EQ(c.train.loss, objective::LossKind::PlainL1);
    EXPECT_EQ(c.train.restart_iters, train::scaled_restarts(1000));
    EXPECT_DOUBLE_EQ(c.degrade.noise_sigma, 0.01);
}

TEST(Config, ErrorsCarryLineNumbers) {
    auto line_of = [](const std::string& text) -> std::size_t {
        try {
            parse_config_text(text);
        } catch (const ConfigError& e) {
            return e.line();
        }
        return 0;
    };
    EXPECT_EQ(line_of("train.lr_max = -1\n"), 1u);
    EXPECT_EQ(line_of("# c\nmodel.widht = 3\n"), 2u);
    EXPECT_EQ(line_of("model.channels = 8\nmodel.channels = abc\n"), 2u);
    EXPECT_EQ(line_of("train.patch 64\n"), 1u);
    EXPECT_EQ(line_of("\n\nmodel.blocks = 1,2\n"), 3u);
}

TEST(Config, FormatRoundTrips) {
    RunConfig c;
    c.model.channels = 12;
    c.train.lr_max = 3e-4;
    c.train.loss = objective::LossKind::MappingL2;
    const RunConfig back = parse_config_text(format_config(c));
    EXPECT_EQ(back.model.channels, 12u);
    EXPECT_EQ(back.train.lr_max, 3e-4);
    EXPECT_EQ(back.train.loss, objective::LossKind::MappingL2);
    EXPECT_EQ(back.train.restart_iters, c.train.restart_iters);
}

TEST(Checkpoint, RoundTripAndMismatch) {
    net::ModelConfig cfg;
    cfg.channels = 4;
    cfg.blocks = {1, 1, 1, 1, 1, 1, 1};
    const auto params = net::init_params(cfg, 3);
    const fs::path dir = scratch("ckpt");
    save_checkpoint(dir.string(), {cfg, params, 17, true});
    const Checkpoint back = load_checkpoint(dir.string());
    EXPECT_EQ(back.iteration, 17u);
    EXPECT_TRUE(back.ema);
    EXPECT_EQ(back.model.channels, 4u);
    for (const auto& [name, t] : params.tensors) EXPECT_EQ(oracle::max_abs_diff(t, back.params.at(name)), 0.0) << name;

    write_udct((dir / "base.conv_last.weight.udct").string(), Tensor::zeros({1, 1, 3, 3}));
    EXPECT_THROW(load_checkpoint(dir.string()), DataError);
    EXPECT_THROW(load_checkpoint((dir / "missing").string()), DataError);
}
