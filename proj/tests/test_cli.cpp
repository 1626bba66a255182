// Runs the udc executable end to end.

#include "udc/io.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

struct CliRun {
    int code;
    std::string out;
};

CliRun run(const std::string& args) {
    const std::string cmd = std::string("UDC_THREADS=0 ") + UDC_CLI_PATH + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    std::string out;
    std::array<char, 4096> buf{};
    while (std::size_t n = fread(buf.data(), 1, buf.size(), pipe)) out.append(buf.data(), n);
    const int status = pclose(pipe);
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("udc_cli_test_" + name);
    fs::remove_all(p);
    return p;
}

} // namespace

class HelpSnapshot : public ::testing::TestWithParam<std::string> {};

TEST_P(HelpSnapshot, MatchesStoredText) {
    const std::string sub = GetParam();
    const CliRun r = run(sub + " --help");
    EXPECT_EQ(r.code, 0);
    const fs::path snap = fs::path(UDC_SNAPSHOT_DIR) / (sub + ".txt");
    if (std::getenv("UDC_UPDATE_SNAPSHOTS")) {
        std::ofstream(snap) << r.out;
        GTEST_SKIP() << "snapshot updated";
    }
    ASSERT_TRUE(fs::exists(snap)) << snap;
    EXPECT_EQ(r.out, slurp(snap));
}

INSTANTIATE_TEST_SUITE_P(Cli, HelpSnapshot,
                         ::testing::Values("synth-psf", "synth-data", "train", "eval", "infer", "gradcheck", "preview"),
                         [](const auto& info) {
                             std::string n = info.param;
                             for (char& c : n)
                                 if (c == '-') c = '_';
                             return n;
                         });

TEST(Cli, UsageErrorsExitOne) {
    EXPECT_EQ(run("").code, 1);
    EXPECT_EQ(run("bogus").code, 1);
    EXPECT_EQ(run("synth-psf").code, 1);
    EXPECT_EQ(run("gradcheck --scope everything").code, 1);
}

TEST(Cli, SynthPsfReportsUnitEnergyAndIsReproducible) {
    const fs::path dir = scratch("psf");
    fs::create_directories(dir);
    const CliRun a = run("synth-psf --size 11 --seed 3 --out " + (dir / "a.udct").string());
    ASSERT_EQ(a.code, 0) << a.out;
    EXPECT_NE(a.out.find("energy 1.000000"), std::string::npos);
    ASSERT_EQ(run("synth-psf --size 11 --seed 3 --out " + (dir / "b.udct").string()).code, 0);
    EXPECT_EQ(slurp(dir / "a.udct"), slurp(dir / "b.udct"));
    const CliRun d = run("synth-psf --size 7 --core-sigma 0 --sidelobes 0 --out " + (dir / "d.udct").string());
    EXPECT_NE(d.out.find("peak (3,3) value 1.000000"), std::string::npos) << d.out;
    EXPECT_EQ(run("synth-psf --size 8 --out " + (dir / "e.udct").string()).code, 1);
}

TEST(Cli, SynthDataLayoutAndErrors) {
    const fs::path dir = scratch("data");
    fs::create_directories(dir);
    const std::string psf = (dir / "psf.udct").string();
    ASSERT_EQ(run("synth-psf --size 7 --core-sigma 0 --sidelobes 0 --out " + psf).code, 0);
    const CliRun r = run("synth-data --count 4 --hw 16 --psf " + psf + " --out " + (dir / "ds").string());
    ASSERT_EQ(r.code, 0) << r.out;
    const auto data = udc::io::load_dataset((dir / "ds").string());
    ASSERT_EQ(data.size(), 4u);
    // Delta PSF and no noise: degraded equals clean.
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t k = 0; k < data.clean[i].numel(); ++k)
            ASSERT_EQ(data.clean[i].data()[k], data.degraded[i].data()[k]);
    EXPECT_TRUE(fs::exists(dir / "ds" / "meta.txt"));

    ASSERT_EQ(run("synth-data --count 2 --hw 16 --seed 5 --noise-sigma 0.1 --psf " + psf + " --out " +
                  (dir / "s1").string())
                  .code,
              0);
    ASSERT_EQ(run("synth-data --count 2 --hw 16 --seed 5 --noise-sigma 0.1 --psf " + psf + " --out " +
                  (dir / "s2").string())
                  .code,
              0);
    EXPECT_EQ(slurp(dir / "s1" / "degraded" / "0001.udct"), slurp(dir / "s2" / "degraded" / "0001.udct"));

    EXPECT_EQ(run("synth-data --count 1 --hw 16 --psf " + psf + " --out " + (dir / "ds").string()).code, 2);
    EXPECT_EQ(run("synth-data --count 1 --hw 16 --psf /nonexistent.udct --out " + (dir / "x").string()).code, 2);
}

TEST(Cli, TrainEvalInferPipeline) {
    const fs::path dir = scratch("pipe");
    fs::create_directories(dir);
    const std::string psf = (dir / "psf.udct").string();
    ASSERT_EQ(run("synth-psf --size 7 --out " + psf).code, 0);
    ASSERT_EQ(run("synth-data --count 2 --hw 16 --lights 1 --psf " + psf + " --out " + (dir / "ds").string()).code, 0);
    std::ofstream(dir / "run.cfg") << "model.channels = 4\nmodel.blocks = 1,1,1,1,1,1,1\nmodel.branch_blocks = 1\n"
                                      "train.total_iters = 20\ntrain.batch_size = 1\ntrain.patch = 16\n"
                                      "train.log_interval = 5\n";
    const CliRun t = run("train --config " + (dir / "run.cfg").string() + " --data " + (dir / "ds").string() + " --out " +
                      (dir / "out").string());
    ASSERT_EQ(t.code, 0) << t.out;
    const std::string log = slurp(dir / "out" / "train_log.csv");
    EXPECT_EQ(log.substr(0, 13), "iter,lr,loss\n");
    EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 5);

    const CliRun e = run("eval --ckpt " + (dir / "out").string() + " --data " + (dir / "ds").string());
    ASSERT_EQ(e.code, 0) << e.out;
    const std::string report = slurp(dir / "out" / "eval_report.csv");
    EXPECT_EQ(report.substr(0, 17), "name,psnr_db,ssim");
    EXPECT_EQ(std::count(report.begin(), report.end(), '\n'), 4);

    const CliRun i = run("infer --ckpt " + (dir / "out").string() + " --in " + (dir / "ds" / "degraded" / "0000.udct").string() +
                      " --psf " + psf + " --out " + (dir / "restored.udct").string());
    ASSERT_EQ(i.code, 0) << i.out;
    EXPECT_EQ(udc::io::read_udct((dir / "restored.udct").string()).shape(), (udc::Shape{1, 3, 16, 16}));
    EXPECT_TRUE(fs::exists(dir / "restored.png"));

    EXPECT_EQ(run("eval --ckpt " + (dir / "nothing").string() + " --data " + (dir / "ds").string()).code, 2);
    std::ofstream(dir / "bad.cfg") << "train.lr_max = -1\n";
    EXPECT_EQ(run("train --config " + (dir / "bad.cfg").string() + " --data " + (dir / "ds").string() + " --out " +
                  (dir / "out2").string())
                  .code,
              1);
}

TEST(Cli, GradcheckListsEveryOpAndFailsOnInjectedFault) {
    const CliRun ok = run("gradcheck --scope ops --seeds 2");
    EXPECT_EQ(ok.code, 0) << ok.out;
    for (const char* name : {"conv2d", "upsample2x_conv", "sft_apply", "dynamic_conv_k3", "mapping_l1", "plain_l1"}) {
        EXPECT_NE(ok.out.find(name), std::string::npos) << name;
    }
    const CliRun bad = run("gradcheck --scope ops --seeds 2 --inject-fault dynamic_conv");
    EXPECT_EQ(bad.code, 3);
    EXPECT_NE(bad.out.find("gradcheck failed: dynamic_conv"), std::string::npos) << bad.out;
}
