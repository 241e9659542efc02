// End-to-end checks of the vgl_lab executable: exit codes and artifacts.

#include <vgl/vgl.hpp>

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("vgl_cli_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

int lab(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string("\"") + VGL_LAB_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

fs::path write_config(const fs::path& dir, const std::string& body) {
    const fs::path p = dir / "run.ini";
    std::ofstream(p) << body;
    return p;
}

const char* kQuick = "[env]\nname = lqr1d\n[approximator]\nkind = mlp\nhidden = 4\n"
                     "[learner]\nalgorithm = vgl_batch\nlambda = 1\nalpha = 0.01\niterations = 5\n";

}  // namespace

TEST(Cli, RunWritesArtifactsAndExitsZero) {
    const fs::path d = scratch("run");
    const fs::path cfg = write_config(d, kQuick);
    const int rc = lab("run \"" + cfg.string() + "\" --out \"" + (d / "out").string() + "\" --seed 4", d / "stdout");
    EXPECT_EQ(rc, 0) << slurp(d / "stdout");
    EXPECT_TRUE(fs::exists(d / "out" / "log.csv"));
    EXPECT_TRUE(fs::exists(d / "out" / "learning_curve.svg"));
    EXPECT_EQ(vgl::load_config((d / "out" / "config.ini").string()).learner.seed, 4u);
}

TEST(Cli, ShippedConfigsParse) {
    for (const char* name : {"lqr1d_vgl_pgl.ini", "bangbang1d_vgl.ini", "nav2d_vgl.ini"}) {
        EXPECT_NO_THROW(vgl::load_config(std::string(VGL_CONFIG_DIR) + "/" + name)) << name;
    }
}

TEST(Cli, BadConfigExitsOne) {
    const fs::path d = scratch("bad");
    const fs::path cfg = write_config(d, "[learner]\nlambda = 1.5\n");
    EXPECT_EQ(lab("run \"" + cfg.string() + "\"", d / "stdout"), 1);
    EXPECT_NE(slurp(d / "stdout").find("lambda"), std::string::npos);
    EXPECT_EQ(lab("run \"" + (d / "missing.ini").string() + "\"", d / "stdout"), 1);
}

TEST(Cli, UsageErrorsExitOne) {
    const fs::path d = scratch("usage");
    EXPECT_EQ(lab("", d / "stdout"), 1);
    EXPECT_EQ(lab("verify no-such-check", d / "stdout"), 1);
    EXPECT_EQ(lab("plot \"" + d.string() + "\"", d / "stdout"), 1);
    EXPECT_EQ(lab("frobnicate", d / "stdout"), 1);
}

TEST(Cli, DivergenceExitsTwo) {
    const fs::path d = scratch("diverge");
    const fs::path cfg = write_config(d, kQuick);
    const int rc = lab("run \"" + cfg.string() + "\" --out \"" + (d / "out").string() +
                           "\" --sweep learner.alpha=1000 --sweep learner.iterations=300",
                       d / "stdout");
    EXPECT_EQ(rc, 2) << slurp(d / "stdout");
    EXPECT_TRUE(fs::exists(d / "out" / "alpha=1000_iterations=300" / "log.csv"));
}

TEST(Cli, VerifyLambdaReturnPassesAndWritesJson) {
    const fs::path d = scratch("verify");
    const int rc = lab("verify lambda-return --seed 7 --out \"" + d.string() + "\"", d / "stdout");
    EXPECT_EQ(rc, 0) << slurp(d / "stdout");
    const auto j = nlohmann::json::parse(slurp(d / "verify-lambda-return.json"));
    EXPECT_EQ(j.at("check"), "lambda-return");
    EXPECT_EQ(j.at("pass"), true);
}

TEST(Cli, PlotOnEmptyLogExitsZero) {
    const fs::path d = scratch("plot");
    std::ofstream(d / "log.csv").close();
    EXPECT_EQ(lab("plot \"" + d.string() + "\"", d / "stdout"), 0) << slurp(d / "stdout");
    EXPECT_TRUE(fs::exists(d / "learning_curve.svg"));
}

TEST(Cli, SweepIsCartesianProduct) {
    const fs::path d = scratch("sweep");
    const fs::path cfg = write_config(d, kQuick);
    const int rc = lab("run \"" + cfg.string() + "\" --out \"" + (d / "out").string() +
                           "\" --sweep learner.lambda=0,1 --sweep learner.seed=1,2",
                       d / "stdout");
    EXPECT_EQ(rc, 0) << slurp(d / "stdout");
    for (const char* sub : {"lambda=0_seed=1", "lambda=0_seed=2", "lambda=1_seed=1", "lambda=1_seed=2"}) {
        EXPECT_TRUE(fs::exists(d / "out" / sub / "log.csv")) << sub;
    }
    EXPECT_EQ(vgl::load_config((d / "out" / "lambda=0_seed=2" / "config.ini").string()).learner.lambda, 0.0);
}
