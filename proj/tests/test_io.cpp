#include <vgl/runner.hpp>
#include <vgl/vgl.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <regex>
#include <sstream>

namespace fs = std::filesystem;
using vgl::Vector;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("vgl_io_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

const char* kSmallConfig = R"([env]
name = lqr1d
start = 0.8

[approximator]
kind = mlp
hidden = 5

[learner]
algorithm = vgl_batch
lambda = 0.5
alpha = 0.01
iterations = 15
seed = 3
)";

}  // namespace

TEST(Config, DefaultsFilledIn) {
    const auto cfg = vgl::parse_config_string(kSmallConfig);
    EXPECT_EQ(cfg.env_name, "lqr1d");
    EXPECT_EQ(cfg.env_params.at("c"), 0.1);
    EXPECT_EQ(cfg.hidden, 5);
    EXPECT_EQ(cfg.learner.lambda, 0.5);
    EXPECT_EQ(cfg.learner.gamma, 1.0);
    EXPECT_EQ(cfg.output.dir, "out");
}

TEST(Config, RoundTripIsIdentity) {
    for (const std::string name : {"lqr1d_vgl_pgl.ini", "bangbang1d_vgl.ini", "nav2d_vgl.ini"}) {
        const auto a = vgl::load_config(std::string(VGL_CONFIG_DIR) + "/" + name);
        const std::string text = vgl::serialize_config(a);
        const auto b = vgl::parse_config_string(text);
        EXPECT_TRUE(a == b) << name;
        EXPECT_EQ(vgl::serialize_config(b), text) << name;
    }
}

TEST(Config, RoundTripKeepsNonDefaultFields) {
    auto cfg = vgl::parse_config_string(kSmallConfig);
    cfg.learner.omega = vgl::OmegaSpec::diag(Eigen::Vector2d(0.25, 3.0));
    cfg.learner.tolerances.max_condition = 1e10;
    cfg.learner.stop_gradient_residual = 1e-7;
    cfg.output.weights_json = true;
    cfg.start_time = 2.0;
    EXPECT_TRUE(vgl::parse_config_string(vgl::serialize_config(cfg)) == cfg);
}

TEST(Config, ErrorsNameLineOrField) {
    try {
        vgl::parse_config_string("[learner]\nalpha = x\n", "bad.ini");
        FAIL();
    } catch (const vgl::ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("bad.ini: [learner] alpha"), std::string::npos) << e.what();
    }
    try {
        vgl::parse_config_string("[env\nname = lqr1d\n", "bad.ini");
        FAIL();
    } catch (const vgl::ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("bad.ini:1:"), std::string::npos) << e.what();
    }
    EXPECT_THROW(vgl::parse_config_string("[env]\nname = nowhere\n"), vgl::ConfigError);
    EXPECT_THROW(vgl::parse_config_string("[learner]\nlambda = 2\n"), vgl::ConfigError);
    EXPECT_THROW(vgl::parse_config_string("[learner]\nomega = diagonal\n"), vgl::ConfigError);
    EXPECT_THROW(vgl::parse_config_string("[colour]\nx = 1\n"), vgl::ConfigError);
    EXPECT_THROW(vgl::parse_config_string("[env]\nname = lqr1d\nstart_time = 10\n"), vgl::ConfigError);
}

TEST(Config, OverrideSetsOneField) {
    const auto cfg = vgl::parse_config_string(kSmallConfig);
    const auto o = vgl::apply_override(cfg, "learner.lambda", "0.25");
    EXPECT_EQ(o.learner.lambda, 0.25);
    auto back = o;
    back.learner.lambda = cfg.learner.lambda;
    EXPECT_TRUE(back == cfg);
    const auto e = vgl::apply_override(cfg, "env.name", "nav2d");
    EXPECT_EQ(e.env_name, "nav2d");
    EXPECT_TRUE(e.start.empty());
    EXPECT_THROW(vgl::apply_override(cfg, "lambda", "1"), vgl::ConfigError);
}

TEST(Weights, BinaryRoundTripAndHeader) {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> nd;
    Vector w(37);
    for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = nd(rng);
    std::stringstream ss;
    vgl::write_weights_binary(ss, w);
    const std::string bytes = ss.str();
    ASSERT_EQ(bytes.size(), 16u + 8u * 37u);
    EXPECT_EQ(bytes.substr(0, 4), "VGLW");
    EXPECT_EQ(bytes[4], 1);    // version, little-endian
    EXPECT_EQ(bytes[8], 37);   // dim, little-endian
    EXPECT_EQ(vgl::read_weights_binary(ss), w);
}

TEST(Weights, RejectsForeignAndTruncatedFiles) {
    std::stringstream bad("NOPE0000");
    EXPECT_THROW(vgl::read_weights_binary(bad), vgl::Error);
    std::stringstream ss;
    vgl::write_weights_binary(ss, Vector::Ones(4));
    std::string s = ss.str();
    s.resize(s.size() - 3);
    std::stringstream cut(s);
    EXPECT_THROW(vgl::read_weights_binary(cut), vgl::Error);
}

TEST(Weights, JsonRoundTrip) {
    const Vector w = Eigen::Vector3d(0.1, -2.5, 1e-300);
    const auto j = vgl::weights_to_json(w, "mlp");
    EXPECT_EQ(j.at("dim"), 3);
    EXPECT_EQ(vgl::weights_from_json(nlohmann::json::parse(j.dump())), w);
}

TEST(LogCsv, RoundTripAndVersionLine) {
    std::vector<vgl::LogRow> rows(3);
    for (int i = 0; i < 3; ++i) {
        rows[i].iteration = i;
        rows[i].total_reward = -1.0 / (i + 1);
        rows[i].gradient_residual_norm = i == 2 ? std::numeric_limits<double>::quiet_NaN() : 0.1 * i;
    }
    std::stringstream ss;
    vgl::write_log_csv(ss, rows);
    EXPECT_EQ(ss.str().rfind("# vgl-lab log v1\n"
                             "iteration,total_reward,value_residual_norm,gradient_residual_norm,max_dRda,"
                             "saturated_fraction,wall_time_ms\n",
                             0),
              0u);
    const auto back = vgl::read_log_csv(ss);
    ASSERT_EQ(back.size(), 3u);
    EXPECT_EQ(back[1].total_reward, rows[1].total_reward);
    EXPECT_TRUE(std::isnan(back[2].gradient_residual_norm));
}

TEST(Svg, EmptyLogGivesEmptyAxes) {
    const std::string svg = vgl::learning_curve_svg({});
    EXPECT_NE(svg.find("<svg"), std::string::npos);
    EXPECT_NE(svg.find("class=\"axes\""), std::string::npos);
    EXPECT_NE(svg.find("data-points=\"0\""), std::string::npos);
}

TEST(Runner, ArtifactsAndByteIdenticalLogs) {
    auto cfg = vgl::parse_config_string(kSmallConfig);
    const fs::path d1 = fresh_dir("run1"), d2 = fresh_dir("run2");
    const auto o1 = vgl::run_experiment(cfg, d1);
    const auto o2 = vgl::run_experiment(cfg, d2);
    EXPECT_EQ(o1.exit_code, 0);
    EXPECT_EQ(o1.rows, 16u);
    for (const char* f : {"config.ini", "log.csv", "weights.bin", "trajectory.csv", "summary.json",
                          "learning_curve.svg", "residuals.svg", "trajectory.svg"}) {
        EXPECT_TRUE(fs::exists(d1 / f)) << f;
    }
    EXPECT_EQ(slurp(d1 / "log.csv"), slurp(d2 / "log.csv"));
    EXPECT_EQ(slurp(d1 / "weights.bin"), slurp(d2 / "weights.bin"));
    // The written config reproduces the run.
    EXPECT_TRUE(vgl::load_config((d1 / "config.ini").string()) == cfg);
    const auto summary = nlohmann::json::parse(slurp(d1 / "summary.json"));
    EXPECT_EQ(summary.at("exit_code"), 0);
    EXPECT_EQ(summary.at("rows"), 16);
}

TEST(Runner, ZeroIterationsLogsOneRow) {
    auto cfg = vgl::apply_override(vgl::parse_config_string(kSmallConfig), "learner.iterations", "0");
    const fs::path d = fresh_dir("zero");
    const auto o = vgl::run_experiment(cfg, d);
    EXPECT_EQ(o.exit_code, 0);
    std::ifstream is(d / "log.csv");
    EXPECT_EQ(vgl::read_log_csv(is).size(), 1u);
}

TEST(Runner, DivergenceExitsTwoAndKeepsLog) {
    auto cfg = vgl::apply_override(vgl::parse_config_string(kSmallConfig), "learner.alpha", "1000");
    cfg = vgl::apply_override(cfg, "learner.iterations", "300");
    const fs::path d = fresh_dir("diverge");
    const auto o = vgl::run_experiment(cfg, d);
    EXPECT_EQ(o.exit_code, 2);
    std::ifstream is(d / "log.csv");
    EXPECT_GE(vgl::read_log_csv(is).size(), 1u);
}

TEST(Runner, PlotEmptyLog) {
    const fs::path d = fresh_dir("empty");
    std::ofstream(d / "log.csv").close();
    const auto files = vgl::plot_run_directory(d);
    ASSERT_EQ(files.size(), 2u);
    EXPECT_NE(slurp(files[0]).find("data-points=\"0\""), std::string::npos);
}

TEST(Runner, PlotMissingLogIsUsageError) {
    EXPECT_THROW(vgl::plot_run_directory(fresh_dir("missing")), vgl::UsageError);
}

TEST(Runner, Nav2dTrajectoryPlotHasHorizonPlusOnePoints) {
    auto cfg = vgl::apply_override(vgl::parse_config_string(kSmallConfig), "env.name", "nav2d");
    cfg = vgl::apply_override(cfg, "learner.iterations", "2");
    const fs::path d = fresh_dir("nav");
    ASSERT_EQ(vgl::run_experiment(cfg, d).exit_code, 0);
    const std::string svg = slurp(d / "trajectory.svg");
    EXPECT_NE(svg.find("data-points=\"16\""), std::string::npos);
    int circles = 0;
    for (auto pos = svg.find("<circle class=\"point\""); pos != std::string::npos;
         pos = svg.find("<circle class=\"point\"", pos + 1)) {
        ++circles;
    }
    EXPECT_EQ(circles, 16);
}

TEST(Runner, MonotoneBpttCurveInSvgData) {
    auto cfg = vgl::apply_override(vgl::parse_config_string(kSmallConfig), "learner.algorithm", "bptt");
    cfg = vgl::apply_override(cfg, "learner.alpha", "0.001");
    cfg = vgl::apply_override(cfg, "learner.iterations", "60");
    const fs::path d = fresh_dir("bptt");
    ASSERT_EQ(vgl::run_experiment(cfg, d).exit_code, 0);
    const std::string svg = slurp(d / "learning_curve.svg");
    std::smatch m;
    ASSERT_TRUE(std::regex_search(svg, m, std::regex("data-values=\"([^\"]*)\"")));
    std::stringstream ss(m[1].str());
    std::string pair;
    double prev = -std::numeric_limits<double>::infinity();
    int count = 0;
    while (ss >> pair) {
        const double y = std::stod(pair.substr(pair.find(',') + 1));
        EXPECT_GE(y - prev, -1e-9);
        prev = y;
        ++count;
    }
    EXPECT_EQ(count, 61);
}
