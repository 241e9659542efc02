#pragma once

// Config-driven experiment runs and the artifacts they leave on disk:
//   config.ini        resolved configuration, every field written out
//   log.csv           one row per logged iteration, streamed while training
//   weights.bin       final weights (binary format of weights_io.hpp)
//   weights.json      optional JSON copy of the weights
//   trajectory.csv    greedy trajectory under the final weights
//   summary.json      outcome of the run
//   *.svg             learning curve, residual norms and trajectory plots

#include "vgl/config.hpp"
#include "vgl/learners.hpp"
#include "vgl/report.hpp"
#include "vgl/targets.hpp"
#include "vgl/weights_io.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace vgl {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitNumerical = 2 };

struct RunOutcome {
    int exit_code = kExitOk;
    std::string message;
    std::filesystem::path dir;
    std::size_t rows = 0;
    double final_total_reward = 0.0;
    double final_gradient_residual = 0.0;
    bool diverged = false;
    bool converged = false;
};

namespace detail {

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw Error("cannot write " + p.string());
    os << text;
}

inline nlohmann::json json_number(double v) {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(csv_number(v));
}

}  // namespace detail

/// Writes the SVG plots for a run directory from its log.csv (and
/// trajectory.csv, when present). A zero-length log gives empty axes.
inline std::vector<std::filesystem::path> plot_run_directory(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    const fs::path log = dir / "log.csv";
    if (!fs::exists(log)) throw UsageError("no log.csv in " + dir.string());
    std::vector<LogRow> rows;
    if (fs::file_size(log) > 0) {
        std::ifstream is(log);
        rows = read_log_csv(is);
    }
    std::vector<fs::path> out{dir / "learning_curve.svg", dir / "residuals.svg"};
    detail::write_text(out[0], learning_curve_svg(rows));
    detail::write_text(out[1], residual_svg(rows));
    const fs::path traj = dir / "trajectory.csv";
    if (fs::exists(traj)) {
        std::ifstream is(traj);
        out.push_back(dir / "trajectory.svg");
        detail::write_text(out.back(), trajectory_svg(read_trajectory_states(is)));
    }
    return out;
}

/// Trains according to `cfg` and writes all artifacts into `dir`. Numerical
/// failures (divergence, solver or derivative failures) give exit code 2 with
/// the log written up to the failing iteration; configuration and
/// environment errors propagate as exceptions.
inline RunOutcome run_experiment(const RunConfig& cfg, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    cfg.validate();
    fs::create_directories(dir);
    RunOutcome out;
    out.dir = dir;
    detail::write_text(dir / "config.ini", serialize_config(cfg));

    auto env = cfg.make_env();
    const ApproximatorSpec spec = cfg.approximator_spec(*env);
    TrainOptions opts;
    if (cfg.learner.start == StartSampler::fixed) opts.start_state = cfg.start_state(*env);
    opts.record_wall_time = cfg.output.wall_time;

    std::ofstream log(dir / "log.csv", std::ios::binary);
    if (!log) throw Error("cannot write " + (dir / "log.csv").string());
    write_log_header(log);
    opts.on_iteration = [&](const LogRow& row, const Vector&) {
        write_log_row(log, row);
        ++out.rows;
        out.final_total_reward = row.total_reward;
        out.final_gradient_residual = row.gradient_residual_norm;
        return true;
    };

    TrainResult res;
    bool failed = false;
    try {
        res = train(cfg.learner, env, spec, opts);
    } catch (const UsageError&) {
        throw;
    } catch (const EnvironmentError&) {
        throw;
    } catch (const Error& e) {
        failed = true;
        out.exit_code = kExitNumerical;
        out.message = std::string("numerical failure: ") + e.what();
    }
    log.close();

    if (!failed) {
        // The callback is skipped for the row that ends a run early.
        if (out.rows < res.log.size()) {
            std::ofstream app(dir / "log.csv", std::ios::binary | std::ios::app);
            for (std::size_t i = out.rows; i < res.log.size(); ++i) write_log_row(app, res.log[i]);
            out.rows = res.log.size();
        }
        if (!res.log.empty()) {
            out.final_total_reward = res.log.back().total_reward;
            out.final_gradient_residual = res.log.back().gradient_residual_norm;
        }
        out.diverged = res.diverged;
        out.converged = res.converged;
        save_weights((dir / "weights.bin").string(), res.weights);
        if (cfg.output.weights_json) {
            detail::write_text(dir / "weights.json", weights_to_json(res.weights, to_string(cfg.approx_kind)).dump(2) + "\n");
        }
        if (cfg.output.trajectory_csv) {
            std::ofstream ts(dir / "trajectory.csv", std::ios::binary);
            write_trajectory_csv(ts, res.final_trajectory);
        }
        if (res.diverged) {
            out.exit_code = kExitNumerical;
            out.message = "diverged: " + res.stop_reason;
        } else {
            out.message = res.stop_reason;
        }
    }

    nlohmann::json summary{{"env", cfg.env_name},
                           {"algorithm", to_string(cfg.learner.algorithm)},
                           {"lambda", cfg.learner.lambda},
                           {"omega", to_string(cfg.learner.omega.kind)},
                           {"seed", cfg.learner.seed},
                           {"rows", out.rows},
                           {"final_total_reward", detail::json_number(out.final_total_reward)},
                           {"final_gradient_residual", detail::json_number(out.final_gradient_residual)},
                           {"diverged", out.diverged},
                           {"converged", out.converged},
                           {"exit_code", out.exit_code},
                           {"message", out.message}};
    detail::write_text(dir / "summary.json", summary.dump(2) + "\n");
    if (cfg.output.plots) plot_run_directory(dir);
    return out;
}

}  // namespace vgl
