// vgl-lab: config-driven training runs, property verification and plotting.
//
//   vgl_lab run <config> [--seed N] [--out DIR] [--sweep section.key=v1,v2 ...]
//   vgl_lab verify <check> [--env E] [--seed N] [--tol X] [--out DIR]
//   vgl_lab plot <dir>
//
// Exit codes: 0 success, 1 usage or environment error, 2 divergence,
// numerical failure or a failed verification.

#include "vgl/vgl.hpp"
#include "vgl/runner.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace fs = std::filesystem;

namespace {

struct SweepAxis {
    std::string key;
    std::vector<std::string> values;
};

SweepAxis parse_sweep(const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0) throw vgl::UsageError("--sweep expects section.key=v1,v2,...");
    SweepAxis axis{text.substr(0, eq), {}};
    std::stringstream ss(text.substr(eq + 1));
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) throw vgl::UsageError("--sweep " + axis.key + ": empty value");
        axis.values.push_back(item);
    }
    if (axis.values.empty()) throw vgl::UsageError("--sweep " + axis.key + ": no values");
    return axis;
}

struct SweepJob {
    vgl::RunConfig cfg;
    fs::path dir;
};

std::vector<SweepJob> expand_sweep(const vgl::RunConfig& base, const fs::path& out,
                                   const std::vector<SweepAxis>& axes) {
    std::vector<SweepJob> jobs{{base, out}};
    for (const SweepAxis& axis : axes) {
        std::vector<SweepJob> next;
        const std::string leaf = axis.key.substr(axis.key.find('.') + 1);
        for (const SweepJob& job : jobs) {
            for (const std::string& v : axis.values) {
                SweepJob j{vgl::apply_override(job.cfg, axis.key, v), job.dir};
                const std::string part = leaf + "=" + v;
                j.dir = job.dir == out ? out / part : job.dir.parent_path() / (job.dir.filename().string() + "_" + part);
                next.push_back(std::move(j));
            }
        }
        jobs = std::move(next);
    }
    return jobs;
}

unsigned sweep_threads() {
    unsigned n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("VGL_LAB_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1) n = unsigned(v);
        } catch (const std::exception&) {
            throw vgl::UsageError(std::string("VGL_LAB_THREADS must be a positive integer, got '") + env + "'");
        }
    }
    return n;
}

std::string describe(const vgl::RunOutcome& o) {
    std::ostringstream os;
    os << o.dir.string() << ": " << o.rows << " rows, total reward " << o.final_total_reward
       << ", gradient residual " << o.final_gradient_residual << " (" << o.message << ")";
    return os.str();
}

int cmd_run(const std::string& config_path, std::optional<std::uint64_t> seed, std::optional<std::string> out,
            const std::vector<std::string>& sweeps) {
    vgl::RunConfig cfg = vgl::load_config(config_path);
    if (seed) cfg.learner.seed = *seed;
    if (out) cfg.output.dir = *out;
    const fs::path root = cfg.output.dir;

    if (sweeps.empty()) {
        const vgl::RunOutcome o = vgl::run_experiment(cfg, root);
        (o.exit_code == 0 ? std::cout : std::cerr) << describe(o) << '\n';
        return o.exit_code;
    }

    std::vector<SweepAxis> axes;
    for (const auto& s : sweeps) axes.push_back(parse_sweep(s));
    std::vector<SweepJob> jobs = expand_sweep(cfg, root, axes);
    for (SweepJob& j : jobs) j.cfg.output.dir = j.dir.string();

    std::vector<std::string> lines(jobs.size());
    std::vector<int> codes(jobs.size(), 0);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) {
            try {
                const vgl::RunOutcome o = vgl::run_experiment(jobs[i].cfg, jobs[i].dir);
                codes[i] = o.exit_code;
                lines[i] = describe(o);
            } catch (const vgl::Error& e) {
                codes[i] = vgl::kExitUsage;
                lines[i] = jobs[i].dir.string() + ": error: " + e.what();
            }
        }
    };
    const unsigned n = std::min<unsigned>(sweep_threads(), unsigned(jobs.size()));
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    int code = 0;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        (codes[i] == 0 ? std::cout : std::cerr) << lines[i] << '\n';
        code = std::max(code, codes[i]);
    }
    return code;
}

int cmd_verify(const std::string& check, std::optional<std::string> env, std::optional<std::uint64_t> seed,
               std::optional<double> tol, std::optional<std::string> out) {
    vgl::VerifyOptions opts;
    opts.env = env;
    if (seed) opts.seed = *seed;
    opts.tol = tol;
    const vgl::VerificationReport rep = vgl::run_verification(check, opts);
    vgl::print_report(std::cout, rep);
    const fs::path dir = out ? fs::path(*out) : fs::current_path();
    fs::create_directories(dir);
    const fs::path file = dir / ("verify-" + check + ".json");
    std::ofstream os(file);
    if (!os) throw vgl::Error("cannot write " + file.string());
    os << vgl::to_json(rep).dump(2) << '\n';
    std::cout << "report written to " << file.string() << '\n';
    return rep.pass() ? vgl::kExitOk : vgl::kExitNumerical;
}

int cmd_plot(const std::string& dir) {
    for (const auto& p : vgl::plot_run_directory(dir)) std::cout << p.string() << '\n';
    return vgl::kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"vgl-lab: value-gradient learning experiments and property checks"};
    app.require_subcommand(1);

    std::string config_path, check, plot_dir;
    std::optional<std::uint64_t> run_seed, verify_seed;
    std::optional<std::string> run_out, verify_out, verify_env;
    std::optional<double> verify_tol;
    std::vector<std::string> sweeps;

    auto* run = app.add_subcommand("run", "train from an INI config and write run artifacts");
    run->add_option("config", config_path, "config file")->required();
    run->add_option("--seed", run_seed, "override [learner] seed");
    run->add_option("--out", run_out, "override [output] dir");
    run->add_option("--sweep", sweeps, "section.key=v1,v2,... (repeatable; cartesian product)");

    std::string checks_help = "one of:";
    for (const auto& c : vgl::verification_checks()) checks_help += " " + c;
    auto* verify = app.add_subcommand("verify", "run a property check");
    verify->add_option("check", check, checks_help)->required();
    verify->add_option("--env", verify_env, "restrict to one environment");
    verify->add_option("--seed", verify_seed, "random seed (default 1)");
    verify->add_option("--tol", verify_tol, "override the headline tolerance");
    verify->add_option("--out", verify_out, "directory for the JSON report (default: current directory)");

    auto* plot = app.add_subcommand("plot", "regenerate SVG plots of a run directory");
    plot->add_option("dir", plot_dir, "run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : vgl::kExitUsage;
    }

    try {
        if (*run) return cmd_run(config_path, run_seed, run_out, sweeps);
        if (*verify) return cmd_verify(check, verify_env, verify_seed, verify_tol, verify_out);
        if (*plot) return cmd_plot(plot_dir);
    } catch (const vgl::UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return vgl::kExitUsage;
    } catch (const vgl::EnvironmentError& e) {
        std::cerr << "environment error: " << e.what() << '\n';
        return vgl::kExitUsage;
    } catch (const vgl::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return vgl::kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return vgl::kExitUsage;
    }
    return vgl::kExitUsage;
}
