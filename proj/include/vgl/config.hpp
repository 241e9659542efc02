#pragma once

// Run configuration: an INI file with [env], [approximator], [learner] and
// [output] sections. Every key has a default; unknown keys are rejected.

#include "vgl/approximator.hpp"
#include "vgl/learners.hpp"
#include "vgl/model.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace vgl {

class ConfigError : public UsageError {
public:
    using UsageError::UsageError;
};

struct OutputConfig {
    std::string dir = "out";
    bool plots = true;
    bool trajectory_csv = true;
    bool weights_json = false;
    bool wall_time = false;  ///< off keeps the log byte-deterministic

    bool operator==(const OutputConfig&) const = default;
};

struct RunConfig {
    std::string env_name = "lqr1d";
    ParamMap env_params;          ///< full parameter record, defaults filled in
    std::vector<double> start;    ///< non-time start components; empty = environment default
    double start_time = 0.0;
    ApproximatorKind approx_kind = ApproximatorKind::mlp;
    int hidden = 12;
    bool terminal_mask = true;
    LearnerConfig learner;
    OutputConfig output;

    bool operator==(const RunConfig& o) const {
        const LearnerConfig& a = learner;
        const LearnerConfig& b = o.learner;
        const Tolerances& ta = a.tolerances;
        const Tolerances& tb = b.tolerances;
        return env_name == o.env_name && env_params == o.env_params && start == o.start &&
               start_time == o.start_time && approx_kind == o.approx_kind && hidden == o.hidden &&
               terminal_mask == o.terminal_mask && output == o.output && a.algorithm == b.algorithm &&
               a.lambda == b.lambda && a.gamma == b.gamma && a.alpha == b.alpha && a.omega == b.omega &&
               a.iterations == b.iterations && a.start == b.start && a.seed == b.seed &&
               a.true_online == b.true_online && a.stop_gradient_residual == b.stop_gradient_residual &&
               ta.saturation == tb.saturation && ta.stationarity == tb.stationarity &&
               ta.solver_gradient == tb.solver_gradient &&
               ta.solver_max_iterations == tb.solver_max_iterations &&
               ta.multistart_points == tb.multistart_points && ta.max_condition == tb.max_condition &&
               ta.extremality == tb.extremality && ta.divergence_norm == tb.divergence_norm;
    }

    std::shared_ptr<const Environment> make_env() const { return make_environment(env_name, env_params); }

    ApproximatorSpec approximator_spec(const Environment& env) const {
        return ApproximatorSpec::for_environment(env, approx_kind, hidden, terminal_mask);
    }

    Vector start_state(const Environment& env) const {
        Vector x = env.default_start();
        if (!start.empty()) {
            require_dim(Eigen::Index(start.size()), env.n() - 1, "[env] start");
            for (std::size_t i = 0; i < start.size(); ++i) x(Eigen::Index(i)) = start[i];
        }
        x(env.time_index()) = start_time;
        if (env.is_terminal(x)) throw ConfigError("[env] start_time leaves no steps before the horizon");
        return x;
    }

    /// Cross-field checks that need the environment.
    void validate() const {
        learner.validate();
        auto env = make_env();
        if (hidden <= 0) throw ConfigError("[approximator] hidden must be positive");
        if (learner.omega.kind == OmegaKind::diagonal) {
            require_dim(learner.omega.diagonal.size(), env->n(), "[learner] omega_diagonal");
        }
        if (start_time < 0.0) throw ConfigError("[env] start_time must be >= 0");
        (void)start_state(*env);
    }
};

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline double parse_double(const std::string& field, const std::string& s) {
    double v = 0.0;
    const char* b = s.data();
    const char* e = b + s.size();
    while (b < e && *b == ' ') ++b;
    while (e > b && e[-1] == ' ') --e;
    const auto r = std::from_chars(b, e, v);
    if (r.ec != std::errc() || r.ptr != e) throw ConfigError(field + ": '" + s + "' is not a number");
    return v;
}

inline long long parse_int(const std::string& field, const std::string& s) {
    const double v = parse_double(field, s);
    if (v != std::floor(v) || std::abs(v) > 9e15) throw ConfigError(field + ": '" + s + "' is not an integer");
    return static_cast<long long>(v);
}

inline bool parse_bool(const std::string& field, const std::string& s) {
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError(field + ": '" + s + "' is not a boolean");
}

inline std::vector<double> parse_list(const std::string& field, const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_double(field, item));
    return out;
}

inline std::string format_list(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
    return s;
}

}  // namespace detail

/// Parses INI text. `source` names the file in error messages.
inline RunConfig parse_config(std::istream& is, const std::string& source = "config") {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        pt::read_ini(is, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(source + ":" + std::to_string(e.line()) + ": " + e.message());
    }
    RunConfig cfg;
    const std::set<std::string> sections{"env", "approximator", "learner", "output"};
    for (const auto& [name, sub] : tree) {
        if (!sections.count(name)) throw ConfigError(source + ": unknown section [" + name + "]");
        if (sub.empty() && !sub.data().empty()) throw ConfigError(source + ": key '" + name + "' outside a section");
    }

    auto field = [&](const std::string& sec, const std::string& key) { return source + ": [" + sec + "] " + key; };

    if (auto env = tree.get_child_optional("env")) {
        if (auto n = env->get_optional<std::string>("name")) cfg.env_name = *n;
        ParamMap defaults;
        try {
            defaults = environment_defaults(cfg.env_name);
        } catch (const UsageError& e) {
            throw ConfigError(field("env", "name") + ": " + e.what());
        }
        for (const auto& [key, node] : *env) {
            const std::string v = node.data();
            if (key == "name") continue;
            if (key == "start") cfg.start = detail::parse_list(field("env", key), v);
            else if (key == "start_time") cfg.start_time = detail::parse_double(field("env", key), v);
            else if (defaults.count(key)) cfg.env_params[key] = detail::parse_double(field("env", key), v);
            else throw ConfigError(field("env", key) + ": unknown parameter for " + cfg.env_name);
        }
    }
    try {
        for (const auto& [key, def] : environment_defaults(cfg.env_name)) cfg.env_params.try_emplace(key, def);
    } catch (const UsageError& e) {
        throw ConfigError(field("env", "name") + ": " + e.what());
    }
    if (auto ap = tree.get_child_optional("approximator")) {
        for (const auto& [key, node] : *ap) {
            const std::string v = node.data();
            const std::string f = field("approximator", key);
            if (key == "kind") cfg.approx_kind = parse_approximator_kind(v);
            else if (key == "hidden") cfg.hidden = int(detail::parse_int(f, v));
            else if (key == "terminal_mask") cfg.terminal_mask = detail::parse_bool(f, v);
            else throw ConfigError(f + ": unknown key");
        }
    }
    std::vector<double> diag;
    if (auto ln = tree.get_child_optional("learner")) {
        LearnerConfig& l = cfg.learner;
        Tolerances& t = l.tolerances;
        for (const auto& [key, node] : *ln) {
            const std::string v = node.data();
            const std::string f = field("learner", key);
            try {
                if (key == "algorithm") l.algorithm = parse_algorithm(v);
                else if (key == "lambda") l.lambda = detail::parse_double(f, v);
                else if (key == "gamma") l.gamma = detail::parse_double(f, v);
                else if (key == "alpha") l.alpha = detail::parse_double(f, v);
                else if (key == "omega") l.omega.kind = parse_omega_kind(v);
                else if (key == "omega_diagonal") diag = detail::parse_list(f, v);
                else if (key == "iterations") l.iterations = int(detail::parse_int(f, v));
                else if (key == "start_sampler") l.start = parse_start_sampler(v);
                else if (key == "seed") l.seed = std::uint64_t(detail::parse_int(f, v));
                else if (key == "true_online") l.true_online = detail::parse_bool(f, v);
                else if (key == "stop_gradient_residual") l.stop_gradient_residual = detail::parse_double(f, v);
                else if (key == "tol_saturation") t.saturation = detail::parse_double(f, v);
                else if (key == "tol_stationarity") t.stationarity = detail::parse_double(f, v);
                else if (key == "tol_solver_gradient") t.solver_gradient = detail::parse_double(f, v);
                else if (key == "solver_max_iterations") t.solver_max_iterations = int(detail::parse_int(f, v));
                else if (key == "multistart_points") t.multistart_points = int(detail::parse_int(f, v));
                else if (key == "max_condition") t.max_condition = detail::parse_double(f, v);
                else if (key == "tol_extremality") t.extremality = detail::parse_double(f, v);
                else if (key == "divergence_norm") t.divergence_norm = detail::parse_double(f, v);
                else throw ConfigError(f + ": unknown key");
            } catch (const ConfigError&) {
                throw;
            } catch (const UsageError& e) {
                throw ConfigError(f + ": " + e.what());
            }
        }
    }
    if (cfg.learner.omega.kind == OmegaKind::diagonal) {
        if (diag.empty()) throw ConfigError(field("learner", "omega_diagonal") + ": required for omega = diagonal");
        try {
            cfg.learner.omega = OmegaSpec::diag(Eigen::Map<const Vector>(diag.data(), Eigen::Index(diag.size())));
        } catch (const UsageError& e) {
            throw ConfigError(field("learner", "omega_diagonal") + ": " + e.what());
        }
    } else if (!diag.empty()) {
        throw ConfigError(field("learner", "omega_diagonal") + ": only valid with omega = diagonal");
    }
    if (auto out = tree.get_child_optional("output")) {
        for (const auto& [key, node] : *out) {
            const std::string v = node.data();
            const std::string f = field("output", key);
            if (key == "dir") cfg.output.dir = v;
            else if (key == "plots") cfg.output.plots = detail::parse_bool(f, v);
            else if (key == "trajectory_csv") cfg.output.trajectory_csv = detail::parse_bool(f, v);
            else if (key == "weights_json") cfg.output.weights_json = detail::parse_bool(f, v);
            else if (key == "wall_time") cfg.output.wall_time = detail::parse_bool(f, v);
            else throw ConfigError(f + ": unknown key");
        }
    }
    try {
        cfg.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const UsageError& e) {
        throw ConfigError(source + ": " + e.what());
    }
    return cfg;
}

inline RunConfig parse_config_string(const std::string& text, const std::string& source = "config") {
    std::istringstream is(text);
    return parse_config(is, source);
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config '" + path + "'");
    return parse_config(is, path);
}

/// Writes every field, defaults included, so the output documents the full run.
inline std::string serialize_config(const RunConfig& cfg) {
    using detail::format_double;
    std::ostringstream os;
    const ParamMap params = environment_defaults(cfg.env_name);
    os << "[env]\nname = " << cfg.env_name << '\n';
    for (const auto& [key, def] : params) {
        if (key == "start") continue;  // the [env] start key is the start-position list
        const auto it = cfg.env_params.find(key);
        os << key << " = " << format_double(it == cfg.env_params.end() ? def : it->second) << '\n';
    }
    if (!cfg.start.empty()) os << "start = " << detail::format_list(cfg.start) << '\n';
    os << "start_time = " << format_double(cfg.start_time) << "\n\n";

    os << "[approximator]\nkind = " << to_string(cfg.approx_kind) << "\nhidden = " << cfg.hidden
       << "\nterminal_mask = " << (cfg.terminal_mask ? "true" : "false") << "\n\n";

    const LearnerConfig& l = cfg.learner;
    const Tolerances& t = l.tolerances;
    os << "[learner]\nalgorithm = " << to_string(l.algorithm) << "\nlambda = " << format_double(l.lambda)
       << "\ngamma = " << format_double(l.gamma) << "\nalpha = " << format_double(l.alpha)
       << "\nomega = " << to_string(l.omega.kind) << '\n';
    if (l.omega.kind == OmegaKind::diagonal) {
        os << "omega_diagonal = "
           << detail::format_list(std::vector<double>(l.omega.diagonal.data(),
                                                      l.omega.diagonal.data() + l.omega.diagonal.size()))
           << '\n';
    }
    os << "iterations = " << l.iterations << "\nstart_sampler = " << to_string(l.start) << "\nseed = " << l.seed
       << "\ntrue_online = " << (l.true_online ? "true" : "false")
       << "\nstop_gradient_residual = " << format_double(l.stop_gradient_residual)
       << "\ntol_saturation = " << format_double(t.saturation)
       << "\ntol_stationarity = " << format_double(t.stationarity)
       << "\ntol_solver_gradient = " << format_double(t.solver_gradient)
       << "\nsolver_max_iterations = " << t.solver_max_iterations
       << "\nmultistart_points = " << t.multistart_points
       << "\nmax_condition = " << format_double(t.max_condition)
       << "\ntol_extremality = " << format_double(t.extremality)
       << "\ndivergence_norm = " << format_double(t.divergence_norm) << "\n\n";

    os << "[output]\ndir = " << cfg.output.dir << "\nplots = " << (cfg.output.plots ? "true" : "false")
       << "\ntrajectory_csv = " << (cfg.output.trajectory_csv ? "true" : "false")
       << "\nweights_json = " << (cfg.output.weights_json ? "true" : "false")
       << "\nwall_time = " << (cfg.output.wall_time ? "true" : "false") << '\n';
    return os.str();
}

/// Sets one "section.key" entry and re-validates. Changing env.name drops the
/// previous environment's parameters and start position.
inline RunConfig apply_override(const RunConfig& cfg, const std::string& dotted_key, const std::string& value) {
    namespace pt = boost::property_tree;
    const auto dot = dotted_key.find('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 == dotted_key.size()) {
        throw ConfigError("override '" + dotted_key + "': expected section.key");
    }
    std::istringstream in(serialize_config(cfg));
    pt::ptree tree;
    pt::read_ini(in, tree);
    if (dotted_key == "env.name") {
        pt::ptree env;
        env.put("name", value);
        env.put("start_time", tree.get<std::string>("env.start_time"));
        tree.put_child("env", env);
    } else {
        tree.put(dotted_key, value);
    }
    std::ostringstream out;
    pt::write_ini(out, tree);
    return parse_config_string(out.str(), "override " + dotted_key + "=" + value);
}

}  // namespace vgl
