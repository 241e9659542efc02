#pragma once

// Weight updates: value learning (VL / TD(lambda)), value-gradient learning in
// batch and online (eligibility trace) form, and policy-gradient ascent on the
// greedy policy through the model (BPTT). Updates are returned, not applied;
// `train` owns the iteration loop.

#include "vgl/approximator.hpp"
#include "vgl/core.hpp"
#include "vgl/model.hpp"
#include "vgl/policy.hpp"
#include "vgl/targets.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace vgl {

enum class OmegaKind { identity, diagonal, pgl };

struct OmegaSpec {
    OmegaKind kind = OmegaKind::identity;
    Vector diagonal;  ///< used by the diagonal kind; every entry > 0

    static OmegaSpec identity() { return {}; }
    static OmegaSpec pgl() { return {OmegaKind::pgl, {}}; }
    static OmegaSpec diag(Vector d) {
        if (d.size() == 0 || !(d.array() > 0.0).all() || !d.allFinite()) {
            throw UsageError("diagonal omega needs strictly positive finite entries");
        }
        return {OmegaKind::diagonal, std::move(d)};
    }
    bool operator==(const OmegaSpec& o) const {
        return kind == o.kind && diagonal.size() == o.diagonal.size() &&
               (diagonal.size() == 0 || diagonal == o.diagonal);
    }
};

inline std::string to_string(OmegaKind k) {
    switch (k) {
        case OmegaKind::identity: return "identity";
        case OmegaKind::diagonal: return "diagonal";
        case OmegaKind::pgl: return "pgl";
    }
    return "?";
}

inline OmegaKind parse_omega_kind(const std::string& s) {
    if (s == "identity") return OmegaKind::identity;
    if (s == "diagonal") return OmegaKind::diagonal;
    if (s == "pgl") return OmegaKind::pgl;
    throw UsageError("unknown omega kind '" + s + "' (identity, diagonal, pgl)");
}

enum class Algorithm { vl, vgl_batch, vgl_online, bptt };

inline std::string to_string(Algorithm a) {
    switch (a) {
        case Algorithm::vl: return "vl";
        case Algorithm::vgl_batch: return "vgl_batch";
        case Algorithm::vgl_online: return "vgl_online";
        case Algorithm::bptt: return "bptt";
    }
    return "?";
}

inline Algorithm parse_algorithm(const std::string& s) {
    if (s == "vl") return Algorithm::vl;
    if (s == "vgl_batch") return Algorithm::vgl_batch;
    if (s == "vgl_online") return Algorithm::vgl_online;
    if (s == "bptt") return Algorithm::bptt;
    throw UsageError("unknown algorithm '" + s + "' (vl, vgl_batch, vgl_online, bptt)");
}

enum class StartSampler { fixed, uniform };

inline std::string to_string(StartSampler s) { return s == StartSampler::fixed ? "fixed" : "uniform"; }

inline StartSampler parse_start_sampler(const std::string& s) {
    if (s == "fixed") return StartSampler::fixed;
    if (s == "uniform") return StartSampler::uniform;
    throw UsageError("unknown start sampler '" + s + "' (fixed, uniform)");
}

struct LearnerConfig {
    Algorithm algorithm = Algorithm::vgl_batch;
    double lambda = 1.0;
    double gamma = 1.0;
    double alpha = 1e-3;
    OmegaSpec omega;
    int iterations = 1000;
    StartSampler start = StartSampler::fixed;
    std::uint64_t seed = 1;
    /// Apply vgl_online updates after every step instead of once per trajectory.
    bool true_online = false;
    /// Stop early once max_t |G' - G| falls below this (0 disables).
    double stop_gradient_residual = 0.0;
    Tolerances tolerances;

    void validate() const {
        if (!(lambda >= 0.0 && lambda <= 1.0)) throw UsageError("lambda must lie in [0, 1]");
        if (!(gamma >= 0.0 && gamma <= 1.0)) throw UsageError("gamma must lie in [0, 1]");
        if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw UsageError("alpha must be finite and >= 0");
        if (iterations < 0) throw UsageError("iterations must be >= 0");
        if (!(stop_gradient_residual >= 0.0)) throw UsageError("stop_gradient_residual must be >= 0");
        if (true_online && algorithm != Algorithm::vgl_online) {
            throw UsageError("true_online applies to vgl_online only");
        }
    }
};

struct UpdateReport {
    Vector delta_w;
    std::vector<double> value_residuals;    ///< V'_t - V_t (vl)
    std::vector<Vector> gradient_residuals; ///< G'_t - G_t (vgl, bptt)
    double total_reward = 0.0;
    std::size_t saturated_components = 0;
    std::size_t action_components = 0;
    std::vector<double> omega_condition;

    double max_gradient_residual() const {
        double m = 0.0;
        for (const Vector& r : gradient_residuals) m = std::max(m, r.norm());
        return m;
    }
};

namespace detail {

inline void check_gamma(const GreedyPolicy& policy, const LearnerConfig& cfg) {
    if (policy.gamma() != cfg.gamma) throw UsageError("policy and learner disagree on gamma");
}

inline void fill_common(UpdateReport& rep, const Trajectory& traj, double gamma) {
    rep.total_reward = discounted_return(traj, gamma);
    rep.action_components = 0;
    rep.saturated_components = 0;
    for (const Mask& s : traj.saturated) {
        rep.action_components += std::size_t(s.size());
        rep.saturated_components += std::size_t(s.count());
    }
}

inline double condition_number(const Matrix& m) {
    if (m.isDiagonal(0.0)) {
        const Vector d = m.diagonal().cwiseAbs();
        return d.minCoeff() > 0.0 ? d.maxCoeff() / d.minCoeff() : std::numeric_limits<double>::infinity();
    }
    const Vector ev = Eigen::SelfAdjointEigenSolver<Matrix>(m, Eigen::EigenvaluesOnly).eigenvalues().cwiseAbs();
    const double lo = ev.minCoeff();
    return lo > 0.0 ? ev.maxCoeff() / lo : std::numeric_limits<double>::infinity();
}

}  // namespace detail

/// -(df/da)^T H^{-1} (df/da) for the greedy step with context `c`, where H is
/// the full action Hessian of Q. Requires every action component unsaturated.
inline Matrix pgl_omega(const GreedyPolicy& policy, const GreedyActionResult& g, const StepContext& c,
                        std::size_t step) {
    if (g.saturated.any()) throw OmegaSingular("pgl omega needs unsaturated actions", step);
    const Matrix h = policy.action_hessian(c.jac, c.d2, c.succ);
    std::vector<Eigen::Index> all(std::size_t(h.rows()));
    for (Eigen::Index i = 0; i < h.rows(); ++i) all[std::size_t(i)] = i;
    Matrix hinv;
    try {
        hinv = policy.restricted_inverse(h, all, g.ambiguous);
    } catch (const DerivativeUndefined& e) {
        throw OmegaSingular(std::string("pgl omega: ") + e.what(), step);
    }
    Matrix om = -c.jac.df_da.transpose() * hinv * c.jac.df_da;
    return 0.5 * (om + om.transpose());
}

/// The per-step matrix of a given kind. For pgl this is the single-step form
/// built from the greedy step `g` with context `c`.
inline Matrix make_omega(const OmegaSpec& spec, const GreedyPolicy& policy, const GreedyActionResult* g,
                         const StepContext* c, std::size_t step) {
    const Eigen::Index n = policy.env().n();
    switch (spec.kind) {
        case OmegaKind::identity: return Matrix::Identity(n, n);
        case OmegaKind::diagonal:
            require_dim(spec.diagonal.size(), n, "diagonal omega");
            return spec.diagonal.asDiagonal();
        case OmegaKind::pgl:
            if (!g || !c) throw UsageError("pgl omega needs a greedy step context");
            return pgl_omega(policy, *g, *c, step);
    }
    throw UsageError("bad omega kind");
}

/// Omega_t for t = 0..F-1 along a trajectory. The pgl kind weights the
/// residual at step t by gamma^{t+1} times the single-step matrix of step t-1
/// (the residual at t is what the action at t-1 responds to); Omega_0 = 0.
/// With this schedule VGL(1) reproduces the BPTT update exactly.
inline std::vector<Matrix> omega_schedule(const OmegaSpec& spec, const GreedyPolicy& policy,
                                          const Trajectory& traj, const std::vector<StepContext>& ctx) {
    const std::size_t F = traj.horizon();
    const Eigen::Index n = policy.env().n();
    std::vector<Matrix> out(F);
    if (spec.kind != OmegaKind::pgl) {
        const Matrix m = make_omega(spec, policy, nullptr, nullptr, 0);
        for (auto& o : out) o = m;
        return out;
    }
    if (F > 0) out[0] = Matrix::Zero(n, n);
    double disc = policy.gamma();
    for (std::size_t t = 1; t < F; ++t) {
        disc *= policy.gamma();
        out[t] = disc * pgl_omega(policy, traj.greedy[t - 1], ctx[t - 1], t - 1);
    }
    return out;
}

/// Delta w = alpha sum_t (dV/dw)_t (V'_t - V_t). Works on any trajectory,
/// greedy or replayed.
inline UpdateReport vl_update(const ValueApproximator& approx, const Trajectory& traj, const Vector& w,
                              const LearnerConfig& cfg) {
    require_dim(w.size(), approx.dim(), "weights");
    const auto v = trajectory_values(approx, traj, w);
    const auto vt = target_values(traj.rewards, v, cfg.lambda, cfg.gamma);
    UpdateReport rep;
    rep.delta_w = Vector::Zero(w.size());
    rep.value_residuals.resize(traj.horizon());
    for (std::size_t t = 0; t < traj.horizon(); ++t) {
        const double res = vt[t] - v[t];
        rep.value_residuals[t] = res;
        rep.delta_w += res * approx.weight_gradient(traj.states[t], w);
    }
    rep.delta_w *= cfg.alpha;
    detail::fill_common(rep, traj, cfg.gamma);
    return rep;
}

/// Batch value-gradient update:
///   Delta w = alpha sum_{t<F} (dG/dw)_t Omega_t (G'_t - G_t)
/// using one gradient-weight Jacobian-vector product per step.
inline UpdateReport vgl_batch_update(const GreedyPolicy& policy, const Trajectory& traj, const Vector& w,
                                     const LearnerConfig& cfg,
                                     const std::vector<StepContext>* ctx_in = nullptr) {
    detail::check_gamma(policy, cfg);
    const ValueApproximator& approx = policy.approximator();
    require_dim(w.size(), approx.dim(), "weights");
    std::vector<StepContext> local;
    const bool need_dpi = cfg.lambda > 0.0;
    if (!ctx_in || (need_dpi && !ctx_in->empty() && !ctx_in->front().dpi_requested)) {
        local = analyse_trajectory(policy, traj, w, need_dpi);
        ctx_in = &local;
    }
    const auto& ctx = *ctx_in;
    const GradientTargets targets = target_gradients(policy, traj, w, cfg.lambda, &ctx);
    const bool pgl = cfg.omega.kind == OmegaKind::pgl;
    std::vector<Matrix> omega;
    Matrix fixed_omega;
    double fixed_condition = 0.0;
    if (pgl) {
        omega = omega_schedule(cfg.omega, policy, traj, ctx);
    } else {
        fixed_omega = make_omega(cfg.omega, policy, nullptr, nullptr, 0);
        fixed_condition = detail::condition_number(fixed_omega);
    }

    UpdateReport rep;
    rep.delta_w = Vector::Zero(w.size());
    rep.gradient_residuals.resize(traj.horizon());
    rep.omega_condition.reserve(traj.horizon());
    Vector v;
    for (std::size_t t = 0; t < traj.horizon(); ++t) {
        Vector& res = rep.gradient_residuals[t];
        res = targets.target[t] - targets.approx[t];
        switch (cfg.omega.kind) {
            case OmegaKind::identity: v = res; break;
            case OmegaKind::diagonal: v = cfg.omega.diagonal.cwiseProduct(res); break;
            case OmegaKind::pgl: v.noalias() = omega[t] * res; break;
        }
        if (v.squaredNorm() > 0.0) rep.delta_w += approx.gradient_weight_jacobian_product(traj.states[t], w, v);
        rep.omega_condition.push_back(pgl ? detail::condition_number(omega[t]) : fixed_condition);
    }
    rep.delta_w *= cfg.alpha;
    detail::fill_common(rep, traj, cfg.gamma);
    return rep;
}

/// Dense eligibility trace E (dim(w) x n), reset to zero at trajectory start.
struct EligibilityTrace {
    Matrix E;

    explicit EligibilityTrace(Eigen::Index dim_w = 0, Eigen::Index n = 0) : E(Matrix::Zero(dim_w, n)) {}
    void reset() { E.setZero(); }

    /// E <- (dG/dw)_t Omega_t + lambda gamma E (Df/Dx)_{t-1}; `decay` is the
    /// previous step's total state Jacobian, absent at t = 0 or when lambda = 0.
    void advance(const Matrix& dG_dw_omega, double lambda_gamma, const Matrix* decay) {
        if (decay && lambda_gamma != 0.0) {
            E = dG_dw_omega + lambda_gamma * (E * *decay);
        } else {
            E = dG_dw_omega;
        }
    }
};

namespace detail {

/// delta_t = (Dr/Dx)_t + gamma (Df/Dx)_t G_{t+1} - G_t, with partial
/// derivatives in place of total ones when lambda = 0.
inline Vector online_delta(const StepContext& c, const Vector& g_t, const Vector& g_next, double gamma,
                           bool total) {
    if (total) return c.total_backup(g_next, gamma) - g_t;
    return c.jac.dr_dx + gamma * c.jac.df_dx * g_next - g_t;
}

}  // namespace detail

/// Online value-gradient update over an already rolled-out trajectory,
/// accumulating Delta w += E_t delta_t along a forward pass.
inline UpdateReport vgl_online_update(const GreedyPolicy& policy, const Trajectory& traj, const Vector& w,
                                      const LearnerConfig& cfg,
                                      const std::vector<StepContext>* ctx_in = nullptr) {
    detail::check_gamma(policy, cfg);
    const ValueApproximator& approx = policy.approximator();
    require_dim(w.size(), approx.dim(), "weights");
    detail::check_lambda(cfg.lambda);
    const bool total = cfg.lambda > 0.0;
    std::vector<StepContext> local;
    if (!ctx_in || (total && !ctx_in->empty() && !ctx_in->front().dpi_requested)) {
        local = analyse_trajectory(policy, traj, w, total);
        ctx_in = &local;
    }
    const auto& ctx = *ctx_in;
    const std::vector<Vector> g = trajectory_gradients(approx, traj, w);
    const std::vector<Matrix> omega = omega_schedule(cfg.omega, policy, traj, ctx);
    const double gamma = cfg.gamma;

    UpdateReport rep;
    rep.delta_w = Vector::Zero(w.size());
    EligibilityTrace trace(w.size(), policy.env().n());
    Matrix prev_decay;
    for (std::size_t t = 0; t < traj.horizon(); ++t) {
        const Matrix base = approx.full_gradient_weight_jacobian(traj.states[t], w) * omega[t];
        trace.advance(base, cfg.lambda * gamma, t > 0 && total ? &prev_decay : nullptr);
        const bool terminal_next = t + 1 == traj.horizon();
        const Vector next_g = terminal_next ? Vector::Zero(g[t].size()) : g[t + 1];
        const Vector delta = detail::online_delta(ctx[t], g[t], next_g, gamma, total);
        rep.delta_w += trace.E * delta;
        if (total && !terminal_next) prev_decay = ctx[t].total_df_dx();
        rep.omega_condition.push_back(detail::condition_number(omega[t]));
    }
    rep.delta_w *= cfg.alpha;
    detail::fill_common(rep, traj, gamma);
    return rep;
}

inline UpdateReport vgl_online_update(const GreedyPolicy& policy, const Vector& x0, const Vector& w,
                                      const LearnerConfig& cfg) {
    return vgl_online_update(policy, rollout(policy, x0, w), w, cfg);
}

/// Online variant that applies alpha E_t delta_t to `w` after every step, so
/// later actions are chosen under the updated weights. Returns the summed change.
inline UpdateReport vgl_true_online_episode(const GreedyPolicy& policy, const Vector& x0, Vector& w,
                                            const LearnerConfig& cfg) {
    detail::check_gamma(policy, cfg);
    const Environment& env = policy.env();
    const ValueApproximator& approx = policy.approximator();
    require_dim(w.size(), approx.dim(), "weights");
    detail::check_lambda(cfg.lambda);
    if (env.is_terminal(x0)) throw UsageError("start state is terminal");
    const bool total = cfg.lambda > 0.0;
    const double gamma = cfg.gamma;
    const Vector w0 = w;

    Trajectory traj;
    traj.states.push_back(x0);
    EligibilityTrace trace(w.size(), env.n());
    Matrix prev_decay;
    std::optional<StepContext> prev_ctx;
    std::optional<GreedyActionResult> prev_greedy;
    double disc = gamma;
    UpdateReport rep;
    for (std::size_t t = 0; !env.is_terminal(traj.states.back()); ++t) {
        if (int(t) >= env.max_horizon()) throw EpisodicViolation("true-online episode exceeded the horizon");
        const Vector x = traj.states.back();
        GreedyActionResult g = policy.greedy_action(x, w);
        traj.saturated.push_back(g.saturated);
        detail::append_step(env, traj, g.a);
        StepContext c;
        c.step = t;
        c.jac = traj.jacobians.back();
        c.d2 = env.second_derivs(x, g.a);
        c.succ = policy.successor(traj.states.back(), w, true);
        c.dpi_requested = total;
        if (total) {
            try {
                c.dpi_dx = policy.policy_state_jacobian(g, c.jac, c.d2, c.succ);
            } catch (const DerivativeUndefined& e) {
                c.dpi_error = e.what();
            }
        }
        Matrix om;
        if (cfg.omega.kind == OmegaKind::pgl) {
            disc *= gamma;
            if (t == 0) om = Matrix::Zero(env.n(), env.n());
            else om = disc * pgl_omega(policy, *prev_greedy, *prev_ctx, t - 1);
        } else {
            om = make_omega(cfg.omega, policy, nullptr, nullptr, t);
        }
        const Matrix base = approx.full_gradient_weight_jacobian(x, w) * om;
        trace.advance(base, cfg.lambda * gamma, t > 0 && total ? &prev_decay : nullptr);
        const Vector g_t = approx.state_gradient(x, w);
        const Vector delta = detail::online_delta(c, g_t, c.succ.gradient, gamma, total);
        w += cfg.alpha * (trace.E * delta);
        if (total && !env.is_terminal(traj.states.back())) prev_decay = c.total_df_dx();
        rep.omega_condition.push_back(detail::condition_number(om));
        prev_ctx = std::move(c);
        traj.greedy.push_back(std::move(g));
        prev_greedy = traj.greedy.back();
    }
    rep.delta_w = w - w0;
    detail::fill_common(rep, traj, gamma);
    return rep;
}

/// Policy-gradient ascent on the greedy policy through the model:
///   Delta w = alpha sum_t gamma^t (dpi/dw)_t [dr/da + gamma df/da G'_{t+1}]
/// with G' the lambda = 1 target gradient, i.e. dV^pi/dx along the trajectory.
inline UpdateReport bptt_update(const GreedyPolicy& policy, const Trajectory& traj, const Vector& w,
                                const LearnerConfig& cfg) {
    detail::check_gamma(policy, cfg);
    require_dim(w.size(), policy.approximator().dim(), "weights");
    for (std::size_t t = 0; t < traj.horizon(); ++t) {
        if (traj.saturated[t].any()) throw UnsupportedSaturation("bptt needs unsaturated actions", t);
    }
    const std::vector<StepContext> ctx = analyse_trajectory(policy, traj, w, true);
    GradientTargets targets;
    try {
        targets = target_gradients(policy, traj, w, 1.0, &ctx);
    } catch (const TargetUndefined& e) {
        throw GradientUndefined(std::string("dpi/dw undefined: ") + e.what(), e.step());
    }
    const double gamma = cfg.gamma;
    UpdateReport rep;
    rep.delta_w = Vector::Zero(w.size());
    rep.gradient_residuals.resize(traj.horizon());
    double disc = 1.0;
    for (std::size_t t = 0; t < traj.horizon(); ++t) {
        const StepContext& c = ctx[t];
        rep.gradient_residuals[t] = targets.target[t] - targets.approx[t];
        const Vector dR_da = c.jac.dr_da + gamma * c.jac.df_da * targets.target[t + 1];
        if ((dR_da.array() == 0.0).all()) {
            disc *= gamma;
            continue;
        }
        try {
            rep.delta_w += disc * policy.policy_weight_jacobian_product(traj.greedy[t], c.jac, c.d2, c.succ, w,
                                                                        dR_da);
        } catch (const DerivativeUndefined& e) {
            throw GradientUndefined(std::string("dpi/dw undefined: ") + e.what(), t);
        }
        disc *= gamma;
    }
    rep.delta_w *= cfg.alpha;
    detail::fill_common(rep, traj, gamma);
    return rep;
}

inline UpdateReport bptt_update(const GreedyPolicy& policy, const Vector& x0, const Vector& w,
                                const LearnerConfig& cfg) {
    return bptt_update(policy, rollout(policy, x0, w), w, cfg);
}

/// Greedy closed-loop return V^pi(x0, w).
inline double policy_value(const GreedyPolicy& policy, const Vector& x0, const Vector& w) {
    return discounted_return(rollout(policy, x0, w), policy.gamma());
}

struct LogRow {
    int iteration = 0;
    double total_reward = 0.0;
    double value_residual_norm = 0.0;
    double gradient_residual_norm = 0.0;
    double max_dRda = 0.0;
    double saturated_fraction = 0.0;
    double wall_time_ms = 0.0;
};

struct TrainResult {
    std::vector<LogRow> log;
    Vector weights;
    Vector initial_weights;
    bool diverged = false;
    bool converged = false;  ///< stop_gradient_residual reached
    std::string stop_reason;
    Trajectory final_trajectory;
};

struct TrainOptions {
    std::optional<Vector> initial_weights;
    std::optional<Vector> start_state;
    bool record_wall_time = false;
    /// Called after each logged row; return false to stop.
    std::function<bool(const LogRow&, const Vector&)> on_iteration;
};

namespace detail {

inline double lambda_for_metrics(const LearnerConfig& cfg) {
    return cfg.algorithm == Algorithm::bptt ? 1.0 : cfg.lambda;
}

}  // namespace detail

/// Iterated rollout and update. Row k of the log describes the greedy
/// trajectory under the weights before the k-th update, so iterations = 0
/// yields a single row for the initial weights.
inline TrainResult train(const LearnerConfig& cfg, std::shared_ptr<const Environment> env,
                         const ApproximatorSpec& approx_spec, const TrainOptions& opts = {}) {
    cfg.validate();
    const ValueApproximator approx(approx_spec);
    const GreedyPolicy policy(env, approx, cfg.gamma, cfg.tolerances);
    std::mt19937_64 rng(cfg.seed);
    TrainResult res;
    res.weights = opts.initial_weights ? *opts.initial_weights : approx.initial_weights(rng);
    require_dim(res.weights.size(), approx.dim(), "initial weights");
    res.initial_weights = res.weights;
    const double metric_lambda = detail::lambda_for_metrics(cfg);
    using clock = std::chrono::steady_clock;

    for (int k = 0; k <= cfg.iterations; ++k) {
        const auto t0 = clock::now();
        Vector x0;
        if (opts.start_state) x0 = *opts.start_state;
        else if (cfg.start == StartSampler::uniform) x0 = env->sample_start(rng);
        else x0 = env->default_start();

        Trajectory traj = rollout(policy, x0, res.weights);
        const bool need_dpi = metric_lambda > 0.0;
        std::optional<std::vector<StepContext>> ctx;
        LogRow row;
        row.iteration = k;
        row.total_reward = discounted_return(traj, cfg.gamma);
        {
            const auto v = trajectory_values(approx, traj, res.weights);
            const auto vt = target_values(traj.rewards, v, cfg.lambda, cfg.gamma);
            for (std::size_t t = 0; t < traj.horizon(); ++t)
                row.value_residual_norm = std::max(row.value_residual_norm, std::abs(vt[t] - v[t]));
        }
        try {
            ctx = analyse_trajectory(policy, traj, res.weights, need_dpi);
            row.gradient_residual_norm =
                target_gradients(policy, traj, res.weights, metric_lambda, &*ctx).max_residual();
        } catch (const TargetUndefined&) {
            row.gradient_residual_norm = std::numeric_limits<double>::quiet_NaN();
        }
        row.max_dRda = reward_derivatives(traj, cfg.gamma).max_abs_dR_da();
        {
            std::size_t sat = 0, total = 0;
            for (const Mask& s : traj.saturated) {
                sat += std::size_t(s.count());
                total += std::size_t(s.size());
            }
            row.saturated_fraction = total ? double(sat) / double(total) : 0.0;
        }

        const bool reached = cfg.stop_gradient_residual > 0.0 &&
                             row.gradient_residual_norm < cfg.stop_gradient_residual;
        if (k < cfg.iterations && !reached) {
            UpdateReport rep;
            const std::vector<StepContext>* cp = ctx ? &*ctx : nullptr;
            switch (cfg.algorithm) {
                case Algorithm::vl: rep = vl_update(approx, traj, res.weights, cfg); break;
                case Algorithm::vgl_batch: rep = vgl_batch_update(policy, traj, res.weights, cfg, cp); break;
                case Algorithm::vgl_online:
                    if (cfg.true_online) {
                        Vector w = res.weights;
                        rep = vgl_true_online_episode(policy, x0, w, cfg);
                    } else {
                        rep = vgl_online_update(policy, traj, res.weights, cfg, cp);
                    }
                    break;
                case Algorithm::bptt: rep = bptt_update(policy, traj, res.weights, cfg); break;
            }
            res.weights += rep.delta_w;
        }
        if (opts.record_wall_time) {
            row.wall_time_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
        }
        res.log.push_back(row);
        res.final_trajectory = std::move(traj);

        if (!res.weights.allFinite() || res.weights.norm() > cfg.tolerances.divergence_norm) {
            res.diverged = true;
            res.stop_reason = "weight norm exceeded " + std::to_string(cfg.tolerances.divergence_norm);
            break;
        }
        if (reached) {
            res.converged = true;
            res.stop_reason = "gradient residual below threshold";
            break;
        }
        if (opts.on_iteration && !opts.on_iteration(row, res.weights)) {
            res.stop_reason = "stopped by callback";
            break;
        }
    }
    if (res.stop_reason.empty()) res.stop_reason = "iteration budget";
    return res;
}

}  // namespace vgl
