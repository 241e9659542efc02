#pragma once

// Trajectories and the learning targets computed along them: target values
// V', the lambda-return, target value-gradients G', the policy-independent
// total reward R with its costate recursion, and the local-extremality check.

#include "vgl/core.hpp"
#include "vgl/model.hpp"
#include "vgl/policy.hpp"

#include <cmath>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace vgl {

struct Trajectory {
    std::vector<Vector> states;   ///< x_0 .. x_F
    std::vector<Vector> actions;  ///< a_0 .. a_{F-1}
    std::vector<double> rewards;  ///< r_0 .. r_{F-1}
    std::vector<Mask> saturated;
    std::vector<ModelJacobians> jacobians;
    /// Greedy solver output per step; empty for open-loop replays.
    std::vector<GreedyActionResult> greedy;

    std::size_t horizon() const { return actions.size(); }
    bool is_greedy() const { return !greedy.empty(); }
};

namespace detail {

inline void check_lambda(double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw UsageError("lambda must lie in [0, 1]");
}

inline void append_step(const Environment& env, Trajectory& traj, const Vector& a) {
    const Vector& x = traj.states.back();
    StepResult st = env.step(x, a);
    traj.jacobians.push_back(env.jacobians(x, a));
    traj.actions.push_back(a);
    traj.rewards.push_back(st.reward);
    traj.states.push_back(std::move(st.next));
}

}  // namespace detail

/// Greedy closed-loop trajectory from x0 under weights w.
inline Trajectory rollout(const GreedyPolicy& policy, const Vector& x0, const Vector& w) {
    const Environment& env = policy.env();
    require_dim(x0.size(), env.n(), "rollout start");
    if (env.is_terminal(x0)) throw UsageError("rollout: start state is terminal");
    Trajectory traj;
    traj.states.push_back(x0);
    while (!env.is_terminal(traj.states.back())) {
        if (int(traj.horizon()) >= env.max_horizon()) {
            throw EpisodicViolation("rollout exceeded the horizon of " +
                                    std::to_string(env.max_horizon()) + " steps");
        }
        GreedyActionResult g = policy.greedy_action(traj.states.back(), w);
        traj.saturated.push_back(g.saturated);
        detail::append_step(env, traj, g.a);
        traj.greedy.push_back(std::move(g));
    }
    return traj;
}

/// Open-loop replay of a fixed action sequence; must end exactly at a terminal state.
inline Trajectory replay(const Environment& env, const Vector& x0, const std::vector<Vector>& actions) {
    require_dim(x0.size(), env.n(), "replay start");
    Trajectory traj;
    traj.states.push_back(x0);
    for (const Vector& a : actions) {
        if (env.is_terminal(traj.states.back())) {
            throw UsageError("replay: terminal state reached before the action sequence ended");
        }
        traj.saturated.push_back(Mask::Constant(env.m(), false));
        detail::append_step(env, traj, a);
    }
    if (!env.is_terminal(traj.states.back())) {
        throw EpisodicViolation("replay: action sequence ends before a terminal state");
    }
    return traj;
}

/// Discounted sum of rewards of an open-loop action sequence.
inline double total_reward(const Environment& env, const Vector& x0, const std::vector<Vector>& actions,
                           double gamma) {
    const Trajectory traj = replay(env, x0, actions);
    double sum = 0.0, disc = 1.0;
    for (double r : traj.rewards) {
        sum += disc * r;
        disc *= gamma;
    }
    return sum;
}

inline double discounted_return(const Trajectory& traj, double gamma) {
    double sum = 0.0, disc = 1.0;
    for (double r : traj.rewards) {
        sum += disc * r;
        disc *= gamma;
    }
    return sum;
}

/// V(x_t, w) for t = 0..F, with the terminal entry taken as zero.
inline std::vector<double> trajectory_values(const ValueApproximator& approx, const Trajectory& traj,
                                             const Vector& w) {
    std::vector<double> v(traj.states.size(), 0.0);
    for (std::size_t t = 0; t + 1 < traj.states.size(); ++t) v[t] = approx.value(traj.states[t], w);
    return v;
}

/// G(x_t, w) for t = 0..F, with the terminal entry taken as zero.
inline std::vector<Vector> trajectory_gradients(const ValueApproximator& approx, const Trajectory& traj,
                                                const Vector& w) {
    std::vector<Vector> g(traj.states.size());
    for (std::size_t t = 0; t + 1 < traj.states.size(); ++t) g[t] = approx.state_gradient(traj.states[t], w);
    g.back() = Vector::Zero(traj.states.back().size());
    return g;
}

/// Backward recursion V'_t = r_t + gamma (lambda V'_{t+1} + (1 - lambda) V_{t+1}), V'_F = 0.
/// `values` holds V_0..V_F.
inline std::vector<double> target_values(std::span<const double> rewards, std::span<const double> values,
                                         double lambda, double gamma) {
    detail::check_lambda(lambda);
    if (values.size() != rewards.size() + 1) throw DimensionError("target_values: need F+1 values");
    const std::size_t F = rewards.size();
    std::vector<double> vt(F + 1, 0.0);
    for (std::size_t t = F; t-- > 0;) {
        vt[t] = rewards[t] + gamma * (lambda * vt[t + 1] + (1.0 - lambda) * values[t + 1]);
    }
    return vt;
}

/// Direct n-step mixture R^lambda_t = (1 - lambda) sum_n lambda^{n-1} R^(n)_t, truncated at the
/// terminal step where the remaining weight lambda^{F-t-1} goes to the full return.
inline std::vector<double> lambda_return(std::span<const double> rewards, std::span<const double> values,
                                         double lambda, double gamma) {
    detail::check_lambda(lambda);
    if (values.size() != rewards.size() + 1) throw DimensionError("lambda_return: need F+1 values");
    const std::size_t F = rewards.size();
    std::vector<double> out(F, 0.0);
    for (std::size_t t = 0; t < F; ++t) {
        const std::size_t steps = F - t;
        double partial = 0.0, disc = 1.0, sum = 0.0;
        for (std::size_t n = 1; n <= steps; ++n) {
            partial += disc * rewards[t + n - 1];
            disc *= gamma;
            const double nstep = partial + disc * (t + n == F ? 0.0 : values[t + n]);
            const double weight = n < steps ? (1.0 - lambda) * std::pow(lambda, double(n - 1))
                                            : std::pow(lambda, double(steps - 1));
            sum += weight * nstep;
        }
        out[t] = sum;
    }
    return out;
}

inline std::vector<double> target_values(const ValueApproximator& approx, const Trajectory& traj,
                                         const Vector& w, double lambda, double gamma) {
    const auto v = trajectory_values(approx, traj, w);
    return target_values(traj.rewards, v, lambda, gamma);
}

inline std::vector<double> lambda_return(const ValueApproximator& approx, const Trajectory& traj,
                                         const Vector& w, double lambda, double gamma) {
    const auto v = trajectory_values(approx, traj, w);
    return lambda_return(traj.rewards, v, lambda, gamma);
}

/// Per-step derivative context of a greedy trajectory, computed once and shared
/// by the target recursion and the learners.
struct StepContext {
    ModelJacobians jac;
    ModelSecondDerivs d2;
    SuccessorTerms succ;
    std::size_t step = 0;
    bool dpi_requested = false;
    std::optional<Matrix> dpi_dx;  ///< set when requested and defined
    std::string dpi_error;

    const Matrix& policy_jacobian() const {
        if (!dpi_dx) throw TargetUndefined("dpi/dx undefined (" + dpi_error + ")", step);
        return *dpi_dx;
    }

    /// D/Dx of r + gamma f . p along the policy:
    ///   dr/dx + gamma df/dx p + (dpi/dx)(dr/da + gamma df/da p).
    /// The policy term is skipped when its action-space factor is exactly zero,
    /// so a step whose action does not matter needs no policy derivative.
    Vector total_backup(const Vector& p, double gamma) const {
        Vector out = jac.dr_dx + gamma * jac.df_dx * p;
        const Vector c = jac.dr_da + gamma * jac.df_da * p;
        if ((c.array() != 0.0).any()) out += policy_jacobian() * c;
        return out;
    }

    Matrix total_df_dx() const { return jac.df_dx + policy_jacobian() * jac.df_da; }
};

/// Builds step contexts for t = 0..F-1. With `need_policy_derivative`, dpi/dx
/// is evaluated at every step; where it does not exist the reason is kept and
/// TargetUndefined is raised only if a later computation actually needs it.
inline std::vector<StepContext> analyse_trajectory(const GreedyPolicy& policy, const Trajectory& traj,
                                                   const Vector& w, bool need_policy_derivative) {
    if (!traj.is_greedy()) throw UsageError("trajectory was not generated by the greedy policy");
    const Environment& env = policy.env();
    std::vector<StepContext> ctx(traj.horizon());
    for (std::size_t t = 0; t < traj.horizon(); ++t) {
        StepContext& c = ctx[t];
        c.step = t;
        c.jac = traj.jacobians[t];
        c.d2 = env.second_derivs(traj.states[t], traj.actions[t]);
        c.succ = policy.successor(traj.states[t + 1], w, true);
        c.dpi_requested = need_policy_derivative;
        if (need_policy_derivative) {
            try {
                c.dpi_dx = policy.policy_state_jacobian(traj.greedy[t], c.jac, c.d2, c.succ);
            } catch (const DerivativeUndefined& e) {
                c.dpi_error = e.what();
            }
        }
    }
    return ctx;
}

struct GradientTargets {
    std::vector<Vector> target;  ///< G'_0 .. G'_F, G'_F = 0
    std::vector<Vector> approx;  ///< G_0 .. G_F, G_F taken as 0
    double lambda = 0.0;
    double gamma = 1.0;

    double max_residual() const {
        double m = 0.0;
        for (std::size_t t = 0; t + 1 < target.size(); ++t) m = std::max(m, (target[t] - approx[t]).norm());
        return m;
    }
};

/// Backward recursion for the target value-gradient. For lambda = 0 the
/// policy derivative is never evaluated:
///   G'_t = dr/dx + gamma df/dx G_{t+1}.
/// Otherwise
///   G'_t = Dr/Dx + gamma Df/Dx (lambda G'_{t+1} + (1 - lambda) G_{t+1}).
inline GradientTargets target_gradients(const GreedyPolicy& policy, const Trajectory& traj,
                                        const Vector& w, double lambda,
                                        const std::vector<StepContext>* ctx_in = nullptr) {
    detail::check_lambda(lambda);
    const double gamma = policy.gamma();
    std::vector<StepContext> local;
    const bool need_dpi = lambda > 0.0;
    if (!ctx_in || (need_dpi && !ctx_in->empty() && !ctx_in->front().dpi_requested)) {
        local = analyse_trajectory(policy, traj, w, need_dpi);
        ctx_in = &local;
    }
    const std::vector<StepContext>& ctx = *ctx_in;
    const std::size_t F = traj.horizon();
    GradientTargets out;
    out.lambda = lambda;
    out.gamma = gamma;
    // G at x_1..x_{F-1} is already in the step contexts.
    out.approx.resize(F + 1);
    for (std::size_t t = 0; t < F; ++t) {
        const bool reuse = t > 0 && !ctx[t - 1].succ.zeroed && ctx[t - 1].succ.gradient.size() > 0;
        out.approx[t] = reuse ? ctx[t - 1].succ.gradient
                              : policy.approximator().state_gradient(traj.states[t], w);
    }
    out.approx[F] = Vector::Zero(policy.env().n());
    out.target.assign(F + 1, Vector::Zero(policy.env().n()));
    Vector p = Vector::Zero(policy.env().n());
    for (std::size_t t = F; t-- > 0;) {
        const StepContext& c = ctx[t];
        if (!need_dpi) {
            out.target[t] = c.jac.dr_dx + gamma * c.jac.df_dx * out.approx[t + 1];
        } else {
            out.target[t] = c.total_backup(p, gamma);
        }
        p = lambda * out.target[t] + (1.0 - lambda) * out.approx[t];
    }
    return out;
}

struct RewardDerivatives {
    std::vector<Vector> dR_dx;  ///< t = 0..F, dR_dx[F] = 0
    std::vector<Vector> dR_da;  ///< t = 0..F-1

    double max_abs_dR_da() const {
        double m = 0.0;
        for (const Vector& v : dR_da) m = std::max(m, v.cwiseAbs().maxCoeff());
        return m;
    }
};

/// Costate recursion of the policy-independent total reward:
///   dR/dx_t = dr/dx_t + gamma df/dx_t dR/dx_{t+1},  dR/da_t = dr/da_t + gamma df/da_t dR/dx_{t+1}.
inline RewardDerivatives reward_derivatives(const Trajectory& traj, double gamma) {
    const std::size_t F = traj.horizon();
    RewardDerivatives out;
    out.dR_dx.assign(F + 1, Vector::Zero(traj.states.front().size()));
    out.dR_da.resize(F);
    for (std::size_t t = F; t-- > 0;) {
        const ModelJacobians& j = traj.jacobians[t];
        out.dR_dx[t] = j.dr_dx + gamma * j.df_dx * out.dR_dx[t + 1];
        out.dR_da[t] = j.dr_da + gamma * j.df_da * out.dR_dx[t + 1];
    }
    return out;
}

enum class ExtremalClass { stationary, saturated_high, saturated_low, violation };

inline const char* to_string(ExtremalClass c) {
    switch (c) {
        case ExtremalClass::stationary: return "stationary";
        case ExtremalClass::saturated_high: return "saturated-high";
        case ExtremalClass::saturated_low: return "saturated-low";
        case ExtremalClass::violation: return "violation";
    }
    return "?";
}

struct ExtremalityReport {
    std::vector<std::vector<ExtremalClass>> classes;  ///< [t][i]
    std::size_t violations = 0;
    std::size_t saturated = 0;
    double max_stationary_residual = 0.0;
    bool pass() const { return violations == 0; }
};

/// Classifies every action component against the local-extremality conditions:
/// an interior component needs |dR/da| <= tol, a component at +1 (-1) with
/// dR/da > tol (< -tol) is a correctly signed saturation.
inline ExtremalityReport extremality_check(const Environment& env, const Trajectory& traj,
                                           const RewardDerivatives& d, double tol) {
    ExtremalityReport rep;
    rep.classes.resize(traj.horizon());
    for (std::size_t t = 0; t < traj.horizon(); ++t) {
        for (Eigen::Index i = 0; i < env.m(); ++i) {
            const double g = d.dR_da[t](i);
            const double a = traj.actions[t](i);
            ExtremalClass c;
            if (env.bounded()(i) && a == 1.0 && g > tol) {
                c = ExtremalClass::saturated_high;
            } else if (env.bounded()(i) && a == -1.0 && g < -tol) {
                c = ExtremalClass::saturated_low;
            } else if (std::abs(g) <= tol) {
                c = ExtremalClass::stationary;
                rep.max_stationary_residual = std::max(rep.max_stationary_residual, std::abs(g));
            } else {
                c = ExtremalClass::violation;
            }
            if (c == ExtremalClass::violation) ++rep.violations;
            if (c == ExtremalClass::saturated_high || c == ExtremalClass::saturated_low) ++rep.saturated;
            rep.classes[t].push_back(c);
        }
    }
    return rep;
}

inline constexpr const char* kCsvVersionLine = "# vgl-lab log v1";

/// One row per step: t, x components, a components, r, saturation flags.
/// The terminal row carries only the state.
inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
    const Eigen::Index n = traj.states.front().size();
    const Eigen::Index m = traj.actions.empty() ? 0 : traj.actions.front().size();
    os << kCsvVersionLine << '\n' << 't';
    for (Eigen::Index i = 0; i < n; ++i) os << ",x" << i;
    for (Eigen::Index i = 0; i < m; ++i) os << ",a" << i;
    os << ",r";
    for (Eigen::Index i = 0; i < m; ++i) os << ",sat" << i;
    os << '\n';
    const auto old_precision = os.precision(17);
    for (std::size_t t = 0; t < traj.states.size(); ++t) {
        os << t;
        for (Eigen::Index i = 0; i < n; ++i) os << ',' << traj.states[t](i);
        const bool has_action = t < traj.horizon();
        for (Eigen::Index i = 0; i < m; ++i) {
            os << ',';
            if (has_action) os << traj.actions[t](i);
        }
        os << ',';
        if (has_action) os << traj.rewards[t];
        for (Eigen::Index i = 0; i < m; ++i) {
            os << ',';
            if (has_action) os << (traj.saturated[t](i) ? 1 : 0);
        }
        os << '\n';
    }
    os.precision(old_precision);
}

}  // namespace vgl
