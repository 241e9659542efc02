#pragma once

// Deterministic episodic environments: model functions f and r, their first
// and second derivatives, the terminal predicate and action bounds.
//
// Derivative orientation: a vector in the numerator of a derivative is
// transposed, so df_dx(i, j) = d f^j / d x^i and df_da(i, j) = d f^j / d a^i.
//
// Fixed horizons are encoded by appending an elapsed-time component to the
// state. It advances by exactly 1 per step, so a start with time t0 terminates
// after F - t0 steps and the time component of a terminal state equals F.

#include "vgl/core.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace vgl {

struct StepResult {
    Vector next;
    double reward = 0.0;
};

struct ModelJacobians {
    Matrix df_dx;  ///< n x n
    Matrix df_da;  ///< m x n
    Vector dr_dx;  ///< n
    Vector dr_da;  ///< m
};

/// Second derivatives of the model. The f-tensors are stored per output
/// component k; an empty list means f is linear in the corresponding argument.
struct ModelSecondDerivs {
    Matrix d2r_da2;   ///< m x m, symmetric
    Matrix d2r_dxda;  ///< n x m, (i, j) = d2 r / dx^i da^j
    std::vector<Matrix> d2f_da2;   ///< per k: m x m
    std::vector<Matrix> d2f_dxda;  ///< per k: n x m

    /// sum_k d2 f^k / da da * v^k
    Matrix d2f_da2_contracted(const Vector& v) const {
        Matrix out = Matrix::Zero(d2r_da2.rows(), d2r_da2.cols());
        for (std::size_t k = 0; k < d2f_da2.size(); ++k) out += v(Eigen::Index(k)) * d2f_da2[k];
        return out;
    }

    /// sum_k d2 f^k / dx da * v^k
    Matrix d2f_dxda_contracted(const Vector& v) const {
        Matrix out = Matrix::Zero(d2r_dxda.rows(), d2r_dxda.cols());
        for (std::size_t k = 0; k < d2f_dxda.size(); ++k) out += v(Eigen::Index(k)) * d2f_dxda[k];
        return out;
    }
};

using ParamMap = std::map<std::string, double>;

class Environment {
public:
    virtual ~Environment() = default;

    virtual std::string name() const = 0;
    Eigen::Index n() const { return n_; }
    Eigen::Index m() const { return m_; }
    int max_horizon() const { return horizon_; }
    double gamma_default() const { return 1.0; }
    /// Index of the elapsed-time component.
    Eigen::Index time_index() const { return n_ - 1; }
    const Mask& bounded() const { return bounded_; }
    bool any_bounded() const { return bounded_.any(); }
    const ParamMap& params() const { return params_; }

    bool is_terminal(const Vector& x) const {
        require_dim(x.size(), n_, "is_terminal");
        return x(time_index()) >= double(horizon_) - 0.5;
    }

    StepResult step(const Vector& x, const Vector& a) const {
        check_step_args(x, a, "step");
        StepResult out{Vector(n_), 0.0};
        step_impl(x, a, out.next, out.reward);
        if (!out.next.allFinite() || !std::isfinite(out.reward)) {
            throw EnvironmentError(name() + ": model produced a non-finite value");
        }
        return out;
    }

    ModelJacobians jacobians(const Vector& x, const Vector& a) const {
        check_step_args(x, a, "jacobians");
        ModelJacobians j{Matrix::Zero(n_, n_), Matrix::Zero(m_, n_), Vector::Zero(n_),
                         Vector::Zero(m_)};
        jacobians_impl(x, a, j);
        return j;
    }

    ModelSecondDerivs second_derivs(const Vector& x, const Vector& a) const {
        check_step_args(x, a, "second_derivs");
        ModelSecondDerivs s{Matrix::Zero(m_, m_), Matrix::Zero(n_, m_), {}, {}};
        second_derivs_impl(x, a, s);
        return s;
    }

    /// Project an action onto the admissible box (bounded components only).
    Vector clamp_action(Vector a) const {
        for (Eigen::Index i = 0; i < m_; ++i) {
            if (bounded_(i)) a(i) = std::clamp(a(i), -1.0, 1.0);
        }
        return a;
    }

    /// Start state with the given non-time components and elapsed time t0.
    Vector make_state(const Vector& position, double t0 = 0.0) const {
        require_dim(position.size(), n_ - 1, "make_state");
        Vector x(n_);
        x.head(n_ - 1) = position;
        x(time_index()) = t0;
        return x;
    }

    virtual Vector default_start() const = 0;

    /// Uniform start inside the environment's sampling box, time zero.
    template <class Rng>
    Vector sample_start(Rng& rng) const {
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        Vector pos(n_ - 1);
        for (Eigen::Index i = 0; i < n_ - 1; ++i) pos(i) = start_box_ * u(rng);
        return make_state(pos, 0.0);
    }

protected:
    Environment(Eigen::Index n, Eigen::Index m, int horizon, double start_box, ParamMap params)
        : n_(n), m_(m), horizon_(horizon), start_box_(start_box), bounded_(Mask::Constant(m, false)),
          params_(std::move(params)) {
        if (horizon_ <= 0) throw UsageError("horizon must be positive");
    }

    virtual void step_impl(const Vector& x, const Vector& a, Vector& next, double& reward) const = 0;
    virtual void jacobians_impl(const Vector& x, const Vector& a, ModelJacobians& j) const = 0;
    virtual void second_derivs_impl(const Vector& x, const Vector& a,
                                    ModelSecondDerivs& s) const = 0;

    void set_bounded(bool b) { bounded_ = Mask::Constant(m_, b); }

private:
    void check_step_args(const Vector& x, const Vector& a, const char* what) const {
        require_dim(x.size(), n_, what);
        require_dim(a.size(), m_, what);
        if (is_terminal(x)) throw UsageError(std::string(what) + ": state is terminal");
        for (Eigen::Index i = 0; i < m_; ++i) {
            if (bounded_(i) && std::abs(a(i)) > 1.0 + 1e-12) {
                throw UsageError(std::string(what) + ": action component " + std::to_string(i) +
                                 " outside [-1, 1]");
            }
        }
    }

    Eigen::Index n_, m_;
    int horizon_;
    double start_box_;
    Mask bounded_;
    ParamMap params_;
};

namespace detail {

inline ParamMap merge_params(const ParamMap& defaults, const ParamMap& given,
                             const std::string& env) {
    ParamMap out = defaults;
    for (const auto& [k, v] : given) {
        if (!defaults.count(k)) throw UsageError("unknown parameter '" + k + "' for env " + env);
        out[k] = v;
    }
    return out;
}

}  // namespace detail

/// x' = x + a, r = -(x^2 + c a^2), unbound scalar action.
class Lqr1d final : public Environment {
public:
    static ParamMap defaults() { return {{"c", 0.1}, {"horizon", 10}, {"bounded", 0}, {"start", 1.0}}; }

    explicit Lqr1d(const ParamMap& p = {}) : Lqr1d(detail::merge_params(defaults(), p, "lqr1d"), 0) {}

    std::string name() const override { return "lqr1d"; }
    double c() const { return c_; }
    Vector default_start() const override { return make_state(Vector::Constant(1, start_)); }

protected:
    void step_impl(const Vector& x, const Vector& a, Vector& next, double& r) const override {
        next(0) = x(0) + a(0);
        next(1) = x(1) + 1.0;
        r = -(x(0) * x(0) + c_ * a(0) * a(0));
    }
    void jacobians_impl(const Vector& x, const Vector& a, ModelJacobians& j) const override {
        j.df_dx(0, 0) = 1.0;
        j.df_dx(1, 1) = 1.0;
        j.df_da(0, 0) = 1.0;
        j.dr_dx(0) = -2.0 * x(0);
        j.dr_da(0) = -2.0 * c_ * a(0);
    }
    void second_derivs_impl(const Vector&, const Vector&, ModelSecondDerivs& s) const override {
        s.d2r_da2(0, 0) = -2.0 * c_;
    }

private:
    Lqr1d(const ParamMap& p, int)
        : Environment(2, 1, int(p.at("horizon")), 2.0, p), c_(p.at("c")), start_(p.at("start")) {
        if (c_ <= 0) throw UsageError("lqr1d: c must be positive");
        set_bounded(p.at("bounded") != 0.0);
    }
    double c_;
    double start_;
};

/// x' = x + dt a, r = -x^2, a in [-1, 1]. Far from the origin the optimal
/// action is pinned at a bound.
class BangBang1d final : public Environment {
public:
    static ParamMap defaults() { return {{"dt", 0.1}, {"horizon", 20}, {"start", 1.55}}; }

    explicit BangBang1d(const ParamMap& p = {})
        : BangBang1d(detail::merge_params(defaults(), p, "bangbang1d"), 0) {}

    std::string name() const override { return "bangbang1d"; }
    double dt() const { return dt_; }
    Vector default_start() const override { return make_state(Vector::Constant(1, start_)); }

protected:
    void step_impl(const Vector& x, const Vector& a, Vector& next, double& r) const override {
        next(0) = x(0) + dt_ * a(0);
        next(1) = x(1) + 1.0;
        r = -x(0) * x(0);
    }
    void jacobians_impl(const Vector& x, const Vector&, ModelJacobians& j) const override {
        j.df_dx(0, 0) = 1.0;
        j.df_dx(1, 1) = 1.0;
        j.df_da(0, 0) = dt_;
        j.dr_dx(0) = -2.0 * x(0);
    }
    void second_derivs_impl(const Vector&, const Vector&, ModelSecondDerivs&) const override {}

private:
    BangBang1d(const ParamMap& p, int)
        : Environment(2, 1, int(p.at("horizon")), 2.0, p), dt_(p.at("dt")), start_(p.at("start")) {
        if (dt_ <= 0) throw UsageError("bangbang1d: dt must be positive");
        set_bounded(true);
    }
    double dt_;
    double start_;
};

/// Planar point steered toward the origin through a swirling drift field:
///   p' = p + dt (a + s (-sin p_y, sin p_x)),  r = -(|p|^2 + c |a|^2).
class Nav2d final : public Environment {
public:
    static ParamMap defaults() {
        return {{"dt", 0.2}, {"c", 0.1}, {"swirl", 0.3}, {"horizon", 15}, {"bounded", 1},
                {"start_x", 1.5}, {"start_y", -1.0}};
    }

    explicit Nav2d(const ParamMap& p = {}) : Nav2d(detail::merge_params(defaults(), p, "nav2d"), 0) {}

    std::string name() const override { return "nav2d"; }
    Vector default_start() const override { return make_state(Eigen::Vector2d(sx_, sy_)); }

protected:
    void step_impl(const Vector& x, const Vector& a, Vector& next, double& r) const override {
        next(0) = x(0) + dt_ * (a(0) - swirl_ * std::sin(x(1)));
        next(1) = x(1) + dt_ * (a(1) + swirl_ * std::sin(x(0)));
        next(2) = x(2) + 1.0;
        r = -(x(0) * x(0) + x(1) * x(1) + c_ * a.squaredNorm());
    }
    void jacobians_impl(const Vector& x, const Vector& a, ModelJacobians& j) const override {
        j.df_dx(0, 0) = 1.0;
        j.df_dx(1, 0) = -dt_ * swirl_ * std::cos(x(1));
        j.df_dx(0, 1) = dt_ * swirl_ * std::cos(x(0));
        j.df_dx(1, 1) = 1.0;
        j.df_dx(2, 2) = 1.0;
        j.df_da(0, 0) = dt_;
        j.df_da(1, 1) = dt_;
        j.dr_dx(0) = -2.0 * x(0);
        j.dr_dx(1) = -2.0 * x(1);
        j.dr_da = -2.0 * c_ * a;
    }
    void second_derivs_impl(const Vector&, const Vector&, ModelSecondDerivs& s) const override {
        s.d2r_da2.diagonal().setConstant(-2.0 * c_);
    }

private:
    Nav2d(const ParamMap& p, int)
        : Environment(3, 2, int(p.at("horizon")), 2.0, p), dt_(p.at("dt")), c_(p.at("c")),
          swirl_(p.at("swirl")), sx_(p.at("start_x")), sy_(p.at("start_y")) {
        if (dt_ <= 0 || c_ <= 0) throw UsageError("nav2d: dt and c must be positive");
        set_bounded(p.at("bounded") != 0.0);
    }
    double dt_, c_, swirl_, sx_, sy_;
};

inline std::vector<std::string> environment_names() { return {"lqr1d", "bangbang1d", "nav2d"}; }

inline ParamMap environment_defaults(const std::string& name) {
    if (name == "lqr1d") return Lqr1d::defaults();
    if (name == "bangbang1d") return BangBang1d::defaults();
    if (name == "nav2d") return Nav2d::defaults();
    throw UsageError("unknown environment '" + name + "'");
}

inline std::shared_ptr<const Environment> make_environment(const std::string& name,
                                                           const ParamMap& params = {}) {
    if (name == "lqr1d") return std::make_shared<Lqr1d>(params);
    if (name == "bangbang1d") return std::make_shared<BangBang1d>(params);
    if (name == "nav2d") return std::make_shared<Nav2d>(params);
    throw UsageError("unknown environment '" + name + "'");
}

}  // namespace vgl
