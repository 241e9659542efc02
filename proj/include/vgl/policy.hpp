#pragma once

// Greedy policy pi(x, w) = argmax_a Q(x, a, w), Q = r(x, a) + gamma V(f(x, a), w),
// together with the derivatives of Q in the action and the implicit
// derivatives of the maximiser with respect to state and weights.

#include "vgl/approximator.hpp"
#include "vgl/core.hpp"
#include "vgl/model.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <vector>

namespace vgl {

struct GreedyActionResult {
    Vector a;
    Mask saturated;
    double q = 0.0;
    Vector dq_da;
    /// Another start reached an equally good but distinct maximiser.
    bool ambiguous = false;
    int iterations = 0;

    Eigen::Index saturated_count() const { return saturated.count(); }
};

/// Quantities of the value function at the successor state x' = f(x, a),
/// zeroed where the approximator is not masked and x' is terminal.
struct SuccessorTerms {
    Vector next;
    double value = 0.0;
    Vector gradient;  ///< G(x')
    Matrix hessian;   ///< dG/dx at x'
    bool zeroed = false;
};

class GreedyPolicy {
public:
    GreedyPolicy(std::shared_ptr<const Environment> env, ValueApproximator approx, double gamma,
                 Tolerances tol = {})
        : env_(std::move(env)), approx_(std::move(approx)), gamma_(gamma), tol_(tol) {
        if (!env_) throw UsageError("policy needs an environment");
        if (!(gamma_ >= 0.0 && gamma_ <= 1.0)) throw UsageError("gamma must lie in [0, 1]");
        require_dim(approx_.n(), env_->n(), "approximator input vs environment state");
    }

    const Environment& env() const { return *env_; }
    std::shared_ptr<const Environment> env_ptr() const { return env_; }
    const ValueApproximator& approximator() const { return approx_; }
    double gamma() const { return gamma_; }
    const Tolerances& tolerances() const { return tol_; }

    SuccessorTerms successor(const Vector& next, const Vector& w, bool with_hessian) const {
        SuccessorTerms s;
        s.next = next;
        const Eigen::Index n = env_->n();
        if (!approx_.spec().terminal_mask && env_->is_terminal(next)) {
            s.zeroed = true;
            s.gradient = Vector::Zero(n);
            if (with_hessian) s.hessian = Matrix::Zero(n, n);
            return s;
        }
        auto e = approx_.evaluate(next, w, with_hessian);
        s.value = e.value;
        s.gradient = std::move(e.gradient);
        if (with_hessian) s.hessian = std::move(e.hessian);
        return s;
    }

    /// (dG/dw)(x') v at the successor, respecting terminal zeroing.
    Vector successor_weight_product(const SuccessorTerms& s, const Vector& w, const Vector& v) const {
        if (s.zeroed) return Vector::Zero(approx_.dim());
        return approx_.gradient_weight_jacobian_product(s.next, w, v);
    }

    double q_value(const Vector& x, const Vector& a, const Vector& w) const {
        const StepResult st = env_->step(x, a);
        const SuccessorTerms s = successor(st.next, w, false);
        return st.reward + gamma_ * s.value;
    }

    Vector q_action_gradient(const Vector& x, const Vector& a, const Vector& w) const {
        const ModelJacobians j = env_->jacobians(x, a);
        const SuccessorTerms s = successor(env_->step(x, a).next, w, false);
        return j.dr_da + gamma_ * j.df_da * s.gradient;
    }

    Matrix q_action_hessian(const Vector& x, const Vector& a, const Vector& w) const {
        const ModelJacobians j = env_->jacobians(x, a);
        const ModelSecondDerivs d2 = env_->second_derivs(x, a);
        const SuccessorTerms s = successor(env_->step(x, a).next, w, true);
        return action_hessian(j, d2, s);
    }

    /// d2Q / dx da, n x m.
    Matrix q_state_action_hessian(const Vector& x, const Vector& a, const Vector& w) const {
        const ModelJacobians j = env_->jacobians(x, a);
        const ModelSecondDerivs d2 = env_->second_derivs(x, a);
        const SuccessorTerms s = successor(env_->step(x, a).next, w, true);
        return state_action_hessian(j, d2, s);
    }

    GreedyActionResult greedy_action(const Vector& x, const Vector& w) const {
        require_dim(x.size(), env_->n(), "greedy_action");
        if (env_->is_terminal(x)) throw UsageError("greedy_action: state is terminal");
        const std::vector<Vector> starts = start_points(x, w);

        GreedyActionResult best;
        bool have_best = false;
        double worst_gradient = 0.0;
        int total_iterations = 0;
        std::vector<std::pair<Vector, double>> found;
        for (const Vector& a0 : starts) {
            const LocalResult r = ascend(x, w, a0);
            total_iterations += r.iterations;
            if (!r.converged) {
                worst_gradient = std::max(worst_gradient, r.projected_gradient);
                continue;
            }
            found.emplace_back(r.a, r.q);
            if (!have_best || r.q > best.q + 1e-12 * (1.0 + std::abs(best.q))) {
                best.a = r.a;
                best.q = r.q;
                have_best = true;
            }
        }
        if (!have_best) {
            throw SolverFailure("greedy_action: no start converged", worst_gradient, total_iterations);
        }
        // Another equally good maximiser counts only if Q dips between the two,
        // i.e. it is a separate peak rather than the same flat one.
        const double q_tol = 1e-10 * (1.0 + std::abs(best.q));
        for (const auto& [a, q] : found) {
            if (best.ambiguous || std::abs(q - best.q) > q_tol || (a - best.a).norm() <= 1e-6) continue;
            for (double s : {0.25, 0.5, 0.75}) {
                if (q_value(x, best.a + s * (a - best.a), w) < std::min(q, best.q) - q_tol) {
                    best.ambiguous = true;
                    break;
                }
            }
        }
        best.iterations = total_iterations;
        best.dq_da = q_action_gradient(x, best.a, w);
        best.saturated = saturation_mask(best.a, best.dq_da);
        return best;
    }

    Mask saturation_mask(const Vector& a, const Vector& dq_da) const {
        Mask sat = Mask::Constant(a.size(), false);
        for (Eigen::Index i = 0; i < a.size(); ++i) {
            if (!env_->bounded()(i)) continue;
            if (a(i) == 1.0 && dq_da(i) > tol_.saturation) sat(i) = true;
            if (a(i) == -1.0 && dq_da(i) < -tol_.saturation) sat(i) = true;
        }
        return sat;
    }

    /// d pi / dx, n x m. Saturated columns are zero.
    Matrix policy_state_jacobian(const Vector& x, const Vector& w) const {
        return policy_state_jacobian(x, w, greedy_action(x, w));
    }

    Matrix policy_state_jacobian(const Vector& x, const Vector& w, const GreedyActionResult& g) const {
        const ModelJacobians j = env_->jacobians(x, g.a);
        const ModelSecondDerivs d2 = env_->second_derivs(x, g.a);
        const SuccessorTerms s = successor(env_->step(x, g.a).next, w, true);
        return policy_state_jacobian(g, j, d2, s);
    }

    Matrix policy_state_jacobian(const GreedyActionResult& g, const ModelJacobians& j,
                                 const ModelSecondDerivs& d2, const SuccessorTerms& s) const {
        const Eigen::Index n = env_->n(), m = env_->m();
        Matrix out = Matrix::Zero(n, m);
        const std::vector<Eigen::Index> free = unsaturated(g);
        if (free.empty()) return out;
        const Matrix hinv = restricted_inverse(action_hessian(j, d2, s), free, g.ambiguous);
        const Matrix qxa = state_action_hessian(j, d2, s);
        Matrix qxa_free(n, Eigen::Index(free.size()));
        for (std::size_t k = 0; k < free.size(); ++k) qxa_free.col(Eigen::Index(k)) = qxa.col(free[k]);
        const Matrix block = -qxa_free * hinv;
        for (std::size_t k = 0; k < free.size(); ++k) out.col(free[k]) = block.col(Eigen::Index(k));
        return out;
    }

    /// d pi / dw, dim(w) x m. Saturated columns are zero.
    Matrix policy_weight_jacobian(const Vector& x, const Vector& w) const {
        const GreedyActionResult g = greedy_action(x, w);
        const Eigen::Index m = env_->m();
        Matrix out(approx_.dim(), m);
        for (Eigen::Index i = 0; i < m; ++i) {
            out.col(i) = policy_weight_jacobian_product(x, w, g, Vector::Unit(m, i));
        }
        return out;
    }

    /// (d pi / dw) c for an action-space vector c, in O(dim w).
    Vector policy_weight_jacobian_product(const Vector& x, const Vector& w, const GreedyActionResult& g,
                                          const Vector& c) const {
        const ModelJacobians j = env_->jacobians(x, g.a);
        const ModelSecondDerivs d2 = env_->second_derivs(x, g.a);
        const SuccessorTerms s = successor(env_->step(x, g.a).next, w, true);
        return policy_weight_jacobian_product(g, j, d2, s, w, c);
    }

    Vector policy_weight_jacobian_product(const GreedyActionResult& g, const ModelJacobians& j,
                                          const ModelSecondDerivs& d2, const SuccessorTerms& s,
                                          const Vector& w, const Vector& c) const {
        require_dim(c.size(), env_->m(), "policy_weight_jacobian_product");
        const std::vector<Eigen::Index> free = unsaturated(g);
        if (free.empty()) return Vector::Zero(approx_.dim());
        const Matrix hinv = restricted_inverse(action_hessian(j, d2, s), free, g.ambiguous);
        Vector c_free(Eigen::Index(free.size()));
        for (std::size_t k = 0; k < free.size(); ++k) c_free(Eigen::Index(k)) = c(free[k]);
        const Vector coef = hinv * c_free;
        Vector direction = Vector::Zero(env_->n());
        for (std::size_t k = 0; k < free.size(); ++k) {
            direction += coef(Eigen::Index(k)) * j.df_da.row(free[k]).transpose();
        }
        return -gamma_ * successor_weight_product(s, w, direction);
    }

    Matrix action_hessian(const ModelJacobians& j, const ModelSecondDerivs& d2,
                          const SuccessorTerms& s) const {
        return d2.d2r_da2 + gamma_ * (d2.d2f_da2_contracted(s.gradient) +
                                      j.df_da * s.hessian * j.df_da.transpose());
    }

    Matrix state_action_hessian(const ModelJacobians& j, const ModelSecondDerivs& d2,
                                const SuccessorTerms& s) const {
        return d2.d2r_dxda + gamma_ * (d2.d2f_dxda_contracted(s.gradient) +
                                       j.df_dx * s.hessian * j.df_da.transpose());
    }

    std::vector<Eigen::Index> unsaturated(const GreedyActionResult& g) const {
        std::vector<Eigen::Index> free;
        for (Eigen::Index i = 0; i < g.a.size(); ++i)
            if (!g.saturated(i)) free.push_back(i);
        return free;
    }

    /// Inverse of the Hessian restricted to the given components; throws
    /// DerivativeUndefined when the block is singular or the maximiser is ambiguous.
    Matrix restricted_inverse(const Matrix& h, const std::vector<Eigen::Index>& free,
                              bool ambiguous) const {
        if (ambiguous) throw DerivativeUndefined("greedy maximiser is not unique");
        const Eigen::Index k = Eigen::Index(free.size());
        if (k == 1) {
            const double d = h(free[0], free[0]);
            if (!(d != 0.0) || !std::isfinite(d)) throw DerivativeUndefined("restricted action Hessian is singular");
            return Matrix::Constant(1, 1, 1.0 / d);
        }
        Matrix hf(k, k);
        for (Eigen::Index r = 0; r < k; ++r)
            for (Eigen::Index c = 0; c < k; ++c) hf(r, c) = h(free[r], free[c]);
        Eigen::SelfAdjointEigenSolver<Matrix> es(hf);
        const Vector ev = es.eigenvalues().cwiseAbs();
        const double lo = ev.minCoeff(), hi = ev.maxCoeff();
        if (!(lo > 0.0) || hi / lo > tol_.max_condition) {
            throw DerivativeUndefined("restricted action Hessian is singular");
        }
        return es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() *
               es.eigenvectors().transpose();
    }

private:
    struct LocalResult {
        Vector a;
        double q = 0.0;
        bool converged = false;
        double projected_gradient = 0.0;
        int iterations = 0;
    };

    struct QEval {
        double q;
        Vector g;
        Matrix h;
    };

    QEval evaluate(const Vector& x, const Vector& a, const Vector& w) const {
        const StepResult st = env_->step(x, a);
        const ModelJacobians j = env_->jacobians(x, a);
        const ModelSecondDerivs d2 = env_->second_derivs(x, a);
        const SuccessorTerms s = successor(st.next, w, true);
        return {st.reward + gamma_ * s.value, j.dr_da + gamma_ * j.df_da * s.gradient,
                action_hessian(j, d2, s)};
    }

    std::vector<Vector> start_points(const Vector& x, const Vector& w) const {
        const Eigen::Index m = env_->m();
        std::vector<Vector> starts;
        // Clamped unconstrained Newton step from the origin.
        const Vector zero = Vector::Zero(m);
        const QEval e0 = evaluate(x, zero, w);
        Eigen::SelfAdjointEigenSolver<Matrix> es(e0.h);
        if (es.eigenvalues().maxCoeff() < 0.0) {
            Vector a = -es.eigenvectors() *
                       (es.eigenvalues().cwiseInverse().asDiagonal() *
                        (es.eigenvectors().transpose() * e0.g));
            starts.push_back(env_->clamp_action(a));
        } else {
            starts.push_back(zero);
        }
        const int pts = std::max(1, tol_.multistart_points);
        if (pts < 2) return starts;
        // Grid over [-1, 1]^m scored by Q alone; only grid points that are not
        // beaten by an axis neighbour seed a Newton ascent.
        Eigen::Index total = 1;
        for (Eigen::Index i = 0; i < m; ++i) total *= pts;
        std::vector<double> q(static_cast<std::size_t>(total));
        std::vector<Vector> grid(static_cast<std::size_t>(total));
        for (Eigen::Index idx = 0; idx < total; ++idx) {
            Vector a(m);
            Eigen::Index rem = idx;
            for (Eigen::Index i = 0; i < m; ++i) {
                a(i) = -1.0 + 2.0 * double(rem % pts) / double(pts - 1);
                rem /= pts;
            }
            q[std::size_t(idx)] = q_value(x, a, w);
            grid[std::size_t(idx)] = std::move(a);
        }
        for (Eigen::Index idx = 0; idx < total; ++idx) {
            bool peak = true;
            Eigen::Index stride = 1;
            for (Eigen::Index i = 0; i < m && peak; ++i, stride *= pts) {
                const Eigen::Index digit = (idx / stride) % pts;
                if (digit > 0 && q[std::size_t(idx - stride)] > q[std::size_t(idx)]) peak = false;
                if (digit + 1 < pts && q[std::size_t(idx + stride)] > q[std::size_t(idx)]) peak = false;
            }
            if (peak) starts.push_back(grid[std::size_t(idx)]);
        }
        return starts;
    }

    /// Projected Newton ascent from a0 with an Armijo search along the
    /// projection arc; indefinite free blocks use absolute eigenvalues and a trust radius.
    LocalResult ascend(const Vector& x, const Vector& w, Vector a) const {
        const Mask& bounded = env_->bounded();
        const Eigen::Index m = env_->m();
        LocalResult out;
        QEval e = evaluate(x, a, w);
        for (int it = 0; it <= tol_.solver_max_iterations; ++it) {
            out.iterations = it;
            std::vector<Eigen::Index> free;
            for (Eigen::Index i = 0; i < m; ++i) {
                const bool pinned = bounded(i) && ((a(i) >= 1.0 && e.g(i) > 0.0) ||
                                                   (a(i) <= -1.0 && e.g(i) < 0.0));
                if (!pinned) free.push_back(i);
            }
            double pg = 0.0;
            for (Eigen::Index i : free) pg = std::max(pg, std::abs(e.g(i)));
            out.projected_gradient = pg;
            if (pg <= tol_.solver_gradient) {
                out.converged = true;
                polish(x, w, a, e, free);
                break;
            }
            if (it == tol_.solver_max_iterations) break;

            const Eigen::Index k = Eigen::Index(free.size());
            Matrix hf(k, k);
            Vector gf(k);
            for (Eigen::Index r = 0; r < k; ++r) {
                gf(r) = e.g(free[r]);
                for (Eigen::Index c = 0; c < k; ++c) hf(r, c) = e.h(free[r], free[c]);
            }
            Eigen::SelfAdjointEigenSolver<Matrix> es(hf);
            Vector ev = es.eigenvalues();
            const double floor = 1e-8 * (1.0 + ev.cwiseAbs().maxCoeff());
            for (Eigen::Index r = 0; r < k; ++r) ev(r) = -std::max(std::abs(ev(r)), floor);
            const Vector df = -es.eigenvectors() *
                              (ev.cwiseInverse().asDiagonal() * (es.eigenvectors().transpose() * gf));
            Vector d = Vector::Zero(m);
            for (Eigen::Index r = 0; r < k; ++r) d(free[r]) = df(r);
            if (!d.allFinite()) break;
            const double radius = 2.0 * std::sqrt(double(m)) * (1.0 + a.norm());
            if (d.norm() > radius) d *= radius / d.norm();

            double step = 1.0;
            bool accepted = false;
            for (int ls = 0; ls < 60; ++ls, step *= 0.5) {
                const Vector trial = env_->clamp_action(a + step * d);
                const double q_trial = q_value(x, trial, w);
                if (q_trial >= e.q + 1e-4 * e.g.dot(trial - a) - 1e-14 * (1.0 + std::abs(e.q))) {
                    a = trial;
                    accepted = true;
                    break;
                }
            }
            if (!accepted) break;
            e = evaluate(x, a, w);
        }
        out.a = a;
        out.q = e.q;
        return out;
    }

    /// One undamped Newton step on the free block once converged; accepted only
    /// if it stays admissible and does not lower Q.
    void polish(const Vector& x, const Vector& w, Vector& a, QEval& e,
                const std::vector<Eigen::Index>& free) const {
        const Eigen::Index k = Eigen::Index(free.size());
        if (k == 0) return;
        Matrix hf(k, k);
        Vector gf(k);
        for (Eigen::Index r = 0; r < k; ++r) {
            gf(r) = e.g(free[r]);
            for (Eigen::Index c = 0; c < k; ++c) hf(r, c) = e.h(free[r], free[c]);
        }
        Eigen::SelfAdjointEigenSolver<Matrix> es(hf);
        if (!(es.eigenvalues().maxCoeff() < 0.0)) return;
        const Vector df = -es.eigenvectors() * (es.eigenvalues().cwiseInverse().asDiagonal() *
                                                (es.eigenvectors().transpose() * gf));
        Vector trial = a;
        for (Eigen::Index r = 0; r < k; ++r) trial(free[r]) += df(r);
        for (Eigen::Index i = 0; i < trial.size(); ++i) {
            if (env_->bounded()(i) && std::abs(trial(i)) > 1.0) return;
        }
        const QEval et = evaluate(x, trial, w);
        if (et.q < e.q - 1e-14 * (1.0 + std::abs(e.q))) return;
        double before = 0.0, after = 0.0;
        for (Eigen::Index i : free) {
            before = std::max(before, std::abs(e.g(i)));
            after = std::max(after, std::abs(et.g(i)));
        }
        if (after > before) return;
        a = trial;
        e = et;
    }

    std::shared_ptr<const Environment> env_;
    ValueApproximator approx_;
    double gamma_;
    Tolerances tol_;
};

}  // namespace vgl
