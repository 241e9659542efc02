#pragma once

// Smooth value-function approximators V(x, w) with the derivative products the
// learners need: state gradient G = dV/dx, weight gradient, state Hessian and
// the weight-Jacobian of G (full, or contracted with a state-space vector).
//
// Two raw models are provided, both evaluated on a scaled input
// xh = scale .* x (the elapsed-time component is divided by the horizon):
//   quadratic  raw = w . [1, xh_i, xh_i xh_j (i <= j)]     (linear in w)
//   mlp        raw = v . tanh(U xh + b) + c                (one hidden layer)
// With the terminal mask enabled, V = ((F - t) / F) * raw, which is exactly
// zero at any terminal state (t = F) and smooth everywhere.

#include "vgl/core.hpp"
#include "vgl/model.hpp"

#include <cmath>
#include <random>
#include <string>
#include <variant>

namespace vgl {

enum class ApproximatorKind { quadratic, mlp };

inline std::string to_string(ApproximatorKind k) {
    return k == ApproximatorKind::quadratic ? "quadratic" : "mlp";
}

inline ApproximatorKind parse_approximator_kind(const std::string& s) {
    if (s == "quadratic") return ApproximatorKind::quadratic;
    if (s == "mlp") return ApproximatorKind::mlp;
    throw UsageError("unknown approximator kind '" + s + "'");
}

struct ApproximatorSpec {
    ApproximatorKind kind = ApproximatorKind::mlp;
    Eigen::Index n = 0;
    int hidden = 12;
    bool terminal_mask = true;
    Eigen::Index time_index = -1;  ///< -1: no time component
    int horizon = 0;

    static ApproximatorSpec for_environment(const Environment& env, ApproximatorKind kind,
                                            int hidden = 12, bool mask = true) {
        return {kind, env.n(), hidden, mask, env.time_index(), env.max_horizon()};
    }
};

namespace detail {

class QuadraticRaw {
public:
    explicit QuadraticRaw(Eigen::Index n) : n_(n) {}

    Eigen::Index dim() const { return 1 + n_ + n_ * (n_ + 1) / 2; }

    double value(const Vector& x, const Vector& w) const { return w.dot(features(x)); }

    Vector features(const Vector& x) const {
        Vector phi(dim());
        phi(0) = 1.0;
        phi.segment(1, n_) = x;
        Eigen::Index p = 1 + n_;
        for (Eigen::Index i = 0; i < n_; ++i)
            for (Eigen::Index j = i; j < n_; ++j) phi(p++) = x(i) * x(j);
        return phi;
    }

    Vector gradient(const Vector& x, const Vector& w) const {
        Vector g = w.segment(1, n_);
        Eigen::Index p = 1 + n_;
        for (Eigen::Index i = 0; i < n_; ++i)
            for (Eigen::Index j = i; j < n_; ++j, ++p) {
                g(i) += w(p) * x(j);
                g(j) += w(p) * x(i);
            }
        return g;
    }

    Matrix hessian(const Vector&, const Vector& w) const {
        Matrix h = Matrix::Zero(n_, n_);
        Eigen::Index p = 1 + n_;
        for (Eigen::Index i = 0; i < n_; ++i)
            for (Eigen::Index j = i; j < n_; ++j, ++p) {
                h(i, j) += w(p);
                h(j, i) += w(p);
            }
        return h;
    }

    Vector weight_gradient(const Vector& x, const Vector&) const { return features(x); }

    void evaluate(const Vector& x, const Vector& w, double& v, Vector& g, Matrix* h) const {
        v = value(x, w);
        g = gradient(x, w);
        if (h) *h = hessian(x, w);
    }

    Vector gradient_weight_product(const Vector& x, const Vector& w, const Vector& u, double dm) const {
        Vector out = gradient_weight_product(x, w, u);
        if (dm != 0.0) out += dm * features(x);
        return out;
    }

    /// d/dw (grad_x raw . u)
    Vector gradient_weight_product(const Vector& x, const Vector&, const Vector& u) const {
        Vector out = Vector::Zero(dim());
        out.segment(1, n_) = u;
        Eigen::Index p = 1 + n_;
        for (Eigen::Index i = 0; i < n_; ++i)
            for (Eigen::Index j = i; j < n_; ++j) out(p++) = x(i) * u(j) + x(j) * u(i);
        return out;
    }

private:
    Eigen::Index n_;
};

/// Weight layout: [U (H x n, row-major) | b (H) | v (H) | c].
class MlpRaw {
public:
    MlpRaw(Eigen::Index n, int hidden) : n_(n), h_(hidden) {
        if (hidden <= 0) throw UsageError("mlp hidden width must be positive");
    }

    Eigen::Index dim() const { return h_ * n_ + 2 * h_ + 1; }

    double value(const Vector& x, const Vector& w) const {
        Vector a = tanh_layer(x, w);
        return vout(w).dot(a) + w(dim() - 1);
    }

    Vector gradient(const Vector& x, const Vector& w) const {
        Vector a = tanh_layer(x, w);
        Vector s = vout(w).array() * (1.0 - a.array().square());
        return U(w).transpose() * s;
    }

    Matrix hessian(const Vector& x, const Vector& w) const {
        Vector a = tanh_layer(x, w);
        Vector d = vout(w).array() * (-2.0 * a.array() * (1.0 - a.array().square()));
        return U(w).transpose() * d.asDiagonal() * U(w);
    }

    Vector weight_gradient(const Vector& x, const Vector& w) const {
        Vector a = tanh_layer(x, w);
        Vector s = vout(w).array() * (1.0 - a.array().square());
        Vector g(dim());
        RowMap gu(g.data(), h_, n_);
        gu.noalias() = s * x.transpose();
        g.segment(h_ * n_, h_) = s;
        g.segment(h_ * n_ + h_, h_) = a;
        g(dim() - 1) = 1.0;
        return g;
    }

    /// Value, gradient and (optionally) Hessian from one hidden-layer pass.
    void evaluate(const Vector& x, const Vector& w, double& val, Vector& g, Matrix* h) const {
        const Vector a = tanh_layer(x, w);
        const Eigen::ArrayXd d1 = 1.0 - a.array().square();
        val = vout(w).dot(a) + w(dim() - 1);
        g.noalias() = U(w).transpose() * (vout(w).array() * d1).matrix();
        if (h) {
            const Vector d = vout(w).array() * (-2.0 * a.array() * d1);
            *h = U(w).transpose() * d.asDiagonal() * U(w);
        }
    }

    /// Forward-over-reverse directional pass: d/dw (grad_x raw . u) + dm d/dw raw,
    /// in O(dim w).
    Vector gradient_weight_product(const Vector& x, const Vector& w, const Vector& u, double dm = 0.0) const {
        Vector a = tanh_layer(x, w);
        Eigen::ArrayXd d1 = 1.0 - a.array().square();
        Eigen::ArrayXd d2 = -2.0 * a.array() * d1;
        Eigen::ArrayXd uu = (U(w) * u).array();  // directional input to each unit
        Eigen::ArrayXd v = vout(w).array();
        Vector g(dim());
        RowMap gu(g.data(), h_, n_);
        Vector coef_x = (v * (d2 * uu + dm * d1)).matrix();
        Vector coef_u = (v * d1).matrix();
        gu.noalias() = coef_x * x.transpose() + coef_u * u.transpose();
        g.segment(h_ * n_, h_) = coef_x;
        g.segment(h_ * n_ + h_, h_) = (d1 * uu + dm * a.array()).matrix();
        g(dim() - 1) = dm;
        return g;
    }

private:
    using RowMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    using ConstRowMap =
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

    ConstRowMap U(const Vector& w) const { return ConstRowMap(w.data(), h_, n_); }
    Eigen::VectorBlock<const Vector> bias(const Vector& w) const { return w.segment(h_ * n_, h_); }
    Eigen::VectorBlock<const Vector> vout(const Vector& w) const { return w.segment(h_ * n_ + h_, h_); }

    Vector tanh_layer(const Vector& x, const Vector& w) const {
        Vector z = U(w) * x + bias(w);
        return z.array().tanh().matrix();
    }

    Eigen::Index n_;
    Eigen::Index h_;
};

}  // namespace detail

class ValueApproximator {
public:
    explicit ValueApproximator(const ApproximatorSpec& spec)
        : spec_(spec), raw_(make_raw(spec)), scale_(Vector::Ones(spec.n)) {
        if (spec.n <= 0) throw UsageError("approximator input dimension must be positive");
        if (spec.time_index >= 0) {
            if (spec.time_index >= spec.n || spec.horizon <= 0) {
                throw UsageError("approximator time component needs a valid index and horizon");
            }
            scale_(spec.time_index) = 1.0 / spec.horizon;
        } else if (spec.terminal_mask) {
            throw UsageError("terminal mask requires a time component");
        }
    }

    const ApproximatorSpec& spec() const { return spec_; }
    Eigen::Index n() const { return spec_.n; }
    Eigen::Index dim() const {
        return std::visit([](const auto& r) { return r.dim(); }, raw_);
    }

    /// Uniform in [-0.1, 0.1].
    template <class Rng>
    Vector initial_weights(Rng& rng) const {
        std::uniform_real_distribution<double> u(-0.1, 0.1);
        Vector w(dim());
        for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = u(rng);
        return w;
    }

    double value(const Vector& x, const Vector& w) const {
        check(x, w);
        return mask(x) * raw_value(x, w);
    }

    Vector state_gradient(const Vector& x, const Vector& w) const {
        check(x, w);
        Vector g = mask(x) * raw_gradient(x, w);
        if (masked()) g(spec_.time_index) += raw_value(x, w) * mask_slope();
        return g;
    }

    Vector weight_gradient(const Vector& x, const Vector& w) const {
        check(x, w);
        const Vector xh = scaled(x);
        return mask(x) * std::visit([&](const auto& r) { return r.weight_gradient(xh, w); }, raw_);
    }

    /// (dG/dw) v, i.e. d/dw (G . v); O(dim w).
    Vector gradient_weight_jacobian_product(const Vector& x, const Vector& w, const Vector& v) const {
        check(x, w);
        require_dim(v.size(), spec_.n, "gradient_weight_jacobian_product");
        const Vector xh = scaled(x);
        const Vector u = scale_.cwiseProduct(v);
        // The mask's own slope contributes dm * dV_raw/dw; folded into the same pass.
        const double m = mask(x);
        const double dm = masked() && m != 0.0 ? mask_slope() * v(spec_.time_index) / m : 0.0;
        Vector out = std::visit([&](const auto& r) { return r.gradient_weight_product(xh, w, u, dm); }, raw_);
        if (masked() && m == 0.0) {
            out = mask_slope() * v(spec_.time_index) *
                  std::visit([&](const auto& r) { return r.weight_gradient(xh, w); }, raw_);
        } else {
            out *= m;
        }
        return out;
    }

    /// dim(w) x n matrix with (i, j) = dG^j / dw^i, built from n directional passes.
    Matrix full_gradient_weight_jacobian(const Vector& x, const Vector& w) const {
        check(x, w);
        Matrix out(dim(), spec_.n);
        for (Eigen::Index j = 0; j < spec_.n; ++j) {
            out.col(j) = gradient_weight_jacobian_product(x, w, Vector::Unit(spec_.n, j));
        }
        return out;
    }

    struct Evaluation {
        double value = 0.0;
        Vector gradient;
        Matrix hessian;  ///< empty unless requested
    };

    /// V, G and optionally dG/dx at one state, sharing the raw evaluation.
    Evaluation evaluate(const Vector& x, const Vector& w, bool with_hessian) const {
        check(x, w);
        const Vector xh = scaled(x);
        double rv = 0.0;
        Vector rg;
        Matrix rh;
        std::visit([&](const auto& r) { r.evaluate(xh, w, rv, rg, with_hessian ? &rh : nullptr); }, raw_);
        rg = scale_.cwiseProduct(rg);
        const double m = mask(x);
        Evaluation e;
        e.value = m * rv;
        e.gradient = m * rg;
        if (masked()) e.gradient(spec_.time_index) += rv * mask_slope();
        if (with_hessian) {
            e.hessian = m * (scale_.asDiagonal() * rh * scale_.asDiagonal());
            if (masked()) {
                const Vector g = rg * mask_slope();
                e.hessian.col(spec_.time_index) += g;
                e.hessian.row(spec_.time_index) += g.transpose();
            }
            e.hessian = 0.5 * (e.hessian + e.hessian.transpose()).eval();  // exact symmetry for the eigensolver
        }
        return e;
    }

    Matrix state_hessian(const Vector& x, const Vector& w) const {
        check(x, w);
        const Vector xh = scaled(x);
        Matrix h = std::visit([&](const auto& r) { return r.hessian(xh, w); }, raw_);
        h = mask(x) * (scale_.asDiagonal() * h * scale_.asDiagonal());
        if (masked()) {
            const Vector g = raw_gradient(x, w) * mask_slope();
            h.col(spec_.time_index) += g;
            h.row(spec_.time_index) += g.transpose();
        }
        return 0.5 * (h + h.transpose());
    }

    /// Feature vector of the quadratic kind (before masking).
    Vector quadratic_features(const Vector& x) const {
        const auto* q = std::get_if<detail::QuadraticRaw>(&raw_);
        if (!q) throw UsageError("quadratic_features: approximator is not quadratic");
        return q->features(scaled(x));
    }

private:
    using Raw = std::variant<detail::QuadraticRaw, detail::MlpRaw>;

    static Raw make_raw(const ApproximatorSpec& s) {
        if (s.kind == ApproximatorKind::quadratic) return detail::QuadraticRaw(s.n);
        return detail::MlpRaw(s.n, s.hidden);
    }

    bool masked() const { return spec_.terminal_mask; }
    double mask_slope() const { return -1.0 / spec_.horizon; }
    double mask(const Vector& x) const {
        if (!masked()) return 1.0;
        return (spec_.horizon - x(spec_.time_index)) / double(spec_.horizon);
    }

    Vector scaled(const Vector& x) const { return scale_.cwiseProduct(x); }

    double raw_value(const Vector& x, const Vector& w) const {
        const Vector xh = scaled(x);
        return std::visit([&](const auto& r) { return r.value(xh, w); }, raw_);
    }

    /// Gradient of raw with respect to the unscaled state.
    Vector raw_gradient(const Vector& x, const Vector& w) const {
        const Vector xh = scaled(x);
        return scale_.cwiseProduct(std::visit([&](const auto& r) { return r.gradient(xh, w); }, raw_));
    }

    void check(const Vector& x, const Vector& w) const {
        require_dim(x.size(), spec_.n, "approximator state");
        require_dim(w.size(), dim(), "approximator weights");
    }

    ApproximatorSpec spec_;
    Raw raw_;
    Vector scale_;
};

}  // namespace vgl
