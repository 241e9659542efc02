#pragma once

// Reference computations kept independent of the library's own derivative
// code: central differences, the scalar Riccati recursion and brute-force
// grid maximisation.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace oracle {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Central-difference gradient, step h (1 + |x_i|).
inline Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double h = 1e-5) {
    Vec g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double hi = h * (1.0 + std::abs(x(i)));
        Vec xp = x, xm = x;
        xp(i) += hi;
        xm(i) -= hi;
        g(i) = (f(xp) - f(xm)) / (2.0 * hi);
    }
    return g;
}

/// Row i holds d F / d x_i.
inline Mat fd_jacobian(const std::function<Vec(const Vec&)>& F, const Vec& x, double h = 1e-5) {
    const Vec f0 = F(x);
    Mat J(x.size(), f0.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double hi = h * (1.0 + std::abs(x(i)));
        Vec xp = x, xm = x;
        xp(i) += hi;
        xm(i) -= hi;
        J.row(i) = ((F(xp) - F(xm)) / (2.0 * hi)).transpose();
    }
    return J;
}

/// Second-order central differences of a scalar function.
inline Mat fd_hessian(const std::function<double(const Vec&)>& f, const Vec& x, double h = 1e-4) {
    const Eigen::Index n = x.size();
    Mat H(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            auto at = [&](double si, double sj) {
                Vec y = x;
                y(i) += si * h;
                y(j) += sj * h;
                return f(y);
            };
            H(i, j) = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * h * h);
        }
    }
    return H;
}

inline double max_rel(const Mat& a, const Mat& b) {
    return (a - b).cwiseAbs().maxCoeff() / (1.0 + b.cwiseAbs().maxCoeff());
}

/// Scalar x' = x + a, r = -(x^2 + c a^2) over `steps` steps with discount
/// gamma. Returns the optimal return from x0; the optimal feedback at each
/// step is a = -gamma P' x / (c + gamma P'), with P' the next cost-to-go.
struct Riccati {
    std::vector<double> P;  ///< cost-to-go coefficients, P[steps] = 0
    double gamma;
    double c;

    Riccati(double c_, int steps, double gamma_ = 1.0) : P(std::size_t(steps) + 1, 0.0), gamma(gamma_), c(c_) {
        for (int t = steps - 1; t >= 0; --t) {
            const double q = gamma * P[std::size_t(t) + 1];
            P[std::size_t(t)] = 1.0 + q - q * q / (c + q);
        }
    }
    double optimal_return(double x0) const { return -P[0] * x0 * x0; }
    double gain(int t) const {
        const double q = gamma * P[std::size_t(t) + 1];
        return -q / (c + q);
    }
};

/// argmax over a dense grid of [-1, 1]^m (m <= 2).
inline Vec grid_argmax(const std::function<double(const Vec&)>& q, int m, double step = 1e-3) {
    const int k = int(std::lround(2.0 / step));
    Vec best(m), a(m);
    double bq = -std::numeric_limits<double>::infinity();
    if (m == 1) {
        for (int i = 0; i <= k; ++i) {
            a(0) = -1.0 + i * step;
            const double v = q(a);
            if (v > bq) {
                bq = v;
                best = a;
            }
        }
        return best;
    }
    // Coarse pass, then a fine pass around the best coarse point.
    const double coarse = 0.02;
    const int kc = int(std::lround(2.0 / coarse));
    for (int i = 0; i <= kc; ++i)
        for (int j = 0; j <= kc; ++j) {
            a << -1.0 + i * coarse, -1.0 + j * coarse;
            const double v = q(a);
            if (v > bq) {
                bq = v;
                best = a;
            }
        }
    const Vec centre = best;
    const int kf = int(std::lround(2.0 * coarse / step));
    for (int i = 0; i <= kf; ++i)
        for (int j = 0; j <= kf; ++j) {
            a << centre(0) - coarse + i * step, centre(1) - coarse + j * step;
            if (a.cwiseAbs().maxCoeff() > 1.0) continue;
            const double v = q(a);
            if (v > bq) {
                bq = v;
                best = a;
            }
        }
    return best;
}

}  // namespace oracle
