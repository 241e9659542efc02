#pragma once

// Central finite differences, used by the verification suite.

#include "vgl/core.hpp"

#include <functional>

namespace vgl::numdiff {

/// Gradient of a scalar function, step h scaled by (1 + |x_i|).
inline Vector gradient(const std::function<double(const Vector&)>& f, const Vector& x, double h = 1e-5) {
    Vector g(x.size());
    Vector xp = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double hi = h * (1.0 + std::abs(x(i)));
        xp(i) = x(i) + hi;
        const double fp = f(xp);
        xp(i) = x(i) - hi;
        const double fm = f(xp);
        xp(i) = x(i);
        g(i) = (fp - fm) / (2.0 * hi);
    }
    return g;
}

/// Jacobian with entry (i, j) = d F^j / d x^i, matching the library's
/// orientation for model derivatives.
inline Matrix jacobian(const std::function<Vector(const Vector&)>& F, const Vector& x, double h = 1e-5) {
    Matrix J;
    Vector xp = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double hi = h * (1.0 + std::abs(x(i)));
        xp(i) = x(i) + hi;
        const Vector fp = F(xp);
        xp(i) = x(i) - hi;
        const Vector fm = F(xp);
        xp(i) = x(i);
        if (i == 0) J.resize(x.size(), fp.size());
        J.row(i) = ((fp - fm) / (2.0 * hi)).transpose();
    }
    return J;
}

/// max |a - b| / (scale + max |b|), the relative error used by the checks.
inline double relative_error(const Matrix& a, const Matrix& b, double scale = 1.0) {
    if (a.size() == 0 && b.size() == 0) return 0.0;
    return (a - b).cwiseAbs().maxCoeff() / (scale + b.cwiseAbs().maxCoeff());
}

}  // namespace vgl::numdiff
