#pragma once

// Shared aliases, numeric thresholds and the exception hierarchy used across
// the library. Everything that can fail throws a subclass of vgl::Error.

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vgl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;

/// Numeric thresholds shared by the greedy solver, the derivative routines and
/// the diagnostic checks. The defaults are the library-wide settings; a run
/// config may override individual entries.
struct Tolerances {
    double saturation = 1e-8;      ///< |dQ/da_i| above this at a bound means saturated
    double stationarity = 1e-8;    ///< |dQ/da_i| at or below this counts as stationary
    double solver_gradient = 1e-10;
    int solver_max_iterations = 100;
    int multistart_points = 9;     ///< grid points per action component
    double max_condition = 1e12;   ///< beyond this a restricted Hessian is treated as singular
    double extremality = 1e-4;
    double divergence_norm = 1e6;
};

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller broke a documented precondition (stepping from a terminal state,
/// lambda outside [0,1], ...).
class UsageError : public Error {
public:
    using Error::Error;
};

class DimensionError : public UsageError {
public:
    using UsageError::UsageError;
};

/// A model function produced a non-finite value.
class EnvironmentError : public Error {
public:
    using Error::Error;
};

/// A rollout did not reach a terminal state within the environment's horizon.
class EpisodicViolation : public Error {
public:
    using Error::Error;
};

/// The greedy maximisation did not certify a maximum.
class SolverFailure : public Error {
public:
    SolverFailure(const std::string& what, double projected_gradient, int iterations)
        : Error(what + " (projected gradient " + std::to_string(projected_gradient) +
                " after " + std::to_string(iterations) + " iterations)"),
          projected_gradient_(projected_gradient),
          iterations_(iterations) {}

    double projected_gradient() const noexcept { return projected_gradient_; }
    int iterations() const noexcept { return iterations_; }

private:
    double projected_gradient_;
    int iterations_;
};

/// A policy derivative does not exist at the queried point: singular restricted
/// Hessian or an ambiguous (multi-branch) maximiser.
class DerivativeUndefined : public Error {
public:
    using Error::Error;
};

/// Errors tied to a specific trajectory step carry its index.
class StepError : public Error {
public:
    StepError(const std::string& what, std::size_t step)
        : Error(what + " at step " + std::to_string(step)), step_(step) {}
    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

/// Target value-gradients are undefined for every t <= step.
class TargetUndefined : public StepError {
public:
    using StepError::StepError;
};

class OmegaSingular : public StepError {
public:
    using StepError::StepError;
};

/// Policy-gradient ascent on the greedy policy needs unbound actions.
class UnsupportedSaturation : public StepError {
public:
    using StepError::StepError;
};

class GradientUndefined : public StepError {
public:
    using StepError::StepError;
};

inline void require_dim(Eigen::Index got, Eigen::Index want, const char* what) {
    if (got != want) {
        throw DimensionError(std::string(what) + ": expected dimension " + std::to_string(want) +
                             ", got " + std::to_string(got));
    }
}

inline bool all_finite(const Vector& v) { return v.allFinite(); }

}  // namespace vgl
