#include "support/oracles.hpp"

#include <vgl/vgl.hpp>

#include <gtest/gtest.h>

#include <random>

using vgl::Matrix;
using vgl::Vector;

namespace {

Vector vec(std::initializer_list<double> v) {
    Vector out(Eigen::Index(v.size()));
    Eigen::Index i = 0;
    for (double d : v) out(i++) = d;
    return out;
}

// Non-terminal state with integer time drawn below the horizon.
Vector random_state(const vgl::Environment& env, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    std::uniform_int_distribution<int> t(0, env.max_horizon() - 1);
    Vector x(env.n());
    for (Eigen::Index i = 0; i + 1 < env.n(); ++i) x(i) = u(rng);
    x(env.time_index()) = t(rng);
    return x;
}

Vector random_action(const vgl::Environment& env, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Vector a(env.m());
    for (Eigen::Index i = 0; i < env.m(); ++i) a(i) = u(rng);
    return a;
}

}  // namespace

TEST(Model, LqrOriginIsCostFreeFixedPoint) {
    vgl::Lqr1d env;
    const auto st = env.step(vec({0.0, 3.0}), vec({0.0}));
    EXPECT_EQ(st.next, vec({0.0, 4.0}));
    EXPECT_EQ(st.reward, 0.0);
}

TEST(Model, LqrDirectSubstitution) {
    vgl::Lqr1d env;
    const auto st = env.step(vec({1.0, 0.0}), vec({-1.0}));
    EXPECT_EQ(st.next(0), 0.0);
    EXPECT_NEAR(st.reward, -1.1, 1e-15);
}

TEST(Model, BangBangDirectSubstitution) {
    vgl::BangBang1d env;
    const auto st = env.step(vec({0.5, 0.0}), vec({1.0}));
    EXPECT_NEAR(st.next(0), 0.6, 1e-15);
    EXPECT_NEAR(st.reward, -0.25, 1e-15);
}

TEST(Model, LqrJacobians) {
    vgl::Lqr1d env;
    const auto j = env.jacobians(vec({1.0, 0.0}), vec({0.0}));
    EXPECT_EQ(j.df_dx(0, 0), 1.0);
    EXPECT_EQ(j.df_da(0, 0), 1.0);
    EXPECT_EQ(j.dr_dx(0), -2.0);
    EXPECT_EQ(j.dr_da(0), 0.0);
}

TEST(Model, LqrSecondDerivatives) {
    vgl::Lqr1d env;
    const auto s = env.second_derivs(vec({0.3, 1.0}), vec({0.7}));
    EXPECT_NEAR(s.d2r_da2(0, 0), -0.2, 1e-15);
    EXPECT_TRUE(s.d2f_da2_contracted(vec({2.0, -3.0})).isZero(0.0));
}

TEST(Model, TerminalPredicate) {
    vgl::Lqr1d env;
    EXPECT_TRUE(env.is_terminal(vec({0.4, 10.0})));
    EXPECT_FALSE(env.is_terminal(vec({0.4, 0.0})));
    EXPECT_FALSE(env.is_terminal(vec({0.4, 9.0})));
}

TEST(Model, SteppingFromTerminalIsUsageError) {
    vgl::Lqr1d env;
    EXPECT_THROW(env.step(vec({0.0, 10.0}), vec({0.0})), vgl::UsageError);
}

TEST(Model, NonFiniteOutputIsEnvironmentError) {
    vgl::Lqr1d env;
    EXPECT_THROW(env.step(vec({1e200, 0.0}), vec({0.0})), vgl::EnvironmentError);
}

TEST(Model, DimensionMismatch) {
    vgl::Nav2d env;
    EXPECT_THROW(env.step(vec({0.0, 0.0}), vec({0.0, 0.0})), vgl::DimensionError);
    EXPECT_THROW(env.step(vec({0.0, 0.0, 0.0}), vec({0.0})), vgl::DimensionError);
}

TEST(Model, UnknownEnvironmentAndParameter) {
    EXPECT_THROW(vgl::make_environment("cartpole"), vgl::UsageError);
    EXPECT_THROW(vgl::make_environment("lqr1d", {{"mass", 1.0}}), vgl::UsageError);
}

class ModelDerivatives : public ::testing::TestWithParam<std::string> {};

TEST_P(ModelDerivatives, FirstDerivativesMatchFiniteDifferences) {
    auto env = vgl::make_environment(GetParam());
    std::mt19937_64 rng(11);
    for (int k = 0; k < 200; ++k) {
        const Vector x = random_state(*env, rng);
        const Vector a = random_action(*env, rng);
        const auto j = env->jacobians(x, a);
        auto next = [&](const Vector& xx) { return env->step(xx, a).next; };
        auto next_a = [&](const Vector& aa) { return env->step(x, aa).next; };
        auto rew = [&](const Vector& xx) { return env->step(xx, a).reward; };
        auto rew_a = [&](const Vector& aa) { return env->step(x, aa).reward; };
        EXPECT_LE(oracle::max_rel(j.df_dx, oracle::fd_jacobian(next, x)), 1e-6);
        EXPECT_LE(oracle::max_rel(j.df_da, oracle::fd_jacobian(next_a, a)), 1e-6);
        EXPECT_LE(oracle::max_rel(j.dr_dx, oracle::fd_gradient(rew, x)), 1e-6);
        EXPECT_LE(oracle::max_rel(j.dr_da, oracle::fd_gradient(rew_a, a)), 1e-6);
    }
}

TEST_P(ModelDerivatives, SecondDerivativesMatchFiniteDifferences) {
    auto env = vgl::make_environment(GetParam());
    std::mt19937_64 rng(12);
    const Eigen::Index n = env->n(), m = env->m();
    for (int k = 0; k < 100; ++k) {
        const Vector x = random_state(*env, rng);
        const Vector a = random_action(*env, rng);
        const auto s = env->second_derivs(x, a);
        // Joint (x, a) Hessian of r, then pick the blocks.
        Vector z(n + m);
        z << x, a;
        auto r = [&](const Vector& zz) { return env->step(zz.head(n), zz.tail(m)).reward; };
        const Matrix H = oracle::fd_hessian(r, z);
        EXPECT_LE(oracle::max_rel(s.d2r_da2, H.bottomRightCorner(m, m)), 1e-4);
        EXPECT_LE(oracle::max_rel(s.d2r_dxda, H.topRightCorner(n, m)), 1e-4);
        // Contracted f-tensors against differences of v . f.
        const Vector v = Vector::Random(n);
        auto vf = [&](const Vector& zz) { return v.dot(env->step(zz.head(n), zz.tail(m)).next); };
        const Matrix Hf = oracle::fd_hessian(vf, z);
        EXPECT_LE(oracle::max_rel(s.d2f_da2_contracted(v), Hf.bottomRightCorner(m, m)), 1e-4);
        EXPECT_LE(oracle::max_rel(s.d2f_dxda_contracted(v), Hf.topRightCorner(n, m)), 1e-4);
    }
}

TEST_P(ModelDerivatives, RandomRolloutsTerminateWithinHorizon) {
    auto env = vgl::make_environment(GetParam());
    std::mt19937_64 rng(13);
    for (int k = 0; k < 1000; ++k) {
        Vector x = env->sample_start(rng);
        int steps = 0;
        while (!env->is_terminal(x)) {
            x = env->step(x, random_action(*env, rng)).next;
            ++steps;
            ASSERT_LE(steps, env->max_horizon());
        }
        EXPECT_EQ(steps, env->max_horizon());
    }
}

TEST_P(ModelDerivatives, StepIsBitIdentical) {
    auto env = vgl::make_environment(GetParam());
    std::mt19937_64 rng(14);
    for (int k = 0; k < 50; ++k) {
        const Vector x = random_state(*env, rng);
        const Vector a = random_action(*env, rng);
        const auto s1 = env->step(x, a);
        const auto s2 = env->step(x, a);
        EXPECT_EQ(s1.next, s2.next);
        EXPECT_EQ(s1.reward, s2.reward);
    }
}

INSTANTIATE_TEST_SUITE_P(AllEnvironments, ModelDerivatives, ::testing::Values("lqr1d", "bangbang1d", "nav2d"));
