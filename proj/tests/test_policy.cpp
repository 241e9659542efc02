#include "support/oracles.hpp"

#include <vgl/vgl.hpp>

#include <gtest/gtest.h>

#include <random>

using vgl::ApproximatorKind;
using vgl::ApproximatorSpec;
using vgl::GreedyPolicy;
using vgl::Matrix;
using vgl::ValueApproximator;
using vgl::Vector;

namespace {

GreedyPolicy make_policy(const std::string& env_name, ApproximatorKind kind, int hidden = 6, double gamma = 1.0,
                         const vgl::ParamMap& params = {}) {
    auto env = vgl::make_environment(env_name, params);
    return GreedyPolicy(env, ValueApproximator(ApproximatorSpec::for_environment(*env, kind, hidden)), gamma);
}

Vector random_weights(const ValueApproximator& ap, std::mt19937_64& rng, double scale) {
    std::uniform_real_distribution<double> u(-scale, scale);
    Vector w(ap.dim());
    for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = u(rng);
    return w;
}

Vector random_state(const vgl::Environment& env, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.5, 1.5);
    std::uniform_int_distribution<int> t(0, env.max_horizon() - 1);
    Vector x(env.n());
    for (Eigen::Index i = 0; i + 1 < env.n(); ++i) x(i) = u(rng);
    x(env.time_index()) = t(rng);
    return x;
}

}  // namespace

TEST(Policy, QValueWithZeroQuadraticWeightsIsReward) {
    auto p = make_policy("lqr1d", ApproximatorKind::quadratic);
    const Vector x = p.env().make_state(Vector::Constant(1, 0.7), 2.0);
    const Vector a = Vector::Constant(1, -0.3);
    const Vector w = Vector::Zero(p.approximator().dim());
    EXPECT_EQ(p.q_value(x, a, w), p.env().step(x, a).reward);
}

TEST(Policy, QValueWithZeroDiscountIsReward) {
    auto p = make_policy("nav2d", ApproximatorKind::mlp, 6, 0.0);
    std::mt19937_64 rng(31);
    const Vector w = random_weights(p.approximator(), rng, 1.0);
    const Vector x = random_state(p.env(), rng);
    const Vector a = Eigen::Vector2d(0.2, -0.5);
    EXPECT_EQ(p.q_value(x, a, w), p.env().step(x, a).reward);
}

TEST(Policy, QValueRecomposition) {
    auto p = make_policy("lqr1d", ApproximatorKind::mlp, 6, 0.9);
    std::mt19937_64 rng(32);
    for (int k = 0; k < 20; ++k) {
        const Vector w = random_weights(p.approximator(), rng, 1.0);
        const Vector x = random_state(p.env(), rng);
        const Vector a = Vector::Constant(1, 0.4);
        const auto st = p.env().step(x, a);
        EXPECT_NEAR(p.q_value(x, a, w), st.reward + 0.9 * p.approximator().value(st.next, w), 1e-12);
    }
}

TEST(Policy, ActionGradientAtOriginWithZeroWeights) {
    auto p = make_policy("lqr1d", ApproximatorKind::quadratic);
    const Vector w = Vector::Zero(p.approximator().dim());
    const Vector x = p.env().make_state(Vector::Constant(1, 1.3), 0.0);
    EXPECT_EQ(p.q_action_gradient(x, Vector::Zero(1), w)(0), 0.0);
    EXPECT_NEAR(p.q_action_hessian(x, Vector::Zero(1), w)(0, 0), -0.2, 1e-15);
}

TEST(Policy, QDerivativesMatchFiniteDifferences) {
    for (const std::string name : {"lqr1d", "nav2d"}) {
        auto p = make_policy(name, ApproximatorKind::mlp, 6);
        std::mt19937_64 rng(33);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        for (int k = 0; k < 100; ++k) {
            const Vector w = random_weights(p.approximator(), rng, 1.0);
            const Vector x = random_state(p.env(), rng);
            Vector a(p.env().m());
            for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = u(rng);
            auto q = [&](const Vector& aa) { return p.q_value(x, aa, w); };
            auto dq = [&](const Vector& aa) { return p.q_action_gradient(x, aa, w); };
            auto dqx = [&](const Vector& xx) { return p.q_action_gradient(xx, a, w); };
            EXPECT_LE(oracle::max_rel(p.q_action_gradient(x, a, w), oracle::fd_gradient(q, a)), 1e-6);
            EXPECT_LE(oracle::max_rel(p.q_action_hessian(x, a, w), oracle::fd_jacobian(dq, a)), 1e-4);
            EXPECT_LE(oracle::max_rel(p.q_state_action_hessian(x, a, w), oracle::fd_jacobian(dqx, x)), 1e-4);
        }
    }
}

TEST(Policy, GreedyActionZeroWeightsLqr) {
    auto p = make_policy("lqr1d", ApproximatorKind::quadratic);
    const Vector w = Vector::Zero(p.approximator().dim());
    const auto g = p.greedy_action(p.env().make_state(Vector::Constant(1, 0.9), 0.0), w);
    EXPECT_NEAR(g.a(0), 0.0, 1e-12);
    EXPECT_FALSE(g.saturated(0));
}

TEST(Policy, GreedyActionSaturatesOnMonotoneQ) {
    // V = 3 mask(x) x, so dQ/da = dt * 3 * mask(x') > 0 for every action.
    auto p = make_policy("bangbang1d", ApproximatorKind::quadratic);
    Vector w = Vector::Zero(p.approximator().dim());
    w(1) = 3.0;
    const Vector x = p.env().make_state(Vector::Constant(1, 0.2), 0.0);
    const auto g = p.greedy_action(x, w);
    EXPECT_EQ(g.a(0), 1.0);
    EXPECT_TRUE(g.saturated(0));
    EXPECT_NEAR(g.dq_da(0), 0.1 * 3.0 * (20.0 - 1.0) / 20.0, 1e-12);
}

TEST(Policy, GreedyActionMatchesGridSearch) {
    for (const std::string name : {"bangbang1d", "nav2d"}) {
        auto p = make_policy(name, ApproximatorKind::mlp, 6);
        std::mt19937_64 rng(34);
        int checked = 0, compared = 0;
        for (int k = 0; k < 40; ++k) {
            const Vector w = random_weights(p.approximator(), rng, 1.0);
            const Vector x = random_state(p.env(), rng);
            vgl::GreedyActionResult g;
            try {
                g = p.greedy_action(x, w);
            } catch (const vgl::SolverFailure&) {
                continue;
            }
            if (g.ambiguous) continue;
            auto q = [&](const Vector& a) { return p.q_value(x, a, w); };
            const Vector ref = oracle::grid_argmax(q, int(p.env().m()));
            // The grid can only be beaten, never beat the solver by more than its resolution.
            EXPECT_GE(g.q, q(ref) - 1e-9);
            // Actions are compared only where the grid maximiser is strict: a
            // coarse probe away from it must fall clearly below. Flat Q (e.g. the
            // last step of bangbang1d, where Q does not depend on a) has no unique argmax.
            bool strict = true;
            const int m = int(p.env().m());
            for (int i = 0; i < (m == 1 ? 41 : 41 * 41) && strict; ++i) {
                Vector probe(m);
                probe(0) = -1.0 + 0.05 * (i % 41);
                if (m == 2) probe(1) = -1.0 + 0.05 * (i / 41);
                if ((probe - ref).cwiseAbs().maxCoeff() >= 0.05 && q(probe) > q(ref) - 1e-6) strict = false;
            }
            if (strict) {
                EXPECT_LE((g.a - ref).cwiseAbs().maxCoeff(), 1e-3 + 1e-9) << name;
                ++compared;
            }
            ++checked;
        }
        EXPECT_GE(checked, 20);
        EXPECT_GE(compared, 10) << name;
    }
}

TEST(Policy, GreedyActionDeterministic) {
    auto p = make_policy("nav2d", ApproximatorKind::mlp, 6);
    std::mt19937_64 rng(35);
    const Vector w = random_weights(p.approximator(), rng, 1.0);
    const Vector x = random_state(p.env(), rng);
    const auto g1 = p.greedy_action(x, w), g2 = p.greedy_action(x, w);
    EXPECT_EQ(g1.a, g2.a);
    EXPECT_EQ(g1.q, g2.q);
}

TEST(Policy, GreedyInvariants) {
    auto p = make_policy("nav2d", ApproximatorKind::mlp, 6);
    std::mt19937_64 rng(36);
    for (int k = 0; k < 50; ++k) {
        const Vector w = random_weights(p.approximator(), rng, 1.0);
        const Vector x = random_state(p.env(), rng);
        const auto g = p.greedy_action(x, w);
        for (Eigen::Index i = 0; i < g.a.size(); ++i) {
            if (g.saturated(i)) {
                EXPECT_EQ(std::abs(g.a(i)), 1.0);
                EXPECT_GT(g.a(i) * g.dq_da(i), 0.0);
            } else {
                EXPECT_LE(std::abs(g.dq_da(i)), 1e-8);
            }
        }
        // At a maximiser the unsaturated Hessian block is negative semi-definite.
        const Matrix H = p.q_action_hessian(x, g.a, w);
        std::vector<Eigen::Index> free;
        for (Eigen::Index i = 0; i < g.a.size(); ++i)
            if (!g.saturated(i)) free.push_back(i);
        if (free.empty()) continue;
        Matrix Hf(free.size(), free.size());
        for (std::size_t i = 0; i < free.size(); ++i)
            for (std::size_t j = 0; j < free.size(); ++j) Hf(i, j) = H(free[i], free[j]);
        EXPECT_LE(Eigen::SelfAdjointEigenSolver<Matrix>(Hf).eigenvalues().maxCoeff(), 1e-8);
    }
}

TEST(Policy, SolverFailureOnUnboundedQ) {
    // Unbounded action and a convex successor value: Q grows without bound.
    auto p = make_policy("lqr1d", ApproximatorKind::quadratic);
    Vector w = Vector::Zero(p.approximator().dim());
    w(3) = 5.0;
    EXPECT_THROW(p.greedy_action(p.env().make_state(Vector::Constant(1, 0.5), 0.0), w), vgl::SolverFailure);
}

TEST(Policy, AllSaturatedGivesZeroDerivatives) {
    auto p = make_policy("bangbang1d", ApproximatorKind::quadratic);
    Vector w = Vector::Zero(p.approximator().dim());
    w(1) = 3.0;
    const Vector x = p.env().make_state(Vector::Constant(1, 0.2), 0.0);
    EXPECT_TRUE(p.policy_state_jacobian(x, w).isZero(0.0));
    EXPECT_TRUE(p.policy_weight_jacobian(x, w).isZero(0.0));
}

TEST(Policy, PolicyDerivativesMatchFiniteDifferences) {
    struct Setup {
        std::string env;
        ApproximatorKind kind;
        vgl::ParamMap params;
    };
    const std::vector<Setup> setups{{"lqr1d", ApproximatorKind::quadratic, {}},
                                    {"lqr1d", ApproximatorKind::mlp, {}},
                                    {"nav2d", ApproximatorKind::mlp, {{"bounded", 0}}},
                                    {"nav2d", ApproximatorKind::mlp, {}}};
    for (const Setup& s : setups) {
        auto p = make_policy(s.env, s.kind, 6, 1.0, s.params);
        std::mt19937_64 rng(37);
        int checked = 0;
        for (int k = 0; k < 60 && checked < 15; ++k) {
            Vector w = random_weights(p.approximator(), rng, 0.5);
            if (s.kind == ApproximatorKind::quadratic) w(3) = -std::abs(w(3)) - 0.5;  // concave in x
            const Vector x = random_state(p.env(), rng);
            vgl::GreedyActionResult g;
            Matrix dx, dw;
            try {
                g = p.greedy_action(x, w);
                if (g.ambiguous) continue;
                dx = p.policy_state_jacobian(x, w, g);
                dw = p.policy_weight_jacobian(x, w);
            } catch (const vgl::Error&) {
                continue;
            }
            // Away from saturation switches the argmax is smooth.
            const Vector dq = g.dq_da;
            bool near_switch = false;
            for (Eigen::Index i = 0; i < g.a.size(); ++i) {
                if (p.env().bounded()(i) && std::abs(std::abs(g.a(i)) - 1.0) < 1e-3 && std::abs(dq(i)) < 1e-3)
                    near_switch = true;
                if (p.env().bounded()(i) && !g.saturated(i) && 1.0 - std::abs(g.a(i)) < 1e-3) near_switch = true;
            }
            if (near_switch) continue;
            auto act_x = [&](const Vector& xx) { return p.greedy_action(xx, w).a; };
            auto act_w = [&](const Vector& ww) { return p.greedy_action(x, ww).a; };
            // The map is smooth in the time coordinate too, so it is differenced as well.
            EXPECT_LE(oracle::max_rel(dx, oracle::fd_jacobian(act_x, x)), 1e-4) << s.env;
            EXPECT_LE(oracle::max_rel(dw, oracle::fd_jacobian(act_w, w)), 1e-4) << s.env;
            ++checked;
        }
        EXPECT_GE(checked, 5) << s.env;
    }
}

TEST(Policy, PolicyWeightJacobianZeroWeightsQuadraticLqr) {
    auto p = make_policy("lqr1d", ApproximatorKind::quadratic);
    const Vector w = Vector::Zero(p.approximator().dim());
    const Vector x = p.env().make_state(Vector::Constant(1, 0.6), 3.0);
    auto act_w = [&](const Vector& ww) { return p.greedy_action(x, ww).a; };
    EXPECT_LE(oracle::max_rel(p.policy_weight_jacobian(x, w), oracle::fd_jacobian(act_w, w)), 1e-4);
}
