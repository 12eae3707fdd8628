#include <gtest/gtest.h>

#include "stabopt/nlp.hpp"

using namespace stabopt;

TEST(Nlp, BoundConstrainedQuadratic) {
    // min x² s.t. x ≥ 1
    NlpProblem p;
    p.add_variable("x", 1.0, kInfNlp, 3.0);
    p.set_objective({0}, [](const auto* x) { return x[0] * x[0]; });
    OptSolution s = solve_nlp(p);
    ASSERT_EQ(s.status, OptStatus::Optimal);
    EXPECT_NEAR(s.x[0], 1.0, 1e-7);
    EXPECT_NEAR(s.objective, 1.0, 1e-7);
}

TEST(Nlp, InequalityRowMultiplier) {
    // min x² s.t. 1 − x ≤ 0: multiplier 2
    NlpProblem p;
    p.add_variable("x", -kInfNlp, kInfNlp, 3.0);
    p.set_objective({0}, [](const auto* x) { return x[0] * x[0]; });
    p.add_block("ge1", RowKind::Inequality, 1, {0}, [](const auto* x, auto* out) { out[0] = 1.0 - x[0]; });
    OptSolution s = solve_nlp(p);
    ASSERT_EQ(s.status, OptStatus::Optimal);
    EXPECT_NEAR(s.x[0], 1.0, 1e-7);
    EXPECT_NEAR(s.lambda[0], 2.0, 1e-6);
}

TEST(Nlp, EqualityQpMatchesDirectKktSolve) {
    // min ½xᵀQx + cᵀx s.t. Ax = b
    Eigen::MatrixXd Q(3, 3), A(2, 3);
    Q << 4, 1, 0, 1, 3, 1, 0, 1, 2;
    A << 1, 1, 1, 1, -1, 2;
    Eigen::Vector3d c(1, -2, 0.5);
    Eigen::Vector2d b(1, 0.3);
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(5, 5);
    K.topLeftCorner(3, 3) = Q;
    K.topRightCorner(3, 2) = A.transpose();
    K.bottomLeftCorner(2, 3) = A;
    Eigen::VectorXd rhs(5);
    rhs << -c, b;
    Eigen::VectorXd sol = K.fullPivLu().solve(rhs);

    NlpProblem p;
    for (int i = 0; i < 3; ++i) p.add_variable("x" + std::to_string(i), -kInfNlp, kInfNlp, 0.0);
    p.set_objective({0, 1, 2}, [Q, c](const auto* x) {
        auto f = x[0] * 0.0;
        for (int i = 0; i < 3; ++i) {
            f += c[i] * x[i];
            for (int j = 0; j < 3; ++j) f += 0.5 * Q(i, j) * x[i] * x[j];
        }
        return f;
    });
    p.add_block("Ax=b", RowKind::Equality, 2, {0, 1, 2}, [A, b](const auto* x, auto* out) {
        for (int r = 0; r < 2; ++r) out[r] = A(r, 0) * x[0] + A(r, 1) * x[1] + A(r, 2) * x[2] - b[r];
    });
    OptSolution s = solve_nlp(p);
    ASSERT_EQ(s.status, OptStatus::Optimal);
    EXPECT_LE((s.x - sol.head(3)).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LE((s.lambda - sol.tail(2)).cwiseAbs().maxCoeff(), 1e-7);
}

TEST(Nlp, Rosenbrock) {
    NlpProblem p;
    p.add_variable("x", -kInfNlp, kInfNlp, -1.2);
    p.add_variable("y", -kInfNlp, kInfNlp, 1.0);
    p.set_objective({0, 1}, [](const auto* x) {
        auto a = 1.0 - x[0];
        auto b = x[1] - x[0] * x[0];
        return a * a + 100.0 * b * b;
    });
    OptSolution s = solve_nlp(p);
    ASSERT_EQ(s.status, OptStatus::Optimal);
    EXPECT_NEAR(s.x[0], 1.0, 1e-6);
    EXPECT_NEAR(s.x[1], 1.0, 1e-6);
}

TEST(Nlp, Hs071) {
    NlpProblem p;
    double start[] = {1, 5, 5, 1};
    for (int i = 0; i < 4; ++i) p.add_variable("x" + std::to_string(i), 1.0, 5.0, start[i]);
    p.set_objective({0, 1, 2, 3}, [](const auto* x) { return x[0] * x[3] * (x[0] + x[1] + x[2]) + x[2]; });
    p.add_block("product", RowKind::Inequality, 1, {0, 1, 2, 3},
                [](const auto* x, auto* out) { out[0] = 25.0 - x[0] * x[1] * x[2] * x[3]; });
    p.add_block("sphere", RowKind::Equality, 1, {0, 1, 2, 3}, [](const auto* x, auto* out) {
        out[0] = x[0] * x[0] + x[1] * x[1] + x[2] * x[2] + x[3] * x[3] - 40.0;
    });
    OptSolution s = solve_nlp(p);
    ASSERT_EQ(s.status, OptStatus::Optimal);
    Eigen::Vector4d ref(1.0, 4.74299963, 3.82114998, 1.37940829);
    EXPECT_LE((s.x - ref).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_NEAR(s.objective, 17.0140173, 1e-6);
    EXPECT_LE(s.kkt_residual, 1e-6);
}

TEST(Nlp, InfeasibleProblemIsReported) {
    // x ≤ 0 and x ≥ 1 together
    NlpProblem p;
    p.add_variable("x", -kInfNlp, kInfNlp, 0.5);
    p.set_objective({0}, [](const auto* x) { return x[0] * x[0]; });
    p.add_block("le0", RowKind::Inequality, 1, {0}, [](const auto* x, auto* out) { out[0] = x[0]; });
    p.add_block("ge1", RowKind::Inequality, 1, {0}, [](const auto* x, auto* out) { out[0] = 1.0 - x[0]; });
    OptSolution s = solve_nlp(p);
    EXPECT_NE(s.status, OptStatus::Optimal);
}

TEST(Nlp, DualNumberDerivativesMatchDifferences) {
    NlpProblem p;
    for (int i = 0; i < 3; ++i) p.add_variable("v" + std::to_string(i), -kInfNlp, kInfNlp, 0.3 * (i + 1));
    p.set_objective({0, 1, 2}, [](const auto* x) {
        using std::cos; using std::sin;
        return sin(x[0]) * x[1] + cos(x[2] * x[0]);
    });
    p.add_block("mix", RowKind::Equality, 2, {0, 1, 2}, [](const auto* x, auto* out) {
        using std::sin;
        out[0] = x[0] * x[1] * x[2] - sin(x[1]);
        out[1] = x[2] * x[2] / (1.0 + x[0] * x[0]);
    });
    for (const auto& d : check_derivatives(p, p.x0)) EXPECT_LE(d.max_rel_error, 1e-6) << d.block;
    Eigen::MatrixXd H = p.eval_hessian(p.x0, 1.0, Eigen::Vector2d(0.5, -2.0));
    EXPECT_TRUE(H.isApprox(H.transpose(), 0.0));
    // Hessian by differencing the gradient of the Lagrangian
    auto lag_grad = [&](const Eigen::VectorXd& x) {
        Eigen::VectorXd g;
        Eigen::MatrixXd J;
        p.eval_jacobian(x, g, J);
        return Eigen::VectorXd(g + J.transpose() * Eigen::Vector2d(0.5, -2.0));
    };
    for (int j = 0; j < 3; ++j) {
        Eigen::VectorXd xp = p.x0, xm = p.x0;
        xp[j] += 1e-6;
        xm[j] -= 1e-6;
        Eigen::VectorXd col = (lag_grad(xp) - lag_grad(xm)) / 2e-6;
        EXPECT_LE((col - H.col(j)).cwiseAbs().maxCoeff(), 1e-6);
    }
}
