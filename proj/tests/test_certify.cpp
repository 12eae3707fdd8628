#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "stabopt/certify.hpp"
#include "stabopt/sdp.hpp"
#include "support.hpp"

using namespace stabopt;

namespace {

Eigen::MatrixXd m1(double v) { return Eigen::MatrixXd::Constant(1, 1, v); }

// block matrix assembled independently of sdp::lmi_matrix
Eigen::MatrixXd block(const LureSystem& s, const QuadraticCertificate& c) {
    Eigen::Index n = s.A.rows(), m = s.B.cols();
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n + m, n + m);
    M.topLeftCorner(n, n) = s.A.transpose() * c.P + c.P * s.A;
    for (Eigen::Index k = 0; k < m; ++k) {
        Eigen::VectorXd ck = s.C.row(k).transpose();
        M.topLeftCorner(n, n) -= c.tau[k] * c.gamma[k] * c.beta[k] * ck * ck.transpose();
        M.block(0, n + k, n, 1) = c.P * s.B.col(k) + 0.5 * c.tau[k] * (c.gamma[k] + c.beta[k]) * ck;
        M.block(n + k, 0, 1, n) = M.block(0, n + k, n, 1).transpose();
        M(n + k, n + k) = -c.tau[k];
    }
    return M;
}

struct Certified {
    fixtures::PostFault pf;
    SectorBounds sb;
    QuadraticCertificate cert;
};

Certified certified(const fixtures::Named& f) {
    Certified r{fixtures::post_fault(f), {}, {}};
    r.sb = design_sectors(r.pf.c, r.pf.sc.Y_post);
    r.cert = solve_lmi(r.pf.sys, r.sb);
    return r;
}

}  // namespace

TEST(Certify, ScalarHandCandidateBlock) {
    Eigen::MatrixXd M = sdp::lmi_matrix(m1(-1), m1(-1), m1(1), Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1),
                                        m1(0.5), Eigen::VectorXd::Ones(1));
    EXPECT_TRUE(M.isApprox(-Eigen::MatrixXd::Identity(2, 2)));
    QuadraticCertificate c = solve_lmi(m1(-1), m1(-1), m1(1), {Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1)});
    EXPECT_LE(c.lmi_margin, -1e-8);
    EXPECT_GE(c.lambda_min, c.mu);
}

TEST(Certify, UnstableLinearPartIsInfeasible) {
    EXPECT_THROW(solve_lmi(m1(1), m1(-1), m1(1), {Eigen::VectorXd::Zero(1), Eigen::VectorXd::Constant(1, 100.0)}),
                 LmiInfeasible);
}

TEST(Certify, ScalarWdotHandValue) {
    LureSystem s;
    s.A = m1(-1);
    s.B = m1(-1);
    s.C = m1(1);
    LureEdge e;
    e.kappa = 1.0;
    s.edges = {e};
    QuadraticCertificate c;
    c.P = m1(0.5);
    Eigen::VectorXd x = Eigen::VectorXd::Constant(1, 0.5);
    double expect = 2 * 0.5 * 0.5 * (-0.5 - std::sin(0.5));
    EXPECT_NEAR(wdot_value(c, s, x), expect, 1e-15);
    EXPECT_LT(expect, 0.0);
}

TEST(Certify, FixtureMarginsByIndependentEigensolver) {
    for (const auto& f : fixtures::kFaulted) {
        Certified r = certified(f);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(block(r.pf.sys, r.cert), Eigen::EigenvaluesOnly);
        EXPECT_LE(es.eigenvalues().maxCoeff(), -1e-8) << f.case_name;
        EXPECT_NEAR(es.eigenvalues().maxCoeff(), r.cert.lmi_margin, 1e-10);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ep(r.cert.P, Eigen::EigenvaluesOnly);
        EXPECT_GE(ep.eigenvalues().minCoeff(), r.cert.mu * (1 - 1e-9));
        EXPECT_GE(r.cert.tau.minCoeff(), 0.0);
    }
}

TEST(Certify, SampledWdotIsNegative) {
    for (const auto& f : fixtures::kFaulted) {
        Certified r = certified(f);
        WdotReport w = check_wdot_negative(r.cert, r.pf.sys, r.sb, 10000, 42);
        EXPECT_EQ(w.samples, 10000u);
        EXPECT_EQ(w.nonnegative, 0u) << f.case_name;
    }
}

TEST(Certify, SymmetricSlabLevel) {
    Eigen::MatrixXd C(1, 2);
    C << 1, 0;
    InvariantLevel lv = w_min_closed_form(Eigen::MatrixXd::Identity(2, 2), C, Eigen::VectorXd::Constant(1, -kPi),
                                          Eigen::VectorXd::Constant(1, kPi));
    EXPECT_NEAR(lv.w_min, kPi * kPi, 1e-12);
}

TEST(Certify, ClosedFormMatchesBruteForceOnFixtures) {
    for (const auto& f : fixtures::kFaulted) {
        Certified r = certified(f);
        InvariantLevel lv = w_min_closed_form(r.cert, r.pf.sys);
        double bf = w_min_bruteforce(r.cert, r.pf.sys);
        EXPECT_NEAR(lv.w_min / bf, 1.0, 1e-6) << f.case_name;
        for (std::size_t i = 0; i < r.pf.sys.n_edges(); ++i) {
            const Eigen::VectorXd& xh = lv.minimizers[i];
            Eigen::Index ii = static_cast<Eigen::Index>(i);
            EXPECT_NEAR(r.pf.sys.C.row(ii).dot(xh), lv.branch_levels[ii], 1e-10);
            EXPECT_NEAR(w_value(r.cert, xh), lv.branch_values[ii], 1e-10 * std::max(1.0, lv.branch_values[ii]));
        }
    }
}

TEST(Certify, ClosedFormMatchesBruteForceOnRandomInstances) {
    std::mt19937_64 rng(42);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> ud(0.1, 3.0);
    for (int k = 0; k < 50; ++k) {
        int n = 2 + k % 5, m = 1 + k % 4;
        Eigen::MatrixXd A(n, n), C(m, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) A(i, j) = nd(rng);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) C(i, j) = nd(rng);
        Eigen::MatrixXd P = A * A.transpose() + 0.1 * Eigen::MatrixXd::Identity(n, n);
        Eigen::VectorXd lo(m), hi(m);
        for (int i = 0; i < m; ++i) {
            lo[i] = -ud(rng);
            hi[i] = ud(rng);
        }
        double a = w_min_closed_form(P, C, lo, hi).w_min, b = w_min_bruteforce(P, C, lo, hi);
        EXPECT_NEAR(a / b, 1.0, 1e-6);
    }
}

TEST(Certify, ScalingInvariance) {
    Certified r = certified({"three_bus", "three_bus_fault"});
    const double c = 3.7;
    QuadraticCertificate s = r.cert;
    s.P *= c;
    s.tau *= c;
    EXPECT_NEAR(lmi_margin(r.pf.sys, s), c * r.cert.lmi_margin, 1e-12);
    InvariantLevel a = w_min_closed_form(r.cert, r.pf.sys), b = w_min_closed_form(s, r.pf.sys);
    EXPECT_NEAR(b.w_min, c * a.w_min, 1e-10 * b.w_min);
    EXPECT_EQ(a.argmin, b.argmin);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> nd(0.0, 0.5);
    for (int k = 0; k < 200; ++k) {
        Eigen::VectorXd x(static_cast<Eigen::Index>(r.pf.sys.dim()));
        for (Eigen::Index j = 0; j < x.size(); ++j) x[j] = nd(rng);
        EXPECT_EQ(invariant_set_contains(r.cert, a, r.pf.sys, x), invariant_set_contains(s, b, r.pf.sys, x));
    }
}

TEST(Certify, CacheRoundTripAndIntegrity) {
    Certified r = certified({"two_bus", "two_bus_line2_fault"});
    json j = certificate_to_json(r.cert);
    QuadraticCertificate back = certificate_from_json(j, r.pf.sys, r.sb);
    EXPECT_TRUE(back.P.isApprox(r.cert.P, 0.0));
    json bad = j;
    bad["P"][0][0] = bad["P"][0][0].get<double>() * 1.01;
    EXPECT_THROW(certificate_from_json(bad, r.pf.sys, r.sb), HashMismatch);
    Certified other = certified({"three_bus", "three_bus_fault"});
    EXPECT_THROW(certificate_from_json(j, other.pf.sys, other.sb), HashMismatch);
    try {
        certificate_from_json(bad, r.pf.sys, r.sb);
    } catch (const HashMismatch& e) {
        EXPECT_STREQ(e.what(), "certificate/topology hash mismatch");
    }
}
