#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "stabopt/fault.hpp"
#include "stabopt/lure.hpp"
#include "stabopt/powerflow.hpp"
#include "stabopt/simulate.hpp"
#include "support.hpp"

using namespace stabopt;

namespace {

const char* kSmib = R"({
  "buses": [{"id": 1, "kind": "generator", "infinite": true}, {"id": 2, "kind": "generator"}],
  "branches": [{"id": 1, "from": 1, "to": 2, "x": 0.1}],
  "generators": [{"bus": 1, "v_set": 1.0}, {"bus": 2, "inertia": 1, "damping": 0.1, "p_set": 0.5}],
  "loads": [],
  "limits": {"v_min": 0.9, "v_max": 1.1}
})";

}  // namespace

TEST(Lure, SingleMachineInfiniteBusMatrices) {
    PowerCase c = parse_case(kSmib);
    SteadyState eq = flat_state(c);
    LureSystem s = build_lure(c, eq, build_admittance(c, AdmittanceVariant::Base));
    Eigen::Matrix2d A;
    A << 0, 1, 0, -0.1;
    EXPECT_EQ(Eigen::MatrixXd(s.A), Eigen::MatrixXd(A));
    EXPECT_EQ(s.C.rows(), 1);
    EXPECT_EQ(s.C.cols(), 2);
}

TEST(Lure, CaseWithoutGeneratorsIsRejected) {
    EXPECT_THROW(parse_case(R"({"buses": [{"id": 1, "kind": "load", "damping": 1}], "branches": [],
                                "generators": [], "loads": []})"),
                 InputError);
}

TEST(Lure, IncidenceAndDimensions) {
    for (const auto& f : fixtures::kFaulted) {
        fixtures::PostFault pf = fixtures::post_fault(f);
        const LureSystem& s = pf.sys;
        EXPECT_EQ(static_cast<std::size_t>(s.C.rows()), s.n_edges());
        EXPECT_EQ(s.C.cols(), s.A.rows());
        EXPECT_EQ(s.B.cols(), s.C.rows());
        for (Eigen::Index k = 0; k < s.E.rows(); ++k) {
            EXPECT_EQ((s.E.row(k).array() == 1.0).count(), 1);
            EXPECT_EQ((s.E.row(k).array() == -1.0).count(), 1);
            EXPECT_EQ((s.E.row(k).array() != 0.0).count(), 2);
            EXPECT_GT(s.edges[static_cast<std::size_t>(k)].kappa, 0.0);
        }
    }
}

TEST(Lure, OutputsAreAngleDifferenceDeviations) {
    PowerCase c = fixtures::load("three_bus");
    AdmittanceMatrix Y = build_admittance(c, AdmittanceVariant::Base);
    SteadyState eq = solve_pf(c, scheduled_injections(c, set_point_dispatch(c)), Y);
    LureSystem s = build_lure(c, eq, Y);
    ASSERT_EQ(s.n_edges(), 3u);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        Eigen::VectorXd delta(3), omega(1);
        for (int i = 0; i < 3; ++i) delta[i] = u(rng);
        omega[0] = 1.0 + 0.1 * u(rng);
        Eigen::VectorXd y = s.C * s.layout.reduce(delta, omega, eq.theta);
        for (std::size_t k = 0; k < 3; ++k) {
            std::size_t i = s.edges[k].from, j = s.edges[k].to;
            EXPECT_NEAR(y[static_cast<Eigen::Index>(k)], (delta[i] - delta[j]) - (eq.theta[i] - eq.theta[j]), 1e-14);
        }
    }
}

TEST(Lure, NonlinearityValues) {
    LureEdge e;
    e.kappa = 1.0;
    EXPECT_EQ(phi_eval(e, 0.0), 0.0);
    EXPECT_NEAR(phi_eval(e, kPi / 2), 1.0, 1e-15);
    e.kappa = 2.5;
    e.theta_eq = 0.4;
    e.alpha = 0.1;
    EXPECT_EQ(phi_eval(e, 0.0), 0.0);
}

TEST(Lure, EquilibriumIsTheOrigin) {
    for (const auto& f : fixtures::kFaulted) {
        fixtures::PostFault pf = fixtures::post_fault(f);
        Eigen::VectorXd zero = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(pf.sys.dim()));
        EXPECT_EQ(lure_rhs(pf.sys, zero).cwiseAbs().maxCoeff(), 0.0);
    }
}

TEST(Lure, VectorFieldMatchesSwingEquations) {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (const auto& f : fixtures::kFaulted) {
        fixtures::PostFault pf = fixtures::post_fault(f);
        const PowerCase& c = pf.c;
        const LureSystem& s = pf.sys;
        DynModel dm(c);
        std::size_t n = c.n_bus();
        Eigen::VectorXd p(static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i) p[static_cast<Eigen::Index>(i)] = injection_p(pf.eq, pf.sc.Y_post, i);
        Phase ph{pf.sc.Y_post, pf.eq.V, p};
        double worst = 0.0;
        for (int trial = 0; trial < 1000; ++trial) {
            Eigen::VectorXd x(static_cast<Eigen::Index>(s.dim()));
            for (Eigen::Index k = 0; k < x.size(); ++k) x[k] = u(rng);
            Eigen::VectorXd state(static_cast<Eigen::Index>(n + s.layout.n_speed()));
            state.head(static_cast<Eigen::Index>(n)) = s.layout.lift_angles(x, pf.eq.theta);
            state.tail(static_cast<Eigen::Index>(s.layout.n_speed())) = s.layout.lift_speeds(x);
            Eigen::VectorXd full = rhs(dm, ph, state);
            Eigen::VectorXd red(x.size());
            for (std::size_t a = 0; a < s.layout.n_angle(); ++a)
                red[static_cast<Eigen::Index>(a)] = full[static_cast<Eigen::Index>(s.layout.angle_buses[a])] -
                                                    full[static_cast<Eigen::Index>(s.layout.ref)];
            red.tail(static_cast<Eigen::Index>(s.layout.n_speed())) =
                full.tail(static_cast<Eigen::Index>(s.layout.n_speed()));
            worst = std::max(worst, (red - lure_rhs(s, x)).cwiseAbs().maxCoeff());
        }
        EXPECT_LE(worst, 1e-10) << f.case_name;
    }
}

TEST(Lure, SectorSlopesFromVoltageCeiling) {
    PowerCase c = parse_case(kSmib);
    SectorBounds sb = design_sectors(c, build_admittance(c, AdmittanceVariant::Base));
    ASSERT_EQ(sb.beta.size(), 1);
    EXPECT_NEAR(sb.beta[0], 1.1 * 1.1 * 10.0, 1e-12);
    EXPECT_EQ(sb.gamma[0], 1e-3);
    EXPECT_THROW(design_sectors(c, build_admittance(c, AdmittanceVariant::Base), 0.0), InputError);

    PowerCase r = fixtures::load("three_bus");  // identical branches
    SectorBounds sr = design_sectors(r, build_admittance(r, AdmittanceVariant::Base));
    EXPECT_EQ(sr.beta.maxCoeff(), sr.beta.minCoeff());
}

TEST(Lure, SectorHoldsInsidePolytope) {
    const double xi = 1e-3;
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (const auto& f : fixtures::kFaulted) {
        fixtures::PostFault pf = fixtures::post_fault(f);
        SectorBounds sb = design_sectors(pf.c, pf.sc.Y_post, xi);
        const auto& lim = pf.c.limits;
        std::size_t violations = 0;
        for (int trial = 0; trial < 10000; ++trial) {
            std::size_t k = static_cast<std::size_t>(trial) % pf.sys.n_edges();
            LureEdge e = pf.sys.edges[k];
            e.theta_eq = lim.angle_diff_min + (lim.angle_diff_max - lim.angle_diff_min) * u(rng);
            double v = lim.v_min + (lim.v_max - lim.v_min) * u(rng);
            e.kappa = v * v * e.y_mag;
            double shift = 2.0 * (e.theta_eq + e.alpha);
            double lo = -kPi - shift, hi = kPi - shift;
            // keep clear of the two points where φ returns to zero
            double margin = 50.0 * xi;
            double y = lo + margin + (hi - lo - 2.0 * margin) * u(rng);
            double phi = phi_eval(e, y);
            Eigen::Index kk = static_cast<Eigen::Index>(k);
            if ((phi - sb.gamma[kk] * y) * (phi - sb.beta[kk] * y) > 0.0) ++violations;
        }
        EXPECT_EQ(violations, 0u) << f.case_name;
    }
}
