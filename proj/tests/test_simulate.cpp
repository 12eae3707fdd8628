#include <gtest/gtest.h>

#include <sstream>

#include "stabopt/verify.hpp"
#include "support.hpp"

using namespace stabopt;

namespace {

Phase post_phase(const fixtures::PostFault& pf) {
    Eigen::VectorXd p(static_cast<Eigen::Index>(pf.c.n_bus()));
    for (std::size_t i = 0; i < pf.c.n_bus(); ++i) p[static_cast<Eigen::Index>(i)] = injection_p(pf.eq, pf.sc.Y_post, i);
    return {pf.sc.Y_post, pf.eq.V, p};
}

Eigen::VectorXd rest_state(const fixtures::PostFault& pf) {
    Eigen::VectorXd s(static_cast<Eigen::Index>(pf.c.n_bus() + pf.sys.layout.n_speed()));
    s.head(static_cast<Eigen::Index>(pf.c.n_bus())) = pf.eq.theta;
    s.tail(static_cast<Eigen::Index>(pf.sys.layout.n_speed())).setOnes();
    return s;
}

}  // namespace

TEST(Simulate, EquilibriumHasZeroRhs) {
    for (const auto& f : fixtures::kFaulted) {
        fixtures::PostFault pf = fixtures::post_fault(f);
        EXPECT_LE(rhs(pf.c, post_phase(pf), rest_state(pf)).cwiseAbs().maxCoeff(), 1e-9) << f.case_name;
    }
}

TEST(Simulate, EquilibriumStaysPutAndIsStable) {
    fixtures::PostFault pf = fixtures::post_fault({"three_bus", "three_bus_fault"});
    Phase ph = post_phase(pf);
    Eigen::VectorXd s0 = rest_state(pf);
    Trajectory tr = integrate(pf.c, ph, ph, 0.0, s0, 5.0);
    EXPECT_FALSE(tr.diverged);
    for (const auto& s : tr.states) EXPECT_LE((s - s0).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_EQ(assess_stability(tr, &pf.sys), Verdict::Stable);
}

TEST(Simulate, Rk4IsFourthOrder) {
    auto [c, sc] = fixtures::with_fault("three_bus", "three_bus_fault");
    fixtures::PostFault pf = fixtures::post_fault({"three_bus", "three_bus_fault"});
    Eigen::VectorXd p = set_point_dispatch(c) * 0.5;
    SteadyState pre = solve_pf(c, scheduled_injections(c, p), sc.Y);
    Eigen::VectorXd pp(static_cast<Eigen::Index>(c.n_bus()));
    for (std::size_t i = 0; i < c.n_bus(); ++i) pp[static_cast<Eigen::Index>(i)] = injection_p(pre, sc.Y, i);
    DisturbanceSetup d = make_disturbance(c, sc, pre, pp, pf.eq.V, pp);
    auto end = [&](double h) {
        IntegrateOptions io;
        io.h = h;
        io.record_every = 1 << 30;
        return integrate(c, d.fault_on, d.post, 0.1, d.x0, 1.0, io).states.back();
    };
    const double h = 0.02;
    Eigen::VectorXd ref = end(h / 8);
    double e1 = (end(h) - ref).cwiseAbs().maxCoeff(), e2 = (end(h / 2) - ref).cwiseAbs().maxCoeff();
    // error against h/8 shrinks by 2⁴ per halving up to the reference's own error
    double ratio = e1 / e2;
    EXPECT_GT(ratio, 12.0);
    EXPECT_LT(ratio, 20.0);
    RecordProperty("rk4_halving_ratio", std::to_string(ratio));
}

TEST(Simulate, HeavyDispatchWithoutPostFaultEquilibriumIsUnstable) {
    // single remaining line carries at most 1.5; all 1.8 of load supplied by bus 2
    auto [c, sc] = fixtures::with_fault("two_bus", "two_bus_line2_fault");
    Eigen::VectorXd p(2);
    p << 0.0, 1.8;
    SteadyState start = flat_state(c);
    DispatchAssessment a = simulate_dispatch(c, sc, p, start, start);
    EXPECT_FALSE(a.post.has_value());
    EXPECT_EQ(a.verdict, Verdict::Unstable);
    EXPECT_EQ(a.reason, a.trajectory.diverged ? "angle separation exceeded the divergence threshold"
                                              : "no post-fault equilibrium for the dispatch");
}

TEST(Simulate, LightDispatchIsStable) {
    auto [c, sc] = fixtures::with_fault("two_bus", "two_bus_line2_fault");
    Eigen::VectorXd p(2);
    p << 1.3, 0.5;
    SteadyState start = flat_state(c);
    DispatchAssessment a = simulate_dispatch(c, sc, p, start, start);
    ASSERT_TRUE(a.post.has_value());
    EXPECT_EQ(a.verdict, Verdict::Stable) << a.reason;
}

TEST(Simulate, CertifiedSublevelSetIsInvariant) {
    for (const auto& f : fixtures::kFaulted) {
        fixtures::PostFault pf = fixtures::post_fault(f);
        SectorBounds sb = design_sectors(pf.c, pf.sc.Y_post);
        QuadraticCertificate cert = solve_lmi(pf.sys, sb);
        InvarianceReport r = check_invariance(pf.c, pf.sc, cert, pf.eq, 20);
        EXPECT_EQ(r.trajectories, 20u);
        EXPECT_EQ(r.left_polytope, 0u) << f.case_name;
        EXPECT_EQ(r.w_increases, 0u) << f.case_name << " worst " << r.worst_increase;
        EXPECT_EQ(r.not_stable, 0u) << f.case_name;
    }
}

TEST(Simulate, StepHalvingSelfCheck) {
    fixtures::PostFault pf = fixtures::post_fault({"two_bus", "two_bus_line2_fault"});
    Phase ph = post_phase(pf);
    Eigen::VectorXd s0 = rest_state(pf);
    s0[1] += 0.2;
    IntegrateOptions io;
    io.self_check = true;
    Trajectory tr = integrate(pf.c, ph, ph, 0.0, s0, 2.0, io);
    EXPECT_LT(tr.step_halving_delta, 1e-9);
    io.h = 0.0;
    EXPECT_THROW(integrate(pf.c, ph, ph, 0.0, s0, 2.0, io), InputError);
}

TEST(Simulate, CsvAndSvgOutput) {
    fixtures::PostFault pf = fixtures::post_fault({"two_bus", "two_bus_line2_fault"});
    Phase ph = post_phase(pf);
    Eigen::VectorXd s0 = rest_state(pf);
    s0[1] += 0.1;
    IntegrateOptions io;
    io.record_every = 100;
    Trajectory tr = integrate(pf.c, ph, ph, 0.0, s0, 1.0, io);
    std::ostringstream os;
    write_trajectory_csv(os, pf.c, tr);
    std::istringstream in(os.str());
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "t,delta_1,delta_2,omega_2");
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        ++rows;
        EXPECT_EQ(std::count(line.begin(), line.end(), ','), 3);
    }
    EXPECT_EQ(rows, tr.t.size());
    std::string svg = trajectory_svg(pf.c, tr, "two bus");
    EXPECT_EQ(svg.rfind("<svg", 0), 0u);
    EXPECT_NE(svg.find("</svg>"), std::string::npos);
    EXPECT_NE(svg.find("<polyline"), std::string::npos);
}
