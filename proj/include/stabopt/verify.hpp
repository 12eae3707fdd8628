#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "stabopt/certify.hpp"
#include "stabopt/fault.hpp"
#include "stabopt/pipeline.hpp"
#include "stabopt/simulate.hpp"

namespace stabopt {

struct FidelityPoint {
    double t_clear = 0.0;
    double angle_error = 0.0;  ///< max |δ_series − δ_rk4| over buses
    double speed_error = 0.0;  ///< max |ω_series − ω_rk4| over swing buses
    double error() const { return std::max(angle_error, speed_error); }
};

struct FidelityReport {
    FidelityPoint full, half;
    double ratio = NAN;  ///< error(t_c) / error(t_c/2)
    int order = 3;
};

/// Series solution of the fault-on phase against a fine-step RK4 reference from the same pre-fault state.
inline FidelityPoint series_error(const PowerCase& c, const FaultScenario& sc, const SteadyState& pre,
                                  const Eigen::VectorXd& p_pre, int order, double tc, double h_ref = 1e-5) {
    FidelityPoint fp;
    fp.t_clear = tc;
    FaultClearedState fc = fault_cleared_taylor(c, pre, pre, sc, p_pre, order, tc);
    DisturbanceSetup d = make_disturbance(c, sc, pre, p_pre, pre.V, p_pre);
    IntegrateOptions io;
    io.h = h_ref;
    io.record_every = 1 << 30;
    Trajectory tr = integrate(c, d.fault_on, d.fault_on, tc, d.x0, tc, io);
    const Eigen::VectorXd& x = tr.states.back();
    Eigen::Index n = static_cast<Eigen::Index>(c.n_bus());
    fp.angle_error = (fc.delta - x.head(n)).cwiseAbs().maxCoeff();
    Eigen::Index ns = fc.omega.size();
    fp.speed_error = ns ? (fc.omega - x.tail(ns)).cwiseAbs().maxCoeff() : 0.0;
    return fp;
}

inline FidelityReport series_fidelity(const PowerCase& c, const FaultScenario& sc, const SteadyState& pre,
                                      const Eigen::VectorXd& p_pre, int order, double tc) {
    FidelityReport r;
    r.order = order;
    r.full = series_error(c, sc, pre, p_pre, order, tc);
    r.half = series_error(c, sc, pre, p_pre, order, tc / 2.0);
    r.ratio = r.full.error() / r.half.error();
    return r;
}

struct InvarianceReport {
    std::size_t trajectories = 0;
    std::size_t left_polytope = 0;
    std::size_t w_increases = 0;  ///< trajectories with a per-step W increase above tolerance
    std::size_t not_stable = 0;
    double worst_increase = 0.0;
    double w_min = NAN;
    bool pass() const { return trajectories > 0 && left_polytope == 0 && w_increases == 0 && not_stable == 0; }
};

/// Random initial states with W(x₀) ≤ level·W^min around a post-fault equilibrium, integrated with
/// the post-fault network held fixed.
inline InvarianceReport check_invariance(const PowerCase& c, const FaultScenario& sc, const QuadraticCertificate& cert,
                                         const SteadyState& post_eq, std::size_t count, std::uint64_t seed = 42,
                                         double level = 0.99, double horizon = 20.0, double step = 1e-3) {
    InvarianceReport r;
    LureSystem sys = build_lure(c, post_eq, sc.Y_post);
    InvariantLevel lv = w_min_closed_form(cert, sys);
    r.w_min = lv.w_min;
    Eigen::MatrixX2d bounds = polytope_bounds(sys);
    std::size_t n = c.n_bus();
    Eigen::VectorXd p(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) p[static_cast<Eigen::Index>(i)] = injection_p(post_eq, sc.Y_post, i);
    Phase post{sc.Y_post, post_eq.V, p};

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    Eigen::Index dim = static_cast<Eigen::Index>(sys.dim());
    IntegrateOptions io;
    io.h = step;
    for (std::size_t k = 0; k < count; ++k) {
        Eigen::VectorXd u(dim);
        for (Eigen::Index j = 0; j < dim; ++j) u[j] = nd(rng);
        double w = level * lv.w_min * ud(rng);
        Eigen::VectorXd x0 = u * std::sqrt(w / w_value(cert, u));
        Eigen::VectorXd s0(static_cast<Eigen::Index>(n + sys.layout.n_speed()));
        s0.head(static_cast<Eigen::Index>(n)) = sys.layout.lift_angles(x0, post_eq.theta);
        s0.tail(static_cast<Eigen::Index>(sys.layout.n_speed())) = sys.layout.lift_speeds(x0);
        Trajectory tr = integrate(c, post, post, 0.0, s0, horizon, io);
        ++r.trajectories;
        bool left = false;
        for (const auto& s : tr.states)
            if (!in_polytope(bounds, sys.C * reduced_state(sys, s))) left = true;
        if (left) ++r.left_polytope;
        WAlongReport wa = w_along(tr, cert, sys);
        if (wa.increases) ++r.w_increases;
        r.worst_increase = std::max(r.worst_increase, wa.worst_increase);
        if (assess_stability(tr, &sys) != Verdict::Stable) ++r.not_stable;
    }
    return r;
}

/// OPF against the stability-constrained dispatch under the same fault.
struct Comparison {
    OpfResult opf;
    TscopfResult tscopf;
    DispatchAssessment opf_assessment, tscopf_assessment;
    double cost_increase = NAN;  ///< relative to the OPF cost
};

inline Comparison compare_dispatches(const PowerCase& c, const FaultScenario& sc, const QuadraticCertificate& cert,
                                     const TscopfOptions& opt, std::uint64_t seed = 42,
                                     const SimulationSettings& sim = {}) {
    Comparison r;
    r.opf = solve_opf(c);
    if (r.opf.sol.status != OptStatus::Optimal) throw SolverError("OPF did not reach an optimum");
    TscopfOptions o = opt;
    r.tscopf = solve_tscopf(c, sc, cert, o, &r.opf, seed);
    if (r.tscopf.sol.status != OptStatus::Optimal) throw SolverError("stability-constrained OPF did not reach an optimum");
    r.opf_assessment = simulate_dispatch(c, sc, r.opf.p_gen, r.opf.pre, r.opf.pre, sim);
    r.tscopf_assessment = simulate_dispatch(c, sc, r.tscopf.p_gen, r.tscopf.pre, r.tscopf.post, sim);
    r.cost_increase = (r.tscopf.cost - r.opf.cost) / std::max(1e-12, std::abs(r.opf.cost));
    return r;
}

}  // namespace stabopt
