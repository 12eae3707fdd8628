#pragma once

#include <optional>
#include <string>

#include <Eigen/Dense>

#include "stabopt/certify.hpp"
#include "stabopt/fault.hpp"
#include "stabopt/optimize.hpp"
#include "stabopt/simulate.hpp"

namespace stabopt {

/// Certificate for the post-fault topology of a scenario with the V̄-based sectors.
struct TopologyCertificate {
    LureSystem sys;
    SectorBounds sectors;
    QuadraticCertificate cert;
};

inline TopologyCertificate certify_topology(const PowerCase& c, const FaultScenario& sc, double xi = 1e-3,
                                            const LmiOptions& opt = {}) {
    TopologyCertificate t;
    t.sys = post_fault_lure(c, sc);
    t.sectors = design_sectors(c, sc.Y_post, xi);
    t.cert = solve_lmi(t.sys, t.sectors, opt);
    return t;
}

struct SimulationSettings {
    double horizon = 10.0;
    double step = 1e-3;
    double t_clear = NAN;  ///< scenario value when not finite
    int record_every = 1;
};

/// Outcome of simulating the fault from one dispatch.
struct DispatchAssessment {
    Verdict verdict = Verdict::Inconclusive;
    SteadyState pre;
    std::optional<SteadyState> post;
    std::optional<LureSystem> sys;
    Eigen::VectorXd p_pre, p_post;  ///< net injections per bus
    Trajectory trajectory;
    std::string reason;
};

/// Pre-fault power flow for the dispatch (PV voltages from pre_start), post-fault equilibrium with
/// unchanged mechanical power (PV voltages from post_start), then RK4 through fault and recovery.
inline DispatchAssessment simulate_dispatch(const PowerCase& c, const FaultScenario& sc, const Eigen::VectorXd& p_gen,
                                            const SteadyState& pre_start, const SteadyState& post_start,
                                            const SimulationSettings& cfg = {}) {
    DispatchAssessment a;
    a.pre = solve_pf(c, scheduled_injections(c, p_gen), sc.Y, PfOptions{}, nullptr, &pre_start);
    std::size_t n = c.n_bus();
    a.p_pre.resize(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) a.p_pre[i] = injection_p(a.pre, sc.Y, i);

    Injections inj_post{a.p_pre, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n))};
    for (std::size_t i = 0; i < n; ++i) inj_post.q[i] = -c.load_q(i);
    SteadyState ps = post_start;
    for (std::size_t i = 0; i < n; ++i)
        if (c.buses[i].kind == BusKind::Load) ps.V[i] = a.pre.V[i];
    try {
        a.post = solve_pf(c, inj_post, sc.Y_post, PfOptions{}, nullptr, &ps);
    } catch (const SolverError&) {
        a.post.reset();
    }
    Eigen::VectorXd V_post = a.pre.V;
    a.p_post = a.p_pre;
    if (a.post) {
        V_post = a.post->V;
        for (std::size_t i = 0; i < n; ++i) a.p_post[i] = injection_p(*a.post, sc.Y_post, i);
        try {
            a.sys = build_lure(c, *a.post, sc.Y_post);
        } catch (const InputError&) {
            a.sys.reset();
        }
    }
    DisturbanceSetup d = make_disturbance(c, sc, a.pre, a.p_pre, V_post, a.p_post);
    double tc = std::isfinite(cfg.t_clear) ? cfg.t_clear : d.t_clear;
    IntegrateOptions io;
    io.h = cfg.step;
    io.record_every = cfg.record_every;
    a.trajectory = integrate(c, d.fault_on, d.post, tc, d.x0, cfg.horizon, io);
    a.verdict = assess_stability(a.trajectory, a.sys ? &*a.sys : nullptr);
    if (a.trajectory.diverged) {
        a.reason = "angle separation exceeded the divergence threshold";
    } else if (!a.post) {
        // nothing to settle to: the machines keep slipping, only slower than the horizon shows
        a.verdict = Verdict::Unstable;
        a.reason = "no post-fault equilibrium for the dispatch";
    } else if (a.verdict == Verdict::Unstable) {
        a.reason = "trajectory left the certified region";
    } else if (a.verdict == Verdict::Stable) {
        a.reason = "converged to the post-fault equilibrium";
    } else {
        a.reason = "no decision within the horizon";
    }
    return a;
}

/// Largest set-point of one generator (others fixed, the reference absorbing the balance) whose
/// fault response is Stable, by bisection over [lo, hi].
inline double stability_threshold(const PowerCase& c, const FaultScenario& sc, std::size_t gen,
                                  const Eigen::VectorXd& p_base, const SteadyState& start, double lo, double hi,
                                  double tol = 1e-3, const SimulationSettings& cfg = {}) {
    auto stable = [&](double v) {
        Eigen::VectorXd p = p_base;
        p[static_cast<Eigen::Index>(gen)] = v;
        try {
            return simulate_dispatch(c, sc, p, start, start, cfg).verdict == Verdict::Stable;
        } catch (const SolverError&) {
            return false;
        }
    };
    while (hi - lo > tol) {
        double mid = 0.5 * (lo + hi);
        (stable(mid) ? lo : hi) = mid;
    }
    return lo;
}

}  // namespace stabopt
