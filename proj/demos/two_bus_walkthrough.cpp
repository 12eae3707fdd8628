// Walks the two-bus fixture through every stage: power flow, certificate, invariant level,
// fault-cleared state, OPF against TSCOPF, and simulation of both dispatches.
#include <cstdio>
#include <string>

#include "stabopt/stabopt.hpp"

using namespace stabopt;

int main(int argc, char** argv) {
    std::string dir = argc > 1 ? argv[1] : STABOPT_DATA_DIR;
    try {
        PowerCase c = load_case(dir + "/two_bus.json");
        FaultScenario sc = make_scenario(c, load_fault_spec(dir + "/two_bus_line2_fault.json"));
        std::printf("%s: %zu buses, %zu branches, fault on branch %d cleared at %.3f s\n", c.name.c_str(), c.n_bus(),
                    c.branches.size(), *sc.spec.branch_id, sc.t_clear());

        SteadyState pre = solve_pf(c, scheduled_injections(c, set_point_dispatch(c)), sc.Y);
        std::printf("set-point power flow: theta_2 = %.4f rad\n", pre.theta[1]);

        TopologyCertificate t = certify_topology(c, sc);
        InvariantLevel lv = w_min_closed_form(t.cert, t.sys);
        std::printf("certificate: margin %.3e, lambda_min(P) %.4f, W^min %.4f (output %zu)\n", t.cert.lmi_margin,
                    t.cert.lambda_min, lv.w_min, lv.argmin);

        OpfResult opf = solve_opf(c);
        TscopfOptions opt;
        opt.epsilon = default_epsilon(opf);
        Comparison cmp = compare_dispatches(c, sc, t.cert, opt);
        std::printf("OPF     p = (%.4f, %.4f) cost %.4f -> %s (%s)\n", cmp.opf.p_gen[0], cmp.opf.p_gen[1], cmp.opf.cost,
                    to_string(cmp.opf_assessment.verdict), cmp.opf_assessment.reason.c_str());
        std::printf("TSCOPF  p = (%.4f, %.4f) cost %.4f -> %s (%s)\n", cmp.tscopf.p_gen[0], cmp.tscopf.p_gen[1],
                    cmp.tscopf.cost, to_string(cmp.tscopf_assessment.verdict), cmp.tscopf_assessment.reason.c_str());
        std::printf("fault-cleared energy %.4f against W^min %.4f; cost increase %.1f%%\n", cmp.tscopf.energy,
                    cmp.tscopf.W, 100.0 * cmp.cost_increase);

        FaultClearedState fc = fault_cleared_taylor(c, cmp.tscopf.pre, cmp.tscopf.post, sc, cmp.tscopf_assessment.p_pre, 3);
        std::printf("series at t_c: delta_2 = %.5f rad, omega_2 = %.6f pu\n", fc.delta[1], fc.omega[0]);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
