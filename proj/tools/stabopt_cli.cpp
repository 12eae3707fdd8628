#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "stabopt/stabopt.hpp"

namespace fs = std::filesystem;
using namespace stabopt;

namespace {

constexpr int kSchemaVersion = 1;
enum ExitCode { kOk = 0, kSolverFailure = 1, kInputError = 2, kVerifyFailure = 3 };

struct RunConfig {
    std::string case_path;
    std::string scenario_path;
    std::string variant = "inner";
    double epsilon = NAN;  // 1e-4·max(1, |f_OPF|) when unset
    double xi = 1e-3;
    int taylor_order = 3;
    double tc = NAN;  // scenario value when unset
    double horizon = 10.0;
    double step = 1e-3;
    std::uint64_t seed = 42;
    std::string out = "stabopt-out";
    std::string format = "json";
    std::string certificate;
    std::string dispatch = "opf";
};

struct Context {
    PowerCase c;
    std::optional<FaultScenario> sc;
};

Context load_inputs(const RunConfig& cfg, bool need_scenario) {
    Context ctx;
    ctx.c = load_case(cfg.case_path);
    if (!cfg.scenario_path.empty()) ctx.sc = make_scenario(ctx.c, load_fault_spec(cfg.scenario_path));
    else if (need_scenario) throw InputError("--scenario is required for this command");
    return ctx;
}

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json dispatch_json(const PowerCase& c, const Eigen::VectorXd& p, const Eigen::VectorXd* q = nullptr) {
    json out = json::array();
    for (std::size_t g = 0; g < c.generators.size(); ++g) {
        json e = {{"bus", c.buses[c.generators[g].bus].id}, {"p", p[static_cast<Eigen::Index>(g)]}};
        if (q) e["q"] = (*q)[static_cast<Eigen::Index>(g)];
        out.push_back(e);
    }
    return out;
}

json state_json(const PowerCase& c, const SteadyState& s) {
    json out = json::array();
    for (std::size_t i = 0; i < c.n_bus(); ++i)
        out.push_back({{"bus", c.buses[i].id}, {"V", s.V[static_cast<Eigen::Index>(i)]},
                       {"theta", s.theta[static_cast<Eigen::Index>(i)]}});
    return out;
}

json solution_json(const OptSolution& s) {
    return {{"status", to_string(s.status)},
            {"objective", s.objective},
            {"iterations", s.iterations},
            {"kkt_residual", s.kkt_residual},
            {"primal_infeasibility", s.primal_infeasibility},
            {"dual_infeasibility", s.dual_infeasibility},
            {"complementarity", s.complementarity}};
}

json scenario_json(const FaultScenario& sc) {
    static const char* types[] = {"midpoint_ltg", "bus_ltg", "none"};
    json j = {{"fault_type", types[static_cast<int>(sc.spec.type)]},
              {"t_clear", sc.spec.t_clear},
              {"permanent", sc.spec.permanent}};
    if (sc.spec.branch_id) j["faulted_branch"] = *sc.spec.branch_id;
    if (sc.spec.bus_id) j["faulted_bus"] = *sc.spec.bus_id;
    return j;
}

void flatten(const json& j, const std::string& prefix, std::ostream& os) {
    if (j.is_object()) {
        for (auto it = j.begin(); it != j.end(); ++it)
            flatten(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), os);
    } else if (j.is_array()) {
        for (std::size_t k = 0; k < j.size(); ++k) flatten(j[k], prefix + "[" + std::to_string(k) + "]", os);
    } else {
        os << prefix << "," << (j.is_string() ? j.get<std::string>() : j.dump()) << "\n";
    }
}

/// Deterministic report plus a separate timing file.
class Output {
public:
    Output(const RunConfig& cfg, const std::string& command) : dir_(cfg.out), format_(cfg.format) {
        report["schema_version"] = kSchemaVersion;
        report["command"] = command;
        timing["schema_version"] = kSchemaVersion;
        timing["command"] = command;
        start_ = std::chrono::steady_clock::now();
    }

    fs::path path(const std::string& name) const {
        fs::create_directories(dir_);
        return dir_ / name;
    }

    void write_text(const std::string& name, const std::string& text) const {
        std::ofstream os(path(name));
        if (!os) throw InputError("cannot write " + path(name).string());
        os << text;
    }

    void finish() {
        timing["wall_time_s"] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        if (format_ == "csv") {
            std::ostringstream os;
            os << "key,value\n";
            flatten(report, "", os);
            write_text("report.csv", os.str());
        } else {
            write_text("report.json", report.dump(2) + "\n");
        }
        write_text("timing.json", timing.dump(2) + "\n");
    }

    json report, timing;

private:
    fs::path dir_;
    std::string format_;
    std::chrono::steady_clock::time_point start_;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Certificate from the cache file when one is given, else a fresh LMI solve.
TopologyCertificate obtain_certificate(const RunConfig& cfg, const Context& ctx) {
    const FaultScenario& sc = *ctx.sc;
    if (cfg.certificate.empty()) return certify_topology(ctx.c, sc, cfg.xi);
    TopologyCertificate t;
    t.sys = post_fault_lure(ctx.c, sc);
    t.sectors = design_sectors(ctx.c, sc.Y_post, cfg.xi);
    json j = detail::parse_json_text(detail::read_file(cfg.certificate), cfg.certificate);
    t.cert = certificate_from_json(j, t.sys, t.sectors);
    return t;
}

TscopfOptions tscopf_options(const RunConfig& cfg, const OpfResult& opf) {
    TscopfOptions o;
    o.variant = parse_variant(cfg.variant);
    o.epsilon = std::isfinite(cfg.epsilon) ? cfg.epsilon : default_epsilon(opf);
    o.taylor_order = cfg.taylor_order;
    o.t_clear = cfg.tc;
    return o;
}

SimulationSettings sim_settings(const RunConfig& cfg) {
    SimulationSettings s;
    s.horizon = cfg.horizon;
    s.step = cfg.step;
    s.t_clear = cfg.tc;
    return s;
}

json tscopf_json(const PowerCase& c, const TscopfResult& r) {
    json j = solution_json(r.sol);
    j["variant"] = to_string(r.variant);
    j["epsilon"] = r.epsilon;
    j["cost"] = r.cost;
    j["w_min"] = r.W;
    j["energy_at_clearing"] = r.energy;
    j["dispatch"] = dispatch_json(c, r.p_gen, &r.q_gen);
    j["pre_fault_state"] = state_json(c, r.pre);
    j["post_fault_state"] = state_json(c, r.post);
    j["x_clearing"] = vec_json(r.x_tc);
    j["w_bound_slacks"] = r.w_bound_slacks;
    j["grid_bounds"] = r.grid_bounds;
    j["case_hull_bounds"] = r.hull_bounds;
    j["start"] = r.start;
    json starts = json::array();
    for (const auto& [name, st] : r.starts) starts.push_back({{"start", name}, {"status", to_string(st)}});
    j["starts"] = starts;
    return j;
}

json assessment_json(const DispatchAssessment& a) {
    return {{"verdict", to_string(a.verdict)},
            {"reason", a.reason},
            {"post_fault_equilibrium", a.post.has_value()},
            {"diverged", a.trajectory.diverged},
            {"final_time", a.trajectory.t.empty() ? 0.0 : a.trajectory.t.back()}};
}

// ---------------------------------------------------------------------------
// commands

int cmd_pf(const RunConfig& cfg) {
    Context ctx = load_inputs(cfg, false);
    Output out(cfg, "pf");
    PfStats st;
    Eigen::VectorXd p = set_point_dispatch(ctx.c);
    AdmittanceMatrix Y = build_admittance(ctx.c, AdmittanceVariant::Base);
    SteadyState s = solve_pf(ctx.c, scheduled_injections(ctx.c, p), Y, PfOptions{}, &st);
    out.report["case"] = ctx.c.name;
    out.report["iterations"] = st.iterations;
    out.report["max_residual"] = st.max_residual;
    out.report["state"] = state_json(ctx.c, s);
    json inj = json::array();
    for (std::size_t i = 0; i < ctx.c.n_bus(); ++i)
        inj.push_back({{"bus", ctx.c.buses[i].id}, {"p", injection_p(s, Y, i)}, {"q", injection_q(s, Y, i)}});
    out.report["injections"] = inj;
    out.finish();
    std::cout << "power flow converged in " << st.iterations << " iterations, max residual " << st.max_residual
              << "\n";
    return kOk;
}

int cmd_opf(const RunConfig& cfg) {
    Context ctx = load_inputs(cfg, false);
    Output out(cfg, "opf");
    OpfResult r = solve_opf(ctx.c);
    out.report["case"] = ctx.c.name;
    out.report["solution"] = solution_json(r.sol);
    out.report["cost"] = r.cost;
    out.report["dispatch"] = dispatch_json(ctx.c, r.p_gen, &r.q_gen);
    out.report["state"] = state_json(ctx.c, r.pre);
    out.timing["solver_time_s"] = r.sol.wall_time;
    out.finish();
    std::cout << "OPF " << to_string(r.sol.status) << ", cost " << r.cost << ", KKT residual " << r.sol.kkt_residual
              << "\n";
    return r.sol.status == OptStatus::Optimal ? kOk : kSolverFailure;
}

int cmd_certify(const RunConfig& cfg) {
    Context ctx = load_inputs(cfg, true);
    Output out(cfg, "certify");
    auto t0 = std::chrono::steady_clock::now();
    TopologyCertificate t = certify_topology(ctx.c, *ctx.sc, cfg.xi);
    out.timing["lmi_time_s"] = seconds_since(t0);
    WdotReport w = check_wdot_negative(t.cert, t.sys, t.sectors, 10000, cfg.seed);
    json cj = certificate_to_json(t.cert);
    fs::path cpath = cfg.certificate.empty() ? out.path("certificate.json") : fs::path(cfg.certificate);
    {
        std::ofstream os(cpath);
        if (!os) throw InputError("cannot write " + cpath.string());
        os << cj.dump(2) << "\n";
    }
    out.report["case"] = ctx.c.name;
    out.report["scenario"] = scenario_json(*ctx.sc);
    out.report["certificate"] = cj;
    out.report["state_dimension"] = t.sys.dim();
    out.report["outputs"] = t.sys.n_edges();
    out.report["wdot_samples"] = {{"samples", w.samples},
                                  {"nonnegative", w.nonnegative},
                                  {"sector_contacts", w.sector_contacts},
                                  {"worst", w.worst}};
    out.finish();
    std::cout << "lmi_margin " << t.cert.lmi_margin << ", lambda_min(P) " << t.cert.lambda_min << "\n"
              << "sampled Wdot: " << w.nonnegative << " nonnegative of " << w.samples << " (worst " << w.worst
              << ")\n"
              << "certificate written to " << cpath.string() << "\n";
    return w.nonnegative == 0 ? kOk : kVerifyFailure;
}

int cmd_tscopf(const RunConfig& cfg) {
    Context ctx = load_inputs(cfg, true);
    Output out(cfg, "tscopf");
    OpfResult opf = solve_opf(ctx.c);
    TopologyCertificate t = obtain_certificate(cfg, ctx);
    TscopfOptions o = tscopf_options(cfg, opf);
    auto t0 = std::chrono::steady_clock::now();
    TscopfResult r = solve_tscopf(ctx.c, *ctx.sc, t.cert, o, opf.sol.status == OptStatus::Optimal ? &opf : nullptr,
                                  cfg.seed);
    out.timing["tscopf_time_s"] = seconds_since(t0);
    out.timing["opf_time_s"] = opf.sol.wall_time;
    out.report["case"] = ctx.c.name;
    out.report["scenario"] = scenario_json(*ctx.sc);
    out.report["opf"] = {{"status", to_string(opf.sol.status)}, {"cost", opf.cost}};
    out.report["tscopf"] = tscopf_json(ctx.c, r);
    Theorem1Report t1 = verify_theorem1(r);
    out.report["min_w_bound_slack"] = t1.min_slack;
    out.finish();
    std::cout << "TSCOPF (" << to_string(r.variant) << ") " << to_string(r.sol.status) << ", objective "
              << r.sol.objective << ", cost " << r.cost << " (OPF " << opf.cost << "), W^min " << r.W << "\n";
    return r.sol.status == OptStatus::Optimal ? kOk : kSolverFailure;
}

int cmd_simulate(const RunConfig& cfg) {
    Context ctx = load_inputs(cfg, true);
    Output out(cfg, "simulate");
    const PowerCase& c = ctx.c;
    Eigen::VectorXd p;
    SteadyState pre = flat_state(c), post = pre;
    if (cfg.dispatch == "setpoint") {
        p = set_point_dispatch(c);
    } else {
        OpfResult opf = solve_opf(c);
        if (opf.sol.status != OptStatus::Optimal) throw SolverError("OPF did not reach an optimum");
        p = opf.p_gen;
        pre = post = opf.pre;
        if (cfg.dispatch == "tscopf") {
            TopologyCertificate t = obtain_certificate(cfg, ctx);
            TscopfResult r = solve_tscopf(c, *ctx.sc, t.cert, tscopf_options(cfg, opf), &opf, cfg.seed);
            if (r.sol.status != OptStatus::Optimal) throw SolverError("stability-constrained OPF did not reach an optimum");
            p = r.p_gen;
            pre = r.pre;
            post = r.post;
        }
    }
    auto t0 = std::chrono::steady_clock::now();
    DispatchAssessment a = simulate_dispatch(c, *ctx.sc, p, pre, post, sim_settings(cfg));
    out.timing["simulation_time_s"] = seconds_since(t0);
    std::ostringstream csv;
    write_trajectory_csv(csv, c, a.trajectory);
    out.write_text("trajectory.csv", csv.str());
    out.write_text("angles.svg", trajectory_svg(c, a.trajectory, "rotor angles, " + cfg.dispatch + " dispatch: " +
                                                                  to_string(a.verdict)));
    out.report["case"] = c.name;
    out.report["scenario"] = scenario_json(*ctx.sc);
    out.report["dispatch_source"] = cfg.dispatch;
    out.report["dispatch"] = dispatch_json(c, p);
    out.report["assessment"] = assessment_json(a);
    out.report["samples"] = a.trajectory.t.size();
    out.finish();
    std::cout << "verdict " << to_string(a.verdict) << " (" << a.reason << ")\n";
    return kOk;
}

struct Check {
    std::string name;
    bool pass = false;
    json details;
};

/// Closed-form and brute-force W^min on random positive definite instances.
json random_wmin_instances(std::uint64_t seed, std::size_t count, double& worst) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_real_distribution<double> ud(0.1, 3.0);
    std::uniform_int_distribution<int> dim(2, 6);
    worst = 0.0;
    for (std::size_t k = 0; k < count; ++k) {
        int n = dim(rng), m = dim(rng);
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
        worst = std::max(worst, std::abs(a - b) / std::max(std::abs(a), std::abs(b)));
    }
    return {{"instances", count}, {"max_rel_error", worst}};
}

int cmd_verify(const RunConfig& cfg) {
    Context ctx = load_inputs(cfg, true);
    Output out(cfg, "verify");
    const PowerCase& c = ctx.c;
    const FaultScenario& sc = *ctx.sc;
    std::vector<Check> checks;
    auto clock = std::chrono::steady_clock::now();
    auto lap = [&](const std::string& name) {
        out.timing["checks"][name] = seconds_since(clock);
        clock = std::chrono::steady_clock::now();
    };

    TopologyCertificate t = obtain_certificate(cfg, ctx);
    double margin = lmi_margin(t.sys, t.cert);
    checks.push_back({"certificate", margin <= -1e-8, {{"lmi_margin", margin}, {"lambda_min", t.cert.lambda_min}}});
    WdotReport w = check_wdot_negative(t.cert, t.sys, t.sectors, 10000, cfg.seed);
    checks.push_back({"wdot_sampling",
                      w.nonnegative == 0 && w.samples == 10000,
                      {{"samples", w.samples}, {"nonnegative", w.nonnegative}, {"worst", w.worst}}});
    lap("certificate");

    Comparison cmp = [&] {
        OpfResult opf = solve_opf(c);
        if (opf.sol.status != OptStatus::Optimal) throw SolverError("OPF did not reach an optimum");
        return compare_dispatches(c, sc, t.cert, tscopf_options(cfg, opf), cfg.seed, sim_settings(cfg));
    }();
    lap("comparison");

    {
        LureSystem sys = build_lure(c, cmp.tscopf.post, sc.Y_post);
        double a = w_min_closed_form(t.cert, sys).w_min, b = w_min_bruteforce(t.cert, sys);
        double fixture_err = std::abs(a - b) / std::max(std::abs(a), std::abs(b));
        double random_err = 0.0;
        json rnd = random_wmin_instances(cfg.seed, 50, random_err);
        checks.push_back({"wmin_oracle",
                          fixture_err <= 1e-6 && random_err <= 1e-6,
                          {{"closed_form", a}, {"brute_force", b}, {"fixture_rel_error", fixture_err}, {"random", rnd}}});
    }
    {
        InvarianceReport inv = check_invariance(c, sc, t.cert, cmp.tscopf.post, 20, cfg.seed);
        checks.push_back({"invariance",
                          inv.pass(),
                          {{"trajectories", inv.trajectories},
                           {"left_polytope", inv.left_polytope},
                           {"w_increases", inv.w_increases},
                           {"not_stable", inv.not_stable},
                           {"w_min", inv.w_min}}});
    }
    lap("invariance");
    {
        const SteadyState& pre = cmp.opf.pre;
        Eigen::VectorXd p(static_cast<Eigen::Index>(c.n_bus()));
        for (std::size_t i = 0; i < c.n_bus(); ++i) p[static_cast<Eigen::Index>(i)] = injection_p(pre, sc.Y, i);
        double tc = std::isfinite(cfg.tc) ? cfg.tc : sc.t_clear();
        FidelityReport f = series_fidelity(c, sc, pre, p, cfg.taylor_order, tc);
        double expect = std::pow(2.0, cfg.taylor_order + 1);
        // a vanishing disturbance leaves nothing to truncate
        bool ratio_checked = f.full.error() > 1e-12;
        bool ratio_ok = !ratio_checked || (f.ratio >= 0.75 * expect && f.ratio <= 1.25 * expect);
        checks.push_back({"series_fidelity",
                          f.full.angle_error <= 1e-3 && f.full.speed_error <= 1e-3 && ratio_ok,
                          {{"order", cfg.taylor_order},
                           {"t_clear", tc},
                           {"angle_error", f.full.angle_error},
                           {"speed_error", f.full.speed_error},
                           {"halving_ratio", ratio_checked ? json(f.ratio) : json(nullptr)},
                           {"expected_ratio", expect}}});
    }
    lap("series");

    json t1 = json::array();
    bool t1_ok = true;
    double kkt_worst = std::max(cmp.opf.sol.kkt_residual, cmp.tscopf.sol.kkt_residual);
    double deriv_worst = 0.0;
    json thm2 = json::array();
    bool t2_ok = true;
    for (Variant v : {Variant::Concave, Variant::Hull, Variant::Inner}) {
        TscopfOptions o = tscopf_options(cfg, cmp.opf);
        o.variant = v;
        TscopfResult r = v == cmp.tscopf.variant ? cmp.tscopf : solve_tscopf(c, sc, t.cert, o, &cmp.opf, cfg.seed);
        Theorem1Report rep = verify_theorem1(r);
        t1_ok = t1_ok && rep.pass;
        t1.push_back({{"variant", to_string(v)},
                      {"status", to_string(r.sol.status)},
                      {"cost", r.cost},
                      {"w_min", r.W},
                      {"min_slack", rep.min_slack},
                      {"pass", rep.pass}});
        if (r.sol.status == OptStatus::Optimal) kkt_worst = std::max(kkt_worst, r.sol.kkt_residual);
        TscopfModel m = build_tscopf(c, sc, t.cert, o);
        for (const auto& d : check_derivatives(m.problem, r.sol.x)) deriv_worst = std::max(deriv_worst, d.max_rel_error);
        if (v == Variant::Hull) {
            for (std::size_t k = 0; k < m.hull.size(); ++k) {
                Theorem2Report r2 = verify_theorem2(m.hull[k], 10000, cfg.seed + k);
                t2_ok = t2_ok && r2.pass;
                thm2.push_back({{"output", k},
                                {"psi_outside_hull", r2.psi_outside_hull},
                                {"inner_outside_psi", r2.inner_outside_psi},
                                {"max_coeff_violation", r2.max_coeff_violation},
                                {"max_residual", r2.max_residual},
                                {"pass", r2.pass}});
            }
        }
    }
    OpfModel om = build_opf(c);
    for (const auto& d : check_derivatives(om.problem, cmp.opf.sol.x)) deriv_worst = std::max(deriv_worst, d.max_rel_error);
    checks.push_back({"theorem1_binding", t1_ok, t1});
    checks.push_back({"theorem2_geometry", t2_ok, thm2});
    checks.push_back({"solver_correctness",
                      deriv_worst <= 1e-6 && kkt_worst <= 1e-6,
                      {{"max_derivative_rel_error", deriv_worst}, {"max_kkt_residual", kkt_worst}}});
    lap("variants");

    {
        EpsilonReport er = verify_epsilon_insensitivity(c, sc, t.cert, tscopf_options(cfg, cmp.opf), cmp.opf);
        json pts = json::array();
        for (std::size_t k = 0; k < er.points.size(); ++k)
            pts.push_back({{"epsilon", er.points[k].epsilon},
                           {"status", to_string(er.points[k].status)},
                           {"cost", er.points[k].cost},
                           {"cost_spread", er.cost_spread[k]},
                           {"dispatch_spread", er.dispatch_spread[k]}});
        checks.push_back({"epsilon_insensitivity", er.pass, pts});
    }
    lap("epsilon");

    {
        const auto& oa = cmp.opf_assessment;
        const auto& ta = cmp.tscopf_assessment;
        double scale = std::max(1.0, std::abs(cmp.opf.cost));
        bool vanishing = sc.topology_restores() && sc.dG_pre.isZero(0.0) && sc.dB_pre.isZero(0.0);
        double gap = cmp.tscopf.cost - cmp.opf.cost;
        json d = {{"opf", {{"cost", cmp.opf.cost}, {"dispatch", dispatch_json(c, cmp.opf.p_gen)}, {"assessment", assessment_json(oa)}}},
                  {"tscopf",
                   {{"variant", to_string(cmp.tscopf.variant)},
                    {"cost", cmp.tscopf.cost},
                    {"dispatch", dispatch_json(c, cmp.tscopf.p_gen)},
                    {"assessment", assessment_json(ta)}}},
                  {"cost_increase", cmp.cost_increase},
                  {"vanishing_disturbance", vanishing}};
        bool ok = ta.verdict == Verdict::Stable && gap >= -1e-6 * scale;
        if (vanishing) ok = ok && oa.verdict == Verdict::Stable &&
                            std::abs(gap) <= cmp.tscopf.epsilon * cmp.tscopf.W + 1e-6 * scale;
        checks.push_back({"end_to_end", ok, d});
        out.write_text("opf_angles.svg", trajectory_svg(c, oa.trajectory, "OPF dispatch: " + std::string(to_string(oa.verdict))));
        out.write_text("tscopf_angles.svg",
                       trajectory_svg(c, ta.trajectory, "TSCOPF dispatch: " + std::string(to_string(ta.verdict))));
    }
    lap("end_to_end");

    bool all = true;
    json arr = json::array();
    for (const auto& ch : checks) {
        all = all && ch.pass;
        arr.push_back({{"name", ch.name}, {"pass", ch.pass}, {"details", ch.details}});
        std::cout << (ch.pass ? "PASS " : "FAIL ") << ch.name << "\n";
    }
    out.report["case"] = c.name;
    out.report["scenario"] = scenario_json(sc);
    out.report["seed"] = cfg.seed;
    out.report["checks"] = arr;
    out.report["pass"] = all;
    out.finish();
    std::cout << "OPF dispatch " << to_string(cmp.opf_assessment.verdict) << " (cost " << cmp.opf.cost
              << "), TSCOPF dispatch " << to_string(cmp.tscopf_assessment.verdict) << " (cost " << cmp.tscopf.cost
              << ")\n";
    return all ? kOk : kVerifyFailure;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Transient stability-constrained optimal power flow"};
    app.require_subcommand(1);
    RunConfig cfg;

    app.add_option("--case", cfg.case_path, "case JSON file")->check(CLI::ExistingFile);
    app.add_option("--scenario", cfg.scenario_path, "fault scenario JSON file")->check(CLI::ExistingFile);
    app.add_option("--variant", cfg.variant, "W^min bound variant")
        ->check(CLI::IsMember({"concave", "hull", "inner"}))
        ->capture_default_str();
    app.add_option("--epsilon", cfg.epsilon, "weight of W^min in the objective (default 1e-4*max(1,|f_OPF|))")
        ->check(CLI::PositiveNumber);
    app.add_option("--xi", cfg.xi, "lower sector slope")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--taylor-order", cfg.taylor_order, "order of the fault-on series")
        ->check(CLI::Range(1, 4))
        ->capture_default_str();
    app.add_option("--tc", cfg.tc, "clearing time override in seconds")->check(CLI::Range(0.0, 0.3));
    app.add_option("--horizon", cfg.horizon, "simulation horizon in seconds")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app.add_option("--step", cfg.step, "RK4 step in seconds")->check(CLI::Range(1e-6, 0.1))->capture_default_str();
    app.add_option("--seed", cfg.seed, "seed for randomized checks and starts")->capture_default_str();
    app.add_option("--out", cfg.out, "output directory")->capture_default_str();
    app.add_option("--format", cfg.format, "report format")
        ->check(CLI::IsMember({"json", "csv"}))
        ->capture_default_str();
    app.add_option("--certificate", cfg.certificate, "certificate cache (written by certify, read otherwise)");
    app.add_option("--dispatch", cfg.dispatch, "dispatch simulated by the simulate command")
        ->check(CLI::IsMember({"setpoint", "opf", "tscopf"}))
        ->capture_default_str();

    std::function<int(const RunConfig&)> handler;
    auto sub = [&](const char* name, const char* help, int (*fn)(const RunConfig&)) {
        app.add_subcommand(name, help)->fallthrough()->callback([&handler, fn] { handler = fn; });
    };
    sub("pf", "solve the power flow at the generator set points", cmd_pf);
    sub("opf", "solve the optimal power flow", cmd_opf);
    sub("certify", "build the post-fault Lur'e system and solve the LMI", cmd_certify);
    sub("tscopf", "solve the stability-constrained optimal power flow", cmd_tscopf);
    sub("simulate", "simulate the fault from a dispatch", cmd_simulate);
    sub("verify", "run the verification battery", cmd_verify);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kInputError;
    }
    try {
        if (cfg.case_path.empty()) throw InputError("--case is required");
        if (cfg.step > cfg.horizon) throw InputError("--step must not exceed --horizon");
        return handler(cfg);
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInputError;
    } catch (const SolverError& e) {
        std::cerr << "solver failure: " << e.what() << "\n";
        return kSolverFailure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kSolverFailure;
    }
}
