#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <future>
#include <optional>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

#include "stabopt/certify.hpp"
#include "stabopt/errors.hpp"
#include "stabopt/fault.hpp"
#include "stabopt/gridcase.hpp"
#include "stabopt/lure.hpp"
#include "stabopt/nlp.hpp"
#include "stabopt/powerflow.hpp"

namespace stabopt {

/// Index into the NLP variable vector, or a fixed value.
struct VarRef {
    int idx = -1;
    double value = 0.0;

    template <class T>
    T operator()(const T* x) const { return idx >= 0 ? x[idx] : T(value); }
    bool free() const { return idx >= 0; }
};

/// Network quantities of one steady state: V, θ per bus; p, q per generator.
struct BusVars {
    std::vector<VarRef> V, theta, p, q;

    template <class T>
    void voltages(const T* x, std::vector<T>& Vv, std::vector<T>& th) const {
        Vv.resize(V.size());
        th.resize(theta.size());
        for (std::size_t i = 0; i < V.size(); ++i) Vv[i] = V[i](x);
        for (std::size_t i = 0; i < theta.size(); ++i) th[i] = theta[i](x);
    }

    std::vector<std::size_t> deps(bool with_power = true) const {
        std::vector<std::size_t> d;
        auto add = [&](const std::vector<VarRef>& v) {
            for (const auto& r : v)
                if (r.free()) d.push_back(static_cast<std::size_t>(r.idx));
        };
        add(V);
        add(theta);
        if (with_power) {
            add(p);
            add(q);
        }
        return d;
    }
};

namespace detail {

template <class P>
using scalar_of = std::remove_const_t<std::remove_pointer_t<P>>;

inline VarRef new_var(NlpProblem& pr, const std::string& name, double lo, double hi, double x0) {
    return {static_cast<int>(pr.add_variable(name, lo, hi, x0)), 0.0};
}

inline std::string bus_tag(const PowerCase& c, std::size_t i) { return "[" + std::to_string(c.buses[i].id) + "]"; }

inline std::vector<std::size_t> cat(std::vector<std::size_t> a, const std::vector<std::size_t>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

}  // namespace detail

/// Adds V and θ variables for one network state. The reference angle is fixed at 0 and an
/// infinite bus keeps its voltage set point.
inline void add_voltage_vars(NlpProblem& pr, const PowerCase& c, const std::string& tag, const SteadyState& start,
                             BusVars& bv) {
    std::size_t ref = c.reference_bus();
    bv.V.clear();
    bv.theta.clear();
    for (std::size_t i = 0; i < c.n_bus(); ++i) {
        if (c.buses[i].infinite) {
            int g = c.generator_at(i);
            bv.V.push_back({-1, g >= 0 ? c.generators[g].v_set : 1.0});
        } else {
            bv.V.push_back(detail::new_var(pr, "V" + tag + detail::bus_tag(c, i), c.limits.v_min, c.limits.v_max,
                                           start.V[i]));
        }
        if (i == ref) bv.theta.push_back({-1, 0.0});
        else bv.theta.push_back(detail::new_var(pr, "theta" + tag + detail::bus_tag(c, i), -kInf, kInf, start.theta[i]));
    }
}

/// p − p^L − g^p = 0 and q − q^L − g^q = 0 at every bus.
inline void add_power_flow(NlpProblem& pr, const PowerCase& c, const AdmittanceMatrix& Y, const BusVars& bv,
                           const std::string& name) {
    std::size_t n = c.n_bus();
    std::vector<int> gen(n);
    std::vector<double> pl(n), ql(n);
    for (std::size_t i = 0; i < n; ++i) {
        gen[i] = c.generator_at(i);
        pl[i] = c.load_p(i);
        ql[i] = c.load_q(i);
    }
    auto f = [=](const auto* x, auto* out) {
        using T = detail::scalar_of<decltype(x)>;
        std::vector<T> V, th;
        bv.voltages(x, V, th);
        for (std::size_t i = 0; i < n; ++i) {
            T p = gen[i] >= 0 ? bv.p[gen[i]](x) : T(0.0);
            T q = gen[i] >= 0 ? bv.q[gen[i]](x) : T(0.0);
            out[2 * i] = p - pl[i] - injection_p<T>(Y, V.data(), th.data(), i);
            out[2 * i + 1] = q - ql[i] - injection_q<T>(Y, V.data(), th.data(), i);
        }
    };
    pr.add_block(name, RowKind::Equality, 2 * n, bv.deps(), f);
}

/// S_ij = |Y_ij|²V_i²V_j² ≤ S̄_ij² per coupled pair; S̄ sums the ratings of parallel branches.
inline void add_line_limits(NlpProblem& pr, const AdmittanceMatrix& Y, const std::vector<Branch>& branches,
                            const BusVars& bv, const std::string& name) {
    struct Row {
        std::size_t i, j;
        double y2, s2;
    };
    std::vector<Row> rows;
    for (auto [i, j] : Y.edges()) {
        double s = 0.0;
        bool any = false;
        for (const auto& br : branches)
            if ((br.from == i && br.to == j) || (br.from == j && br.to == i)) {
                s += br.s_max;
                any = true;
            }
        if (any && std::isfinite(s)) rows.push_back({i, j, std::norm(Y(i, j)), s * s});
    }
    auto f = [=](const auto* x, auto* out) {
        for (std::size_t r = 0; r < rows.size(); ++r) {
            auto vi = bv.V[rows[r].i](x), vj = bv.V[rows[r].j](x);
            out[r] = rows[r].y2 * vi * vi * vj * vj - rows[r].s2;
        }
    };
    pr.add_block(name, RowKind::Inequality, rows.size(), bv.deps(false), f);
}

/// θ̲ ≤ θ_i − θ_j ≤ θ̄ per coupled pair.
inline void add_angle_limits(NlpProblem& pr, const PowerCase& c, const AdmittanceMatrix& Y, const BusVars& bv,
                             const std::string& name) {
    auto edges = Y.edges();
    double lo = c.limits.angle_diff_min, hi = c.limits.angle_diff_max;
    if (!std::isfinite(lo) && !std::isfinite(hi)) return;
    auto f = [=](const auto* x, auto* out) {
        for (std::size_t k = 0; k < edges.size(); ++k) {
            auto d = bv.theta[edges[k].first](x) - bv.theta[edges[k].second](x);
            out[2 * k] = d - (std::isfinite(hi) ? hi : 1e20);
            out[2 * k + 1] = (std::isfinite(lo) ? lo : -1e20) - d;
        }
    };
    pr.add_block(name, RowKind::Inequality, 2 * edges.size(), bv.deps(false), f);
}

inline double generation_cost(const PowerCase& c, const Eigen::VectorXd& p) {
    double f = 0.0;
    for (std::size_t g = 0; g < c.generators.size(); ++g)
        f += c.generators[g].cost_a1 * p[g] * p[g] + c.generators[g].cost_a2 * p[g];
    return f;
}

// ---------------------------------------------------------------------------
// OPF

struct OpfModel {
    NlpProblem problem;
    BusVars pre;
};

/// Generation cost subject to the steady-state network model and generator limits.
inline OpfModel build_opf(const PowerCase& c) {
    OpfModel m;
    SteadyState start = flat_state(c);
    add_voltage_vars(m.problem, c, "", start, m.pre);
    for (std::size_t g = 0; g < c.generators.size(); ++g) {
        const auto& gn = c.generators[g];
        std::string tag = detail::bus_tag(c, gn.bus);
        double p0 = std::clamp(gn.p_set, gn.p_min, gn.p_max);
        m.pre.p.push_back(detail::new_var(m.problem, "pG" + tag, gn.p_min, gn.p_max, p0));
        m.pre.q.push_back(detail::new_var(m.problem, "qG" + tag, gn.q_min, gn.q_max, 0.0));
    }
    AdmittanceMatrix Y = build_admittance(c, AdmittanceVariant::Base);
    add_power_flow(m.problem, c, Y, m.pre, "power-flow-pre");
    add_line_limits(m.problem, Y, c.branches, m.pre, "line-limits-pre");
    add_angle_limits(m.problem, c, Y, m.pre, "angle-limits-pre");

    std::vector<double> a1, a2;
    std::vector<VarRef> p = m.pre.p;
    for (const auto& g : c.generators) {
        a1.push_back(g.cost_a1);
        a2.push_back(g.cost_a2);
    }
    std::vector<std::size_t> deps;
    for (const auto& r : p) deps.push_back(static_cast<std::size_t>(r.idx));
    m.problem.set_objective(deps, [=](const auto* x) {
        using T = detail::scalar_of<decltype(x)>;
        T f(0.0);
        for (std::size_t g = 0; g < p.size(); ++g) {
            T pg = p[g](x);
            f += a1[g] * pg * pg + a2[g] * pg;
        }
        return f;
    });
    return m;
}

struct OpfResult {
    OptSolution sol;
    Eigen::VectorXd p_gen, q_gen;
    SteadyState pre;
    double cost = NAN;
};

namespace detail {

inline Eigen::VectorXd values(const std::vector<VarRef>& refs, const Eigen::VectorXd& x) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(refs.size()));
    for (std::size_t k = 0; k < refs.size(); ++k) v[k] = refs[k](x.data());
    return v;
}

inline SteadyState state_of(const BusVars& bv, const Eigen::VectorXd& x) {
    return {values(bv.V, x), values(bv.theta, x)};
}

inline void set_start(Eigen::VectorXd& x0, const std::vector<VarRef>& refs, const Eigen::VectorXd& v) {
    for (std::size_t k = 0; k < refs.size(); ++k)
        if (refs[k].free()) x0[refs[k].idx] = v[k];
}

}  // namespace detail

inline OpfResult solve_opf(const PowerCase& c, const NlpOptions& opt = {}) {
    OpfModel m = build_opf(c);
    OpfResult r;
    r.sol = solve_nlp(m.problem, opt);
    r.p_gen = detail::values(m.pre.p, r.sol.x);
    r.q_gen = detail::values(m.pre.q, r.sol.x);
    r.pre = detail::state_of(m.pre, r.sol.x);
    r.cost = generation_cost(c, r.p_gen);
    return r;
}

// ---------------------------------------------------------------------------
// W^min bounding sets

/// Per-output data of the W^min bounds: X = C_iᵀx* ranges over [X̲, X̄]; λ = 1/(C_iᵀP⁻¹C_i).
struct HullParams {
    double X_lo = 0.0;
    double X_hi = 0.0;
    double dl = kPi;
    double lambda = 1.0;
    bool clamped = false;
};

/// W^min ≤ slope·X + intercept.
struct LinearBound {
    double slope = 0.0;
    double intercept = 0.0;
    double operator()(double X) const { return slope * X + intercept; }
};

/// Concave bound: W^min ≤ λ min((X − Δl)², (X + Δl)²).
inline double psi_bound(const HullParams& h, double X) {
    double a = X - h.dl, b = X + h.dl;
    return h.lambda * std::min(a * a, b * b);
}

/// Convex-hull pair: W ≤ λ((X̄ − 2Δl)X + Δl²), W ≤ λ((X̲ + 2Δl)X + Δl²).
inline std::array<LinearBound, 2> hull_constraints(const HullParams& h) {
    double d2 = h.dl * h.dl;
    return {LinearBound{h.lambda * (h.X_hi - 2.0 * h.dl), h.lambda * d2},
            LinearBound{h.lambda * (h.X_lo + 2.0 * h.dl), h.lambda * d2}};
}

/// Tangents at X̄/2 and X̲/2: W ≤ λ((X̄ − 2Δl)X + Δl² − X̄²/4) and its mirror.
inline std::array<LinearBound, 2> inner_constraints(const HullParams& h) {
    double d2 = h.dl * h.dl;
    return {LinearBound{h.lambda * (h.X_hi - 2.0 * h.dl), h.lambda * (d2 - h.X_hi * h.X_hi / 4.0)},
            LinearBound{h.lambda * (h.X_lo + 2.0 * h.dl), h.lambda * (d2 - h.X_lo * h.X_lo / 4.0)}};
}

inline double linear_pair_bound(const std::array<LinearBound, 2>& b, double X) { return std::min(b[0](X), b[1](X)); }

/// Hull parameters of every Lur'e output, with X = 2(θ′_ij + α_ij) bounded through the case's
/// angle-difference limits and clamped into [−2Δl, 0] and [0, 2Δl].
inline std::vector<HullParams> make_hull_params(const QuadraticCertificate& cert, const LureSystem& sys,
                                                const Limits& lim) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(cert.P);
    std::vector<HullParams> out;
    for (std::size_t k = 0; k < sys.n_edges(); ++k) {
        Eigen::VectorXd ck = sys.C.row(static_cast<Eigen::Index>(k)).transpose();
        HullParams h;
        h.dl = sys.delta_l[k];
        h.lambda = 1.0 / ck.dot(ldlt.solve(ck));
        double lo = 2.0 * (lim.angle_diff_min + sys.edges[k].alpha);
        double hi = 2.0 * (lim.angle_diff_max + sys.edges[k].alpha);
        h.X_lo = std::clamp(lo, -2.0 * h.dl, 0.0);
        h.X_hi = std::clamp(hi, 0.0, 2.0 * h.dl);
        h.clamped = h.X_lo != lo || h.X_hi != hi;
        out.push_back(h);
    }
    return out;
}

/// One output's grid bounds W^min ≤ π(π ± 2θ′_ij ± 2α_ij)/(C_iᵀP⁻¹C_i).
struct GridBound {
    std::size_t from = 0, to = 0;
    double alpha = 0.0;
    double cpc = 1.0;  ///< C_iᵀP⁻¹C_i

    template <class T>
    std::array<T, 2> upper(const T& theta_ij) const {
        return {kPi * (kPi + 2.0 * theta_ij + 2.0 * alpha) / cpc, kPi * (kPi - 2.0 * theta_ij - 2.0 * alpha) / cpc};
    }
};

inline std::vector<GridBound> grid_hull_constraints(const QuadraticCertificate& cert, const LureSystem& sys) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(cert.P);
    std::vector<GridBound> out;
    for (std::size_t k = 0; k < sys.n_edges(); ++k) {
        Eigen::VectorXd ck = sys.C.row(static_cast<Eigen::Index>(k)).transpose();
        out.push_back({sys.edges[k].from, sys.edges[k].to, sys.edges[k].alpha, ck.dot(ldlt.solve(ck))});
    }
    return out;
}

// ---------------------------------------------------------------------------
// TSCOPF

enum class Variant { Concave, Hull, Inner };
enum class HullForm { Grid, CaseBounds };

inline const char* to_string(Variant v) {
    switch (v) {
    case Variant::Concave: return "concave";
    case Variant::Hull: return "hull";
    case Variant::Inner: return "inner";
    }
    return "?";
}

inline Variant parse_variant(const std::string& s) {
    if (s == "concave") return Variant::Concave;
    if (s == "hull") return Variant::Hull;
    if (s == "inner") return Variant::Inner;
    throw InputError("unknown variant \"" + s + "\" (expected concave, hull or inner)");
}

struct TscopfOptions {
    Variant variant = Variant::Inner;
    HullForm hull_form = HullForm::Grid;
    double epsilon = 1e-4;
    FaultMethod method = FaultMethod::GeneralTaylor;
    int taylor_order = 3;
    double t_clear = NAN;  ///< overrides the scenario's clearing time when finite
};

struct TscopfModel {
    NlpProblem problem;
    BusVars pre, post;
    VarRef W;
    std::vector<VarRef> x_tc;
    LureSystem sys;
    std::vector<HullParams> hull;
    std::vector<GridBound> grid;
    bool post_omitted = false;
    TscopfOptions options;
};

/// Starting values of the steady-state quantities.
struct TscopfStart {
    SteadyState pre, post;
    Eigen::VectorXd p, q, q_post;
};

namespace detail {

inline std::vector<Branch> post_fault_branches(const PowerCase& c, const FaultSpec& s) {
    std::vector<Branch> out = c.branches;
    if (s.type != FaultType::None && s.branch_id) out.erase(out.begin() + static_cast<std::ptrdiff_t>(c.branch_index(*s.branch_id)));
    return out;
}

}  // namespace detail

/// Lur'e system of the post-fault topology; A, B, C do not depend on the equilibrium.
inline LureSystem post_fault_lure(const PowerCase& c, const FaultScenario& sc, const SteadyState* eq = nullptr) {
    return build_lure(c, eq ? *eq : flat_state(c), sc.Y_post);
}

/// Stability-constrained OPF: the OPF model plus the post-fault network, the fault-cleared state,
/// the energy cap xᵀPx ≤ W^min and the variant's W^min bounds; objective cost − εW^min.
inline TscopfModel build_tscopf(const PowerCase& c, const FaultScenario& sc, const QuadraticCertificate& cert,
                                const TscopfOptions& opt = {}) {
    TscopfModel m;
    m.options = opt;
    m.sys = post_fault_lure(c, sc);
    SectorBounds sb{cert.gamma, cert.beta};
    if (static_cast<std::size_t>(cert.beta.size()) != m.sys.n_edges() || system_hash(m.sys, sb) != cert.system_hash)
        throw HashMismatch();
    double tc = std::isfinite(opt.t_clear) ? opt.t_clear : sc.t_clear();
    detail::check_guard(tc, opt.method == FaultMethod::ClosedForm ? 3 : opt.taylor_order);

    NlpProblem& pr = m.problem;
    std::size_t n = c.n_bus(), ng = c.generators.size();
    std::size_t ref = c.reference_bus();
    int gref = c.generator_at(ref);
    if (gref < 0) throw InputError("reference bus has no generator");

    SteadyState flat = flat_state(c);
    add_voltage_vars(pr, c, "", flat, m.pre);
    for (std::size_t g = 0; g < ng; ++g) {
        const auto& gn = c.generators[g];
        std::string tag = detail::bus_tag(c, gn.bus);
        m.pre.p.push_back(detail::new_var(pr, "pG" + tag, gn.p_min, gn.p_max, std::clamp(gn.p_set, gn.p_min, gn.p_max)));
        m.pre.q.push_back(detail::new_var(pr, "qG" + tag, gn.q_min, gn.q_max, 0.0));
    }
    m.post_omitted = sc.topology_restores();
    if (m.post_omitted) {
        m.post = m.pre;
    } else {
        add_voltage_vars(pr, c, "'", flat, m.post);
        m.post.p = m.pre.p;
        const auto& gr = c.generators[gref];
        m.post.p[gref] = detail::new_var(pr, "pG'" + detail::bus_tag(c, ref), gr.p_min, gr.p_max,
                                         std::clamp(gr.p_set, gr.p_min, gr.p_max));
        for (std::size_t g = 0; g < ng; ++g) {
            const auto& gn = c.generators[g];
            m.post.q.push_back(detail::new_var(pr, "qG'" + detail::bus_tag(c, gn.bus), gn.q_min, gn.q_max, 0.0));
        }
    }
    m.W = detail::new_var(pr, "Wmin", 0.0, kInf, 1.0);
    for (std::size_t k = 0; k < m.sys.dim(); ++k)
        m.x_tc.push_back(detail::new_var(pr, "x_tc[" + std::to_string(k) + "]", -kInf, kInf, 0.0));

    add_power_flow(pr, c, sc.Y, m.pre, "power-flow-pre");
    add_line_limits(pr, sc.Y, c.branches, m.pre, "line-limits-pre");
    add_angle_limits(pr, c, sc.Y, m.pre, "angle-limits-pre");
    if (!m.post_omitted) {
        add_power_flow(pr, c, sc.Y_post, m.post, "power-flow-post");
        add_line_limits(pr, sc.Y_post, detail::post_fault_branches(c, sc.spec), m.post, "line-limits-post");
        add_angle_limits(pr, c, sc.Y_post, m.post, "angle-limits-post");
    }

    // x(t_c) from the pre-fault state, expressed around the post-fault equilibrium
    {
        DynModel dm(c);
        BusVars pre = m.pre, post = m.post;
        std::vector<VarRef> xt = m.x_tc;
        std::vector<int> gen(n);
        std::vector<double> pl(n);
        for (std::size_t i = 0; i < n; ++i) {
            gen[i] = c.generator_at(i);
            pl[i] = c.load_p(i);
        }
        FaultMethod method = opt.method;
        int N = opt.taylor_order;
        auto f = [=](const auto* x, auto* out) {
            using T = detail::scalar_of<decltype(x)>;
            std::vector<T> V, th, Vp, thp;
            pre.voltages(x, V, th);
            post.voltages(x, Vp, thp);
            std::vector<T> delta, omega;
            if (method == FaultMethod::ClosedForm) {
                fault_cleared_closed_t<T>(dm, sc, V.data(), th.data(), tc, delta, omega);
            } else {
                std::vector<T> p(n);
                for (std::size_t i = 0; i < n; ++i) p[i] = (gen[i] >= 0 ? pre.p[gen[i]](x) : T(0.0)) - pl[i];
                std::vector<T> pf = fault_on_injections(sc, p);
                fault_on_taylor_t<T>(dm, sc.Y_fault, V.data(), th.data(), pf.data(), N, tc, delta, omega);
            }
            std::vector<T> red = dm.layout.template reduce<T>(delta.data(), omega.data(), thp.data());
            for (std::size_t k = 0; k < xt.size(); ++k) out[k] = xt[k](x) - red[k];
        };
        std::vector<std::size_t> deps = detail::cat(m.pre.deps(), m.post.deps(false));
        for (const auto& r : xt) deps.push_back(static_cast<std::size_t>(r.idx));
        pr.add_block("fault-cleared", RowKind::Equality, xt.size(), deps, f);
    }

    // energy cap W(x(t_c)) ≤ W^min
    {
        Eigen::MatrixXd P = cert.P;
        std::vector<VarRef> xt = m.x_tc;
        VarRef W = m.W;
        auto f = [=](const auto* x, auto* out) {
            using T = detail::scalar_of<decltype(x)>;
            T s(0.0);
            for (std::size_t a = 0; a < xt.size(); ++a) {
                T row(0.0);
                for (std::size_t b = 0; b < xt.size(); ++b) row += P(a, b) * xt[b](x);
                s += xt[a](x) * row;
            }
            out[0] = s - W(x);
        };
        std::vector<std::size_t> deps{static_cast<std::size_t>(W.idx)};
        for (const auto& r : xt) deps.push_back(static_cast<std::size_t>(r.idx));
        pr.add_block("energy-cap", RowKind::Inequality, 1, deps, f);
    }

    // W^min bounds per output, in X = 2(θ′_ij + α_ij)
    m.hull = make_hull_params(cert, m.sys, c.limits);
    m.grid = grid_hull_constraints(cert, m.sys);
    {
        std::size_t ne = m.sys.n_edges();
        std::vector<std::pair<VarRef, VarRef>> th(ne);
        std::vector<double> alpha(ne);
        for (std::size_t k = 0; k < ne; ++k) {
            th[k] = {m.post.theta[m.sys.edges[k].from], m.post.theta[m.sys.edges[k].to]};
            alpha[k] = m.sys.edges[k].alpha;
        }
        std::vector<HullParams> hull = m.hull;
        std::vector<GridBound> grid = m.grid;
        Variant variant = opt.variant;
        HullForm form = opt.hull_form;
        VarRef W = m.W;
        auto f = [=](const auto* x, auto* out) {
            using T = detail::scalar_of<decltype(x)>;
            T w = W(x);
            for (std::size_t k = 0; k < ne; ++k) {
                T thij = th[k].first(x) - th[k].second(x);
                T X = 2.0 * (thij + alpha[k]);
                const HullParams& h = hull[k];
                switch (variant) {
                case Variant::Concave: {
                    T a = X - h.dl, b = X + h.dl;
                    out[2 * k] = w - h.lambda * a * a;
                    out[2 * k + 1] = w - h.lambda * b * b;
                    break;
                }
                case Variant::Hull: {
                    if (form == HullForm::Grid) {
                        auto ub = grid[k].upper(thij);
                        out[2 * k] = w - ub[0];
                        out[2 * k + 1] = w - ub[1];
                    } else {
                        auto lb = hull_constraints(h);
                        out[2 * k] = w - (lb[0].slope * X + lb[0].intercept);
                        out[2 * k + 1] = w - (lb[1].slope * X + lb[1].intercept);
                    }
                    break;
                }
                case Variant::Inner: {
                    auto lb = inner_constraints(h);
                    out[2 * k] = w - (lb[0].slope * X + lb[0].intercept);
                    out[2 * k + 1] = w - (lb[1].slope * X + lb[1].intercept);
                    break;
                }
                }
            }
        };
        std::vector<std::size_t> deps{static_cast<std::size_t>(W.idx)};
        for (const auto& t : th) {
            if (t.first.free()) deps.push_back(static_cast<std::size_t>(t.first.idx));
            if (t.second.free()) deps.push_back(static_cast<std::size_t>(t.second.idx));
        }
        pr.add_block("w-bound", RowKind::Inequality, 2 * ne, deps, f);
    }

    // cost − εW^min
    {
        std::vector<double> a1, a2;
        for (const auto& g : c.generators) {
            a1.push_back(g.cost_a1);
            a2.push_back(g.cost_a2);
        }
        std::vector<VarRef> p = m.pre.p;
        VarRef W = m.W;
        double eps = opt.epsilon;
        std::vector<std::size_t> deps{static_cast<std::size_t>(W.idx)};
        for (const auto& r : p) deps.push_back(static_cast<std::size_t>(r.idx));
        pr.set_objective(deps, [=](const auto* x) {
            using T = detail::scalar_of<decltype(x)>;
            T f(0.0);
            for (std::size_t g = 0; g < p.size(); ++g) {
                T pg = p[g](x);
                f += a1[g] * pg * pg + a2[g] * pg;
            }
            return f - eps * W(x);
        });
    }
    return m;
}

/// Writes a start into the model's x0; x(t_c) and W^min are derived from it.
inline void set_tscopf_start(TscopfModel& m, const TscopfStart& s) {
    Eigen::VectorXd& x0 = m.problem.x0;
    detail::set_start(x0, m.pre.V, s.pre.V);
    detail::set_start(x0, m.pre.theta, s.pre.theta);
    detail::set_start(x0, m.pre.p, s.p);
    detail::set_start(x0, m.pre.q, s.q);
    if (!m.post_omitted) {
        detail::set_start(x0, m.post.V, s.post.V);
        detail::set_start(x0, m.post.theta, s.post.theta);
        detail::set_start(x0, m.post.q, s.q_post);
        detail::set_start(x0, m.post.p, s.p);
    }
    for (const auto& r : m.x_tc) x0[r.idx] = 0.0;
    x0[m.W.idx] = 0.0;
    Eigen::VectorXd c = m.problem.eval_constraints(x0);
    const ConstraintBlock* fc = m.problem.block("fault-cleared");
    for (std::size_t k = 0; k < m.x_tc.size(); ++k) x0[m.x_tc[k].idx] = -c[fc->offset + k];
    const ConstraintBlock* wb = m.problem.block("w-bound");
    double w = kInf;
    for (std::size_t r = 0; r < wb->rows; ++r) w = std::min(w, -c[wb->offset + r]);
    x0[m.W.idx] = std::max(1e-3, std::isfinite(w) ? 0.9 * w : 1.0);
}

struct TscopfResult {
    OptSolution sol;
    Variant variant = Variant::Inner;
    double epsilon = 0.0;
    Eigen::VectorXd p_gen, q_gen, p_post;
    SteadyState pre, post;
    double W = NAN;
    Eigen::VectorXd x_tc;
    double energy = NAN;  ///< x(t_c)ᵀPx(t_c)
    double cost = NAN;    ///< generation cost without the −εW^min term
    std::vector<double> w_bound_slacks;
    std::vector<double> grid_bounds;  ///< grid bound values at the solution, both signs per output
    std::vector<double> hull_bounds;  ///< case-bound hull values at the solution
    std::string start;
    std::vector<std::pair<std::string, OptStatus>> starts;
};

inline TscopfResult extract_tscopf(const PowerCase& c, const TscopfModel& m, const OptSolution& sol,
                                   const QuadraticCertificate& cert) {
    TscopfResult r;
    r.sol = sol;
    r.variant = m.options.variant;
    r.epsilon = m.options.epsilon;
    const Eigen::VectorXd& x = sol.x;
    r.p_gen = detail::values(m.pre.p, x);
    r.q_gen = detail::values(m.pre.q, x);
    r.p_post = detail::values(m.post.p, x);
    r.pre = detail::state_of(m.pre, x);
    r.post = detail::state_of(m.post, x);
    r.W = m.W(x.data());
    r.x_tc = detail::values(m.x_tc, x);
    r.energy = r.x_tc.dot(cert.P * r.x_tc);
    r.cost = generation_cost(c, r.p_gen);
    Eigen::VectorXd cv = m.problem.eval_constraints(x);
    const ConstraintBlock* wb = m.problem.block("w-bound");
    for (std::size_t k = 0; k < wb->rows; ++k) r.w_bound_slacks.push_back(-cv[wb->offset + k]);
    for (std::size_t k = 0; k < m.sys.n_edges(); ++k) {
        double thij = r.post.theta[m.sys.edges[k].from] - r.post.theta[m.sys.edges[k].to];
        auto g = m.grid[k].upper(thij);
        r.grid_bounds.push_back(g[0]);
        r.grid_bounds.push_back(g[1]);
        auto h = hull_constraints(m.hull[k]);
        double X = 2.0 * (thij + m.sys.edges[k].alpha);
        r.hull_bounds.push_back(h[0](X));
        r.hull_bounds.push_back(h[1](X));
    }
    return r;
}

/// Post-fault equilibrium for a dispatch; nullopt when the power flow fails.
inline std::optional<SteadyState> post_fault_equilibrium(const PowerCase& c, const FaultScenario& sc,
                                                         const Eigen::VectorXd& p_gen, const SteadyState& start) {
    try {
        return solve_pf(c, scheduled_injections(c, p_gen), sc.Y_post, PfOptions{}, nullptr, &start);
    } catch (const SolverError&) {
        return std::nullopt;
    }
}

namespace detail {

inline Eigen::VectorXd gen_q(const PowerCase& c, const SteadyState& s, const AdmittanceMatrix& Y) {
    Eigen::VectorXd q(static_cast<Eigen::Index>(c.generators.size()));
    for (std::size_t g = 0; g < c.generators.size(); ++g) {
        std::size_t i = c.generators[g].bus;
        q[g] = injection_q(s, Y, i) + c.load_q(i);
    }
    return q;
}

}  // namespace detail

/// Flat, OPF warm-start and perturbed starting points.
inline std::vector<std::pair<std::string, TscopfStart>> tscopf_starts(const PowerCase& c, const FaultScenario& sc,
                                                                     const OpfResult* opf, std::uint64_t seed) {
    std::vector<std::pair<std::string, TscopfStart>> out;
    TscopfStart flat;
    flat.pre = flat_state(c);
    flat.post = flat.pre;
    flat.p = set_point_dispatch(c);
    for (std::size_t g = 0; g < c.generators.size(); ++g)
        flat.p[g] = std::clamp(flat.p[g], c.generators[g].p_min, c.generators[g].p_max);
    flat.q = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(c.generators.size()));
    flat.q_post = flat.q;
    out.emplace_back("flat", flat);

    TscopfStart warm = flat;
    if (opf && opf->sol.status == OptStatus::Optimal) {
        warm.pre = opf->pre;
        warm.p = opf->p_gen;
        warm.q = opf->q_gen;
        auto post = post_fault_equilibrium(c, sc, opf->p_gen, opf->pre);
        warm.post = post ? *post : opf->pre;
        warm.q_post = post ? detail::gen_q(c, *post, sc.Y_post) : opf->q_gen;
        out.emplace_back("opf-warm", warm);
    }

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    TscopfStart pert = warm;
    for (std::size_t g = 0; g < c.generators.size(); ++g) {
        const auto& gn = c.generators[g];
        double span = std::isfinite(gn.p_max - gn.p_min) ? gn.p_max - gn.p_min : 1.0;
        pert.p[g] = std::clamp(pert.p[g] + 0.1 * span * nd(rng), gn.p_min, gn.p_max);
    }
    for (Eigen::Index i = 0; i < pert.pre.theta.size(); ++i) {
        double d = 0.05 * nd(rng);
        pert.pre.theta[i] += d;
        pert.post.theta[i] += d;
    }
    out.emplace_back("perturbed", pert);
    return out;
}

/// Solves the model from every start concurrently and keeps the best Optimal solution
/// (lowest objective, earliest start on ties).
inline TscopfResult solve_tscopf(const PowerCase& c, const FaultScenario& sc, const QuadraticCertificate& cert,
                                 const TscopfOptions& opt, const OpfResult* opf, std::uint64_t seed = 42,
                                 const NlpOptions& nopt = {}) {
    TscopfModel base = build_tscopf(c, sc, cert, opt);
    auto starts = tscopf_starts(c, sc, opf, seed);
    std::vector<std::future<OptSolution>> jobs;
    for (const auto& [name, st] : starts) {
        TscopfModel m = base;
        set_tscopf_start(m, st);
        jobs.push_back(std::async(std::launch::async, [m = std::move(m), nopt]() { return solve_nlp(m.problem, nopt); }));
    }
    std::vector<OptSolution> sols;
    for (auto& j : jobs) sols.push_back(j.get());
    std::size_t best = 0;
    bool have = false;
    for (std::size_t k = 0; k < sols.size(); ++k) {
        if (sols[k].status != OptStatus::Optimal) continue;
        if (!have || sols[k].objective < sols[best].objective - 1e-9) {
            best = k;
            have = true;
        }
    }
    TscopfResult r = extract_tscopf(c, base, sols[best], cert);
    r.start = starts[best].first;
    for (std::size_t k = 0; k < sols.size(); ++k) r.starts.emplace_back(starts[k].first, sols[k].status);
    return r;
}

/// ε = 1e−4·max(1, |f_OPF|).
inline double default_epsilon(const OpfResult& opf) { return 1e-4 * std::max(1.0, std::abs(opf.cost)); }

// ---------------------------------------------------------------------------
// verification

struct Theorem1Report {
    std::vector<double> slacks;
    double min_slack = NAN;
    double w_min = NAN;
    double kkt_residual = NAN;
    bool pass = false;
};

/// At an optimum of the single-level model some W^min upper bound must be active.
inline Theorem1Report verify_theorem1(const TscopfResult& r, double rel_tol = 1e-5) {
    Theorem1Report t;
    t.slacks = r.w_bound_slacks;
    t.w_min = r.W;
    t.kkt_residual = r.sol.kkt_residual;
    t.min_slack = t.slacks.empty() ? NAN : *std::min_element(t.slacks.begin(), t.slacks.end());
    t.pass = r.sol.status == OptStatus::Optimal && std::isfinite(t.min_slack) &&
             t.min_slack <= rel_tol * std::max(r.W, 0.0) + 1e-12;
    return t;
}

struct VertexCheck {
    double X = 0.0, W = 0.0;
    std::array<double, 2> s1{}, s2{};  ///< ψ points (X, W) combined
    double c = 0.0;                    ///< v = c·s1 + (1 − c)·s2
    double residual = 0.0;
};

struct Theorem2Report {
    std::size_t samples = 0;
    std::size_t psi_outside_hull = 0;
    std::size_t inner_outside_psi = 0;
    std::vector<VertexCheck> vertices;
    double max_coeff_violation = 0.0;  ///< distance of c outside [0, 1]
    double max_residual = 0.0;
    bool pass = false;
};

namespace detail {

inline bool in_psi(const HullParams& h, double X, double W, double tol = 1e-12) {
    return X >= h.X_lo - tol && X <= h.X_hi + tol && W >= -tol && W <= psi_bound(h, X) + tol * std::max(1.0, W);
}

inline VertexCheck combine(double X, double W, std::array<double, 2> s1, std::array<double, 2> s2) {
    VertexCheck v{X, W, s1, s2, 0.0, 0.0};
    double dx = s1[0] - s2[0], dw = s1[1] - s2[1];
    double den = dx * dx + dw * dw;
    v.c = den > 0.0 ? ((X - s2[0]) * dx + (W - s2[1]) * dw) / den : 1.0;
    double rx = X - (v.c * s1[0] + (1.0 - v.c) * s2[0]);
    double rw = W - (v.c * s1[1] + (1.0 - v.c) * s2[1]);
    v.residual = std::hypot(rx, rw);
    return v;
}

}  // namespace detail

/// Monte-Carlo containment ψ ⊆ Ψ and inner ⊆ ψ, plus the vertices of Ψ written as convex
/// combinations of ψ points: s₁ = (0, λΔl²), s₂ = (X̄, λ(X̄ − Δl)²) and the X̲ mirror.
inline Theorem2Report verify_theorem2(const HullParams& h, std::size_t n_samples, std::uint64_t seed = 42) {
    Theorem2Report r;
    r.samples = n_samples;
    auto hull = hull_constraints(h);
    auto inner = inner_constraints(h);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (std::size_t s = 0; s < n_samples; ++s) {
        double X = h.X_lo + (h.X_hi - h.X_lo) * U(rng);
        double Wp = psi_bound(h, X) * U(rng);
        double tol = 1e-12 * std::max(1.0, std::abs(Wp));
        if (Wp > linear_pair_bound(hull, X) + tol) ++r.psi_outside_hull;
        double cap = std::max(0.0, linear_pair_bound(inner, X));
        double Wi = cap * U(rng);
        if (!detail::in_psi(h, X, Wi)) ++r.inner_outside_psi;
    }
    double l = h.lambda, d = h.dl;
    std::array<double, 2> s1{0.0, l * d * d};
    std::array<double, 2> s2{h.X_hi, l * (h.X_hi - d) * (h.X_hi - d)};
    std::array<double, 2> s3{h.X_lo, l * (h.X_lo + d) * (h.X_lo + d)};
    std::array<double, 2> e_hi{h.X_hi, 0.0}, e_lo{h.X_lo, 0.0};
    // Ψ vertices in order around the boundary; each paired with the ψ points of its edge
    r.vertices.push_back(detail::combine(h.X_lo, 0.0, e_lo, s3));
    r.vertices.push_back(detail::combine(h.X_lo, hull[1](h.X_lo), s1, s3));
    r.vertices.push_back(detail::combine(0.0, std::min(hull[0](0.0), hull[1](0.0)), s1, s2));
    r.vertices.push_back(detail::combine(h.X_hi, hull[0](h.X_hi), s1, s2));
    r.vertices.push_back(detail::combine(h.X_hi, 0.0, e_hi, s2));
    // points along the two slanted edges
    for (double t : {0.25, 0.5, 0.75}) {
        double Xh = t * h.X_hi, Xl = t * h.X_lo;
        r.vertices.push_back(detail::combine(Xh, hull[0](Xh), s1, s2));
        r.vertices.push_back(detail::combine(Xl, hull[1](Xl), s1, s3));
    }
    for (const auto& v : r.vertices) {
        double scale = std::max(1.0, std::max(std::abs(v.W), std::abs(v.X)));
        r.max_residual = std::max(r.max_residual, v.residual / scale);
        r.max_coeff_violation = std::max({r.max_coeff_violation, -v.c, v.c - 1.0});
    }
    r.pass = r.psi_outside_hull == 0 && r.inner_outside_psi == 0 && r.max_coeff_violation <= 1e-9 &&
             r.max_residual <= 1e-9;
    return r;
}

struct EpsilonPoint {
    double epsilon = 0.0;
    double cost = NAN;
    Eigen::VectorXd p_gen;
    OptStatus status = OptStatus::IterationLimit;
};

struct EpsilonReport {
    std::vector<EpsilonPoint> points;      ///< decreasing ε
    std::vector<double> cost_spread;       ///< |f(ε_k) − f(ε_smallest)|
    std::vector<double> dispatch_spread;   ///< ‖p(ε_k) − p(ε_smallest)‖∞
    bool pass = false;
};

/// Re-solves the single-level model at ε ∈ {1e−3, 1e−4, 1e−5}·f-scale from the same start.
inline EpsilonReport verify_epsilon_insensitivity(const PowerCase& c, const FaultScenario& sc,
                                                  const QuadraticCertificate& cert, const TscopfOptions& base,
                                                  const OpfResult& opf, const NlpOptions& nopt = {}) {
    EpsilonReport r;
    double scale = std::max(1.0, std::abs(opf.cost));
    auto starts = tscopf_starts(c, sc, &opf, 42);
    const TscopfStart& st = starts.size() > 1 ? starts[1].second : starts[0].second;
    for (double e : {1e-3, 1e-4, 1e-5}) {
        TscopfOptions o = base;
        o.epsilon = e * scale;
        TscopfModel m = build_tscopf(c, sc, cert, o);
        set_tscopf_start(m, st);
        OptSolution s = solve_nlp(m.problem, nopt);
        TscopfResult tr = extract_tscopf(c, m, s, cert);
        r.points.push_back({o.epsilon, tr.cost, tr.p_gen, s.status});
    }
    const EpsilonPoint& last = r.points.back();
    bool ok = true;
    for (const auto& p : r.points) {
        ok = ok && p.status == OptStatus::Optimal;
        r.cost_spread.push_back(std::abs(p.cost - last.cost));
        r.dispatch_spread.push_back((p.p_gen - last.p_gen).cwiseAbs().maxCoeff());
    }
    for (std::size_t k = 1; k < r.cost_spread.size(); ++k)
        ok = ok && r.cost_spread[k] <= r.cost_spread[k - 1] + 1e-9 * scale;
    r.pass = ok;
    return r;
}

}  // namespace stabopt
