#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stabopt/certify.hpp"
#include "stabopt/fault.hpp"
#include "stabopt/lure.hpp"
#include "stabopt/powerflow.hpp"

namespace stabopt {

/// Network parameters active during one phase of the disturbance.
struct Phase {
    AdmittanceMatrix Y;
    Eigen::VectorXd V;  ///< held constant through the phase
    Eigen::VectorXd p;  ///< net active injections
};

/// d/dt of [δ (per bus); ω (per swing bus)].
inline Eigen::VectorXd rhs(const DynModel& dm, const Phase& ph, const Eigen::VectorXd& state) {
    std::size_t n = dm.n_bus();
    Eigen::VectorXd dx = Eigen::VectorXd::Zero(state.size());
    const double* delta = state.data();
    for (std::size_t i = 0; i < n; ++i) {
        if (dm.kind[i] == DynModel::Fixed) continue;
        double acc = ph.p[i] - injection_p<double>(ph.Y, ph.V.data(), delta, i);
        if (dm.kind[i] == DynModel::LoadBus) {
            dx[i] = acc / dm.d[i];
        } else {
            std::size_t g = n + static_cast<std::size_t>(dm.layout.speed_pos[i]);
            double w = state[g] - 1.0;
            dx[i] = w;
            dx[g] = (acc - dm.d[i] * w) / dm.m[i];
        }
    }
    return dx;
}

inline Eigen::VectorXd rhs(const PowerCase& c, const Phase& ph, const Eigen::VectorXd& state) {
    return rhs(DynModel(c), ph, state);
}

struct Trajectory {
    std::vector<double> t;
    std::vector<Eigen::VectorXd> states;
    double t0 = 0.0;
    double t_clear = 0.0;
    bool diverged = false;
    double step_halving_delta = NAN;  ///< endpoint change when h is halved (if checked)
    std::vector<double> W;
};

struct IntegrateOptions {
    double h = 1e-3;
    double divergence = 10.0 * kPi;
    bool self_check = false;
    int record_every = 1;
};

namespace detail {

inline Eigen::VectorXd rk4_step(const DynModel& dm, const Phase& ph, const Eigen::VectorXd& x, double h) {
    Eigen::VectorXd k1 = rhs(dm, ph, x);
    Eigen::VectorXd k2 = rhs(dm, ph, x + 0.5 * h * k1);
    Eigen::VectorXd k3 = rhs(dm, ph, x + 0.5 * h * k2);
    Eigen::VectorXd k4 = rhs(dm, ph, x + h * k3);
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

inline bool exploded(const std::vector<std::pair<std::size_t, std::size_t>>& pairs, const Eigen::VectorXd& x,
                     double limit) {
    for (auto [i, j] : pairs)
        if (!(std::abs(x[i] - x[j]) <= limit)) return true;
    return false;
}

inline Trajectory integrate_once(const DynModel& dm, const Phase& fault_on, const Phase& post, double tc,
                                 const Eigen::VectorXd& x0, double T, const IntegrateOptions& opt,
                                 const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
    Trajectory tr;
    tr.t_clear = tc;
    tr.t.push_back(0.0);
    tr.states.push_back(x0);
    Eigen::VectorXd x = x0;
    double t = 0.0;
    int since = 0;
    auto run = [&](const Phase& ph, double t_end) {
        if (!(t_end > t)) return true;
        long steps = static_cast<long>(std::ceil((t_end - t) / opt.h - 1e-9));
        double h = (t_end - t) / static_cast<double>(steps);
        double start = t;
        for (long s = 1; s <= steps; ++s) {
            x = rk4_step(dm, ph, x, h);
            t = s == steps ? t_end : start + static_cast<double>(s) * h;
            bool last = s == steps;
            if (++since >= opt.record_every || last) {
                tr.t.push_back(t);
                tr.states.push_back(x);
                since = 0;
            }
            if (!x.allFinite() || exploded(pairs, x, opt.divergence)) {
                if (tr.t.back() != t) {
                    tr.t.push_back(t);
                    tr.states.push_back(x);
                }
                tr.diverged = true;
                return false;
            }
        }
        return true;
    };
    if (run(fault_on, std::min(tc, T))) run(post, T);
    return tr;
}

}  // namespace detail

/// Fixed-step RK4 through the fault-on phase [0, t_c) and the post-fault phase [t_c, T].
inline Trajectory integrate(const PowerCase& c, const Phase& fault_on, const Phase& post, double tc,
                            const Eigen::VectorXd& x0, double T, const IntegrateOptions& opt = {}) {
    if (!(opt.h > 0.0)) throw InputError("step must be positive");
    DynModel dm(c);
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (const auto& br : c.branches) pairs.emplace_back(br.from, br.to);
    Trajectory tr = detail::integrate_once(dm, fault_on, post, tc, x0, T, opt, pairs);
    if (opt.self_check && !tr.diverged) {
        IntegrateOptions half = opt;
        half.h = opt.h / 2.0;
        half.record_every = 1 << 30;
        Trajectory t2 = detail::integrate_once(dm, fault_on, post, tc, x0, T, half, pairs);
        tr.step_halving_delta = (t2.states.back() - tr.states.back()).cwiseAbs().maxCoeff();
    }
    return tr;
}

/// Phases for a dispatch: fault-on (Y″, pre-fault V, overridden injections) and post-fault (Y′, V′, p′).
struct DisturbanceSetup {
    Phase fault_on, post;
    double t_clear = 0.0;
    Eigen::VectorXd x0;  ///< pre-fault state [θ; 1]
};

inline DisturbanceSetup make_disturbance(const PowerCase& c, const FaultScenario& sc, const SteadyState& pre,
                                         const Eigen::VectorXd& p_pre, const Eigen::VectorXd& V_post,
                                         const Eigen::VectorXd& p_post) {
    DynModel dm(c);
    DisturbanceSetup d;
    std::vector<double> pv(p_pre.data(), p_pre.data() + p_pre.size());
    std::vector<double> pf = fault_on_injections(sc, pv);
    d.fault_on = {sc.Y_fault, pre.V, Eigen::Map<Eigen::VectorXd>(pf.data(), static_cast<Eigen::Index>(pf.size()))};
    d.post = {sc.Y_post, V_post, p_post};
    d.t_clear = sc.t_clear();
    d.x0.resize(static_cast<Eigen::Index>(c.n_bus() + dm.n_speed()));
    d.x0.head(static_cast<Eigen::Index>(c.n_bus())) = pre.theta;
    d.x0.tail(static_cast<Eigen::Index>(dm.n_speed())).setOnes();
    return d;
}

enum class Verdict { Stable, Unstable, Inconclusive };

inline const char* to_string(Verdict v) {
    switch (v) {
    case Verdict::Stable: return "Stable";
    case Verdict::Unstable: return "Unstable";
    case Verdict::Inconclusive: return "Inconclusive";
    }
    return "?";
}

struct AssessOptions {
    double window = 2.0;
    double quiet_tol = 1e-2;
};

/// Reduced post-fault coordinates of a trajectory sample.
inline Eigen::VectorXd reduced_state(const LureSystem& s, const Eigen::VectorXd& state) {
    std::size_t n = s.layout.n_bus;
    Eigen::VectorXd delta = state.head(static_cast<Eigen::Index>(n));
    Eigen::VectorXd omega = state.tail(static_cast<Eigen::Index>(s.layout.n_speed()));
    return s.layout.reduce(delta, omega, s.post_eq.theta);
}

/// Stable: stays in 𝒫 after t_c and is quiet and non-growing over the final window.
/// Without a post-fault equilibrium (sys == nullptr) only divergence can be detected.
inline Verdict assess_stability(const Trajectory& tr, const LureSystem* sys, const AssessOptions& opt = {}) {
    if (tr.diverged) return Verdict::Unstable;
    if (!sys) return Verdict::Inconclusive;
    Eigen::MatrixX2d b = polytope_bounds(*sys);
    double T = tr.t.back();
    double first = 0.0, second = 0.0, peak = 0.0;
    double mid = T - opt.window / 2.0;
    for (std::size_t k = 0; k < tr.t.size(); ++k) {
        if (tr.t[k] < tr.t_clear) continue;
        Eigen::VectorXd x = reduced_state(*sys, tr.states[k]);
        if (!in_polytope(b, sys->C * x)) return Verdict::Unstable;
        if (tr.t[k] >= T - opt.window) {
            double nx = x.size() ? x.cwiseAbs().maxCoeff() : 0.0;
            peak = std::max(peak, nx);
            if (tr.t[k] < mid) first = std::max(first, nx);
            else second = std::max(second, nx);
        }
    }
    if (peak < opt.quiet_tol && second <= first) return Verdict::Stable;
    return Verdict::Inconclusive;
}

struct WAlongReport {
    std::vector<double> W;
    std::size_t increases = 0;
    double worst_increase = 0.0;
};

/// W along the post-fault part of the trajectory; flags steps inside 𝒫 where W grows by more than tol.
inline WAlongReport w_along(Trajectory& tr, const QuadraticCertificate& cert, const LureSystem& sys,
                            double tol = 1e-9) {
    WAlongReport r;
    Eigen::MatrixX2d b = polytope_bounds(sys);
    tr.W.assign(tr.t.size(), NAN);
    double prev = NAN;
    bool prev_in = false;
    for (std::size_t k = 0; k < tr.t.size(); ++k) {
        if (tr.t[k] < tr.t_clear) continue;
        Eigen::VectorXd x = reduced_state(sys, tr.states[k]);
        double w = w_value(cert, x);
        tr.W[k] = w;
        bool in = in_polytope(b, sys.C * x);
        if (prev_in && in && std::isfinite(prev)) {
            double inc = w - prev;
            if (inc > tol) ++r.increases;
            r.worst_increase = std::max(r.worst_increase, inc);
        }
        prev = w;
        prev_in = in;
    }
    r.W = tr.W;
    return r;
}

// ---------------------------------------------------------------------------
// output

inline void write_trajectory_csv(std::ostream& os, const PowerCase& c, const Trajectory& tr) {
    DynModel dm(c);
    os << "t";
    for (const auto& b : c.buses) os << ",delta_" << b.id;
    for (std::size_t i : dm.layout.speed_buses) os << ",omega_" << c.buses[i].id;
    bool has_w = !tr.W.empty();
    if (has_w) os << ",W";
    os << "\n" << std::setprecision(10);
    for (std::size_t k = 0; k < tr.t.size(); ++k) {
        os << tr.t[k];
        for (Eigen::Index j = 0; j < tr.states[k].size(); ++j) os << "," << tr.states[k][j];
        if (has_w) {
            os << ",";
            if (std::isfinite(tr.W[k])) os << tr.W[k];
        }
        os << "\n";
    }
}

/// Angle traces relative to the reference bus as a static SVG.
inline std::string trajectory_svg(const PowerCase& c, const Trajectory& tr, const std::string& title) {
    const double w = 720, h = 360, ml = 60, mr = 110, mt = 30, mb = 40;
    std::size_t ref = c.reference_bus();
    double lo = 0.0, hi = 0.0;
    for (const auto& s : tr.states)
        for (std::size_t i = 0; i < c.n_bus(); ++i) {
            double v = s[i] - s[ref];
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    if (hi - lo < 1e-6) { hi += 0.5; lo -= 0.5; }
    double T = tr.t.empty() ? 1.0 : std::max(tr.t.back(), 1e-9);
    auto X = [&](double t) { return ml + (w - ml - mr) * t / T; };
    auto Y = [&](double v) { return mt + (h - mt - mb) * (hi - v) / (hi - lo); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                   "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << ml << "\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">" << title << "</text>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr << "\" y2=\"" << h - mb
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << h - mb << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << (w - mr) / 2 << "\" y=\"" << h - 8 << "\" font-family=\"sans-serif\" font-size=\"11\">t (s)</text>\n";
    os << "<text x=\"4\" y=\"" << mt + 10 << "\" font-family=\"sans-serif\" font-size=\"11\">rad</text>\n";
    for (double v : {lo, hi})
        os << "<text x=\"4\" y=\"" << Y(v) + 4 << "\" font-family=\"sans-serif\" font-size=\"10\">" << v << "</text>\n";
    os << "<line x1=\"" << X(tr.t_clear) << "\" y1=\"" << mt << "\" x2=\"" << X(tr.t_clear) << "\" y2=\"" << h - mb
       << "\" stroke=\"#999\" stroke-dasharray=\"4,3\"/>\n";
    std::size_t stride = std::max<std::size_t>(1, tr.t.size() / 1500);
    for (std::size_t i = 0, col = 0; i < c.n_bus(); ++i) {
        if (i == ref) continue;
        const char* color = colors[col++ % 10];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.2\" points=\"";
        for (std::size_t k = 0; k < tr.t.size(); k += stride)
            os << X(tr.t[k]) << "," << Y(tr.states[k][i] - tr.states[k][ref]) << " ";
        os << "\"/>\n";
        os << "<text x=\"" << w - mr + 8 << "\" y=\"" << mt + 14 * static_cast<double>(col) << "\" fill=\"" << color
           << "\" font-family=\"sans-serif\" font-size=\"11\">bus " << c.buses[i].id << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace stabopt
