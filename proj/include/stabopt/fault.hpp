#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stabopt/errors.hpp"
#include "stabopt/gridcase.hpp"
#include "stabopt/lure.hpp"
#include "stabopt/powerflow.hpp"

namespace stabopt {

/// Swing-model constants per bus.
struct DynModel {
    enum Kind { Swing, LoadBus, Fixed };
    std::vector<Kind> kind;
    std::vector<double> m, d;
    StateLayout layout;

    explicit DynModel(const PowerCase& c) : layout(c) {
        std::size_t n = c.n_bus();
        kind.resize(n);
        m.assign(n, 0.0);
        d.assign(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            if (c.buses[i].infinite) kind[i] = Fixed;
            else if (c.buses[i].kind == BusKind::Generator) kind[i] = Swing;
            else kind[i] = LoadBus;
            m[i] = c.inertia(i);
            d[i] = c.damping(i);
        }
    }
    std::size_t n_bus() const { return kind.size(); }
    std::size_t n_speed() const { return layout.n_speed(); }
};

/// A fault description resolved against a case.
struct FaultScenario {
    FaultSpec spec;
    AdmittanceMatrix Y, Y_fault, Y_post;
    std::vector<bool> overridden;  ///< injections forced to zero while the fault is on
    Eigen::MatrixXd dG_pre, dB_pre, dG_post, dB_post;

    double t_clear() const { return spec.t_clear; }
    bool topology_restores() const { return Y_post.approx_equal(Y, 0.0); }
    const Eigen::MatrixXd& dG() const { return spec.reference == DeltaReference::PreFault ? dG_pre : dG_post; }
    const Eigen::MatrixXd& dB() const { return spec.reference == DeltaReference::PreFault ? dB_pre : dB_post; }
};

inline FaultScenario make_scenario(const PowerCase& c, const FaultSpec& spec) {
    FaultScenario s;
    s.spec = spec;
    s.Y = build_admittance(c, AdmittanceVariant::Base);
    s.Y_fault = build_admittance(c, AdmittanceVariant::Faulted, &spec);
    s.Y_post = build_admittance(c, AdmittanceVariant::PostFault, &spec);
    s.overridden.assign(c.n_bus(), false);
    if (spec.scope == OverrideScope::SystemWide && spec.type != FaultType::None) s.overridden.assign(c.n_bus(), true);
    else if (spec.scope == OverrideScope::FaultedBuses)
        for (std::size_t i : faulted_buses(c, spec)) s.overridden[i] = true;
    s.dG_pre = s.Y_fault.matrix().real() - s.Y.matrix().real();
    s.dB_pre = s.Y_fault.matrix().imag() - s.Y.matrix().imag();
    s.dG_post = s.Y_fault.matrix().real() - s.Y_post.matrix().real();
    s.dB_post = s.Y_fault.matrix().imag() - s.Y_post.matrix().imag();
    return s;
}

/// Net injections while the fault is on.
template <class T>
std::vector<T> fault_on_injections(const FaultScenario& sc, const std::vector<T>& p) {
    std::vector<T> pf = p;
    for (std::size_t i = 0; i < pf.size(); ++i)
        if (sc.overridden[i]) pf[i] = T(0.0);
    return pf;
}

/// K_i = V_i Σ_j V_j (ΔB_ij sin θ_ij + ΔG_ij cos θ_ij).
template <class T>
T k_factor(const FaultScenario& sc, const T* V, const T* th, std::size_t i) {
    using std::cos; using std::sin;
    const Eigen::MatrixXd& dG = sc.dG();
    const Eigen::MatrixXd& dB = sc.dB();
    T s(0.0);
    for (Eigen::Index j = 0; j < dG.cols(); ++j) {
        double g = dG(static_cast<Eigen::Index>(i), j), b = dB(static_cast<Eigen::Index>(i), j);
        if (g == 0.0 && b == 0.0) continue;
        T d = th[i] - th[j];
        s += V[j] * (b * sin(d) + g * cos(d));
    }
    return V[i] * s;
}

inline double k_factor(const SteadyState& pre, const FaultScenario& sc, std::size_t i) {
    return k_factor<double>(sc, pre.V.data(), pre.theta.data(), i);
}

enum class FaultMethod { ClosedForm, GeneralTaylor };

struct FaultClearedState {
    Eigen::VectorXd x;      ///< reduced post-fault coordinates
    Eigen::VectorXd delta;  ///< absolute bus angles at t_c
    Eigen::VectorXd omega;  ///< speeds of swing buses at t_c
    FaultMethod method = FaultMethod::GeneralTaylor;
    int order = 3;
    double t_clear = 0.0;

    std::string tag() const {
        return method == FaultMethod::ClosedForm ? "closed-form" : "general-taylor-" + std::to_string(order);
    }
};

namespace detail {
inline void check_guard(double tc, int order) {
    if (!(tc >= 0.0) || tc > 0.3) throw InputError("guard violation: t_c must lie in [0, 0.3] s");
    if (order < 1 || order > 4) throw InputError("guard violation: Taylor order must lie in [1, 4]");
}
}  // namespace detail

/// Closed-form fault-cleared angles and speeds, transcribed term for term:
/// generators δ = θ − d t²/(2m) K, loads δ = θ − (2 + t²)/(2d) K, ω = 1 + (d t²/(2m²) − t/m) K.
template <class T>
void fault_cleared_closed_t(const DynModel& dm, const FaultScenario& sc, const T* V, const T* th, double tc,
                            std::vector<T>& delta, std::vector<T>& omega) {
    std::size_t n = dm.n_bus();
    delta.assign(n, T(0.0));
    omega.assign(dm.n_speed(), T(1.0));
    for (std::size_t i = 0; i < n; ++i) {
        delta[i] = th[i];
        if (dm.kind[i] == DynModel::Fixed) continue;
        T K = k_factor<T>(sc, V, th, i);
        double m = dm.m[i], d = dm.d[i];
        if (dm.kind[i] == DynModel::Swing) {
            delta[i] = th[i] - (d * tc * tc / (2.0 * m)) * K;
            omega[static_cast<std::size_t>(dm.layout.speed_pos[i])] = 1.0 + (d * tc * tc / (2.0 * m * m) - tc / m) * K;
        } else {
            delta[i] = th[i] - ((2.0 + tc * tc) / (2.0 * d)) * K;
        }
    }
}

/// Taylor coefficients of the fault-on trajectory from (θ, ω = 1), order 0..N, evaluated at t_c.
/// Uses s_k = (1/k)Σ q u_q c_{k−q}, c_k = −(1/k)Σ q u_q s_{k−q} for sin/cos of angle differences.
template <class T>
void fault_on_taylor_t(const DynModel& dm, const AdmittanceMatrix& Yf, const T* V, const T* th, const T* p_fault,
                       int N, double tc, std::vector<T>& delta, std::vector<T>& omega) {
    using std::cos; using std::sin;
    std::size_t n = dm.n_bus(), ns = dm.n_speed();
    std::vector<std::vector<T>> dc(n, std::vector<T>(N + 1, T(0.0)));   // angle coefficients
    std::vector<std::vector<T>> wc(ns, std::vector<T>(N + 1, T(0.0)));  // speed-deviation coefficients
    const auto& edges = Yf.edges();
    std::size_t ne = edges.size();
    std::vector<std::vector<T>> sc(ne, std::vector<T>(N + 1, T(0.0))), cc = sc;
    for (std::size_t i = 0; i < n; ++i) dc[i][0] = th[i];

    for (int k = 0; k < N; ++k) {
        for (std::size_t e = 0; e < ne; ++e) {
            auto [i, j] = edges[e];
            if (k == 0) {
                T u0 = dc[i][0] - dc[j][0];
                sc[e][0] = sin(u0);
                cc[e][0] = cos(u0);
            } else {
                T s(0.0), c(0.0);
                for (int q = 1; q <= k; ++q) {
                    T uq = dc[i][q] - dc[j][q];
                    s += (double(q) * uq) * cc[e][k - q];
                    c -= (double(q) * uq) * sc[e][k - q];
                }
                sc[e][k] = s / double(k);
                cc[e][k] = c / double(k);
            }
        }
        // k-th coefficient of g_i(δ(t))
        std::vector<T> gk(n, T(0.0));
        if (k == 0)
            for (std::size_t i = 0; i < n; ++i) gk[i] = V[i] * V[i] * Yf.G(i, i);
        for (std::size_t e = 0; e < ne; ++e) {
            auto [i, j] = edges[e];
            T vv = V[i] * V[j];
            // θ_ji = −θ_ij: sin flips sign, cos unchanged
            gk[i] += vv * (Yf.G(i, j) * cc[e][k] + Yf.B(i, j) * sc[e][k]);
            gk[j] += vv * (Yf.G(j, i) * cc[e][k] - Yf.B(j, i) * sc[e][k]);
        }
        for (std::size_t i = 0; i < n; ++i) {
            T acc = (k == 0 ? p_fault[i] : T(0.0)) - gk[i];
            switch (dm.kind[i]) {
            case DynModel::Fixed:
                break;
            case DynModel::LoadBus:
                dc[i][k + 1] = acc / (dm.d[i] * double(k + 1));
                break;
            case DynModel::Swing: {
                std::size_t g = static_cast<std::size_t>(dm.layout.speed_pos[i]);
                dc[i][k + 1] = wc[g][k] / double(k + 1);
                wc[g][k + 1] = (acc - dm.d[i] * wc[g][k]) / (dm.m[i] * double(k + 1));
                break;
            }
            }
        }
    }
    delta.assign(n, T(0.0));
    omega.assign(ns, T(1.0));
    for (std::size_t i = 0; i < n; ++i) {
        T v = dc[i][N];
        for (int k = N - 1; k >= 0; --k) v = v * tc + dc[i][k];
        delta[i] = v;
    }
    for (std::size_t g = 0; g < ns; ++g) {
        T v = wc[g][N];
        for (int k = N - 1; k >= 0; --k) v = v * tc + wc[g][k];
        omega[g] = v + 1.0;
    }
}

namespace detail {
inline FaultClearedState finish(const DynModel& dm, const SteadyState& post, const std::vector<double>& delta,
                                const std::vector<double>& omega, FaultMethod method, int order, double tc) {
    FaultClearedState fc;
    fc.delta = Eigen::Map<const Eigen::VectorXd>(delta.data(), static_cast<Eigen::Index>(delta.size()));
    fc.omega = Eigen::Map<const Eigen::VectorXd>(omega.data(), static_cast<Eigen::Index>(omega.size()));
    fc.x = dm.layout.reduce(fc.delta, fc.omega, post.theta);
    fc.method = method;
    fc.order = order;
    fc.t_clear = tc;
    return fc;
}
}  // namespace detail

inline FaultClearedState fault_cleared_closed(const PowerCase& c, const SteadyState& pre, const SteadyState& post,
                                              const FaultScenario& sc, double tc) {
    detail::check_guard(tc, 3);
    DynModel dm(c);
    std::vector<double> delta, omega;
    fault_cleared_closed_t<double>(dm, sc, pre.V.data(), pre.theta.data(), tc, delta, omega);
    return detail::finish(dm, post, delta, omega, FaultMethod::ClosedForm, 3, tc);
}

inline FaultClearedState fault_cleared_closed(const PowerCase& c, const SteadyState& pre, const SteadyState& post,
                                              const FaultScenario& sc) {
    return fault_cleared_closed(c, pre, post, sc, sc.t_clear());
}

/// General N-th order series of the fault-on dynamics; `p` are the pre-fault net injections.
inline FaultClearedState fault_cleared_taylor(const PowerCase& c, const SteadyState& pre, const SteadyState& post,
                                              const FaultScenario& sc, const Eigen::VectorXd& p, int N, double tc) {
    detail::check_guard(tc, N);
    DynModel dm(c);
    std::vector<double> pv(p.data(), p.data() + p.size());
    std::vector<double> pf = fault_on_injections(sc, pv);
    std::vector<double> delta, omega;
    fault_on_taylor_t<double>(dm, sc.Y_fault, pre.V.data(), pre.theta.data(), pf.data(), N, tc, delta, omega);
    return detail::finish(dm, post, delta, omega, FaultMethod::GeneralTaylor, N, tc);
}

inline FaultClearedState fault_cleared_taylor(const PowerCase& c, const SteadyState& pre, const SteadyState& post,
                                              const FaultScenario& sc, const Eigen::VectorXd& p, int N) {
    return fault_cleared_taylor(c, pre, post, sc, p, N, sc.t_clear());
}

/// Perturbation of the accelerating power at bus i relative to the pre-fault conditions.
struct DisturbanceTerm {
    double network = 0.0;    ///< V_iΣ_jV_j(ΔB sin + ΔG cos)
    double injection = 0.0;  ///< −p^G_i + p^L_i on overridden buses
    /// Change of p_i − g_i at the pre-fault angles.
    double accelerating() const { return injection - network; }
};

/// Disturbance at time t for the pre-fault reference (ΔG = G″ − G) while the fault is on,
/// and the post-fault topology change (Y′ − Y) after clearing.
inline DisturbanceTerm disturbance_term(const PowerCase& c, const SteadyState& pre, const FaultScenario& sc,
                                        std::size_t i, const Eigen::VectorXd& p_gen, double t) {
    DisturbanceTerm d;
    if (t < 0.0) return d;
    bool on = t < sc.t_clear();
    const Eigen::MatrixXd G = on ? sc.dG_pre : Eigen::MatrixXd(sc.Y_post.matrix().real() - sc.Y.matrix().real());
    const Eigen::MatrixXd B = on ? sc.dB_pre : Eigen::MatrixXd(sc.Y_post.matrix().imag() - sc.Y.matrix().imag());
    double s = 0.0;
    for (std::size_t j = 0; j < c.n_bus(); ++j) {
        double th = pre.theta[i] - pre.theta[j];
        s += pre.V[j] * (B(i, j) * std::sin(th) + G(i, j) * std::cos(th));
    }
    d.network = pre.V[i] * s;
    if (on && sc.overridden[i]) {
        int g = c.generator_at(i);
        d.injection = -(g < 0 ? 0.0 : p_gen[g]) + c.load_p(i);
    }
    return d;
}

}  // namespace stabopt
