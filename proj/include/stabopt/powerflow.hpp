#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "stabopt/errors.hpp"
#include "stabopt/gridcase.hpp"

namespace stabopt {

struct SteadyState {
    Eigen::VectorXd V;
    Eigen::VectorXd theta;
};

/// Net per-bus injections p = p^G − p^L, q = q^G − q^L.
struct Injections {
    Eigen::VectorXd p;
    Eigen::VectorXd q;
};

/// g_i^p(V, θ, Y) for any scalar type (double or dual numbers).
template <class T>
T injection_p(const AdmittanceMatrix& Y, const T* V, const T* th, std::size_t i) {
    using std::cos; using std::sin;
    T s = V[i] * Y.G(i, i);
    for (std::size_t j : Y.neighbors(i)) {
        T d = th[i] - th[j];
        s += V[j] * (Y.G(i, j) * cos(d) + Y.B(i, j) * sin(d));
    }
    return V[i] * s;
}

/// g_i^q(V, θ, Y).
template <class T>
T injection_q(const AdmittanceMatrix& Y, const T* V, const T* th, std::size_t i) {
    using std::cos; using std::sin;
    T s = -(V[i] * Y.B(i, i));
    for (std::size_t j : Y.neighbors(i)) {
        T d = th[i] - th[j];
        s += V[j] * (Y.G(i, j) * sin(d) - Y.B(i, j) * cos(d));
    }
    return V[i] * s;
}

inline double injection_p(const SteadyState& s, const AdmittanceMatrix& Y, std::size_t i) {
    if (i >= Y.size()) throw InputError("bus index out of range");
    return injection_p<double>(Y, s.V.data(), s.theta.data(), i);
}

inline double injection_q(const SteadyState& s, const AdmittanceMatrix& Y, std::size_t i) {
    if (i >= Y.size()) throw InputError("bus index out of range");
    return injection_q<double>(Y, s.V.data(), s.theta.data(), i);
}

/// Scheduled injections for a generator dispatch (one entry per generator).
inline Injections scheduled_injections(const PowerCase& c, const Eigen::VectorXd& p_gen,
                                       const Eigen::VectorXd* q_gen = nullptr) {
    std::size_t n = c.n_bus();
    Injections inj{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
    for (std::size_t i = 0; i < n; ++i) {
        inj.p[i] = -c.load_p(i);
        inj.q[i] = -c.load_q(i);
    }
    for (std::size_t g = 0; g < c.generators.size(); ++g) {
        inj.p[c.generators[g].bus] += p_gen[g];
        if (q_gen) inj.q[c.generators[g].bus] += (*q_gen)[g];
    }
    return inj;
}

inline Eigen::VectorXd set_point_dispatch(const PowerCase& c) {
    Eigen::VectorXd p(c.generators.size());
    for (std::size_t g = 0; g < c.generators.size(); ++g) p[g] = c.generators[g].p_set;
    return p;
}

/// Unknown layout of the power-flow equations: θ at non-slack buses, V at load (PQ) buses.
struct PfLayout {
    std::size_t slack = 0;
    std::vector<std::size_t> angle_buses;
    std::vector<std::size_t> pq_buses;

    explicit PfLayout(const PowerCase& c) : slack(c.reference_bus()) {
        for (std::size_t i = 0; i < c.n_bus(); ++i) {
            if (i != slack) angle_buses.push_back(i);
            if (c.buses[i].kind == BusKind::Load) pq_buses.push_back(i);
        }
    }
    std::size_t size() const { return angle_buses.size() + pq_buses.size(); }
};

/// Active residuals at non-slack buses followed by reactive residuals at load buses.
inline Eigen::VectorXd pf_residual(const SteadyState& s, const PowerCase& c, const Injections& inj,
                                   const AdmittanceMatrix& Y) {
    PfLayout lay(c);
    Eigen::VectorXd r(lay.size());
    std::size_t k = 0;
    for (std::size_t i : lay.angle_buses) r[k++] = inj.p[i] - injection_p(s, Y, i);
    for (std::size_t i : lay.pq_buses) r[k++] = inj.q[i] - injection_q(s, Y, i);
    return r;
}

/// ∂residual/∂(θ_non-slack, V_PQ).
inline Eigen::MatrixXd pf_jacobian(const SteadyState& s, const PowerCase& c, const AdmittanceMatrix& Y) {
    PfLayout lay(c);
    std::size_t n = c.n_bus();
    // dP/dθ, dP/dV, dQ/dθ, dQ/dV over all buses
    Eigen::MatrixXd pt = Eigen::MatrixXd::Zero(n, n), pv = pt, qt = pt, qv = pt;
    for (std::size_t i = 0; i < n; ++i) {
        double gp = injection_p(s, Y, i), gq = injection_q(s, Y, i);
        double vi = s.V[i];
        pt(i, i) = -gq - vi * vi * Y.B(i, i);
        qt(i, i) = gp - vi * vi * Y.G(i, i);
        pv(i, i) = gp / vi + vi * Y.G(i, i);
        qv(i, i) = gq / vi - vi * Y.B(i, i);
        for (std::size_t j : Y.neighbors(i)) {
            double d = s.theta[i] - s.theta[j];
            double cs = std::cos(d), sn = std::sin(d);
            double G = Y.G(i, j), B = Y.B(i, j);
            pt(i, j) = vi * s.V[j] * (G * sn - B * cs);
            qt(i, j) = -vi * s.V[j] * (G * cs + B * sn);
            pv(i, j) = vi * (G * cs + B * sn);
            qv(i, j) = vi * (G * sn - B * cs);
        }
    }
    std::size_t na = lay.angle_buses.size(), nq = lay.pq_buses.size();
    Eigen::MatrixXd J(na + nq, na + nq);
    for (std::size_t r = 0; r < na; ++r) {
        std::size_t i = lay.angle_buses[r];
        for (std::size_t k = 0; k < na; ++k) J(r, k) = -pt(i, lay.angle_buses[k]);
        for (std::size_t k = 0; k < nq; ++k) J(r, na + k) = -pv(i, lay.pq_buses[k]);
    }
    for (std::size_t r = 0; r < nq; ++r) {
        std::size_t i = lay.pq_buses[r];
        for (std::size_t k = 0; k < na; ++k) J(na + r, k) = -qt(i, lay.angle_buses[k]);
        for (std::size_t k = 0; k < nq; ++k) J(na + r, na + k) = -qv(i, lay.pq_buses[k]);
    }
    return J;
}

struct PfOptions {
    double tol = 1e-8;
    int max_iter = 50;
    int max_halvings = 8;
};

struct PfStats {
    int iterations = 0;
    double max_residual = 0.0;
};

/// Flat-start state: generator buses at their voltage set points, loads at 1.
inline SteadyState flat_state(const PowerCase& c) {
    SteadyState s{Eigen::VectorXd::Ones(c.n_bus()), Eigen::VectorXd::Zero(c.n_bus())};
    for (const auto& g : c.generators) s.V[g.bus] = g.v_set;
    return s;
}

/// Damped Newton from `start` (flat start by default).
inline SteadyState solve_pf(const PowerCase& c, const Injections& inj, const AdmittanceMatrix& Y,
                            const PfOptions& opt = {}, PfStats* stats = nullptr,
                            const SteadyState* start = nullptr) {
    PfLayout lay(c);
    SteadyState s = start ? *start : flat_state(c);
    auto apply = [&](SteadyState& t, const Eigen::VectorXd& dx, double a) {
        std::size_t na = lay.angle_buses.size();
        for (std::size_t k = 0; k < na; ++k) t.theta[lay.angle_buses[k]] += a * dx[k];
        for (std::size_t k = 0; k < lay.pq_buses.size(); ++k) t.V[lay.pq_buses[k]] += a * dx[na + k];
    };
    Eigen::VectorXd r = pf_residual(s, c, inj, Y);
    double norm = r.size() ? r.cwiseAbs().maxCoeff() : 0.0;
    int it = 0;
    while (norm > opt.tol) {
        if (it >= opt.max_iter)
            throw NonConvergence("power flow did not converge in " + std::to_string(opt.max_iter) + " iterations",
                                 it, norm);
        Eigen::MatrixXd J = pf_jacobian(s, c, Y);
        Eigen::FullPivLU<Eigen::MatrixXd> lu(J);
        if (!lu.isInvertible()) throw SingularJacobian("power-flow Jacobian is singular");
        Eigen::VectorXd dx = lu.solve(-r);
        double a = 1.0;
        SteadyState trial = s;
        for (int h = 0;; ++h) {
            trial = s;
            apply(trial, dx, a);
            Eigen::VectorXd rt = pf_residual(trial, c, inj, Y);
            double nt = rt.cwiseAbs().maxCoeff();
            if (nt < norm || h >= opt.max_halvings) {
                r = rt;
                norm = nt;
                break;
            }
            a *= 0.5;
        }
        s = trial;
        ++it;
    }
    if (stats) {
        stats->iterations = it;
        stats->max_residual = norm;
    }
    return s;
}

/// S_ij = |Y_ij|² V_i² V_j² for the bus pair of a branch.
inline double line_flow_sq(const SteadyState& s, const AdmittanceMatrix& Y, const Branch& br) {
    double m = Y.magnitude(br.from, br.to);
    double vv = s.V[br.from] * s.V[br.to];
    return m * m * vv * vv;
}

}  // namespace stabopt
