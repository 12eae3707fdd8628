#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "stabopt/errors.hpp"
#include "stabopt/gridcase.hpp"
#include "stabopt/powerflow.hpp"

namespace stabopt {

/// Index map between bus quantities and the reduced Lur'e state
/// x = [δ_a − δ_r − (θ′_a − θ′_r) for non-reference a (generators first, then loads);
///      ω_g − 1 for generators with a swing state].
struct StateLayout {
    std::size_t n_bus = 0;
    std::size_t ref = 0;
    std::vector<std::size_t> angle_buses;
    std::vector<std::size_t> speed_buses;
    std::vector<int> angle_pos;  ///< bus -> position in angle block, -1 for the reference
    std::vector<int> speed_pos;  ///< bus -> position in speed block, -1 without swing state

    StateLayout() = default;
    explicit StateLayout(const PowerCase& c) : n_bus(c.n_bus()), ref(c.reference_bus()) {
        angle_pos.assign(n_bus, -1);
        speed_pos.assign(n_bus, -1);
        for (int pass = 0; pass < 2; ++pass)
            for (std::size_t i = 0; i < n_bus; ++i) {
                bool gen = c.buses[i].kind == BusKind::Generator;
                if (i == ref || gen != (pass == 0)) continue;
                angle_pos[i] = static_cast<int>(angle_buses.size());
                angle_buses.push_back(i);
            }
        for (std::size_t i = 0; i < n_bus; ++i)
            if (c.has_swing_state(i)) {
                speed_pos[i] = static_cast<int>(speed_buses.size());
                speed_buses.push_back(i);
            }
    }

    std::size_t n_angle() const { return angle_buses.size(); }
    std::size_t n_speed() const { return speed_buses.size(); }
    std::size_t dim() const { return n_angle() + n_speed(); }

    /// Reduced state from absolute angles δ (per bus) and speeds ω (per swing bus).
    template <class T>
    std::vector<T> reduce(const T* delta, const T* omega, const T* theta_eq) const {
        std::vector<T> x(dim());
        for (std::size_t a = 0; a < n_angle(); ++a) {
            std::size_t i = angle_buses[a];
            x[a] = (delta[i] - delta[ref]) - (theta_eq[i] - theta_eq[ref]);
        }
        for (std::size_t s = 0; s < n_speed(); ++s) x[n_angle() + s] = omega[s] - 1.0;
        return x;
    }

    Eigen::VectorXd reduce(const Eigen::VectorXd& delta, const Eigen::VectorXd& omega,
                           const Eigen::VectorXd& theta_eq) const {
        auto v = reduce<double>(delta.data(), omega.data(), theta_eq.data());
        return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    }

    /// Absolute angles with the reference pinned at θ′_ref.
    Eigen::VectorXd lift_angles(const Eigen::VectorXd& x, const Eigen::VectorXd& theta_eq) const {
        Eigen::VectorXd d = theta_eq;
        for (std::size_t a = 0; a < n_angle(); ++a) d[angle_buses[a]] += x[a];
        return d;
    }
    Eigen::VectorXd lift_speeds(const Eigen::VectorXd& x) const {
        return (x.tail(n_speed()).array() + 1.0).matrix();
    }
};

/// Nonlinearity k acting on the bus pair (from, to).
struct LureEdge {
    std::size_t from = 0, to = 0;
    double kappa = 0.0;     ///< V′_i V′_j |Y′_ij|
    double alpha = 0.0;     ///< α_ij
    double theta_eq = 0.0;  ///< θ′_ij
    double y_mag = 0.0;     ///< |Y′_ij|
};

/// ẋ = Ax + Bφ(Cx) around the post-fault equilibrium.
struct LureSystem {
    StateLayout layout;
    Eigen::MatrixXd A, B, C;
    Eigen::MatrixXd E;  ///< signed incidence, rows = edges, columns = buses
    std::vector<LureEdge> edges;
    Eigen::VectorXd delta_l;  ///< polytope half-width per output
    Eigen::VectorXd M1, D1;   ///< generator inertia and damping (swing buses)
    Eigen::VectorXd D_load;   ///< load damping (load buses in angle order)
    SteadyState post_eq;

    std::size_t dim() const { return static_cast<std::size_t>(A.rows()); }
    std::size_t n_edges() const { return edges.size(); }
};

struct SectorBounds {
    Eigen::VectorXd gamma;
    Eigen::VectorXd beta;
};

enum class PolytopeKind { AlphaShifted, Symmetric };

/// Lur'e form of the post-fault swing dynamics. Requires lossless transfer admittances.
inline LureSystem build_lure(const PowerCase& c, const SteadyState& post_eq, const AdmittanceMatrix& Yp) {
    std::size_t n = c.n_bus();
    if (static_cast<std::size_t>(post_eq.V.size()) != n || static_cast<std::size_t>(post_eq.theta.size()) != n ||
        Yp.size() != n)
        throw InputError("dimension mismatch between case, equilibrium and admittance");
    LureSystem s;
    s.layout = StateLayout(c);
    s.post_eq = post_eq;
    const StateLayout& L = s.layout;
    std::size_t na = L.n_angle(), ns = L.n_speed(), dim = L.dim();

    for (std::size_t i : L.speed_buses)
        if (!(c.inertia(i) > 0.0) || !(c.damping(i) > 0.0))
            throw InputError("singular M: nonpositive inertia or damping at bus " + std::to_string(c.buses[i].id));
    for (std::size_t i : L.angle_buses)
        if (c.buses[i].kind == BusKind::Load && !(c.damping(i) > 0.0))
            throw InputError("singular M: nonpositive damping at load bus " + std::to_string(c.buses[i].id));

    for (auto [i, j] : Yp.edges()) {
        if (std::abs(Yp.G(i, j)) > 1e-12 * Yp.magnitude(i, j))
            throw InputError("transfer conductance between buses " + std::to_string(c.buses[i].id) + " and " +
                             std::to_string(c.buses[j].id) + " is not supported by the Lur'e form");
        LureEdge e;
        e.from = i;
        e.to = j;
        e.y_mag = Yp.magnitude(i, j);
        e.kappa = post_eq.V[i] * post_eq.V[j] * e.y_mag;
        e.alpha = Yp.alpha(i, j);
        e.theta_eq = post_eq.theta[i] - post_eq.theta[j];
        if (!(e.kappa > 0.0)) throw InputError("nonpositive gain on an in-service branch");
        s.edges.push_back(e);
    }
    std::size_t m = s.edges.size();
    s.E = Eigen::MatrixXd::Zero(m, n);
    for (std::size_t k = 0; k < m; ++k) {
        s.E(k, s.edges[k].from) = 1.0;
        s.E(k, s.edges[k].to) = -1.0;
    }
    s.delta_l = Eigen::VectorXd::Constant(m, kPi);

    // absolute angle rates: δ̇_i = sel_i·(ω−1) + q_i·φ
    auto angle_rate = [&](std::size_t i, Eigen::RowVectorXd& sel, Eigen::RowVectorXd& q) {
        sel = Eigen::RowVectorXd::Zero(ns);
        q = Eigen::RowVectorXd::Zero(m);
        if (L.speed_pos[i] >= 0) sel[L.speed_pos[i]] = 1.0;
        else if (c.buses[i].kind == BusKind::Load) q = -s.E.col(i).transpose() / c.damping(i);
    };

    s.A = Eigen::MatrixXd::Zero(dim, dim);
    s.B = Eigen::MatrixXd::Zero(dim, m);
    s.C = Eigen::MatrixXd::Zero(m, dim);
    Eigen::RowVectorXd sel_r, q_r, sel_i, q_i;
    angle_rate(L.ref, sel_r, q_r);
    for (std::size_t a = 0; a < na; ++a) {
        angle_rate(L.angle_buses[a], sel_i, q_i);
        s.A.block(a, na, 1, ns) = sel_i - sel_r;
        s.B.row(a) = q_i - q_r;
        s.C.col(a) = s.E.col(L.angle_buses[a]);
    }
    s.M1.resize(ns);
    s.D1.resize(ns);
    for (std::size_t g = 0; g < ns; ++g) {
        std::size_t i = L.speed_buses[g];
        s.M1[g] = c.inertia(i);
        s.D1[g] = c.damping(i);
        s.A(na + g, na + g) = -s.D1[g] / s.M1[g];
        s.B.row(na + g) = -s.E.col(i).transpose() / s.M1[g];
    }
    std::vector<double> dl;
    for (std::size_t i : L.angle_buses)
        if (c.buses[i].kind == BusKind::Load) dl.push_back(c.damping(i));
    s.D_load = Eigen::Map<Eigen::VectorXd>(dl.data(), static_cast<Eigen::Index>(dl.size()));
    return s;
}

/// φ_k(y) = κ_k (sin(y + θ′_k + α_k) − sin(θ′_k + α_k)).
template <class T>
T phi_eval(const LureEdge& e, const T& y) {
    using std::sin;
    return e.kappa * (sin(y + (e.theta_eq + e.alpha)) - std::sin(e.theta_eq + e.alpha));
}

inline double phi_eval(const LureSystem& s, std::size_t k, double y) { return phi_eval(s.edges.at(k), y); }

inline Eigen::VectorXd phi_vector(const LureSystem& s, const Eigen::VectorXd& y) {
    Eigen::VectorXd f(y.size());
    for (Eigen::Index k = 0; k < y.size(); ++k) f[k] = phi_eval(s.edges[k], y[k]);
    return f;
}

/// Ax + Bφ(Cx).
inline Eigen::VectorXd lure_rhs(const LureSystem& s, const Eigen::VectorXd& x) {
    return s.A * x + s.B * phi_vector(s, s.C * x);
}

/// β_k = V̄²|Y′_ij|, γ_k = ξ over the edges of Y′.
inline SectorBounds design_sectors(const PowerCase& c, const AdmittanceMatrix& Yp, double xi = 1e-3) {
    const auto& ed = Yp.edges();
    SectorBounds sb{Eigen::VectorXd::Constant(static_cast<Eigen::Index>(ed.size()), xi),
                    Eigen::VectorXd(static_cast<Eigen::Index>(ed.size()))};
    double vb = c.limits.v_max;
    for (std::size_t k = 0; k < ed.size(); ++k) {
        sb.beta[k] = vb * vb * Yp.magnitude(ed[k].first, ed[k].second);
        if (!(xi > 0.0) || !(xi < sb.beta[k])) throw InputError("sector requires 0 < xi < beta");
    }
    return sb;
}

/// Per-output [y̲_k, ȳ_k] in deviation coordinates.
inline Eigen::MatrixX2d polytope_bounds(const LureSystem& s, PolytopeKind kind = PolytopeKind::AlphaShifted) {
    Eigen::MatrixX2d b(static_cast<Eigen::Index>(s.n_edges()), 2);
    for (std::size_t k = 0; k < s.n_edges(); ++k) {
        double shift = kind == PolytopeKind::AlphaShifted ? 2.0 * (s.edges[k].theta_eq + s.edges[k].alpha) : 0.0;
        b(k, 0) = -s.delta_l[k] - shift;
        b(k, 1) = s.delta_l[k] - shift;
    }
    return b;
}

inline bool in_polytope(const Eigen::MatrixX2d& bounds, const Eigen::VectorXd& y, double slack = 0.0) {
    for (Eigen::Index k = 0; k < y.size(); ++k)
        if (y[k] < bounds(k, 0) - slack || y[k] > bounds(k, 1) + slack) return false;
    return true;
}

inline json to_json(const LureSystem& s) {
    auto mat = [](const Eigen::MatrixXd& m) {
        json rows = json::array();
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            json r = json::array();
            for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
            rows.push_back(r);
        }
        return rows;
    };
    json edges = json::array();
    for (const auto& e : s.edges)
        edges.push_back({{"from", e.from}, {"to", e.to}, {"kappa", e.kappa}, {"alpha", e.alpha},
                         {"theta_eq", e.theta_eq}, {"y_mag", e.y_mag}});
    return {{"A", mat(s.A)}, {"B", mat(s.B)}, {"C", mat(s.C)}, {"edges", edges}};
}

}  // namespace stabopt
