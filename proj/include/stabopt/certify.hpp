#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <iomanip>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stabopt/errors.hpp"
#include "stabopt/lure.hpp"
#include "stabopt/sdp.hpp"

namespace stabopt {

struct QuadraticCertificate {
    Eigen::MatrixXd P;
    Eigen::VectorXd tau;
    double lambda_min = 0.0;
    double lmi_margin = 0.0;
    Eigen::VectorXd gamma, beta;
    double mu = 1e-6;
    double tol_lmi = 1e-8;
    std::string system_hash;
};

struct InvariantLevel {
    double w_min = 0.0;
    std::size_t argmin = 0;
    Eigen::VectorXd branch_values;         ///< per-output min over both hyperplanes
    Eigen::VectorXd branch_levels;         ///< y on the binding hyperplane
    std::vector<Eigen::VectorXd> minimizers;
};

// ---------------------------------------------------------------------------
// hashing

namespace detail {

inline std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h = 1469598103934665603ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t hash_matrix(const Eigen::MatrixXd& m, std::uint64_t h) {
    std::int64_t dims[2] = {m.rows(), m.cols()};
    h = fnv1a(dims, sizeof(dims), h);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            double v = m(i, j);
            if (v == 0.0) v = 0.0;  // fold -0
            h = fnv1a(&v, sizeof(v), h);
        }
    return h;
}

inline std::string hex(std::uint64_t h) {
    std::ostringstream ss;
    ss << std::hex << std::setw(16) << std::setfill('0') << h;
    return ss.str();
}

}  // namespace detail

/// Identity of the certified system: A, B, C and the sectors.
inline std::string system_hash(const LureSystem& s, const SectorBounds& sb) {
    std::uint64_t h = 1469598103934665603ull;
    h = detail::hash_matrix(s.A, h);
    h = detail::hash_matrix(s.B, h);
    h = detail::hash_matrix(s.C, h);
    h = detail::hash_matrix(sb.gamma, h);
    h = detail::hash_matrix(sb.beta, h);
    return detail::hex(h);
}

// ---------------------------------------------------------------------------
// LMI

struct LmiOptions {
    double mu = 1e-6;
    double tol_lmi = 1e-8;
};

inline QuadraticCertificate solve_lmi(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Eigen::MatrixXd& C,
                                      const SectorBounds& sb, const LmiOptions& opt = {}) {
    for (Eigen::Index k = 0; k < sb.gamma.size(); ++k)
        if (!(sb.gamma[k] < sb.beta[k])) throw InputError("sector bounds require gamma < beta");
    sdp::Options so;
    so.mu = opt.mu;
    so.tol_lmi = opt.tol_lmi;
    sdp::Result r = sdp::solve(A, B, C, sb.gamma, sb.beta, so);
    QuadraticCertificate c;
    c.P = r.P;
    c.tau = r.tau;
    c.gamma = sb.gamma;
    c.beta = sb.beta;
    c.mu = opt.mu;
    c.tol_lmi = opt.tol_lmi;
    c.lmi_margin = sdp::max_eig(sdp::lmi_matrix(A, B, C, sb.gamma, sb.beta, c.P, c.tau));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c.P, Eigen::EigenvaluesOnly);
    c.lambda_min = es.eigenvalues().minCoeff();
    return c;
}

inline QuadraticCertificate solve_lmi(const LureSystem& s, const SectorBounds& sb, const LmiOptions& opt = {}) {
    QuadraticCertificate c = solve_lmi(s.A, s.B, s.C, sb, opt);
    c.system_hash = system_hash(s, sb);
    return c;
}

inline double lmi_margin(const LureSystem& s, const QuadraticCertificate& c) {
    return sdp::max_eig(sdp::lmi_matrix(s.A, s.B, s.C, c.gamma, c.beta, c.P, c.tau));
}

// ---------------------------------------------------------------------------
// Lyapunov function

inline double w_value(const QuadraticCertificate& c, const Eigen::VectorXd& x) { return x.dot(c.P * x); }

/// 2xᵀP(Ax + Bφ(Cx)).
inline double wdot_value(const QuadraticCertificate& c, const LureSystem& s, const Eigen::VectorXd& x) {
    return 2.0 * x.dot(c.P * lure_rhs(s, x));
}

inline bool sector_holds(const SectorBounds& sb, const Eigen::VectorXd& y, const Eigen::VectorXd& phi) {
    for (Eigen::Index k = 0; k < y.size(); ++k)
        if (!((phi[k] - sb.gamma[k] * y[k]) * (phi[k] - sb.beta[k] * y[k]) < 0.0)) return false;
    return true;
}

/// Hit-and-run sampler, uniform over {x : lo ≤ Cx ≤ hi} for the angle block.
class PolytopeSampler {
public:
    PolytopeSampler(const Eigen::MatrixXd& C_angle, const Eigen::MatrixX2d& bounds, std::uint64_t seed,
                    int thinning = 5)
        : C_(C_angle), b_(bounds), rng_(seed), thin_(thinning), x_(Eigen::VectorXd::Zero(C_angle.cols())) {}

    const Eigen::VectorXd& next() {
        std::normal_distribution<double> nd(0.0, 1.0);
        std::uniform_real_distribution<double> ud(0.0, 1.0);
        for (int s = 0; s < thin_; ++s) {
            Eigen::VectorXd d(x_.size());
            for (Eigen::Index i = 0; i < d.size(); ++i) d[i] = nd(rng_);
            Eigen::VectorXd y = C_ * x_, cd = C_ * d;
            double lo = -INFINITY, hi = INFINITY;
            for (Eigen::Index k = 0; k < y.size(); ++k) {
                if (std::abs(cd[k]) < 1e-300) continue;
                double t1 = (b_(k, 0) - y[k]) / cd[k], t2 = (b_(k, 1) - y[k]) / cd[k];
                lo = std::max(lo, std::min(t1, t2));
                hi = std::min(hi, std::max(t1, t2));
            }
            if (!(hi > lo) || !std::isfinite(lo) || !std::isfinite(hi)) continue;
            x_ += (lo + (hi - lo) * ud(rng_)) * d;
        }
        return x_;
    }

    std::mt19937_64& rng() { return rng_; }

private:
    Eigen::MatrixXd C_;
    Eigen::MatrixX2d b_;
    std::mt19937_64 rng_;
    int thin_;
    Eigen::VectorXd x_;
};

struct WdotReport {
    std::size_t samples = 0;
    std::size_t nonnegative = 0;
    std::size_t sector_contacts = 0;  ///< draws rejected for touching or leaving the sector
    double worst = -INFINITY;
    Eigen::VectorXd worst_x;
};

/// Samples states in 𝒫∖{0} (speeds uniform in ±omega_box) that satisfy the sector condition strictly.
inline WdotReport check_wdot_negative(const QuadraticCertificate& c, const LureSystem& s, const SectorBounds& sb,
                                      std::size_t n_samples, std::uint64_t seed = 42, double omega_box = 1.0) {
    std::size_t na = s.layout.n_angle(), ns = s.layout.n_speed();
    Eigen::MatrixXd Ca = s.C.leftCols(static_cast<Eigen::Index>(na));
    PolytopeSampler sampler(Ca, polytope_bounds(s), seed);
    std::uniform_real_distribution<double> ud(-omega_box, omega_box);
    WdotReport rep;
    Eigen::VectorXd x(static_cast<Eigen::Index>(na + ns));
    std::size_t draws = 0;
    while (rep.samples < n_samples && draws < 100 * n_samples + 1000) {
        ++draws;
        x.head(static_cast<Eigen::Index>(na)) = sampler.next();
        for (std::size_t g = 0; g < ns; ++g) x[static_cast<Eigen::Index>(na + g)] = ud(sampler.rng());
        if (x.isZero(0.0)) continue;
        Eigen::VectorXd y = s.C * x;
        if (!sector_holds(sb, y, phi_vector(s, y))) {
            ++rep.sector_contacts;
            continue;
        }
        double wd = wdot_value(c, s, x);
        ++rep.samples;
        if (wd >= 0.0) ++rep.nonnegative;
        if (wd > rep.worst) {
            rep.worst = wd;
            rep.worst_x = x;
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// invariant level

/// Smallest W on the hyperplanes C_iᵀx = lo_i, hi_i through x̂ = y P⁻¹C_i / (C_iᵀP⁻¹C_i).
inline InvariantLevel w_min_closed_form(const Eigen::MatrixXd& P, const Eigen::MatrixXd& C,
                                        const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
    Eigen::LLT<Eigen::MatrixXd> llt(P);
    if (llt.info() != Eigen::Success) throw InputError("P is not positive definite");
    InvariantLevel lv;
    Eigen::Index m = C.rows();
    lv.branch_values.resize(m);
    lv.branch_levels.resize(m);
    lv.w_min = INFINITY;
    for (Eigen::Index i = 0; i < m; ++i) {
        Eigen::VectorXd pc = llt.solve(C.row(i).transpose());
        double q = C.row(i).dot(pc);
        double y = lo[i] * lo[i] <= hi[i] * hi[i] ? lo[i] : hi[i];
        lv.branch_values[i] = y * y / q;
        lv.branch_levels[i] = y;
        lv.minimizers.push_back(y * pc / q);
        if (lv.branch_values[i] < lv.w_min) {
            lv.w_min = lv.branch_values[i];
            lv.argmin = static_cast<std::size_t>(i);
        }
    }
    return lv;
}

/// x*-coordinate form: hyperplanes C_iᵀx = X_i ± Δl_i.
inline InvariantLevel w_min_closed_form(const QuadraticCertificate& c, const Eigen::MatrixXd& C,
                                        const Eigen::VectorXd& X, const Eigen::VectorXd& delta_l) {
    return w_min_closed_form(c.P, C, X - delta_l, X + delta_l);
}

inline InvariantLevel w_min_closed_form(const QuadraticCertificate& c, const LureSystem& s,
                                        PolytopeKind kind = PolytopeKind::AlphaShifted) {
    Eigen::MatrixX2d b = polytope_bounds(s, kind);
    return w_min_closed_form(c.P, s.C, b.col(0), b.col(1));
}

/// Independent oracle: KKT solve of min xᵀPx s.t. C_iᵀx = y for every hyperplane.
inline double w_min_bruteforce(const Eigen::MatrixXd& P, const Eigen::MatrixXd& C, const Eigen::VectorXd& lo,
                               const Eigen::VectorXd& hi) {
    Eigen::Index n = P.rows();
    double best = INFINITY;
    for (Eigen::Index i = 0; i < C.rows(); ++i) {
        Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + 1, n + 1);
        K.topLeftCorner(n, n) = 2.0 * P;
        K.block(0, n, n, 1) = C.row(i).transpose();
        K.block(n, 0, 1, n) = C.row(i);
        Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
        if (!lu.isInvertible()) throw SingularJacobian("singular KKT system for hyperplane " + std::to_string(i));
        for (double y : {lo[i], hi[i]}) {
            Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + 1);
            rhs[n] = y;
            Eigen::VectorXd x = lu.solve(rhs).head(n);
            best = std::min(best, x.dot(P * x));
        }
    }
    return best;
}

inline double w_min_bruteforce(const QuadraticCertificate& c, const LureSystem& s,
                               PolytopeKind kind = PolytopeKind::AlphaShifted) {
    Eigen::MatrixX2d b = polytope_bounds(s, kind);
    return w_min_bruteforce(c.P, s.C, b.col(0), b.col(1));
}

inline bool invariant_set_contains(const QuadraticCertificate& c, const InvariantLevel& lv, const LureSystem& s,
                                   const Eigen::VectorXd& x) {
    return in_polytope(polytope_bounds(s), s.C * x) && w_value(c, x) <= lv.w_min;
}

// ---------------------------------------------------------------------------
// cache file

namespace detail {

inline json matrix_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json r = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
        rows.push_back(r);
    }
    return rows;
}

inline Eigen::MatrixXd json_matrix(const json& j) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), j.empty() ? 0 : static_cast<Eigen::Index>(j[0].size()));
    for (std::size_t i = 0; i < j.size(); ++i)
        for (std::size_t k = 0; k < j[i].size(); ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = j[i][k].get<double>();
    return m;
}

inline json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Eigen::VectorXd json_vector(const json& j) {
    auto v = j.get<std::vector<double>>();
    return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace detail

inline json certificate_to_json(const QuadraticCertificate& c) {
    json body = {{"P", detail::matrix_json(c.P)},
                 {"tau", detail::vector_json(c.tau)},
                 {"gamma", detail::vector_json(c.gamma)},
                 {"beta", detail::vector_json(c.beta)},
                 {"lmi_margin", c.lmi_margin},
                 {"lambda_min", c.lambda_min},
                 {"mu", c.mu},
                 {"tol_lmi", c.tol_lmi},
                 {"system_hash", c.system_hash}};
    std::string dump = body.dump();
    body["content_hash"] = detail::hex(detail::fnv1a(dump.data(), dump.size()));
    return body;
}

/// Reads a cached certificate and checks it against the system it is meant for.
inline QuadraticCertificate certificate_from_json(const json& j, const LureSystem& s, const SectorBounds& sb) {
    QuadraticCertificate c;
    try {
        json body = j;
        std::string stored = body.at("content_hash").get<std::string>();
        body.erase("content_hash");
        std::string dump = body.dump();
        if (stored != detail::hex(detail::fnv1a(dump.data(), dump.size()))) throw HashMismatch();
        c.P = detail::json_matrix(j.at("P"));
        c.tau = detail::json_vector(j.at("tau"));
        c.gamma = detail::json_vector(j.at("gamma"));
        c.beta = detail::json_vector(j.at("beta"));
        c.lmi_margin = j.at("lmi_margin").get<double>();
        c.lambda_min = j.at("lambda_min").get<double>();
        c.mu = j.at("mu").get<double>();
        c.tol_lmi = j.at("tol_lmi").get<double>();
        c.system_hash = j.at("system_hash").get<std::string>();
    } catch (const json::exception&) {
        throw HashMismatch();
    }
    if (c.system_hash != system_hash(s, sb) || c.P.rows() != static_cast<Eigen::Index>(s.dim())) throw HashMismatch();
    return c;
}

}  // namespace stabopt
