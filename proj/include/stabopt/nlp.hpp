#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stabopt/dual.hpp"
#include "stabopt/errors.hpp"

namespace stabopt {

inline constexpr double kInfNlp = std::numeric_limits<double>::infinity();

/// Equality rows require c(x) = 0, inequality rows c(x) ≤ 0.
enum class RowKind { Equality, Inequality };

/// Type-erased evaluator callable with double and dual-number arguments.
class Evaluator {
public:
    virtual ~Evaluator() = default;
    virtual void eval(const double* x, double* out) const = 0;
    virtual void eval(const ad::D1* x, ad::D1* out) const = 0;
    virtual void eval(const ad::D2* x, ad::D2* out) const = 0;
};

template <class F>
class EvaluatorImpl final : public Evaluator {
public:
    explicit EvaluatorImpl(F f) : f_(std::move(f)) {}
    void eval(const double* x, double* out) const override { f_(x, out); }
    void eval(const ad::D1* x, ad::D1* out) const override { f_(x, out); }
    void eval(const ad::D2* x, ad::D2* out) const override { f_(x, out); }

private:
    F f_;
};

/// A named group of constraint rows reading only the variables listed in deps.
struct ConstraintBlock {
    std::string name;
    RowKind kind = RowKind::Equality;
    std::size_t rows = 0;
    std::size_t offset = 0;
    std::vector<std::size_t> deps;
    std::shared_ptr<const Evaluator> fn;
};

/// Smooth NLP: min f(x) s.t. equality/inequality blocks and lower ≤ x ≤ upper.
/// Evaluators receive the full variable vector; derivatives come from forward-mode
/// dual numbers seeded on each block's dependency list.
class NlpProblem {
public:
    std::vector<std::string> var_names;
    Eigen::VectorXd lower, upper, x0;
    std::vector<ConstraintBlock> blocks;
    std::vector<std::size_t> objective_deps;
    std::shared_ptr<const Evaluator> objective;

    std::size_t add_variable(const std::string& name, double lo, double hi, double start) {
        var_names.push_back(name);
        auto grow = [](Eigen::VectorXd& v, double val) {
            v.conservativeResize(v.size() + 1);
            v[v.size() - 1] = val;
        };
        grow(lower, lo);
        grow(upper, hi);
        grow(x0, start);
        return var_names.size() - 1;
    }

    template <class F>
    void set_objective(std::vector<std::size_t> deps, F f) {
        objective_deps = std::move(deps);
        auto g = [f](const auto* x, auto* out) { out[0] = f(x); };
        objective = std::make_shared<EvaluatorImpl<decltype(g)>>(g);
    }

    /// f(x, out) writes `rows` values.
    template <class F>
    void add_block(const std::string& name, RowKind kind, std::size_t rows, std::vector<std::size_t> deps, F f) {
        if (rows == 0) return;
        ConstraintBlock b;
        b.name = name;
        b.kind = kind;
        b.rows = rows;
        b.offset = n_rows();
        b.deps = std::move(deps);
        std::sort(b.deps.begin(), b.deps.end());
        b.deps.erase(std::unique(b.deps.begin(), b.deps.end()), b.deps.end());
        b.fn = std::make_shared<EvaluatorImpl<F>>(std::move(f));
        blocks.push_back(std::move(b));
    }

    std::size_t n_vars() const { return var_names.size(); }
    std::size_t n_rows() const { return blocks.empty() ? 0 : blocks.back().offset + blocks.back().rows; }

    const ConstraintBlock* block(const std::string& name) const {
        for (const auto& b : blocks)
            if (b.name == name) return &b;
        return nullptr;
    }

    std::size_t var_index(const std::string& name) const {
        for (std::size_t i = 0; i < var_names.size(); ++i)
            if (var_names[i] == name) return i;
        throw InputError("unknown variable " + name);
    }

    double eval_objective(const Eigen::VectorXd& x) const {
        double f = 0.0;
        objective->eval(x.data(), &f);
        return f;
    }

    Eigen::VectorXd eval_constraints(const Eigen::VectorXd& x) const {
        Eigen::VectorXd c(static_cast<Eigen::Index>(n_rows()));
        for (const auto& b : blocks) b.fn->eval(x.data(), c.data() + b.offset);
        return c;
    }

    /// Objective gradient and dense constraint Jacobian.
    void eval_jacobian(const Eigen::VectorXd& x, Eigen::VectorXd& grad, Eigen::MatrixXd& J) const {
        std::size_t n = n_vars();
        grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
        J = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_rows()), static_cast<Eigen::Index>(n));
        std::vector<ad::D1> xd(n);
        for (std::size_t i = 0; i < n; ++i) xd[i] = ad::D1(x[i]);
        std::vector<ad::D1> out;
        auto sweep = [&](const Evaluator& fn, const std::vector<std::size_t>& deps, std::size_t rows, auto&& store) {
            out.assign(rows, ad::D1(0.0));
            for (std::size_t j : deps) {
                xd[j].d = 1.0;
                fn.eval(xd.data(), out.data());
                xd[j].d = 0.0;
                for (std::size_t r = 0; r < rows; ++r) store(r, j, out[r].d);
            }
        };
        sweep(*objective, objective_deps, 1, [&](std::size_t, std::size_t j, double v) { grad[j] = v; });
        for (const auto& b : blocks)
            sweep(*b.fn, b.deps, b.rows, [&](std::size_t r, std::size_t j, double v) { J(b.offset + r, j) = v; });
    }

    /// Hessian of sigma·f + Σ λ_r c_r (full symmetric matrix).
    Eigen::MatrixXd eval_hessian(const Eigen::VectorXd& x, double sigma, const Eigen::VectorXd& lambda) const {
        std::size_t n = n_vars();
        Eigen::MatrixXd H = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        std::vector<ad::D2> xd(n);
        for (std::size_t i = 0; i < n; ++i) xd[i] = ad::D2(x[i]);
        std::vector<ad::D2> out;
        auto sweep = [&](const Evaluator& fn, const std::vector<std::size_t>& deps, std::size_t rows,
                         const double* w) {
            bool any = false;
            for (std::size_t r = 0; r < rows; ++r) any = any || w[r] != 0.0;
            if (!any) return;
            out.assign(rows, ad::D2(0.0));
            for (std::size_t a = 0; a < deps.size(); ++a) {
                std::size_t ia = deps[a];
                xd[ia].d.v = 1.0;
                for (std::size_t b = 0; b <= a; ++b) {
                    std::size_t ib = deps[b];
                    xd[ib].v.d = 1.0;
                    fn.eval(xd.data(), out.data());
                    xd[ib].v.d = 0.0;
                    double s = 0.0;
                    for (std::size_t r = 0; r < rows; ++r) s += w[r] * out[r].d.d;
                    H(ia, ib) += s;
                    if (ia != ib) H(ib, ia) += s;
                }
                xd[ia].d.v = 0.0;
            }
        };
        sweep(*objective, objective_deps, 1, &sigma);
        for (const auto& b : blocks) sweep(*b.fn, b.deps, b.rows, lambda.data() + b.offset);
        return H;
    }
};

enum class OptStatus { Optimal, Infeasible, IterationLimit };

inline const char* to_string(OptStatus s) {
    switch (s) {
    case OptStatus::Optimal: return "Optimal";
    case OptStatus::Infeasible: return "Infeasible";
    case OptStatus::IterationLimit: return "IterationLimit";
    }
    return "?";
}

struct OptSolution {
    Eigen::VectorXd x;
    double objective = NAN;
    Eigen::VectorXd lambda;  ///< constraint multipliers (≥ 0 on inequality rows)
    Eigen::VectorXd z_lower, z_upper;
    double kkt_residual = NAN;
    double primal_infeasibility = NAN;
    double dual_infeasibility = NAN;
    double complementarity = NAN;
    OptStatus status = OptStatus::IterationLimit;
    int iterations = 0;
    double wall_time = 0.0;
};

struct NlpOptions {
    double tol = 1e-9;              ///< scaled optimality tolerance
    double kkt_tol = 1e-6;          ///< unscaled KKT residual required for Optimal
    int max_iter = 300;
    double mu_init = 0.1;
    double bound_push = 1e-2;
    double scaling_threshold = 100.0;
    bool trace = false;  ///< one line per iteration on stderr
};

namespace detail {

/// Unscaled first-order optimality measures.
struct KktMeasures {
    double dual = 0.0, primal = 0.0, compl_ = 0.0;
    double value() const { return std::max({dual, primal, compl_}); }
};

}  // namespace detail

/// Primal-dual interior-point method (slack form for inequalities, log barrier on bounds and
/// slacks, exact Hessian, inertia-corrected Newton steps, filter line search with second-order
/// corrections).
inline OptSolution solve_nlp(const NlpProblem& prob, const NlpOptions& opt = {}) {
    using Eigen::MatrixXd;
    using Eigen::VectorXd;
    auto t_start = std::chrono::steady_clock::now();
    const Eigen::Index n = static_cast<Eigen::Index>(prob.n_vars());
    const Eigen::Index m = static_cast<Eigen::Index>(prob.n_rows());

    std::vector<Eigen::Index> eq, iq;  // row indices
    for (const auto& b : prob.blocks)
        for (std::size_t r = 0; r < b.rows; ++r)
            (b.kind == RowKind::Equality ? eq : iq).push_back(static_cast<Eigen::Index>(b.offset + r));
    const Eigen::Index me = static_cast<Eigen::Index>(eq.size()), mi = static_cast<Eigen::Index>(iq.size());

    const VectorXd& l = prob.lower;
    const VectorXd& u = prob.upper;
    std::vector<bool> hasL(n), hasU(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        hasL[i] = std::isfinite(l[i]);
        hasU[i] = std::isfinite(u[i]);
        if (hasL[i] && hasU[i] && !(l[i] < u[i])) throw InputError("variable " + prob.var_names[i] + " has empty bounds");
    }

    // starting point strictly inside the bounds
    VectorXd x = prob.x0;
    for (Eigen::Index i = 0; i < n; ++i) {
        double pl = hasL[i] ? opt.bound_push * std::max(1.0, std::abs(l[i])) : 0.0;
        double pu = hasU[i] ? opt.bound_push * std::max(1.0, std::abs(u[i])) : 0.0;
        if (hasL[i] && hasU[i]) {
            pl = std::min(pl, opt.bound_push * (u[i] - l[i]));
            pu = std::min(pu, opt.bound_push * (u[i] - l[i]));
        }
        if (hasL[i]) x[i] = std::max(x[i], l[i] + pl);
        if (hasU[i]) x[i] = std::min(x[i], u[i] - pu);
    }

    // gradient-based scaling
    VectorXd grad;
    MatrixXd Jfull;
    prob.eval_jacobian(x, grad, Jfull);
    double sf = 1.0;
    if (grad.size() && grad.cwiseAbs().maxCoeff() > opt.scaling_threshold)
        sf = opt.scaling_threshold / grad.cwiseAbs().maxCoeff();
    VectorXd sc = VectorXd::Ones(m);
    for (Eigen::Index r = 0; r < m; ++r) {
        double g = Jfull.row(r).cwiseAbs().maxCoeff();
        if (g > opt.scaling_threshold) sc[r] = opt.scaling_threshold / g;
    }

    auto eval_f = [&](const VectorXd& xx) { return sf * prob.eval_objective(xx); };
    auto eval_c = [&](const VectorXd& xx) { return VectorXd(sc.cwiseProduct(prob.eval_constraints(xx))); };
    auto split = [&](const VectorXd& cc, VectorXd& ce, VectorXd& ci) {
        ce.resize(me);
        ci.resize(mi);
        for (Eigen::Index k = 0; k < me; ++k) ce[k] = cc[eq[k]];
        for (Eigen::Index k = 0; k < mi; ++k) ci[k] = cc[iq[k]];
    };

    VectorXd cE, cI;
    split(eval_c(x), cE, cI);
    VectorXd s(mi);
    for (Eigen::Index k = 0; k < mi; ++k) s[k] = std::max(-cI[k], opt.bound_push);
    VectorXd yE = VectorXd::Zero(me), v = VectorXd::Ones(mi);
    VectorXd zL = VectorXd::Zero(n), zU = VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (hasL[i]) zL[i] = 1.0;
        if (hasU[i]) zU[i] = 1.0;
    }

    double mu = opt.mu_init;
    double delta_w_last = 0.0;
    OptSolution sol;
    sol.status = OptStatus::IterationLimit;

    auto barrier = [&](const VectorXd& xx, const VectorXd& ss, double f) {
        double phi = f;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (hasL[i]) phi -= mu * std::log(xx[i] - l[i]);
            if (hasU[i]) phi -= mu * std::log(u[i] - xx[i]);
        }
        for (Eigen::Index k = 0; k < mi; ++k) phi -= mu * std::log(ss[k]);
        return phi;
    };
    std::vector<std::pair<double, double>> filter;
    double theta_max = kInfNlp, theta_min = 0.0, mu_filter = -1.0;

    auto measures = [&](const VectorXd& g, const MatrixXd& JE, const MatrixXd& JI, const VectorXd& ce,
                        const VectorXd& ci, double mu_t, bool unscaled) {
        detail::KktMeasures km;
        VectorXd rd = g + JE.transpose() * yE + JI.transpose() * v - zL + zU;
        double compl_max = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (hasL[i]) compl_max = std::max(compl_max, std::abs((x[i] - l[i]) * zL[i] - mu_t));
            if (hasU[i]) compl_max = std::max(compl_max, std::abs((u[i] - x[i]) * zU[i] - mu_t));
        }
        for (Eigen::Index k = 0; k < mi; ++k) compl_max = std::max(compl_max, std::abs(s[k] * v[k] - mu_t));
        VectorXd pr(me + mi);
        pr << ce, ci + s;
        if (unscaled) {
            for (Eigen::Index k = 0; k < me; ++k) pr[k] /= sc[eq[k]];
            for (Eigen::Index k = 0; k < mi; ++k) pr[me + k] /= sc[iq[k]];
            rd /= sf;
            compl_max /= sf;
        }
        double smax = 100.0;
        double ysum = yE.lpNorm<1>() + v.lpNorm<1>() + zL.lpNorm<1>() + zU.lpNorm<1>();
        double cnt = static_cast<double>(me + mi + 2 * n);
        double sd = std::max(smax, ysum / std::max(1.0, cnt)) / smax;
        double szc = std::max(smax, (zL.lpNorm<1>() + zU.lpNorm<1>() + v.lpNorm<1>()) / std::max(1.0, cnt)) / smax;
        km.dual = rd.size() ? rd.cwiseAbs().maxCoeff() / sd : 0.0;
        km.primal = pr.size() ? pr.cwiseAbs().maxCoeff() : 0.0;
        km.compl_ = compl_max / szc;
        return km;
    };

    int stalls = 0;
    int it = 0;
    for (;; ++it) {
        double f = eval_f(x);
        prob.eval_jacobian(x, grad, Jfull);
        grad *= sf;
        Jfull = sc.asDiagonal() * Jfull;
        split(eval_c(x), cE, cI);
        MatrixXd JE(me, n), JI(mi, n);
        for (Eigen::Index k = 0; k < me; ++k) JE.row(k) = Jfull.row(eq[k]);
        for (Eigen::Index k = 0; k < mi; ++k) JI.row(k) = Jfull.row(iq[k]);

        detail::KktMeasures e0 = measures(grad, JE, JI, cE, cI, 0.0, false);
        detail::KktMeasures e0u = measures(grad, JE, JI, cE, cI, 0.0, true);
        sol.kkt_residual = e0u.value();
        sol.primal_infeasibility = e0u.primal;
        sol.dual_infeasibility = e0u.dual;
        sol.complementarity = e0u.compl_;
        if (e0.value() <= opt.tol && e0u.value() <= opt.kkt_tol) {
            sol.status = OptStatus::Optimal;
            break;
        }
        if (it >= opt.max_iter) {
            sol.status = OptStatus::IterationLimit;
            break;
        }
        while (mu > opt.tol / 10.0 && measures(grad, JE, JI, cE, cI, mu, false).value() <= 10.0 * mu) {
            mu = std::max(opt.tol / 10.0, std::min(0.2 * mu, std::pow(mu, 1.5)));
        }

        if (opt.trace)
            std::cerr << "it " << it << " f " << f / sf << " pr " << e0u.primal << " du " << e0u.dual << " co "
                      << e0u.compl_ << " mu " << mu << " dw " << delta_w_last << "\n";
        // Hessian of the scaled Lagrangian
        VectorXd lam = VectorXd::Zero(m);
        for (Eigen::Index k = 0; k < me; ++k) lam[eq[k]] = yE[k] * sc[eq[k]];
        for (Eigen::Index k = 0; k < mi; ++k) lam[iq[k]] = v[k] * sc[iq[k]];
        MatrixXd H = prob.eval_hessian(x, sf, lam);

        VectorXd sig_x = VectorXd::Zero(n), bar_g = VectorXd::Zero(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            if (hasL[i]) {
                sig_x[i] += zL[i] / (x[i] - l[i]);
                bar_g[i] -= mu / (x[i] - l[i]);
            }
            if (hasU[i]) {
                sig_x[i] += zU[i] / (u[i] - x[i]);
                bar_g[i] += mu / (u[i] - x[i]);
            }
        }
        VectorXd sig_s = v.cwiseQuotient(s);
        VectorXd rd = cI + s;
        VectorXd rx = grad + JE.transpose() * yE + JI.transpose() * v + bar_g;  // r̃_x
        VectorXd w = (mu * s.cwiseInverse() - v) + sig_s.cwiseProduct(rd);
        MatrixXd W0 = H;
        W0.diagonal() += sig_x;
        W0 += JI.transpose() * sig_s.asDiagonal() * JI;

        VectorXd rhs(n + me);
        rhs << -rx - JI.transpose() * w, -cE;

        // inertia-corrected factorization
        double delta_w = 0.0, delta_c = 0.0;
        Eigen::SelfAdjointEigenSolver<MatrixXd> es;
        // symmetric diagonal scaling keeps the inertia and tames large barrier terms
        VectorXd dscale(n + me);
        for (Eigen::Index i = 0; i < n; ++i) dscale[i] = 1.0 / std::sqrt(std::max(1.0, std::abs(W0(i, i))));
        dscale.tail(me).setOnes();
        auto factor = [&](double dw, double dc) {
            MatrixXd K = MatrixXd::Zero(n + me, n + me);
            K.topLeftCorner(n, n) = W0;
            K.topLeftCorner(n, n).diagonal().array() += dw;
            K.topRightCorner(n, me) = JE.transpose();
            K.bottomLeftCorner(me, n) = JE;
            K.bottomRightCorner(me, me).diagonal().array() -= dc;
            K = dscale.asDiagonal() * K * dscale.asDiagonal();
            es.compute(K);
            const VectorXd& ev = es.eigenvalues();
            double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
            Eigen::Index pos = 0, neg = 0, zero = 0;
            for (Eigen::Index i = 0; i < ev.size(); ++i) {
                if (ev[i] > 1e-14 * scale) ++pos;
                else if (ev[i] < -1e-14 * scale) ++neg;
                else ++zero;
            }
            return std::make_tuple(pos, neg, zero);
        };
        auto [pos, neg, zero] = factor(0.0, 0.0);
        if (zero > 0 && me > 0) {
            delta_c = 1e-8 * std::pow(mu, 0.25);
            std::tie(pos, neg, zero) = factor(0.0, delta_c);
        }
        bool inertia_ok = pos == n && neg == me;
        if (!inertia_ok) {
            delta_w = delta_w_last == 0.0 ? 1e-4 : std::max(1e-20, delta_w_last / 3.0);
            while (delta_w <= 1e40) {
                std::tie(pos, neg, zero) = factor(delta_w, delta_c);
                if (pos == n && neg == me) {
                    inertia_ok = true;
                    break;
                }
                delta_w *= delta_w_last == 0.0 ? 100.0 : 8.0;
            }
            delta_w_last = inertia_ok ? delta_w : 0.0;
        }
        if (!inertia_ok) {
            sol.status = e0u.value() <= opt.kkt_tol ? OptStatus::Optimal : OptStatus::Infeasible;
            break;
        }
        auto ksolve = [&](const VectorXd& r) {
            VectorXd t = es.eigenvectors().transpose() * dscale.cwiseProduct(r);
            const VectorXd& ev = es.eigenvalues();
            for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = std::abs(ev[i]) > 1e-300 ? t[i] / ev[i] : 0.0;
            return VectorXd(dscale.cwiseProduct(es.eigenvectors() * t));
        };

        VectorXd sol_k = ksolve(rhs);
        VectorXd dx = sol_k.head(n), dyE = sol_k.tail(me);
        VectorXd ds = -rd - JI * dx;
        VectorXd dv = w + sig_s.cwiseProduct(JI * dx);
        VectorXd dzL = VectorXd::Zero(n), dzU = VectorXd::Zero(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            if (hasL[i]) dzL[i] = mu / (x[i] - l[i]) - zL[i] - zL[i] / (x[i] - l[i]) * dx[i];
            if (hasU[i]) dzU[i] = mu / (u[i] - x[i]) - zU[i] + zU[i] / (u[i] - x[i]) * dx[i];
        }

        // fraction to the boundary
        double tau = std::max(0.99, 1.0 - mu);
        auto max_step = [&](const VectorXd& val, const VectorXd& dir, const std::vector<bool>* mask) {
            double a = 1.0;
            for (Eigen::Index i = 0; i < val.size(); ++i) {
                if (mask && !(*mask)[i]) continue;
                if (dir[i] < 0.0) a = std::min(a, -tau * val[i] / dir[i]);
            }
            return a;
        };
        VectorXd gapL(n), gapU(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            gapL[i] = hasL[i] ? x[i] - l[i] : 1.0;
            gapU[i] = hasU[i] ? u[i] - x[i] : 1.0;
        }
        double a_pri = std::min({max_step(gapL, dx, &hasL), max_step(gapU, VectorXd(-dx), &hasU), max_step(s, ds, nullptr)});
        double a_dual = std::min({max_step(zL, dzL, &hasL), max_step(zU, dzU, &hasU), max_step(v, dv, nullptr)});

        // filter line search on (constraint violation, barrier objective)
        double theta0 = cE.lpNorm<1>() + rd.lpNorm<1>();
        if (it == 0) {
            theta_max = 1e4 * std::max(1.0, theta0);
            theta_min = 1e-4 * std::max(1.0, theta0);
        }
        if (mu != mu_filter) {
            filter.clear();
            mu_filter = mu;
        }
        VectorXd gphi_x = grad + bar_g;
        VectorXd gphi_s = -mu * s.cwiseInverse();
        double D = gphi_x.dot(dx) + gphi_s.dot(ds);
        double phi0 = barrier(x, s, f);
        auto filter_ok = [&](double th, double ph) {
            for (const auto& [ft, fp] : filter)
                if (!(th < ft || ph < fp)) return false;
            return true;
        };
        const double g_th = 1e-5, g_ph = 1e-8, s_th = 1.1, s_ph = 2.3, eta = 1e-4;
        bool f_type = false;
        auto acceptable = [&](double alpha_t, double th, double ph) {
            if (!std::isfinite(ph) || th > theta_max || !filter_ok(th, ph)) return false;
            bool switching = D < 0.0 && alpha_t * std::pow(-D, s_ph) > std::pow(theta0, s_th);
            if (theta0 <= theta_min && switching) {
                f_type = true;
                return ph <= phi0 + eta * alpha_t * D;
            }
            f_type = false;
            return th <= (1.0 - g_th) * theta0 || ph <= phi0 - g_ph * theta0;
        };

        double alpha = a_pri;
        bool accepted = false;
        VectorXd xn, sn, cEn, cIn;
        for (int ls = 0; ls < 60; ++ls) {
            xn = x + alpha * dx;
            sn = s + alpha * ds;
            double fn = eval_f(xn);
            split(eval_c(xn), cEn, cIn);
            double th1 = cEn.lpNorm<1>() + (cIn + sn).lpNorm<1>();
            double ph1 = barrier(xn, sn, fn);
            if (acceptable(alpha, th1, ph1)) {
                accepted = true;
                break;
            }
            if (ls == 0 && th1 >= theta0) {
                // second-order corrections for the constraint curvature
                VectorXd xs = xn, ss = sn, cEs = cEn, cIs = cIn;
                double th_prev = th1;
                for (int k = 0; k < 4 && !accepted; ++k) {
                    VectorXd rdn = cIs + ss;
                    VectorXd r2(n + me);
                    r2 << -JI.transpose() * sig_s.cwiseProduct(rdn), -cEs;
                    VectorXd dxc = ksolve(r2).head(n);
                    VectorXd dxt = (xs - x) + dxc;
                    VectorXd dst = (ss - s) - rdn - JI * dxc;
                    double a2 = std::min({max_step(gapL, dxt, &hasL), max_step(gapU, VectorXd(-dxt), &hasU),
                                          max_step(s, dst, nullptr)});
                    if (a2 < 1.0) break;
                    xs = x + dxt;
                    ss = s + dst;
                    double fs = eval_f(xs);
                    split(eval_c(xs), cEs, cIs);
                    double ths = cEs.lpNorm<1>() + (cIs + ss).lpNorm<1>();
                    if (acceptable(alpha, ths, barrier(xs, ss, fs))) {
                        xn = xs;
                        sn = ss;
                        accepted = true;
                    } else if (ths > 0.99 * th_prev) {
                        break;
                    }
                    th_prev = ths;
                }
                if (accepted) break;
            }
            alpha *= 0.5;
            if (alpha < 1e-13) break;
        }
        if (accepted && !f_type) filter.emplace_back((1.0 - g_th) * theta0, phi0 - g_ph * theta0);

        if (!accepted) {
            ++stalls;
            delta_w_last = std::max(1e-2, delta_w_last * 100.0);
            if (stalls >= 4) {
                sol.status = e0u.value() <= opt.kkt_tol ? OptStatus::Optimal
                             : e0u.primal > 1e-6        ? OptStatus::Infeasible
                                                        : OptStatus::IterationLimit;
                break;
            }
            continue;
        }
        stalls = 0;
        if (opt.trace) std::cerr << "   alpha " << alpha << " amax " << a_pri << " adual " << a_dual << "\n";
        x = xn;
        s = sn;
        yE += alpha * dyE;
        zL += a_dual * dzL;
        zU += a_dual * dzU;
        v += a_dual * dv;
        // keep bound multipliers near the barrier's central path
        const double ks = 1e10;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (hasL[i]) {
                double g = x[i] - l[i];
                zL[i] = std::clamp(zL[i], mu / (ks * g), ks * mu / g);
            }
            if (hasU[i]) {
                double g = u[i] - x[i];
                zU[i] = std::clamp(zU[i], mu / (ks * g), ks * mu / g);
            }
        }
        for (Eigen::Index k = 0; k < mi; ++k) v[k] = std::clamp(v[k], mu / (ks * s[k]), ks * mu / s[k]);
    }

    sol.x = x;
    sol.objective = prob.eval_objective(x);
    sol.iterations = it;
    sol.lambda = VectorXd::Zero(m);
    for (Eigen::Index k = 0; k < me; ++k) sol.lambda[eq[k]] = yE[k] * sc[eq[k]] / sf;
    for (Eigen::Index k = 0; k < mi; ++k) sol.lambda[iq[k]] = v[k] * sc[iq[k]] / sf;
    sol.z_lower = zL / sf;
    sol.z_upper = zU / sf;
    sol.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return sol;
}

/// Worst relative mismatch between the dual-number Jacobian and central differences, per block.
struct DerivativeCheck {
    std::string block;
    double max_rel_error = 0.0;
};

inline std::vector<DerivativeCheck> check_derivatives(const NlpProblem& prob, const Eigen::VectorXd& x,
                                                      double h = 1e-6) {
    Eigen::VectorXd grad;
    Eigen::MatrixXd J;
    prob.eval_jacobian(x, grad, J);
    std::vector<DerivativeCheck> out;
    auto rel = [](double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); };
    std::size_t n = prob.n_vars();
    std::vector<Eigen::VectorXd> fd_cols(n);
    std::vector<double> fd_grad(n);
    for (std::size_t j = 0; j < n; ++j) {
        Eigen::VectorXd xp = x, xm = x;
        double hj = h * std::max(1.0, std::abs(x[j]));
        xp[j] += hj;
        xm[j] -= hj;
        fd_cols[j] = (prob.eval_constraints(xp) - prob.eval_constraints(xm)) / (2.0 * hj);
        fd_grad[j] = (prob.eval_objective(xp) - prob.eval_objective(xm)) / (2.0 * hj);
    }
    DerivativeCheck obj{"objective", 0.0};
    for (std::size_t j = 0; j < n; ++j) obj.max_rel_error = std::max(obj.max_rel_error, rel(grad[j], fd_grad[j]));
    out.push_back(obj);
    for (const auto& b : prob.blocks) {
        DerivativeCheck d{b.name, 0.0};
        for (std::size_t r = 0; r < b.rows; ++r)
            for (std::size_t j = 0; j < n; ++j)
                d.max_rel_error = std::max(d.max_rel_error, rel(J(b.offset + r, j), fd_cols[j][b.offset + r]));
        out.push_back(d);
    }
    return out;
}

}  // namespace stabopt
