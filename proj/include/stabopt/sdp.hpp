#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "stabopt/errors.hpp"

namespace stabopt::sdp {

/// Block matrix [AᵀP+PA − CᵀΓτC, PB + CᵀHτ; ·, −τ] with Γ = diag(γβ), H = diag((γ+β)/2).
inline Eigen::MatrixXd lmi_matrix(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Eigen::MatrixXd& C,
                                  const Eigen::VectorXd& gamma, const Eigen::VectorXd& beta,
                                  const Eigen::MatrixXd& P, const Eigen::VectorXd& tau) {
    Eigen::Index n = A.rows(), m = B.cols();
    Eigen::VectorXd gb = (tau.array() * gamma.array() * beta.array()).matrix();
    Eigen::VectorXd h = (tau.array() * (gamma + beta).array() * 0.5).matrix();
    Eigen::MatrixXd M(n + m, n + m);
    M.topLeftCorner(n, n) = A.transpose() * P + P * A - C.transpose() * gb.asDiagonal() * C;
    M.topRightCorner(n, m) = P * B + C.transpose() * h.asDiagonal();
    M.bottomLeftCorner(m, n) = M.topRightCorner(n, m).transpose();
    M.bottomRightCorner(m, m) = -Eigen::MatrixXd(tau.asDiagonal());
    return M;
}

inline double max_eig(const Eigen::MatrixXd& M) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M, Eigen::EigenvaluesOnly);
    return es.eigenvalues().maxCoeff();
}

struct Options {
    double mu = 1e-6;        ///< floor P ⪰ μI
    double tol_lmi = 1e-8;   ///< required margin
    double gap = 1e-11;      ///< barrier duality-gap target
    double growth = 8.0;     ///< barrier weight factor per outer step
    int max_newton = 3000;
};

struct Result {
    Eigen::MatrixXd P;
    Eigen::VectorXd tau;
    double margin = 0.0;  ///< λ_max of the block matrix
    int newton_steps = 0;
};

/// Minimizes t subject to lmi_matrix ⪯ tI, μI ⪯ P ⪯ I, τ > 0 with a log-det barrier method.
/// Throws LmiInfeasible when the optimal t is above −tol_lmi.
inline Result solve(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Eigen::MatrixXd& C,
                    const Eigen::VectorXd& gamma, const Eigen::VectorXd& beta, const Options& opt = {}) {
    using Eigen::MatrixXd;
    using Eigen::VectorXd;
    const Eigen::Index n = A.rows(), m = B.cols(), k = n + m;
    const Eigen::Index np = n * (n + 1) / 2, nz = np + m + 1;

    // constant derivative matrices of the block matrix with respect to each variable
    std::vector<MatrixXd> dM(static_cast<std::size_t>(np + m));
    std::vector<std::pair<Eigen::Index, Eigen::Index>> pidx;
    for (Eigen::Index a = 0; a < n; ++a)
        for (Eigen::Index b = a; b < n; ++b) pidx.emplace_back(a, b);
    for (Eigen::Index v = 0; v < np; ++v) {
        MatrixXd Eab = MatrixXd::Zero(n, n);
        Eab(pidx[v].first, pidx[v].second) = 1.0;
        Eab(pidx[v].second, pidx[v].first) = 1.0;
        MatrixXd D = MatrixXd::Zero(k, k);
        D.topLeftCorner(n, n) = A.transpose() * Eab + Eab * A;
        D.topRightCorner(n, m) = Eab * B;
        D.bottomLeftCorner(m, n) = D.topRightCorner(n, m).transpose();
        dM[v] = D;
    }
    for (Eigen::Index j = 0; j < m; ++j) {
        VectorXd c = C.row(j).transpose();
        MatrixXd D = MatrixXd::Zero(k, k);
        D.topLeftCorner(n, n) = -gamma[j] * beta[j] * c * c.transpose();
        D.block(0, n + j, n, 1) = 0.5 * (gamma[j] + beta[j]) * c;
        D.block(n + j, 0, 1, n) = D.block(0, n + j, n, 1).transpose();
        D(n + j, n + j) = -1.0;
        dM[np + j] = D;
    }

    auto unpack = [&](const VectorXd& z, MatrixXd& P, VectorXd& tau) {
        P.resize(n, n);
        for (Eigen::Index v = 0; v < np; ++v) {
            P(pidx[v].first, pidx[v].second) = z[v];
            P(pidx[v].second, pidx[v].first) = z[v];
        }
        tau = z.segment(np, m);
    };
    auto block = [&](const VectorXd& z) {
        MatrixXd P;
        VectorXd tau;
        unpack(z, P, tau);
        return lmi_matrix(A, B, C, gamma, beta, P, tau);
    };

    // barrier value, or +inf outside the domain
    auto barrier = [&](const VectorXd& z, double sigma) -> double {
        MatrixXd P;
        VectorXd tau;
        unpack(z, P, tau);
        if ((tau.array() <= 0.0).any()) return INFINITY;
        double val = sigma * z[nz - 1];
        for (const MatrixXd& F : {MatrixXd(z[nz - 1] * MatrixXd::Identity(k, k) - block(z)),
                                  MatrixXd(P - opt.mu * MatrixXd::Identity(n, n)),
                                  MatrixXd(MatrixXd::Identity(n, n) - P)}) {
            Eigen::LLT<MatrixXd> llt(F);
            if (llt.info() != Eigen::Success) return INFINITY;
            const MatrixXd& Lm = llt.matrixL();
            for (Eigen::Index i = 0; i < F.rows(); ++i) {
                double d = Lm(i, i);
                if (!(d > 0.0)) return INFINITY;
                val -= 2.0 * std::log(d);
            }
        }
        val -= tau.array().log().sum();
        return val;
    };

    VectorXd z = VectorXd::Zero(nz);
    for (Eigen::Index v = 0; v < np; ++v)
        if (pidx[v].first == pidx[v].second) z[v] = 0.5;
    z.segment(np, m).setOnes();
    z[nz - 1] = max_eig(block(z)) + 1.0;

    const double nu = static_cast<double>(k + 2 * n + m);
    double sigma = 1.0;
    int steps = 0;
    double best = max_eig(block(z));
    VectorXd best_z = z;

    while (true) {
        for (int inner = 0; inner < 100; ++inner) {
            MatrixXd P;
            VectorXd tau;
            unpack(z, P, tau);
            MatrixXd S1 = (z[nz - 1] * MatrixXd::Identity(k, k) - block(z)).inverse();
            MatrixXd S2 = (P - opt.mu * MatrixXd::Identity(n, n)).inverse();
            MatrixXd S3 = (MatrixXd::Identity(n, n) - P).inverse();
            VectorXd g = VectorXd::Zero(nz);
            MatrixXd H = MatrixXd::Zero(nz, nz);
            g[nz - 1] = sigma;

            // block 1: F1 = tI − M
            std::vector<MatrixXd> U(static_cast<std::size_t>(nz));
            for (Eigen::Index v = 0; v < np + m; ++v) U[v] = -S1 * dM[v];
            U[nz - 1] = S1;
            for (Eigen::Index i = 0; i < nz; ++i) {
                g[i] -= U[i].trace();
                for (Eigen::Index j = 0; j <= i; ++j) H(i, j) += (U[i].array() * U[j].transpose().array()).sum();
            }
            // blocks 2, 3: ±(P − const)
            for (int blk = 0; blk < 2; ++blk) {
                const MatrixXd& S = blk == 0 ? S2 : S3;
                double sgn = blk == 0 ? 1.0 : -1.0;
                std::vector<MatrixXd> W(static_cast<std::size_t>(np));
                for (Eigen::Index v = 0; v < np; ++v) {
                    auto [a, b] = pidx[v];
                    MatrixXd Wv = MatrixXd::Zero(n, n);
                    Wv.col(b) += sgn * S.col(a);
                    if (a != b) Wv.col(a) += sgn * S.col(b);
                    W[v] = Wv;
                    g[v] -= Wv.trace();
                }
                for (Eigen::Index i = 0; i < np; ++i)
                    for (Eigen::Index j = 0; j <= i; ++j) H(i, j) += (W[i].array() * W[j].transpose().array()).sum();
            }
            for (Eigen::Index j = 0; j < m; ++j) {
                g[np + j] -= 1.0 / tau[j];
                H(np + j, np + j) += 1.0 / (tau[j] * tau[j]);
            }
            H = H.selfadjointView<Eigen::Lower>();

            Eigen::LDLT<MatrixXd> ldlt(H);
            VectorXd dz = ldlt.solve(-g);
            double dec = -g.dot(dz);
            if (!(dec >= 0.0) || !dz.allFinite()) {
                H.diagonal().array() += 1e-12 * H.diagonal().cwiseAbs().maxCoeff();
                dz = H.fullPivLu().solve(-g);
                dec = -g.dot(dz);
            }
            if (dec / 2.0 <= 1e-10) break;

            double f0 = barrier(z, sigma);
            double s = 1.0;
            VectorXd zn;
            while (true) {
                zn = z + s * dz;
                double f1 = barrier(zn, sigma);
                if (std::isfinite(f1) && f1 <= f0 - 0.25 * s * dec) break;
                s *= 0.5;
                if (s < 1e-14) break;
            }
            if (s < 1e-14) break;
            z = zn;
            if (++steps > opt.max_newton) throw MaxIterations("LMI barrier method exceeded its Newton step budget");
            double lam = max_eig(block(z));
            if (lam < best) {
                best = lam;
                best_z = z;
            }
        }
        if (nu / sigma <= opt.gap * std::max(1.0, std::abs(z[nz - 1]))) break;
        sigma *= opt.growth;
    }

    Result r;
    unpack(best_z, r.P, r.tau);
    r.margin = best;
    r.newton_steps = steps;
    if (!(r.margin <= -opt.tol_lmi))
        throw LmiInfeasible("LMI infeasible: best margin " + std::to_string(r.margin), r.margin);
    return r;
}

}  // namespace stabopt::sdp
