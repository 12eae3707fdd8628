#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "stabopt/powerflow.hpp"
#include "support.hpp"

using namespace stabopt;

namespace {

AdmittanceMatrix two_bus_line(double b) {
    Eigen::MatrixXcd y(2, 2);
    y << std::complex<double>(0, -b), std::complex<double>(0, b), std::complex<double>(0, b),
        std::complex<double>(0, -b);
    return AdmittanceMatrix(y);
}

SteadyState random_state(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> v(0.9, 1.1), th(-0.6, 0.6);
    SteadyState s{Eigen::VectorXd(n), Eigen::VectorXd(n)};
    for (std::size_t i = 0; i < n; ++i) {
        s.V[i] = v(rng);
        s.theta[i] = th(rng);
    }
    return s;
}

// plain double sum over every bus pair, independent of the neighbor index
double sum_p(const AdmittanceMatrix& Y, const SteadyState& s, std::size_t i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < Y.size(); ++j) {
        double d = s.theta[i] - s.theta[j];
        acc += s.V[i] * s.V[j] * (Y.G(i, j) * std::cos(d) + Y.B(i, j) * std::sin(d));
    }
    return acc;
}

double sum_q(const AdmittanceMatrix& Y, const SteadyState& s, std::size_t i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < Y.size(); ++j) {
        double d = s.theta[i] - s.theta[j];
        acc += s.V[i] * s.V[j] * (Y.G(i, j) * std::sin(d) - Y.B(i, j) * std::cos(d));
    }
    return acc;
}

double bisect(const std::function<double(double)>& f, double lo, double hi) {
    double flo = f(lo);
    for (int k = 0; k < 200; ++k) {
        double mid = 0.5 * (lo + hi), fm = f(mid);
        if ((fm < 0) == (flo < 0)) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

const char* kThreePv = R"({
  "buses": [{"id": 1, "kind": "generator"}, {"id": 2, "kind": "generator"}, {"id": 3, "kind": "generator"}],
  "branches": [{"id": 1, "from": 1, "to": 2, "x": 0.5}, {"id": 2, "from": 1, "to": 3, "x": 0.4},
               {"id": 3, "from": 2, "to": 3, "x": 0.25}],
  "generators": [{"bus": 1, "inertia": 1, "damping": 1, "v_set": 1.0},
                 {"bus": 2, "inertia": 1, "damping": 1, "v_set": 1.02, "p_set": 0.3},
                 {"bus": 3, "inertia": 1, "damping": 1, "v_set": 0.98, "p_set": 0.0}],
  "loads": [{"bus": 3, "p": 0.7, "q": 0.2}]
})";

}  // namespace

TEST(Powerflow, SingleLineActiveInjection) {
    AdmittanceMatrix Y = two_bus_line(10.0);
    SteadyState s{Eigen::VectorXd::Ones(2), Eigen::VectorXd::Zero(2)};
    EXPECT_EQ(injection_p(s, Y, 0), 0.0);
    s.theta[0] = std::asin(0.05);
    EXPECT_NEAR(injection_p(s, Y, 0), 0.5, 1e-14);
    EXPECT_NEAR(injection_p(s, Y, 1), -0.5, 1e-14);
}

TEST(Powerflow, SingleLineReactiveInjection) {
    AdmittanceMatrix Y = two_bus_line(10.0);
    SteadyState s{Eigen::Vector2d(1.05, 0.95), Eigen::VectorXd::Zero(2)};
    EXPECT_NEAR(injection_q(s, Y, 0), 1.05 * 1.05 * 10.0 - 1.05 * 0.95 * 10.0, 1e-13);
    EXPECT_EQ(injection_q(s, AdmittanceMatrix(Eigen::MatrixXcd::Zero(2, 2)), 0), 0.0);
    EXPECT_EQ(injection_p(s, AdmittanceMatrix(Eigen::MatrixXcd::Zero(2, 2)), 1), 0.0);
}

TEST(Powerflow, InjectionsMatchResummationOracle) {
    std::mt19937_64 rng(7);
    for (const char* name : fixtures::kCases) {
        PowerCase c = fixtures::load(name);
        AdmittanceMatrix Y = build_admittance(c, AdmittanceVariant::Base);
        for (int trial = 0; trial < 20; ++trial) {
            SteadyState s = random_state(c.n_bus(), rng);
            for (std::size_t i = 0; i < c.n_bus(); ++i) {
                EXPECT_NEAR(injection_p(s, Y, i), sum_p(Y, s, i), 1e-12);
                EXPECT_NEAR(injection_q(s, Y, i), sum_q(Y, s, i), 1e-12);
            }
        }
    }
}

TEST(Powerflow, LosslessEnergyBalance) {
    std::mt19937_64 rng(11);
    for (const char* name : fixtures::kCases) {
        PowerCase c = fixtures::load(name);
        AdmittanceMatrix Y = build_admittance(c, AdmittanceVariant::Base);
        for (int trial = 0; trial < 50; ++trial) {
            SteadyState s = random_state(c.n_bus(), rng);
            double total = 0.0;
            for (std::size_t i = 0; i < c.n_bus(); ++i) total += injection_p(s, Y, i);
            EXPECT_NEAR(total, 0.0, 1e-10);
        }
    }
}

TEST(Powerflow, JacobianMatchesFiniteDifferences) {
    std::mt19937_64 rng(3);
    for (const char* name : fixtures::kCases) {
        PowerCase c = fixtures::load(name);
        AdmittanceMatrix Y = build_admittance(c, AdmittanceVariant::Base);
        Injections inj = scheduled_injections(c, set_point_dispatch(c));
        PfLayout lay(c);
        double worst = 0.0;
        for (int trial = 0; trial < 100; ++trial) {
            SteadyState s = random_state(c.n_bus(), rng);
            Eigen::MatrixXd J = pf_jacobian(s, c, Y);
            for (std::size_t k = 0; k < lay.size(); ++k) {
                const double h = 1e-6;
                SteadyState sp = s, sm = s;
                if (k < lay.angle_buses.size()) {
                    sp.theta[lay.angle_buses[k]] += h;
                    sm.theta[lay.angle_buses[k]] -= h;
                } else {
                    sp.V[lay.pq_buses[k - lay.angle_buses.size()]] += h;
                    sm.V[lay.pq_buses[k - lay.angle_buses.size()]] -= h;
                }
                Eigen::VectorXd fd = (pf_residual(sp, c, inj, Y) - pf_residual(sm, c, inj, Y)) / (2 * h);
                for (Eigen::Index r = 0; r < fd.size(); ++r) {
                    double a = J(r, static_cast<Eigen::Index>(k));
                    worst = std::max(worst, std::abs(a - fd[r]) / std::max({1.0, std::abs(a), std::abs(fd[r])}));
                }
            }
        }
        EXPECT_LE(worst, 1e-6) << name;
    }
}

TEST(Powerflow, ZeroInjectionFlatStartTakesNoIterations) {
    PowerCase c = fixtures::load("three_bus");
    c.loads.clear();
    PfStats st;
    AdmittanceMatrix Y = build_admittance(c, AdmittanceVariant::Base);
    SteadyState s = solve_pf(c, scheduled_injections(c, Eigen::VectorXd::Zero(1)), Y, PfOptions{}, &st);
    EXPECT_EQ(st.iterations, 0);
    EXPECT_EQ(s.theta.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ((s.V.array() - 1.0).abs().maxCoeff(), 0.0);
}

TEST(Powerflow, TwoBusClosedFormAngle) {
    PowerCase c = parse_case(R"({
      "buses": [{"id": 1, "kind": "generator"}, {"id": 2, "kind": "generator"}],
      "branches": [{"id": 1, "from": 1, "to": 2, "g": 0, "b": -10}],
      "generators": [{"bus": 1, "inertia": 1, "damping": 1}, {"bus": 2, "inertia": 1, "damping": 1}],
      "loads": [{"bus": 2, "p": 0.5, "q": 0}]
    })");
    AdmittanceMatrix Y = build_admittance(c, AdmittanceVariant::Base);
    SteadyState s = solve_pf(c, scheduled_injections(c, Eigen::Vector2d(0.0, 0.0)), Y);
    EXPECT_NEAR(s.theta[0] - s.theta[1], std::asin(0.05), 1e-9);
}

TEST(Powerflow, ReducedProblemBisectionOracle) {
    PowerCase c = parse_case(kThreePv);
    AdmittanceMatrix Y = build_admittance(c, AdmittanceVariant::Base);
    Injections inj = scheduled_injections(c, set_point_dispatch(c));
    PfStats st;
    SteadyState s = solve_pf(c, inj, Y, PfOptions{}, &st);
    EXPECT_LE(pf_residual(s, c, inj, Y).cwiseAbs().maxCoeff(), 1e-8);

    // nested bisection on (θ2, θ3) with voltages at their set points
    SteadyState t = flat_state(c);
    auto p_at = [&](double th2, double th3, std::size_t i) {
        t.theta[1] = th2;
        t.theta[2] = th3;
        return injection_p(t, Y, i) - inj.p[i];
    };
    auto th3_of = [&](double th2) { return bisect([&](double x) { return p_at(th2, x, 2); }, -1.0, 1.0); };
    double th2 = bisect([&](double x) { return p_at(x, th3_of(x), 1); }, -1.0, 1.0);
    EXPECT_NEAR(s.theta[1], th2, 1e-8);
    EXPECT_NEAR(s.theta[2], th3_of(th2), 1e-8);
}

TEST(Powerflow, SolutionIsAFixedPoint) {
    for (const char* name : fixtures::kCases) {
        PowerCase c = fixtures::load(name);
        AdmittanceMatrix Y = build_admittance(c, AdmittanceVariant::Base);
        Injections inj = scheduled_injections(c, set_point_dispatch(c));
        SteadyState s = solve_pf(c, inj, Y);
        PfStats st;
        solve_pf(c, inj, Y, PfOptions{}, &st, &s);
        EXPECT_LE(st.iterations, 1) << name;
    }
}

TEST(Powerflow, DivergenceIsReported) {
    PowerCase c = fixtures::load("two_bus");
    AdmittanceMatrix Y = build_admittance(c, AdmittanceVariant::Base);
    // far beyond the transfer capacity of the double circuit
    EXPECT_THROW(solve_pf(c, scheduled_injections(c, Eigen::Vector2d(0.0, 9.0)), Y), SolverError);
}
