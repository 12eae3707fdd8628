#include <gtest/gtest.h>

#include <map>
#include <random>

#include "stabopt/verify.hpp"
#include "support.hpp"

using namespace stabopt;

namespace {

struct Solved {
    PowerCase c;
    FaultScenario sc;
    TopologyCertificate topo;
    OpfResult opf;
    std::map<Variant, TscopfResult> ts;
    double scale = 1.0;
};

// solved once per fixture and shared by the tests below
const Solved& solved(const char* name, const char* scenario) {
    static std::map<std::string, Solved> cache;
    std::string key = std::string(name) + "/" + scenario;
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    auto [c, sc] = fixtures::with_fault(name, scenario);
    Solved s{c, sc, certify_topology(c, sc), solve_opf(c), {}, 1.0};
    s.scale = std::max(1.0, std::abs(s.opf.cost));
    for (Variant v : {Variant::Concave, Variant::Hull, Variant::Inner}) {
        TscopfOptions o;
        o.variant = v;
        o.epsilon = default_epsilon(s.opf);
        s.ts.emplace(v, solve_tscopf(c, sc, s.topo.cert, o, &s.opf));
    }
    return cache.emplace(key, std::move(s)).first->second;
}

const Solved& two_bus() { return solved("two_bus", "two_bus_line2_fault"); }

}  // namespace

TEST(Opf, TwoBusPutsTheLoadOnTheCheapGenerator) {
    const Solved& s = two_bus();
    ASSERT_EQ(s.opf.sol.status, OptStatus::Optimal);
    EXPECT_NEAR(s.opf.p_gen[1], 1.8, 1e-6);
    EXPECT_NEAR(s.opf.p_gen[0], 0.0, 1e-6);
    EXPECT_NEAR(s.opf.cost, generation_cost(s.c, s.opf.p_gen), 1e-12);
    EXPECT_LE(s.opf.sol.kkt_residual, 1e-6);
}

TEST(Opf, RespectsVoltageAndAngleLimits) {
    for (const char* name : fixtures::kCases) {
        PowerCase c = fixtures::load(name);
        OpfResult r = solve_opf(c);
        ASSERT_EQ(r.sol.status, OptStatus::Optimal) << name;
        const double tol = 1e-7;
        EXPECT_GE(r.pre.V.minCoeff(), c.limits.v_min - tol);
        EXPECT_LE(r.pre.V.maxCoeff(), c.limits.v_max + tol);
        for (const auto& br : c.branches) {
            double d = r.pre.theta[br.from] - r.pre.theta[br.to];
            EXPECT_GE(d, c.limits.angle_diff_min - tol);
            EXPECT_LE(d, c.limits.angle_diff_max + tol);
        }
    }
}

TEST(Tscopf, AllVariantsReachOptimalStableDispatches) {
    const Solved& s = two_bus();
    for (const auto& [v, r] : s.ts) {
        ASSERT_EQ(r.sol.status, OptStatus::Optimal) << to_string(v);
        EXPECT_LE(r.sol.kkt_residual, 1e-6);
        DispatchAssessment a = simulate_dispatch(s.c, s.sc, r.p_gen, r.pre, r.post);
        EXPECT_EQ(a.verdict, Verdict::Stable) << to_string(v) << ": " << a.reason;
    }
}

TEST(Tscopf, CostOrderingAcrossVariants) {
    const Solved& s = two_bus();
    double tol = 1e-6 * s.scale;
    double inner = s.ts.at(Variant::Inner).cost, concave = s.ts.at(Variant::Concave).cost,
           hull = s.ts.at(Variant::Hull).cost;
    EXPECT_GE(inner, concave - tol);
    EXPECT_GE(concave, hull - tol);
    EXPECT_GE(hull, s.opf.cost - tol);
    RecordProperty("opf_cost", std::to_string(s.opf.cost));
    RecordProperty("inner_cost", std::to_string(inner));
    RecordProperty("hull_cost", std::to_string(hull));
}

TEST(Tscopf, DispatchStaysBelowTheSimulatedThreshold) {
    const Solved& s = two_bus();
    Eigen::VectorXd base = s.opf.p_gen;
    double pbar = stability_threshold(s.c, s.sc, 1, base, s.opf.pre, 0.0, s.c.generators[1].p_max, 1e-3);
    RecordProperty("threshold", std::to_string(pbar));
    for (const auto& [v, r] : s.ts) EXPECT_LE(r.p_gen[1], pbar + 1e-3) << to_string(v);
    EXPECT_LT(pbar, s.opf.p_gen[1]);
}

TEST(Tscopf, WminBoundIsActiveAtTheOptimum) {
    const Solved& s = two_bus();
    for (const auto& [v, r] : s.ts) {
        Theorem1Report t = verify_theorem1(r);
        EXPECT_TRUE(t.pass) << to_string(v) << " min slack " << t.min_slack;
    }
}

TEST(Tscopf, NoTopologyChangeReproducesOpf) {
    const Solved& s = solved("three_bus", "three_bus_no_fault");
    for (const auto& [v, r] : s.ts) {
        ASSERT_EQ(r.sol.status, OptStatus::Optimal) << to_string(v);
        EXPECT_LE(std::abs(r.cost - s.opf.cost), r.epsilon * r.W + 1e-6 * s.scale) << to_string(v);
        EXPECT_LE((r.p_gen - s.opf.p_gen).cwiseAbs().maxCoeff(), 1e-4) << to_string(v);
    }
}

TEST(Tscopf, DerivativesMatchDifferencesAtRandomPoints) {
    const Solved& s = two_bus();
    std::mt19937_64 rng(42);
    std::normal_distribution<double> nd(0.0, 0.05);
    for (Variant v : {Variant::Concave, Variant::Hull, Variant::Inner}) {
        TscopfOptions o;
        o.variant = v;
        TscopfModel m = build_tscopf(s.c, s.sc, s.topo.cert, o);
        for (int k = 0; k < 20; ++k) {
            Eigen::VectorXd x = s.ts.at(v).sol.x;
            for (Eigen::Index j = 0; j < x.size(); ++j) x[j] += nd(rng);
            for (const auto& d : check_derivatives(m.problem, x))
                EXPECT_LE(d.max_rel_error, 1e-6) << to_string(v) << " " << d.block;
        }
    }
    OpfModel om = build_opf(s.c);
    for (const auto& d : check_derivatives(om.problem, s.opf.sol.x)) EXPECT_LE(d.max_rel_error, 1e-6) << d.block;
}

TEST(Tscopf, EpsilonInsensitivity) {
    const Solved& s = two_bus();
    TscopfOptions o;
    o.variant = Variant::Inner;
    EpsilonReport r = verify_epsilon_insensitivity(s.c, s.sc, s.topo.cert, o, s.opf);
    EXPECT_TRUE(r.pass);
    ASSERT_EQ(r.points.size(), 3u);
    EXPECT_LE(r.dispatch_spread.front(), 1e-3);
}

TEST(Tscopf, EndToEndComparison) {
    auto [c, sc] = fixtures::with_fault("two_bus", "two_bus_line2_fault");
    TopologyCertificate t = certify_topology(c, sc);
    TscopfOptions o;
    Comparison r = compare_dispatches(c, sc, t.cert, o);
    EXPECT_EQ(r.opf_assessment.verdict, Verdict::Unstable);
    EXPECT_EQ(r.tscopf_assessment.verdict, Verdict::Stable);
    EXPECT_GT(r.cost_increase, 0.0);
}

TEST(WminBounds, HullHandExample) {
    HullParams h{-1.0, 1.0, 1.0, 1.0, false};
    auto hull = hull_constraints(h);
    EXPECT_DOUBLE_EQ(hull[0].slope, -1.0);
    EXPECT_DOUBLE_EQ(hull[0].intercept, 1.0);
    EXPECT_DOUBLE_EQ(hull[1].slope, 1.0);
    EXPECT_DOUBLE_EQ(hull[1].intercept, 1.0);
    EXPECT_DOUBLE_EQ(psi_bound(h, 0.0), 1.0);
    EXPECT_DOUBLE_EQ(psi_bound(h, 1.0), 0.0);
    EXPECT_DOUBLE_EQ(psi_bound(h, -0.5), 0.25);
}

TEST(WminBounds, InnerLinesAreTangents) {
    HullParams h{-1.0, 1.0, 1.0, 1.0, false};
    auto in = inner_constraints(h);
    EXPECT_DOUBLE_EQ(in[0](0.5), psi_bound(h, 0.5));
    EXPECT_DOUBLE_EQ(in[0].intercept, 0.75);
    EXPECT_DOUBLE_EQ(in[1](-0.5), psi_bound(h, -0.5));
    const double e = 1e-5;
    EXPECT_NEAR(in[0].slope, (psi_bound(h, 0.5 + e) - psi_bound(h, 0.5 - e)) / (2 * e), 1e-8);
    EXPECT_NEAR(in[1].slope, (psi_bound(h, -0.5 + e) - psi_bound(h, -0.5 - e)) / (2 * e), 1e-8);
}

TEST(WminBounds, DegenerateRangeCollapsesToThePeak) {
    HullParams h{0.0, 0.0, 2.0, 0.5, false};
    double peak = 0.5 * 4.0;
    EXPECT_DOUBLE_EQ(linear_pair_bound(hull_constraints(h), 0.0), peak);
    EXPECT_DOUBLE_EQ(linear_pair_bound(inner_constraints(h), 0.0), peak);
    EXPECT_DOUBLE_EQ(psi_bound(h, 0.0), peak);
}

TEST(WminBounds, InnerPsiHullNesting) {
    std::vector<HullParams> hs = {{-1.0, 1.0, 1.0, 1.0, false}, {-0.3, 2.0, 1.5, 0.7, false}};
    const Solved& s = two_bus();
    for (const auto& h : make_hull_params(s.topo.cert, s.topo.sys, s.c.limits)) hs.push_back(h);
    for (const auto& h : hs) {
        auto hull = hull_constraints(h);
        auto in = inner_constraints(h);
        for (int k = 0; k <= 200; ++k) {
            double X = h.X_lo + (h.X_hi - h.X_lo) * k / 200.0;
            double p = psi_bound(h, X);
            EXPECT_LE(linear_pair_bound(in, X), p + 1e-12);
            EXPECT_LE(p, linear_pair_bound(hull, X) + 1e-12);
        }
        EXPECT_TRUE(verify_theorem2(h, 10000).pass);
    }
}
