#pragma once

#include <string>
#include <utility>

#include "stabopt/fault.hpp"
#include "stabopt/gridcase.hpp"
#include "stabopt/lure.hpp"
#include "stabopt/powerflow.hpp"

namespace fixtures {

inline std::string path(const std::string& file) { return std::string(STABOPT_DATA_DIR) + "/" + file; }

inline stabopt::PowerCase load(const std::string& name) { return stabopt::load_case(path(name + ".json")); }

inline std::pair<stabopt::PowerCase, stabopt::FaultScenario> with_fault(const std::string& name,
                                                                         const std::string& scenario) {
    stabopt::PowerCase c = load(name);
    stabopt::FaultScenario sc = stabopt::make_scenario(c, stabopt::load_fault_spec(path(scenario + ".json")));
    return {c, sc};
}

struct Named {
    const char* case_name;
    const char* scenario;
};

inline constexpr Named kFaulted[] = {
    {"two_bus", "two_bus_line2_fault"}, {"three_bus", "three_bus_fault"}, {"nine_bus", "nine_bus_fault"}};

inline constexpr const char* kCases[] = {"two_bus", "three_bus", "nine_bus"};

struct PostFault {
    stabopt::PowerCase c;
    stabopt::FaultScenario sc;
    stabopt::SteadyState eq;
    stabopt::LureSystem sys;
};

/// Post-fault equilibrium of the set-point dispatch, scaled down until one exists.
inline PostFault post_fault(const Named& f) {
    auto [c, sc] = with_fault(f.case_name, f.scenario);
    Eigen::VectorXd p = stabopt::set_point_dispatch(c);
    stabopt::SteadyState eq;
    for (double scale = 1.0;; scale *= 0.8) {
        try {
            eq = stabopt::solve_pf(c, stabopt::scheduled_injections(c, scale * p), sc.Y_post);
            break;
        } catch (const stabopt::SolverError&) {
            if (scale < 1e-3) throw;
        }
    }
    stabopt::LureSystem sys = stabopt::build_lure(c, eq, sc.Y_post);
    return {c, sc, eq, sys};
}

}  // namespace fixtures
