#pragma once

#include <stdexcept>
#include <string>

namespace stabopt {

/// Malformed input: parse failures, invariant violations, bad options.
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A numerical method failed to produce a result.
struct SolverError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NonConvergence : SolverError {
    int iterations;
    double residual;
    NonConvergence(const std::string& what, int it, double res)
        : SolverError(what), iterations(it), residual(res) {}
};

struct SingularJacobian : SolverError {
    using SolverError::SolverError;
};

/// LMI has no strictly feasible point; carries the best margin reached.
struct LmiInfeasible : SolverError {
    double best_margin;
    LmiInfeasible(const std::string& what, double margin)
        : SolverError(what), best_margin(margin) {}
};

struct MaxIterations : SolverError {
    using SolverError::SolverError;
};

/// Certificate does not belong to the system it is applied to.
struct HashMismatch : InputError {
    HashMismatch() : InputError("certificate/topology hash mismatch") {}
};

}  // namespace stabopt
