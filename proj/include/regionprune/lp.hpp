#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace regionprune::lp {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

enum class Sense { less_equal, greater_equal, equal };

struct Constraint {
    std::vector<double> coeffs; // one per variable
    Sense sense = Sense::less_equal;
    double rhs = 0.0;
};

// Dense linear program. Variables default to [0, +inf); an empty objective
// asks only for feasibility, otherwise the objective is maximized.
struct LinearProgram {
    std::size_t num_vars = 0;
    std::vector<double> lower;
    std::vector<double> upper;
    std::vector<Constraint> constraints;
    std::vector<double> objective;

    LinearProgram() = default;
    explicit LinearProgram(std::size_t vars);

    std::size_t add_variable(double lo = 0.0, double hi = kInfinity);
    void add_constraint(std::vector<double> coeffs, Sense sense, double rhs);
};

enum class Status { optimal, infeasible, unbounded, numerical_failure };

std::string to_string(Status status);

struct Result {
    Status status = Status::numerical_failure;
    double objective = 0.0; // meaningful only when optimal
    std::vector<double> x;
    std::size_t iterations = 0;
};

struct Options {
    double pivot_tolerance = 1e-9;
    bool bland = false;
    std::size_t max_iterations = 0; // 0 picks a size-dependent cap
};

// Largest bound or constraint violation of `x`, in absolute terms.
double max_violation(const LinearProgram& program, std::span<const double> x);

inline constexpr double kFeasibilityTolerance = 1e-7;

// One pass of the two-phase dense simplex.
Result solve(const LinearProgram& program, const Options& options = {});

// Solves, checks the reported point against the original constraints, and on
// a failed check re-solves with Bland's rule and a tighter pivot tolerance.
// Returns numerical_failure if the second attempt cannot be certified either.
Result solve_robust(const LinearProgram& program);

} // namespace regionprune::lp
