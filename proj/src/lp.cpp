#include "regionprune/lp.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace regionprune::lp {

LinearProgram::LinearProgram(std::size_t vars)
    : num_vars(vars)
    , lower(vars, 0.0)
    , upper(vars, kInfinity)
{
}

std::size_t LinearProgram::add_variable(double lo, double hi)
{
    lower.push_back(lo);
    upper.push_back(hi);
    for (Constraint& c : constraints)
        c.coeffs.push_back(0.0);
    if (!objective.empty())
        objective.push_back(0.0);
    return num_vars++;
}

void LinearProgram::add_constraint(std::vector<double> coeffs, Sense sense, double rhs)
{
    coeffs.resize(num_vars, 0.0);
    constraints.push_back(Constraint{std::move(coeffs), sense, rhs});
}

std::string to_string(Status status)
{
    switch (status) {
    case Status::optimal:
        return "optimal";
    case Status::infeasible:
        return "infeasible";
    case Status::unbounded:
        return "unbounded";
    case Status::numerical_failure:
        return "numerical_failure";
    }
    return "numerical_failure";
}

double max_violation(const LinearProgram& program, std::span<const double> x)
{
    double worst = 0.0;
    for (std::size_t j = 0; j < program.num_vars; ++j) {
        worst = std::max(worst, program.lower[j] - x[j]);
        worst = std::max(worst, x[j] - program.upper[j]);
    }
    for (const Constraint& c : program.constraints) {
        double lhs = 0.0;
        for (std::size_t j = 0; j < program.num_vars; ++j)
            lhs += c.coeffs[j] * x[j];
        switch (c.sense) {
        case Sense::less_equal:
            worst = std::max(worst, lhs - c.rhs);
            break;
        case Sense::greater_equal:
            worst = std::max(worst, c.rhs - lhs);
            break;
        case Sense::equal:
            worst = std::max(worst, std::abs(lhs - c.rhs));
            break;
        }
    }
    return worst;
}

namespace {

// Original variable j equals offset + sum of sign * standard variable.
struct VariableMap {
    double offset = 0.0;
    std::vector<std::pair<std::size_t, double>> terms;
};

struct StandardForm {
    std::size_t n = 0; // standard variables, all >= 0
    std::vector<std::vector<double>> rows; // A s <= b
    std::vector<double> rhs;
    std::vector<double> cost;
    std::vector<VariableMap> vars;
    bool trivially_infeasible = false;
};

StandardForm standardize(const LinearProgram& program)
{
    StandardForm form;
    form.vars.resize(program.num_vars);
    std::vector<std::pair<std::size_t, double>> upper_rows; // (standard var, bound)
    for (std::size_t j = 0; j < program.num_vars; ++j) {
        const double lo = program.lower[j];
        const double hi = program.upper[j];
        VariableMap& map = form.vars[j];
        if (lo > hi) {
            form.trivially_infeasible = true;
            map.offset = lo;
            continue;
        }
        if (std::isfinite(lo)) {
            map.offset = lo;
            map.terms.emplace_back(form.n, 1.0);
            if (std::isfinite(hi))
                upper_rows.emplace_back(form.n, hi - lo);
            ++form.n;
        } else if (std::isfinite(hi)) {
            map.offset = hi;
            map.terms.emplace_back(form.n++, -1.0);
        } else {
            map.terms.emplace_back(form.n++, 1.0);
            map.terms.emplace_back(form.n++, -1.0);
        }
    }

    auto push_row = [&](const std::vector<double>& coeffs, double sign, double rhs) {
        std::vector<double> row(form.n, 0.0);
        double shifted = rhs;
        for (std::size_t j = 0; j < program.num_vars; ++j) {
            const double a = sign * coeffs[j];
            if (a == 0.0)
                continue;
            shifted -= a * form.vars[j].offset;
            for (const auto& [k, s] : form.vars[j].terms)
                row[k] += a * s;
        }
        double scale = 0.0;
        for (double v : row)
            scale = std::max(scale, std::abs(v));
        if (scale == 0.0) {
            if (shifted < -kFeasibilityTolerance)
                form.trivially_infeasible = true;
            return;
        }
        for (double& v : row)
            v /= scale;
        form.rows.push_back(std::move(row));
        form.rhs.push_back(shifted / scale);
    };

    for (const Constraint& c : program.constraints) {
        switch (c.sense) {
        case Sense::less_equal:
            push_row(c.coeffs, 1.0, c.rhs);
            break;
        case Sense::greater_equal:
            push_row(c.coeffs, -1.0, -c.rhs);
            break;
        case Sense::equal:
            push_row(c.coeffs, 1.0, c.rhs);
            push_row(c.coeffs, -1.0, -c.rhs);
            break;
        }
    }
    for (const auto& [k, bound] : upper_rows) {
        std::vector<double> row(form.n, 0.0);
        row[k] = 1.0;
        form.rows.push_back(std::move(row));
        form.rhs.push_back(bound);
    }

    form.cost.assign(form.n, 0.0);
    if (!program.objective.empty())
        for (std::size_t j = 0; j < program.num_vars; ++j)
            for (const auto& [k, s] : form.vars[j].terms)
                form.cost[k] += program.objective[j] * s;
    return form;
}

// Dictionary simplex on max c.s, A s <= b, s >= 0. Row m holds the phase-2
// objective, row m + 1 the phase-1 objective; column n is the auxiliary
// variable and column n + 1 the right-hand side.
class Tableau {
public:
    Tableau(const StandardForm& form, const Options& options)
        : m_(form.rows.size())
        , n_(form.n)
        , width_(n_ + 2)
        , eps_(options.pivot_tolerance)
        , bland_(options.bland)
        , cap_(options.max_iterations ? options.max_iterations : 50 * (m_ + n_) + 1000)
        , basis_(m_)
        , nonbasis_(n_ + 1)
        , d_((m_ + 2) * width_, 0.0)
    {
        for (std::size_t i = 0; i < m_; ++i) {
            for (std::size_t j = 0; j < n_; ++j)
                at(i, j) = form.rows[i][j];
            basis_[i] = static_cast<long>(n_ + i);
            at(i, n_) = -1.0;
            at(i, n_ + 1) = form.rhs[i];
        }
        for (std::size_t j = 0; j < n_; ++j) {
            nonbasis_[j] = static_cast<long>(j);
            at(m_, j) = -form.cost[j];
        }
        nonbasis_[n_] = -1;
        at(m_ + 1, n_) = 1.0;
    }

    Status run(std::vector<double>& solution, std::size_t& iterations)
    {
        if (m_ > 0) {
            std::size_t r = 0;
            for (std::size_t i = 1; i < m_; ++i)
                if (at(i, n_ + 1) < at(r, n_ + 1))
                    r = i;
            if (at(r, n_ + 1) < -eps_) {
                pivot(r, n_);
                const Status phase1 = simplex(1);
                if (phase1 == Status::numerical_failure) {
                    iterations = iterations_;
                    return phase1;
                }
                if (phase1 != Status::optimal || at(m_ + 1, n_ + 1) < -eps_) {
                    iterations = iterations_;
                    return Status::infeasible;
                }
                for (std::size_t i = 0; i < m_; ++i) {
                    if (basis_[i] != -1)
                        continue;
                    std::size_t s = 0;
                    for (std::size_t j = 1; j <= n_; ++j)
                        if (std::abs(at(i, j)) > std::abs(at(i, s)))
                            s = j;
                    if (std::abs(at(i, s)) > eps_)
                        pivot(i, s);
                }
            }
        }
        const Status phase2 = simplex(2);
        iterations = iterations_;
        if (phase2 != Status::optimal)
            return phase2;
        solution.assign(n_, 0.0);
        for (std::size_t i = 0; i < m_; ++i)
            if (basis_[i] >= 0 && static_cast<std::size_t>(basis_[i]) < n_)
                solution[static_cast<std::size_t>(basis_[i])] = at(i, n_ + 1);
        return Status::optimal;
    }

private:
    double& at(std::size_t i, std::size_t j) { return d_[i * width_ + j]; }

    void pivot(std::size_t r, std::size_t s)
    {
        const double inv = 1.0 / at(r, s);
        double* row_r = &d_[r * width_];
        for (std::size_t i = 0; i < m_ + 2; ++i) {
            if (i == r)
                continue;
            double* row_i = &d_[i * width_];
            const double factor = row_i[s] * inv;
            if (factor == 0.0)
                continue;
            for (std::size_t j = 0; j < width_; ++j)
                if (j != s)
                    row_i[j] -= row_r[j] * factor;
        }
        for (std::size_t j = 0; j < width_; ++j)
            if (j != s)
                row_r[j] *= inv;
        for (std::size_t i = 0; i < m_ + 2; ++i)
            if (i != r)
                at(i, s) *= -inv;
        at(r, s) = inv;
        std::swap(basis_[r], nonbasis_[s]);
    }

    Status simplex(int phase)
    {
        const std::size_t x = phase == 1 ? m_ + 1 : m_;
        bool bland = bland_;
        while (true) {
            if (++iterations_ > cap_)
                return Status::numerical_failure;
            // Dantzig's rule can stall on degenerate vertices; fall back to
            // Bland's rule halfway through the budget.
            if (iterations_ > cap_ / 2)
                bland = true;
            long s = -1;
            for (std::size_t j = 0; j <= n_; ++j) {
                if (phase == 2 && nonbasis_[j] == -1)
                    continue;
                const double v = at(x, j);
                if (bland) {
                    if (v < -eps_ && (s == -1 || nonbasis_[j] < nonbasis_[static_cast<std::size_t>(s)]))
                        s = static_cast<long>(j);
                } else if (s == -1 || v < at(x, static_cast<std::size_t>(s))
                           || (v == at(x, static_cast<std::size_t>(s))
                               && nonbasis_[j] < nonbasis_[static_cast<std::size_t>(s)])) {
                    s = static_cast<long>(j);
                }
            }
            if (s == -1 || at(x, static_cast<std::size_t>(s)) > -eps_)
                return Status::optimal;
            const std::size_t col = static_cast<std::size_t>(s);
            long r = -1;
            double best = 0.0;
            for (std::size_t i = 0; i < m_; ++i) {
                const double a = at(i, col);
                if (a < eps_)
                    continue;
                const double ratio = at(i, n_ + 1) / a;
                if (r == -1 || ratio < best
                    || (ratio == best && basis_[i] < basis_[static_cast<std::size_t>(r)])) {
                    r = static_cast<long>(i);
                    best = ratio;
                }
            }
            if (r == -1)
                return Status::unbounded;
            pivot(static_cast<std::size_t>(r), col);
        }
    }

    std::size_t m_;
    std::size_t n_;
    std::size_t width_;
    double eps_;
    bool bland_;
    std::size_t cap_;
    std::size_t iterations_ = 0;
    std::vector<long> basis_;
    std::vector<long> nonbasis_;
    std::vector<double> d_;
};

} // namespace

Result solve(const LinearProgram& program, const Options& options)
{
    Result result;
    const StandardForm form = standardize(program);
    if (form.trivially_infeasible) {
        result.status = Status::infeasible;
        return result;
    }
    Tableau tableau(form, options);
    std::vector<double> standard;
    result.status = tableau.run(standard, result.iterations);
    if (result.status != Status::optimal)
        return result;
    result.x.assign(program.num_vars, 0.0);
    for (std::size_t j = 0; j < program.num_vars; ++j) {
        double v = form.vars[j].offset;
        for (const auto& [k, s] : form.vars[j].terms)
            v += s * standard[k];
        result.x[j] = v;
    }
    if (!program.objective.empty())
        for (std::size_t j = 0; j < program.num_vars; ++j)
            result.objective += program.objective[j] * result.x[j];
    return result;
}

Result solve_robust(const LinearProgram& program)
{
    Result first = solve(program);
    if (first.status == Status::optimal && max_violation(program, first.x) <= kFeasibilityTolerance)
        return first;
    if (first.status == Status::infeasible || first.status == Status::unbounded)
        return first;
    Options careful;
    careful.bland = true;
    careful.pivot_tolerance = 1e-11;
    Result second = solve(program, careful);
    second.iterations += first.iterations;
    if (second.status == Status::optimal && max_violation(program, second.x) > kFeasibilityTolerance)
        second.status = Status::numerical_failure;
    return second;
}

} // namespace regionprune::lp
