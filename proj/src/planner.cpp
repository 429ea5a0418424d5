#include "regionprune/planner.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "regionprune/error.hpp"

namespace regionprune {

namespace {

struct Candidate {
    DensityPair densities{};
    BoundValue bound;
};

bool strictly_better(const BoundValue& a, const BoundValue& b)
{
    if (a.exact && b.exact)
        return *a.exact > *b.exact;
    return a.log2 > b.log2;
}

double clamp01(double v)
{
    return std::clamp(v, 0.0, 1.0);
}

class PlanEvaluator {
public:
    PlanEvaluator(const Architecture& arch, std::array<std::size_t, 2> counts, double density,
                  const RankModel& model, std::size_t d0, RankDistributionCache* cache)
        : arch_(arch)
        , counts_(counts)
        , budget_(density * static_cast<double>(counts[0] + counts[1]))
        , model_(model)
        , d0_(d0)
        , cache_(cache ? cache : &own_cache_)
    {
    }

    /// p2 implied by p1 under the budget.
    double implied_second(double p1) const
    {
        return clamp01((budget_ - p1 * static_cast<double>(counts_[0])) / static_cast<double>(counts_[1]));
    }
    double implied_first(double p2) const
    {
        return clamp01((budget_ - p2 * static_cast<double>(counts_[1])) / static_cast<double>(counts_[0]));
    }

    Candidate at(DensityPair densities)
    {
        const DensityAssignment assignment{{densities[0], densities[1]}};
        const auto ranks = layer_rank_distributions(arch_, assignment, model_, cache_);
        return Candidate{densities, evaluate_expected_bound(arch_, assignment, ranks, d0_)};
    }
    Candidate at_first(double p1) { return at({p1, implied_second(p1)}); }

private:
    const Architecture& arch_;
    std::array<std::size_t, 2> counts_;
    double budget_;
    RankModel model_;
    std::size_t d0_;
    RankDistributionCache own_cache_;
    RankDistributionCache* cache_;
};

PruningPlan to_plan(double density, const Candidate& c, PlanMethod method)
{
    return PruningPlan{density, {c.densities[0], c.densities[1]}, c.bound.log2, method};
}

} // namespace

std::string to_string(PlanMethod method)
{
    switch (method) {
    case PlanMethod::uniform:
        return "uniform";
    case PlanMethod::quadratic_vertex:
        return "quadratic_vertex";
    case PlanMethod::grid_search:
        return "grid_search";
    }
    return "uniform";
}

PlanMethod plan_method_from_string(std::string_view text)
{
    if (text == "uniform")
        return PlanMethod::uniform;
    if (text == "quadratic_vertex")
        return PlanMethod::quadratic_vertex;
    if (text == "grid_search")
        return PlanMethod::grid_search;
    throw ConfigError("unknown plan method '" + std::string(text) + "'");
}

nlohmann::json PruningPlan::to_json() const
{
    return nlohmann::json{{"global_density", global_density},
                          {"per_layer_density", per_layer_density},
                          {"predicted_log2_bound", predicted_log2_bound},
                          {"method", to_string(method)}};
}

PruningPlan PruningPlan::from_json(const nlohmann::json& doc)
{
    try {
        PruningPlan plan;
        plan.global_density = doc.at("global_density").get<double>();
        plan.per_layer_density = doc.at("per_layer_density").get<std::vector<double>>();
        plan.predicted_log2_bound = doc.value("predicted_log2_bound", 0.0);
        plan.method = plan_method_from_string(doc.value("method", std::string("uniform")));
        return plan;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed plan document: ") + e.what());
    }
}

std::array<DensityPair, 2> feasible_extremes(std::array<std::size_t, 2> param_counts, double density)
{
    if (param_counts[0] == 0 || param_counts[1] == 0)
        throw ConfigError("prunable layers must have at least one parameter");
    if (!(density >= 0.0 && density <= 1.0))
        throw ConfigError("global density must lie in [0, 1]");
    const double n1 = static_cast<double>(param_counts[0]);
    const double n2 = static_cast<double>(param_counts[1]);
    const double budget = density * (n1 + n2);

    const double keep2 = std::min(1.0, budget / n2);
    const DensityPair prune_first{clamp01((budget - keep2 * n2) / n1), keep2};
    const double keep1 = std::min(1.0, budget / n1);
    const DensityPair prune_second{keep1, clamp01((budget - keep1 * n1) / n2)};
    return {prune_first, prune_second};
}

PruningPlan plan_densities(const Architecture& arch, std::span<const std::size_t> param_counts, double density,
                           const RankModel& model, std::size_t d0, const PlannerOptions& options,
                           RankDistributionCache* cache)
{
    arch.validate();
    if (arch.depth() != 2 || param_counts.size() != 2)
        throw UnsupportedError("density planning supports exactly two prunable layers, got "
                               + std::to_string(arch.depth()));
    if (!(density >= 0.0 && density <= 1.0))
        throw ConfigError("global density must lie in [0, 1]");

    const std::array<std::size_t, 2> counts{param_counts[0], param_counts[1]};
    PlanEvaluator evaluate(arch, counts, density, model, d0, cache);
    const Candidate uniform = evaluate.at({density, density});
    if (density == 1.0 || density == 0.0)
        return to_plan(density, uniform, PlanMethod::uniform);

    const auto extremes = feasible_extremes(counts, density);
    const std::size_t larger = counts[0] >= counts[1] ? 0 : 1;

    // Quadratic in p1 through (extreme pruning layer 1, uniform, extreme pruning layer 2).
    const double x0 = extremes[0][0];
    const double x1 = density;
    const double x2 = extremes[1][0];
    if (x1 - x0 > 1e-12 && x2 - x1 > 1e-12) {
        const Candidate low = evaluate.at(extremes[0]);
        const Candidate high = evaluate.at(extremes[1]);
        const double slope01 = (uniform.bound.log2 - low.bound.log2) / (x1 - x0);
        const double slope12 = (high.bound.log2 - uniform.bound.log2) / (x2 - x1);
        const double curvature = (slope12 - slope01) / (x2 - x0);
        if (curvature < 0.0) {
            const double vertex = 0.5 * (x0 + x1) - slope01 / (2.0 * curvature);
            const bool interior = vertex > x0 && vertex < x2;
            const bool prunes_larger = larger == 0 ? vertex < density : vertex > density;
            if (interior && prunes_larger) {
                const Candidate planned = evaluate.at_first(std::clamp(vertex, x0, x2));
                if (!strictly_better(uniform.bound, planned.bound))
                    return to_plan(density, planned, PlanMethod::quadratic_vertex);
            }
        }
    }
    // Collinear or convex fits, vertices on the wrong side, and vertices worse
    // than uniform all land here.

    const std::size_t points = std::max<std::size_t>(options.grid_points, 2);
    const double target = extremes[larger][larger];
    Candidate best = uniform;
    for (std::size_t i = 1; i < points; ++i) {
        const double t = density + (target - density) * static_cast<double>(i) / static_cast<double>(points - 1);
        const Candidate c = larger == 0 ? evaluate.at_first(t) : evaluate.at({evaluate.implied_first(t), t});
        // Strict improvement only: ties stay with the candidate closest to uniform.
        if (strictly_better(c.bound, best.bound))
            best = c;
    }
    return to_plan(density, best, PlanMethod::grid_search);
}

PruningPlan plan_densities(const Architecture& arch, double density, const RankModel& model,
                           RankDistributionCache* cache)
{
    const auto counts = arch.weight_counts();
    return plan_densities(arch, counts, density, model, arch.input_dim, PlannerOptions{}, cache);
}

} // namespace regionprune
