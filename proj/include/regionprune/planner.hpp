#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "regionprune/bound.hpp"
#include "regionprune/rankdist.hpp"

namespace regionprune {

enum class PlanMethod { uniform, quadratic_vertex, grid_search };

std::string to_string(PlanMethod method);
PlanMethod plan_method_from_string(std::string_view text);

/// Per-layer densities that keep sum_l p_l * N_l equal to p * sum_l N_l.
struct PruningPlan {
    double global_density = 1.0;
    std::vector<double> per_layer_density;
    double predicted_log2_bound = 0.0;
    PlanMethod method = PlanMethod::uniform;

    nlohmann::json to_json() const;
    static PruningPlan from_json(const nlohmann::json& doc);
};

/// Densities (p1, p2) of a two-layer plan.
using DensityPair = std::array<double, 2>;

/// The two plans that prune as much as possible from one layer: element 0
/// prunes layer 1 hardest (layer 2 kept as dense as the budget allows),
/// element 1 prunes layer 2 hardest.
std::array<DensityPair, 2> feasible_extremes(std::array<std::size_t, 2> param_counts, double density);

struct PlannerOptions {
    /// Candidates sampled between the uniform density and the extreme of the
    /// larger layer when the quadratic model is not trusted.
    std::size_t grid_points = 20;
};

/// Choose (p1, p2) for a network with exactly two prunable hidden layers so
/// that the expected region bound is as large as possible under the budget.
/// Evaluates the uniform plan and both extremes, fits a quadratic in p1, and
/// keeps its vertex when it is an interior maximum that prunes more from the
/// layer with more parameters and is no worse than uniform. Otherwise samples
/// `grid_points` densities for the larger layer between p and its extreme.
PruningPlan plan_densities(const Architecture& arch, std::span<const std::size_t> param_counts, double density,
                           const RankModel& model, std::size_t d0, const PlannerOptions& options = {},
                           RankDistributionCache* cache = nullptr);

/// Convenience overload using arch.weight_counts() and d0 = arch.input_dim.
PruningPlan plan_densities(const Architecture& arch, double density, const RankModel& model,
                           RankDistributionCache* cache = nullptr);

} // namespace regionprune
