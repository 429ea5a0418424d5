#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "regionprune/rankdist.hpp"

namespace regionprune {

/// Input dimension and hidden-layer widths of a fully-connected rectifier
/// network. The output layer does not define regions and is not listed.
struct Architecture {
    std::size_t input_dim = 0;
    std::vector<std::size_t> widths;

    std::size_t depth() const { return widths.size(); }
    /// Fan-in of hidden layer `layer` (0-based).
    std::size_t fan_in(std::size_t layer) const { return layer == 0 ? input_dim : widths[layer - 1]; }
    /// n_l * n_{l-1} for every hidden layer.
    std::vector<std::size_t> weight_counts() const;
    void validate() const;
    std::string to_string() const;

    bool operator==(const Architecture&) const = default;
};

/// Probability p_l that each weight of hidden layer l survives pruning.
struct DensityAssignment {
    std::vector<double> per_layer;

    static DensityAssignment uniform(const Architecture& arch, double density);
    void validate(const Architecture& arch) const;
};

/// Exact region-count bound plus its base-2 logarithm. Values produced by the
/// log-domain path carry no exact part and are flagged approximate.
struct BoundValue {
    std::optional<Rational> exact;
    double log2 = 0.0;
    bool approximate = false;

    nlohmann::json to_json() const;
};

/// log2 of a positive rational, from the binary exponents of numerator and
/// denominator.
double log2_of(const Rational& value);
double log2_of(const Integer& value);

Integer binomial(std::size_t n, std::size_t k);

/// sum_{j=0}^{min(n, dim)} C(n, j): regions cut by n hyperplanes in general
/// position in a dim-dimensional space.
Integer zaslavsky_regions(std::size_t hyperplanes, std::size_t dim);

/// Layer-by-layer recurrence assuming every layer attains full rank, starting
/// from an input of dimension d0 <= arch.input_dim.
BoundValue deterministic_bound(const Architecture& arch, std::size_t d0);

/// Expected maximum number of regions when the weight matrix of layer l has
/// rank distribution ranks[l] (rows = n_l, cols = n_{l-1}). Exact rational.
BoundValue expected_bound(const Architecture& arch, const DensityAssignment& densities,
                          std::span<const RankDistribution> ranks, std::size_t d0);

/// Same recurrence in the log domain with lgamma binomials. Approximate.
BoundValue expected_bound_log_domain(const Architecture& arch, const DensityAssignment& densities,
                                     std::span<const RankDistribution> ranks, std::size_t d0);

/// Widths above this switch `evaluate_expected_bound` to the log domain.
inline constexpr std::size_t kLogDomainWidthThreshold = 1024;

BoundValue evaluate_expected_bound(const Architecture& arch, const DensityAssignment& densities,
                                   std::span<const RankDistribution> ranks, std::size_t d0);

/// Rank distribution of every hidden layer under `model`.
std::vector<RankDistribution> layer_rank_distributions(const Architecture& arch,
                                                       const DensityAssignment& densities,
                                                       const RankModel& model,
                                                       RankDistributionCache* cache = nullptr);

/// "784x100x100x10" -> input 784, hidden {100, 100}, output 10.
struct LayerSpec {
    Architecture arch;
    std::size_t output_dim = 0;
};
LayerSpec parse_layer_spec(std::string_view text);

} // namespace regionprune
