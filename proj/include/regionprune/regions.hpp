#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "regionprune/network.hpp"

namespace regionprune {

/// Hidden part of a rectifier network in double precision. The output layer
/// is linear and carries no activation pattern, so it is dropped.
struct ReluNetwork {
    struct Layer {
        std::size_t rows = 0;
        std::size_t cols = 0;
        std::vector<double> weights; // row-major, rows x cols
        std::vector<double> bias;
    };

    std::size_t input_dim = 0;
    std::vector<Layer> layers;

    static ReluNetwork from_model(const MlpModel& model);
    std::size_t hidden_neurons() const;
    void validate() const;

    /// Preactivations of every hidden neuron for input x, layer by layer.
    std::vector<std::vector<double>> preactivations(const std::vector<double>& x) const;
};

struct BoxDomain {
    std::vector<double> lower;
    std::vector<double> upper;

    static BoxDomain unit(std::size_t dim);
    void validate() const;
};

/// Affine hull of sample points: base + span(directions).
struct AffineSubspace {
    std::vector<double> base;
    std::vector<std::vector<double>> directions;

    /// base = points[0], directions = points[i] - points[0]. Needs >= 2 points.
    static AffineSubspace from_points(const std::vector<std::vector<double>>& points);
    /// Numerical rank of the direction set.
    std::size_t dimension() const;
};

/// Valid interval for every hidden preactivation over the feasible inputs.
struct NeuronBounds {
    std::vector<std::vector<double>> lo;
    std::vector<std::vector<double>> hi;
    /// False when the domain and subspace do not intersect; lo/hi are then empty.
    bool feasible = true;
};

/// Layer 1 is bounded exactly by linear programs over domain and subspace;
/// deeper layers by interval arithmetic through the rectifier.
NeuronBounds preactivation_bounds(const ReluNetwork& net, const BoxDomain& domain,
                                  const std::optional<AffineSubspace>& subspace = std::nullopt);

struct CountOptions {
    double epsilon = 1e-6;
    bool fix_stable = true;
    std::size_t threads = 1;
    bool keep_patterns = false;
};

struct RegionCountResult {
    std::uint64_t count = 0;
    double epsilon = 0.0;
    std::uint64_t nodes_explored = 0;
    std::uint64_t stable_fixed = 0;
    double elapsed_seconds = 0.0;
    std::size_t subspace_dimension = 0;
    /// False when the search stopped early; `count` is then a partial count
    /// and `diagnostic` explains why.
    bool complete = true;
    std::string diagnostic;
    std::optional<std::vector<std::string>> patterns;

    nlohmann::json to_json() const;
};

/// Number of activation patterns whose region has a point where every hidden
/// neuron is at least `epsilon` away from its threshold. Depth-first branch
/// and bound over neurons in layer order with LP relaxation pruning.
RegionCountResult count_regions(const ReluNetwork& net, const BoxDomain& domain,
                                const std::optional<AffineSubspace>& subspace = std::nullopt,
                                const CountOptions& options = {});

/// Enumerates all 2^N patterns (N <= 20) and tests each one with a single LP.
std::uint64_t brute_force_count(const ReluNetwork& net, const BoxDomain& domain,
                                const std::optional<AffineSubspace>& subspace = std::nullopt,
                                double epsilon = 1e-6);

inline constexpr std::size_t kBruteForceMaxNeurons = 20;

} // namespace regionprune
