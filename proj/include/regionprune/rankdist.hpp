#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <gmpxx.h>

namespace regionprune {

using Integer = mpz_class;
using Rational = mpq_class;

/// Row-major 0/1 support pattern of a matrix.
class SparsityPattern {
public:
    SparsityPattern() = default;
    SparsityPattern(std::size_t rows, std::size_t cols);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool at(std::size_t r, std::size_t c) const { return cells_[r * cols_ + c] != 0; }
    void set(std::size_t r, std::size_t c, bool value = true) { cells_[r * cols_ + c] = value ? 1 : 0; }
    std::size_t count_nonzero() const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<std::uint8_t> cells_;
};

/// Size of a maximum bipartite matching between rows and columns of the
/// support (Hopcroft-Karp). Equals the rank of almost every real matrix with
/// this support.
std::size_t structural_rank(const SparsityPattern& pattern);

/// Rank by Gaussian elimination with partial pivoting. A pivot is accepted
/// when its magnitude exceeds `relative_tolerance` times the largest entry.
std::size_t numeric_rank(std::size_t rows, std::size_t cols, std::span<const double> values,
                         double relative_tolerance = 1e-9);

enum class RankMethod { sampled, analytic };

std::string to_string(RankMethod method);
RankMethod rank_method_from_string(std::string_view text);

/// Probability mass over the rank of an R x C matrix whose entries are kept
/// independently with probability `density`.
struct RankDistribution {
    std::size_t rows = 0;
    std::size_t cols = 0;
    double density = 0.0;
    std::map<std::size_t, Rational> probs;
    std::size_t sample_count = 0;
    std::optional<std::uint64_t> seed;
    RankMethod method = RankMethod::analytic;

    std::size_t max_rank() const { return rows < cols ? rows : cols; }
    double probability(std::size_t rank) const;
    double mean() const;

    /// Throws ConfigError when the support or total mass is off.
    void validate() const;

    /// Self-describing text record, one field per line.
    std::string to_record() const;
    static RankDistribution from_record(std::string_view text);
};

/// Protocol knobs for `sample_rank_distribution`.
struct SamplingOptions {
    std::size_t batch = 50;
    std::size_t threads = 1;
    /// Draw Gaussian values and use `numeric_rank` instead of the support's
    /// structural rank. Validation only; much slower.
    bool numeric = false;
};

/// Support pattern of sample `index` in the stream identified by `seed`.
SparsityPattern sample_pattern(std::size_t rows, std::size_t cols, double density, std::uint64_t seed,
                               std::uint64_t index);

/// Sample `index` as a dense row-major matrix of standard normals with the
/// pruned entries zeroed; its support equals `sample_pattern(...)`.
std::vector<double> sample_sparse_gaussian(std::size_t rows, std::size_t cols, double density,
                                           std::uint64_t seed, std::uint64_t index);

/// Draw 50 matrices, then keep drawing until the count reaches
/// (max_rank_seen - min_rank_seen + 1) * 50, re-evaluating the target as the
/// observed range widens. Deterministic for a seed, independent of threads.
RankDistribution sample_rank_distribution(std::size_t rows, std::size_t cols, double density,
                                          std::uint64_t seed, const SamplingOptions& options = {});

/// Binomial overestimate: each of the min(R, C) lines along the short side is
/// nonzero with probability 1 - (1 - density)^max(R, C).
RankDistribution analytic_rank_distribution(std::size_t rows, std::size_t cols, double density);

/// n! / C(n^2, n): chance that n nonzeros placed uniformly in an n x n
/// pattern land in distinct rows and columns.
Rational fixed_count_fullrank_probability(std::size_t n);

/// Which rank model the bound and the planner evaluate.
struct RankModel {
    RankMethod method = RankMethod::analytic;
    std::uint64_t seed = 0;
    SamplingOptions sampling{};

    static RankModel analytic() { return {}; }
    static RankModel sampled(std::uint64_t seed) { return {RankMethod::sampled, seed, {}}; }
};

/// Thread-safe memo of distributions keyed by (rows, cols, density quantized
/// to 1e-6, method, seed). Lookups quantize the density before computing so
/// that the cached value does not depend on which caller came first.
class RankDistributionCache {
public:
    RankDistribution get(std::size_t rows, std::size_t cols, double density, const RankModel& model);
    std::size_t size() const;

    static double quantize(double density);

private:
    using Key = std::tuple<std::size_t, std::size_t, std::int64_t, int, std::uint64_t>;
    mutable std::mutex mutex_;
    std::map<Key, RankDistribution> entries_;
};

} // namespace regionprune
