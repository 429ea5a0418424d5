#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "regionprune/bound.hpp"
#include "regionprune/network.hpp"
#include "regionprune/rankdist.hpp"

namespace regionprune {

/// fig1: regions on random sample subspaces and accuracy versus density.
/// fig2: expected bound and accuracy versus density (same models as fig1).
/// fig3: planned versus uniform per-layer densities from the same weights.
enum class ExperimentKind { fig1, fig2, fig3 };

std::string to_string(ExperimentKind kind);
ExperimentKind experiment_kind_from_string(std::string_view text);

/// Directory holding the IDX files: `explicit_dir` when given, else the
/// REGION_PRUNE_DATA environment variable, else "data/mnist".
std::filesystem::path resolve_data_dir(const std::optional<std::filesystem::path>& explicit_dir);

struct DataSplits {
    Dataset train;
    Dataset test;
};

/// Loads train-* and t10k-* IDX pairs, gzip-compressed or not.
DataSplits load_mnist_dir(const std::filesystem::path& dir);

struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::fig1;
    std::string dataset = "mnist";
    LayerSpec layers;
    std::vector<double> densities{1.0, 0.5, 0.2, 0.1, 0.05, 0.03, 0.02, 0.01};
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    TrainConfig train;
    std::size_t sample_points = 2;
    double epsilon = 1e-6;
    std::uint64_t subspace_seed = 7;
    RankModel rank_model = RankModel::analytic();
    std::size_t jobs = 1;
    std::filesystem::path out_dir = "results";

    void validate() const;
    nlohmann::json to_json() const;
};

/// One CSV row. Columns that do not apply stay empty.
struct ExperimentRow {
    std::string experiment;
    std::string dataset;
    std::string arch;
    std::uint64_t seed = 0;
    double global_density = 1.0;
    double p1 = 1.0;
    std::optional<double> p2;
    double acc_pre = 0.0;
    double acc_pruned = 0.0;
    double acc_finetuned = 0.0;
    std::optional<double> log2_bound;
    std::optional<std::uint64_t> region_count;
    std::optional<std::size_t> samples;
    std::optional<double> epsilon;
    double wall_seconds = 0.0;
};

std::string csv_header();
std::string csv_line(const ExperimentRow& row);
std::vector<ExperimentRow> read_csv(const std::filesystem::path& path);

/// Means over seeds for one experiment label, in the order densities first appear.
struct DensitySummary {
    double density = 0.0;
    std::size_t runs = 0;
    double mean_accuracy = 0.0;
    std::optional<double> mean_region_count;
    std::optional<double> mean_log2_bound;
};
std::vector<DensitySummary> summarize(const std::vector<ExperimentRow>& rows, const std::string& experiment);

/// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

struct ExperimentOutput {
    std::vector<ExperimentRow> rows;
    std::filesystem::path csv_path;
    std::filesystem::path svg_path;
    std::filesystem::path meta_path;
};

/// Runs the experiment matrix, reusing model checkpoints under
/// out_dir/checkpoints, and writes <kind>.csv, <kind>.svg and <kind>.meta.json.
ExperimentOutput run_experiment(const ExperimentConfig& config, const DataSplits& data);

/// Test-set indices for the sample subspace of one (seed, density) cell.
std::vector<std::size_t> draw_sample_indices(std::size_t test_size, std::size_t count, std::uint64_t subspace_seed,
                                             std::uint64_t seed, double density);

} // namespace regionprune
