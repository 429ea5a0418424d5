// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "regionprune/bound.hpp"
#include "regionprune/experiment.hpp"
#include "regionprune/network.hpp"
#include "regionprune/planner.hpp"
#include "regionprune/rankdist.hpp"
#include "regionprune/regions.hpp"

using namespace regionprune;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point start)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(double v, int digits = 4)
{
    std::ostringstream out;
    out.precision(digits);
    out << v;
    return out.str();
}

ReluNetwork random_network(std::size_t input_dim, const std::vector<std::size_t>& widths, std::mt19937_64& rng)
{
    std::normal_distribution<double> g;
    ReluNetwork net;
    net.input_dim = input_dim;
    std::size_t cols = input_dim;
    for (std::size_t rows : widths) {
        ReluNetwork::Layer layer{rows, cols, {}, {}};
        for (std::size_t i = 0; i < rows * cols; ++i)
            layer.weights.push_back(g(rng));
        for (std::size_t i = 0; i < rows; ++i)
            layer.bias.push_back(0.5 * g(rng));
        net.layers.push_back(std::move(layer));
        cols = rows;
    }
    return net;
}

std::vector<double> random_point(std::size_t dim, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> x(dim);
    for (double& v : x)
        v = u(rng);
    return x;
}

Outcome oracle_equivalence()
{
    const auto start = std::chrono::steady_clock::now();
    std::mt19937_64 rng(2024);
    std::size_t networks = 0;
    std::size_t comparisons = 0;
    std::size_t mismatches = 0;
    std::uint64_t largest = 0;
    while (networks < 60) {
        const std::size_t dim = std::uniform_int_distribution<std::size_t>(2, 4)(rng);
        const std::size_t budget = std::uniform_int_distribution<std::size_t>(2, 12)(rng);
        std::vector<std::size_t> widths;
        std::size_t used = 0;
        while (used < budget && widths.size() < 3) {
            const std::size_t w = std::uniform_int_distribution<std::size_t>(1, budget - used)(rng);
            widths.push_back(w);
            used += w;
        }
        const ReluNetwork net = random_network(dim, widths, rng);
        ++networks;
        for (std::size_t samples : {0u, 2u, 3u}) {
            std::optional<AffineSubspace> sub;
            if (samples > 0) {
                std::vector<std::vector<double>> pts;
                for (std::size_t s = 0; s < samples; ++s)
                    pts.push_back(random_point(dim, rng));
                sub = AffineSubspace::from_points(pts);
            }
            const RegionCountResult r = count_regions(net, BoxDomain::unit(dim), sub);
            const std::uint64_t oracle = brute_force_count(net, BoxDomain::unit(dim), sub);
            ++comparisons;
            largest = std::max(largest, oracle);
            if (!r.complete || r.count != oracle)
                ++mismatches;
        }
    }
    const double elapsed = seconds_since(start);
    return {mismatches == 0 && elapsed < 300.0,
            std::to_string(networks) + " networks, " + std::to_string(comparisons) + " comparisons, "
                + std::to_string(mismatches) + " mismatches, max count " + std::to_string(largest) + ", "
                + fmt(elapsed, 3) + " s"};
}

Outcome full_rank_collapse()
{
    std::mt19937_64 rng(7);
    std::size_t agree = 0;
    for (int t = 0; t < 20; ++t) {
        const std::size_t depth = std::uniform_int_distribution<std::size_t>(1, 4)(rng);
        Architecture arch{std::uniform_int_distribution<std::size_t>(8, 64)(rng), {}};
        std::size_t previous = arch.input_dim;
        for (std::size_t l = 0; l < depth; ++l) {
            previous = std::uniform_int_distribution<std::size_t>(1, previous)(rng);
            arch.widths.push_back(previous);
        }
        const auto dense = DensityAssignment::uniform(arch, 1.0);
        std::vector<RankDistribution> ranks;
        for (std::size_t l = 0; l < depth; ++l) {
            RankDistribution d;
            d.rows = arch.widths[l];
            d.cols = arch.fan_in(l);
            d.density = 1.0;
            d.probs[std::min(d.rows, d.cols)] = 1;
            ranks.push_back(d);
        }
        const std::size_t d0 = std::uniform_int_distribution<std::size_t>(1, arch.input_dim)(rng);
        const BoundValue e = expected_bound(arch, dense, ranks, d0);
        const BoundValue det = deterministic_bound(arch, d0);
        const BoundValue analytic =
            expected_bound(arch, dense, layer_rank_distributions(arch, dense, RankModel::analytic()), d0);
        if (*e.exact == *det.exact && *analytic.exact == *det.exact)
            ++agree;
    }
    return {agree == 20, std::to_string(agree) + "/20 architectures agree exactly"};
}

Outcome hand_values()
{
    const Rational a = *deterministic_bound(Architecture{784, {20, 20}}, 1).exact;
    const double a_log2 = deterministic_bound(Architecture{784, {20, 20}}, 1).log2;
    const Rational b = *deterministic_bound(Architecture{784, {2, 2}}, 2).exact;

    RankDistribution first;
    first.rows = 2;
    first.cols = 784;
    first.density = 0.5;
    first.probs[1] = Rational(1, 2);
    first.probs[2] = Rational(1, 2);
    RankDistribution second;
    second.rows = 2;
    second.cols = 2;
    second.density = 0.5;
    second.probs[2] = 1;
    const std::vector<RankDistribution> ranks{first, second};
    const Rational c = *expected_bound(Architecture{784, {2, 2}}, DensityAssignment{{0.5, 0.5}}, ranks, 2).exact;
    return {a == 441 && b == 11 && c == 10,
            "441 -> " + a.get_str() + " (log2 " + fmt(a_log2) + "), 11 -> " + b.get_str() + ", 10 -> " + c.get_str()};
}

Outcome rank_model_validation()
{
    // Conditioned on exactly two nonzeros, a 2x2 pattern is full rank with probability 1/3.
    std::size_t conditioned = 0;
    std::size_t full = 0;
    for (std::uint64_t i = 0; conditioned < 20000; ++i) {
        const SparsityPattern p = sample_pattern(2, 2, 0.5, 31, i);
        if (p.count_nonzero() != 2)
            continue;
        ++conditioned;
        if (structural_rank(p) == 2)
            ++full;
    }
    const double rate = static_cast<double>(full) / static_cast<double>(conditioned);
    const double sigma = std::sqrt((1.0 / 3.0) * (2.0 / 3.0) / static_cast<double>(conditioned));
    const bool within = std::abs(rate - 1.0 / 3.0) <= 3 * sigma;

    std::size_t mismatches = 0;
    std::size_t shapes = 0;
    const std::pair<std::size_t, std::size_t> tested[] = {{2, 2}, {5, 5}, {10, 20}, {20, 10}, {20, 20}};
    for (const auto& [rows, cols] : tested) {
        ++shapes;
        for (std::uint64_t i = 0; i < 1000; ++i) {
            const double density = 0.05 + 0.9 * static_cast<double>(i % 10) / 10.0;
            const auto values = sample_sparse_gaussian(rows, cols, density, 101, i);
            if (structural_rank(sample_pattern(rows, cols, density, 101, i)) != numeric_rank(rows, cols, values))
                ++mismatches;
        }
    }
    return {within && mismatches == 0,
            "P(full | 2 nonzeros) = " + fmt(rate) + " over " + std::to_string(conditioned) + " samples (3 sigma "
                + fmt(3 * sigma, 3) + "); structural vs numeric mismatches " + std::to_string(mismatches) + " over "
                + std::to_string(shapes) + " shapes x 1000"};
}

Outcome density_monotonicity()
{
    const Architecture arch{784, {20, 20}};
    std::vector<double> values;
    std::optional<Rational> previous;
    bool monotone = true;
    for (int i = 1; i <= 10; ++i) {
        const auto d = DensityAssignment::uniform(arch, i / 10.0);
        const BoundValue v =
            evaluate_expected_bound(arch, d, layer_rank_distributions(arch, d, RankModel::analytic()), 784);
        // Near saturation the log2 values agree to ~1e-13, so order is judged on the exact values.
        if (previous && *v.exact < *previous)
            monotone = false;
        previous = v.exact;
        values.push_back(v.log2);
    }
    return {monotone, "log2 bound " + fmt(values.front(), 12) + " at p=0.1 to " + fmt(values.back(), 12) + " at p=1.0"};
}

Outcome sampled_runtime()
{
    const Architecture arch{784, {100, 100}};
    double worst_sampled = 0.0;
    double worst_analytic = 0.0;
    for (double p : {0.02, 0.05, 0.2}) {
        const auto d = DensityAssignment::uniform(arch, p);
        auto start = std::chrono::steady_clock::now();
        evaluate_expected_bound(arch, d, layer_rank_distributions(arch, d, RankModel::sampled(1)), 784);
        worst_sampled = std::max(worst_sampled, seconds_since(start));
        start = std::chrono::steady_clock::now();
        evaluate_expected_bound(arch, d, layer_rank_distributions(arch, d, RankModel::analytic()), 784);
        worst_analytic = std::max(worst_analytic, seconds_since(start));
    }
    return {worst_sampled <= 60.0 && worst_analytic <= 2.0,
            "slowest sampled " + fmt(worst_sampled, 3) + " s, slowest analytic " + fmt(worst_analytic, 3) + " s"};
}

Outcome budget_accounting()
{
    const Architecture arch{784, {100, 100}};
    const auto counts = arch.weight_counts();
    const std::size_t total = counts[0] + counts[1];
    const MlpModel base = MlpModel::initialize(arch, 10, 5);
    bool budget_ok = true;
    std::string worst;
    for (double p : {0.5, 0.1, 0.05, 0.03, 0.02, 0.01}) {
        const PruningPlan plan = plan_densities(arch, p, RankModel::analytic());
        const MlpModel pruned = magnitude_prune(base, plan.per_layer_density);
        std::size_t kept = 0;
        for (std::size_t l = 0; l < 2; ++l) {
            const std::size_t expected = kept_weight_count(counts[l], plan.per_layer_density[l]);
            if (pruned.layers[l].kept() != expected)
                budget_ok = false;
            kept += pruned.layers[l].kept();
        }
        // Each layer rounds up by less than one weight.
        const double target = p * static_cast<double>(total);
        const double excess = static_cast<double>(kept) - target;
        if (excess < -1e-6 || excess >= 2.0)
            budget_ok = false;
        worst = "p=" + fmt(p) + ": kept " + std::to_string(kept) + " vs budget " + fmt(target, 8);
    }

    // Fine-tune a pruned model on a slice of the bundled data.
    const DataSplits data = load_mnist_dir(fs::path(REGION_PRUNE_SOURCE_DIR) / "data" / "mnist");
    std::vector<std::size_t> first(1000);
    for (std::size_t i = 0; i < first.size(); ++i)
        first[i] = i;
    const PruningPlan plan = plan_densities(arch, 0.05, RankModel::analytic());
    TrainConfig tc;
    tc.epochs = 2;
    const MlpModel tuned = train(magnitude_prune(base, plan.per_layer_density), data.train.select(first), tc);
    std::size_t leaked = 0;
    for (std::size_t l = 0; l < 2; ++l)
        for (std::size_t i = 0; i < tuned.layers[l].weights.size(); ++i)
            if (!tuned.layers[l].mask[i] && tuned.layers[l].weights[i] != 0.0f)
                ++leaked;
    return {budget_ok && leaked == 0,
            "per-layer counts match ceiling rounding (last " + worst + "); nonzero masked weights after fine-tuning: "
                + std::to_string(leaked)};
}

ExperimentConfig mnist_config(ExperimentKind kind, const std::string& arch, std::vector<double> densities,
                              const fs::path& out)
{
    ExperimentConfig c;
    c.kind = kind;
    c.layers = parse_layer_spec(arch);
    c.densities = std::move(densities);
    c.seeds = {0, 1, 2, 3, 4};
    c.sample_points = 2;
    c.out_dir = out;
    return c;
}

Outcome fig1_trends(const fs::path& work)
{
    const auto start = std::chrono::steady_clock::now();
    const DataSplits data = load_mnist_dir(fs::path(REGION_PRUNE_SOURCE_DIR) / "data" / "mnist");
    const ExperimentOutput out = run_experiment(
        mnist_config(ExperimentKind::fig1, "784x20x20x10", {1.0, 0.5, 0.2, 0.1, 0.05}, work / "fig1"), data);
    const auto summary = summarize(out.rows, "fig1");
    std::vector<double> density;
    std::vector<double> count;
    std::vector<double> accuracy;
    for (const DensitySummary& s : summary) {
        density.push_back(s.density);
        count.push_back(*s.mean_region_count);
        accuracy.push_back(s.mean_accuracy);
    }
    // summarize() orders by decreasing density, so sparser settings come later.
    bool count_ok = true;
    bool acc_ok = true;
    for (std::size_t i = 1; i < summary.size(); ++i) {
        count_ok = count_ok && count[i] <= count[i - 1];
        acc_ok = acc_ok && accuracy[i] <= accuracy[i - 1];
    }
    const double rho = spearman(density, count);
    std::string detail = "mean counts";
    for (std::size_t i = 0; i < summary.size(); ++i)
        detail += " " + fmt(density[i], 2) + ":" + fmt(count[i], 4) + "/acc " + fmt(accuracy[i], 4);
    detail += "; spearman " + fmt(rho, 3) + "; counts " + (count_ok ? "monotone" : "NOT monotone") + ", accuracy "
              + (acc_ok ? "monotone" : "NOT monotone") + "; " + fmt(seconds_since(start), 4) + " s";
    return {count_ok && acc_ok && rho >= 0.9, detail};
}

Outcome fig3_gain(const fs::path& work)
{
    const auto start = std::chrono::steady_clock::now();
    const DataSplits data = load_mnist_dir(fs::path(REGION_PRUNE_SOURCE_DIR) / "data" / "mnist");
    const ExperimentOutput out = run_experiment(
        mnist_config(ExperimentKind::fig3, "784x100x100x10", {0.05, 0.02}, work / "fig3"), data);
    const auto uniform = summarize(out.rows, "fig3:uniform");
    const auto planned = summarize(out.rows, "fig3:planned");
    std::string detail;
    double lowest_gain = 0.0;
    bool any_nonnegative = false;
    for (std::size_t i = 0; i < uniform.size(); ++i) {
        const double gain = planned[i].mean_accuracy - uniform[i].mean_accuracy;
        any_nonnegative = any_nonnegative || gain >= 0.0;
        detail += "p=" + fmt(uniform[i].density, 2) + " uniform " + fmt(uniform[i].mean_accuracy) + " planned "
                  + fmt(planned[i].mean_accuracy) + " gain " + fmt(gain, 3) + "; ";
        lowest_gain = gain; // densities are listed in decreasing order
    }
    detail += fmt(seconds_since(start), 4) + " s";
    return {lowest_gain >= 0.0 && any_nonnegative, detail};
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Acceptance checks"};
    std::vector<int> only;
    std::string work_dir = (fs::temp_directory_path() / "region-prune-acceptance").string();
    app.add_option("--only", only, "Comma-separated criterion numbers")->delimiter(',');
    app.add_option("--work-dir", work_dir, "Directory for experiment checkpoints and outputs");
    std::vector<int> known_red;
    app.add_option("--known-red", known_red,
                   "Criteria whose failure is analyzed in the README; still printed as FAIL, but not fatal")
        ->delimiter(',');
    CLI11_PARSE(app, argc, argv);

    const fs::path work(work_dir);
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"counting matches brute-force enumeration", oracle_equivalence},
        {"full-rank expected bound equals deterministic bound", full_rank_collapse},
        {"hand-derived bound values", hand_values},
        {"rank model validation", rank_model_validation},
        {"bound nondecreasing in density", density_monotonicity},
        {"MNIST 784-20-20-10 region and accuracy trends", [&] { return fig1_trends(work); }},
        {"MNIST 784-100-100-10 planned vs uniform gain", [&] { return fig3_gain(work); }},
        {"bound runtime", sampled_runtime},
        {"budget and mask accounting", budget_accounting},
    };
    const std::set<int> selected(only.begin(), only.end());
    const std::set<int> tolerated(known_red.begin(), known_red.end());
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int number = static_cast<int>(i + 1);
        if (!selected.empty() && !selected.count(number))
            continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const bool tolerated_failure = !o.pass && tolerated.count(number);
        if (!o.pass && !tolerated_failure)
            ++failures;
        std::cout << (o.pass ? "PASS" : "FAIL") << " [" << number << "] " << criteria[i].first << " -- " << o.detail
                  << (tolerated_failure ? " (known red, see README)" : "") << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
