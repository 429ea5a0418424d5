#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "regionprune/error.hpp"
#include "regionprune/planner.hpp"

using namespace regionprune;

namespace {

double budget_gap(const Architecture& arch, const PruningPlan& plan)
{
    const auto counts = arch.weight_counts();
    double used = 0.0;
    double total = 0.0;
    for (std::size_t l = 0; l < counts.size(); ++l) {
        used += plan.per_layer_density[l] * static_cast<double>(counts[l]);
        total += static_cast<double>(counts[l]);
    }
    return std::abs(used - plan.global_density * total) / total;
}

double log2_bound(const Architecture& arch, DensityPair p, RankDistributionCache& cache)
{
    const DensityAssignment a{{p[0], p[1]}};
    return evaluate_expected_bound(arch, a, layer_rank_distributions(arch, a, RankModel::analytic(), &cache),
                                   arch.input_dim)
        .log2;
}

} // namespace

TEST_SUITE("planner")
{
    TEST_CASE("feasible extremes")
    {
        const auto e = feasible_extremes({78400, 10000}, 0.5);
        CHECK(e[0][1] == 1.0);
        CHECK(e[0][0] == doctest::Approx(34200.0 / 78400.0));
        CHECK(e[1][0] == doctest::Approx(44200.0 / 78400.0));
        CHECK(e[1][1] == 0.0);

        const auto full = feasible_extremes({78400, 10000}, 1.0);
        CHECK(full[0] == DensityPair{1.0, 1.0});
        CHECK(full[1] == DensityPair{1.0, 1.0});

        const auto sym = feasible_extremes({400, 400}, 0.5);
        CHECK(sym[0] == DensityPair{0.0, 1.0});
        CHECK(sym[1] == DensityPair{1.0, 0.0});
    }

    TEST_CASE("trivial budgets give uniform plans")
    {
        const Architecture arch{784, {100, 100}};
        const PruningPlan one = plan_densities(arch, 1.0, RankModel::analytic());
        CHECK(one.method == PlanMethod::uniform);
        CHECK(one.per_layer_density == std::vector<double>{1.0, 1.0});
        const PruningPlan zero = plan_densities(arch, 0.0, RankModel::analytic());
        CHECK(zero.per_layer_density == std::vector<double>{0.0, 0.0});
        CHECK(zero.predicted_log2_bound == 0.0);
    }

    TEST_CASE("the larger layer is pruned harder for 784-[100,100]")
    {
        const Architecture arch{784, {100, 100}};
        const PruningPlan plan = plan_densities(arch, 0.5, RankModel::analytic());
        CHECK(plan.per_layer_density[0] < 0.5);
        CHECK(plan.per_layer_density[1] > 0.5);
        CHECK(budget_gap(arch, plan) < 1e-9);
    }

    TEST_CASE("budget conservation and dominance over uniform")
    {
        RankDistributionCache cache;
        for (const Architecture& arch : {Architecture{784, {100, 100}}, Architecture{784, {20, 20}},
                                         Architecture{60, {40, 20}}, Architecture{30, {10, 50}}}) {
            for (double p : {0.01, 0.02, 0.05, 0.1, 0.3, 0.7}) {
                const PruningPlan plan = plan_densities(arch, arch.weight_counts(), p, RankModel::analytic(),
                                                        arch.input_dim, {}, &cache);
                CAPTURE(arch.to_string());
                CAPTURE(p);
                CHECK(budget_gap(arch, plan) < 1e-9);
                for (double d : plan.per_layer_density) {
                    CHECK(d >= 0.0);
                    CHECK(d <= 1.0);
                }
                CHECK(plan.predicted_log2_bound >= log2_bound(arch, {p, p}, cache) - 1e-12);
            }
        }
    }

    TEST_CASE("grid oracle: planned bound is close to the best of 1000 feasible plans")
    {
        RankDistributionCache cache;
        for (const Architecture& arch : {Architecture{60, {40, 20}}, Architecture{50, {50, 50}},
                                         Architecture{30, {10, 50}}}) {
            for (double p : {0.05, 0.2, 0.5}) {
                const auto counts = arch.weight_counts();
                const PruningPlan plan =
                    plan_densities(arch, counts, p, RankModel::analytic(), arch.input_dim, {}, &cache);
                const auto ext = feasible_extremes({counts[0], counts[1]}, p);
                const double budget = p * static_cast<double>(counts[0] + counts[1]);
                double best = -1.0;
                for (int i = 0; i < 1000; ++i) {
                    const double p1 = ext[0][0] + (ext[1][0] - ext[0][0]) * i / 999.0;
                    const double p2 = std::clamp((budget - p1 * counts[0]) / counts[1], 0.0, 1.0);
                    best = std::max(best, log2_bound(arch, {p1, p2}, cache));
                }
                CAPTURE(arch.to_string());
                CAPTURE(p);
                CHECK(plan.predicted_log2_bound >= best - 0.5);
            }
        }
    }

    TEST_CASE("equal-size layers stay near uniform")
    {
        const Architecture arch{20, {20, 20}};
        const double p = 0.5;
        const PruningPlan plan = plan_densities(arch, p, RankModel::analytic());
        const double step = 0.5 / 19.0; // grid spacing toward the extreme
        CHECK(std::abs(plan.per_layer_density[0] - p) <= step + 1e-12);
    }

    TEST_CASE("only two prunable layers are supported")
    {
        CHECK_THROWS_AS(plan_densities(Architecture{784, {20, 20, 20}}, 0.5, RankModel::analytic()),
                        UnsupportedError);
        CHECK_THROWS_AS(plan_densities(Architecture{784, {20}}, 0.5, RankModel::analytic()), UnsupportedError);
    }

    TEST_CASE("sampled rank model plans are reproducible")
    {
        const Architecture arch{40, {30, 10}};
        const PruningPlan a = plan_densities(arch, 0.2, RankModel::sampled(5));
        const PruningPlan b = plan_densities(arch, 0.2, RankModel::sampled(5));
        CHECK(a.per_layer_density == b.per_layer_density);
        CHECK(a.predicted_log2_bound == b.predicted_log2_bound);
    }

    TEST_CASE("plan JSON round trip")
    {
        const PruningPlan plan = plan_densities(Architecture{784, {100, 100}}, 0.05, RankModel::analytic());
        const PruningPlan back = PruningPlan::from_json(plan.to_json());
        CHECK(back.per_layer_density == plan.per_layer_density);
        CHECK(back.method == plan.method);
        CHECK(back.global_density == plan.global_density);
        CHECK_THROWS_AS(PruningPlan::from_json(nlohmann::json{{"method", "uniform"}}), ConfigError);
    }
}
