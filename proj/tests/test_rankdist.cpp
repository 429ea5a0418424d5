#include <doctest.h>

#include <cmath>
#include <random>

#include "regionprune/error.hpp"
#include "regionprune/rankdist.hpp"

using namespace regionprune;

namespace {

SparsityPattern from_rows(std::initializer_list<std::initializer_list<int>> rows)
{
    const std::size_t r = rows.size();
    const std::size_t c = rows.begin()->size();
    SparsityPattern p(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
        std::size_t j = 0;
        for (int v : row)
            p.set(i, j++, v != 0);
        ++i;
    }
    return p;
}

Rational frac(long num, long den)
{
    Rational r(num, den);
    r.canonicalize();
    return r;
}

} // namespace

TEST_SUITE("rankdist")
{
    TEST_CASE("structural rank of small patterns")
    {
        CHECK(structural_rank(from_rows({{1, 0}, {0, 1}})) == 2);
        CHECK(structural_rank(from_rows({{0, 0}, {0, 0}})) == 0);
        CHECK(structural_rank(from_rows({{1, 1, 1}, {0, 0, 0}, {0, 0, 0}})) == 1);
        CHECK(structural_rank(from_rows({{1, 1, 0}, {1, 0, 0}, {1, 0, 0}})) == 2);
        CHECK(structural_rank(SparsityPattern(0, 3)) == 0);
        // Augmenting paths are needed here: greedy matching of row 0 to column 0 blocks row 1.
        CHECK(structural_rank(from_rows({{1, 1}, {1, 0}})) == 2);
    }

    TEST_CASE("single nonzero row agrees with numeric rank")
    {
        const std::vector<double> values{0.3, -1.2, 2.0, 0, 0, 0, 0, 0, 0};
        CHECK(numeric_rank(3, 3, values) == 1);
    }

    TEST_CASE("structural rank matches numeric rank on sparse Gaussian matrices")
    {
        const std::pair<std::size_t, std::size_t> shapes[] = {{4, 4}, {5, 8}, {8, 3}, {12, 12}};
        for (const auto& [rows, cols] : shapes) {
            for (double density : {0.15, 0.35, 0.6}) {
                for (std::uint64_t i = 0; i < 100; ++i) {
                    const auto values = sample_sparse_gaussian(rows, cols, density, 11, i);
                    const auto pattern = sample_pattern(rows, cols, density, 11, i);
                    REQUIRE(structural_rank(pattern) == numeric_rank(rows, cols, values));
                }
            }
        }
    }

    TEST_CASE("fixed-count full-rank probability")
    {
        CHECK(fixed_count_fullrank_probability(1) == Rational(1));
        CHECK(fixed_count_fullrank_probability(2) == frac(1, 3));
        CHECK(fixed_count_fullrank_probability(3) == frac(1, 14));
    }

    TEST_CASE("enumerating placements reproduces the fixed-count formula")
    {
        for (std::size_t n : {2u, 3u}) {
            const std::size_t cells = n * n;
            std::size_t total = 0;
            std::size_t full = 0;
            for (std::uint32_t mask = 0; mask < (1u << cells); ++mask) {
                if (static_cast<std::size_t>(__builtin_popcount(mask)) != n)
                    continue;
                SparsityPattern p(n, n);
                for (std::size_t k = 0; k < cells; ++k)
                    if (mask >> k & 1u)
                        p.set(k / n, k % n);
                ++total;
                if (structural_rank(p) == n)
                    ++full;
            }
            CHECK(frac(static_cast<long>(full), static_cast<long>(total)) == fixed_count_fullrank_probability(n));
        }
    }

    TEST_CASE("analytic distribution: hand example and degenerate densities")
    {
        const auto d = analytic_rank_distribution(2, 2, 0.5);
        CHECK(d.probs.at(0) == frac(1, 16));
        CHECK(d.probs.at(1) == frac(6, 16));
        CHECK(d.probs.at(2) == frac(9, 16));
        d.validate();

        const auto full = analytic_rank_distribution(20, 784, 1.0);
        CHECK(full.probs.size() == 1);
        CHECK(full.probs.at(20) == Rational(1));
        const auto empty = analytic_rank_distribution(20, 784, 0.0);
        CHECK(empty.probs.at(0) == Rational(1));
    }

    TEST_CASE("analytic distribution uses the short side when rows exceed cols")
    {
        const auto tall = analytic_rank_distribution(7, 3, 0.2);
        const auto wide = analytic_rank_distribution(3, 7, 0.2);
        CHECK(tall.probs == wide.probs);
        CHECK(tall.probs.rbegin()->first <= 3);
    }

    TEST_CASE("analytic distribution is stochastically monotone in density")
    {
        std::vector<double> grid;
        for (int i = 0; i <= 10; ++i)
            grid.push_back(i / 10.0);
        for (std::size_t k = 0; k <= 20; ++k) {
            Rational previous = 2;
            for (double p : grid) {
                const auto d = analytic_rank_distribution(20, 50, p);
                Rational below = 0;
                for (const auto& [rank, prob] : d.probs)
                    if (rank < k)
                        below += prob;
                CHECK(below <= previous);
                previous = below;
            }
        }
    }

    TEST_CASE("every distribution sums to one exactly")
    {
        for (double p : {0.01, 0.05, 0.3, 0.77, 0.999}) {
            analytic_rank_distribution(100, 784, p).validate();
            analytic_rank_distribution(100, 100, p).validate();
            sample_rank_distribution(6, 9, p, 3).validate();
        }
    }

    TEST_CASE("sampling: 1x1 is a Bernoulli draw")
    {
        const double p = 0.3;
        SamplingOptions options;
        options.batch = 4000;
        const auto d = sample_rank_distribution(1, 1, p, 5, options);
        const double sigma = std::sqrt(p * (1 - p) / static_cast<double>(d.sample_count));
        CHECK(std::abs(d.probability(1) - p) < 3 * sigma);
    }

    TEST_CASE("sampling: dense matrices have full rank")
    {
        const auto d = sample_rank_distribution(20, 784, 1.0, 1);
        CHECK(d.probs.size() == 1);
        CHECK(d.probs.at(20) == Rational(1));
        CHECK(d.sample_count == 50);
    }

    TEST_CASE("sampling protocol extends the sample count with the observed range")
    {
        const auto d = sample_rank_distribution(10, 10, 0.2, 9);
        const std::size_t lo = d.probs.begin()->first;
        const std::size_t hi = d.probs.rbegin()->first;
        CHECK(d.sample_count >= (hi - lo + 1) * 50);
        CHECK(d.sample_count < (hi - lo + 1) * 50 + 50);
    }

    TEST_CASE("sampling is deterministic across thread counts")
    {
        SamplingOptions serial;
        SamplingOptions parallel;
        parallel.threads = 4;
        const auto a = sample_rank_distribution(30, 40, 0.05, 77, serial);
        const auto b = sample_rank_distribution(30, 40, 0.05, 77, parallel);
        CHECK(a.to_record() == b.to_record());
        const auto c = sample_rank_distribution(30, 40, 0.05, 78, serial);
        CHECK(a.to_record() != c.to_record());
    }

    TEST_CASE("record round trip")
    {
        const auto d = sample_rank_distribution(5, 7, 0.4, 123);
        const auto back = RankDistribution::from_record(d.to_record());
        CHECK(back.rows == d.rows);
        CHECK(back.cols == d.cols);
        CHECK(back.probs == d.probs);
        CHECK(back.seed == d.seed);
        CHECK(back.sample_count == d.sample_count);
        CHECK(back.method == RankMethod::sampled);
        CHECK_THROWS_AS(RankDistribution::from_record("rank-distribution v2\n"), ConfigError);
    }

    TEST_CASE("cache returns the same distribution for nearby densities")
    {
        RankDistributionCache cache;
        const auto a = cache.get(10, 20, 0.3, RankModel::analytic());
        const auto b = cache.get(10, 20, 0.3 + 1e-9, RankModel::analytic());
        CHECK(a.probs == b.probs);
        CHECK(cache.size() == 1);
    }
}
