#include <doctest.h>

#include <algorithm>
#include <random>

#include "regionprune/error.hpp"
#include "regionprune/regions.hpp"

using namespace regionprune;

namespace {

ReluNetwork random_network(std::size_t input_dim, const std::vector<std::size_t>& widths, std::mt19937_64& rng)
{
    std::normal_distribution<double> g;
    ReluNetwork net;
    net.input_dim = input_dim;
    std::size_t cols = input_dim;
    for (std::size_t rows : widths) {
        ReluNetwork::Layer layer;
        layer.rows = rows;
        layer.cols = cols;
        for (std::size_t i = 0; i < rows * cols; ++i)
            layer.weights.push_back(g(rng));
        for (std::size_t i = 0; i < rows; ++i)
            layer.bias.push_back(0.5 * g(rng));
        net.layers.push_back(std::move(layer));
        cols = rows;
    }
    return net;
}

ReluNetwork one_layer(std::vector<double> weights, std::vector<double> bias)
{
    ReluNetwork net;
    net.input_dim = weights.size() / bias.size();
    net.layers.push_back({bias.size(), net.input_dim, std::move(weights), std::move(bias)});
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

// Small architectures with at most 12 hidden neurons.
std::vector<std::size_t> random_widths(std::mt19937_64& rng)
{
    std::uniform_int_distribution<std::size_t> depth(1, 3);
    std::uniform_int_distribution<std::size_t> width(1, 4);
    std::vector<std::size_t> widths(depth(rng));
    for (auto& w : widths)
        w = width(rng);
    return widths;
}

} // namespace

TEST_SUITE("regions")
{
    TEST_CASE("single neuron splits the interval")
    {
        const ReluNetwork net = one_layer({1.0}, {-0.5});
        const RegionCountResult r = count_regions(net, BoxDomain::unit(1));
        CHECK(r.count == 2);
        CHECK(r.complete);
        CHECK(brute_force_count(net, BoxDomain::unit(1)) == 2);
    }

    TEST_CASE("a neuron that never switches gives one region")
    {
        const ReluNetwork net = one_layer({1.0}, {2.0});
        const RegionCountResult r = count_regions(net, BoxDomain::unit(1));
        CHECK(r.count == 1);
        CHECK(r.stable_fixed == 1);
    }

    TEST_CASE("opposite neurons share a hyperplane")
    {
        const ReluNetwork net = one_layer({1.0, -1.0}, {-0.5, 0.5});
        CountOptions options;
        options.keep_patterns = true;
        const RegionCountResult r = count_regions(net, BoxDomain::unit(1), std::nullopt, options);
        CHECK(r.count == 2);
        REQUIRE(r.patterns.has_value());
        std::vector<std::string> patterns = *r.patterns;
        std::sort(patterns.begin(), patterns.end());
        CHECK(patterns == std::vector<std::string>{"01", "10"});
    }

    TEST_CASE("branch and bound agrees with brute-force enumeration")
    {
        std::mt19937_64 rng(11);
        int checked = 0;
        for (int t = 0; t < 60; ++t) {
            const std::size_t dim = 1 + t % 3;
            const ReluNetwork net = random_network(dim, random_widths(rng), rng);
            std::optional<AffineSubspace> sub;
            if (t % 4 == 3)
                sub = AffineSubspace::from_points({random_point(dim, rng), random_point(dim, rng)});
            CountOptions options;
            options.fix_stable = t % 2 == 0;
            const RegionCountResult r = count_regions(net, BoxDomain::unit(dim), sub, options);
            CAPTURE(t);
            REQUIRE(r.complete);
            CHECK(r.count == brute_force_count(net, BoxDomain::unit(dim), sub));
            ++checked;
        }
        CHECK(checked == 60);
    }

    TEST_CASE("counts do not depend on the thread count")
    {
        std::mt19937_64 rng(5);
        for (int t = 0; t < 8; ++t) {
            const ReluNetwork net = random_network(3, {5, 5}, rng);
            CountOptions serial;
            CountOptions parallel;
            parallel.threads = 3;
            const auto a = count_regions(net, BoxDomain::unit(3), std::nullopt, serial);
            const auto b = count_regions(net, BoxDomain::unit(3), std::nullopt, parallel);
            CHECK(a.count == b.count);
            CHECK(a.nodes_explored == b.nodes_explored);
        }
    }

    TEST_CASE("restricting to a subspace never adds regions")
    {
        std::mt19937_64 rng(8);
        for (int t = 0; t < 15; ++t) {
            const ReluNetwork net = random_network(3, {4, 3}, rng);
            const auto full = count_regions(net, BoxDomain::unit(3));
            const auto plane = count_regions(
                net, BoxDomain::unit(3),
                AffineSubspace::from_points({random_point(3, rng), random_point(3, rng), random_point(3, rng)}));
            const auto line = count_regions(net, BoxDomain::unit(3),
                                            AffineSubspace::from_points({random_point(3, rng), random_point(3, rng)}));
            CHECK(plane.count <= full.count);
            CHECK(line.count <= full.count);
            CHECK(plane.subspace_dimension == 2);
            CHECK(line.subspace_dimension == 1);
        }
    }

    TEST_CASE("counts respect the deterministic bound")
    {
        std::mt19937_64 rng(13);
        for (int t = 0; t < 20; ++t) {
            const std::vector<std::size_t> widths = random_widths(rng);
            const std::size_t dim = 1 + t % 4;
            const ReluNetwork net = random_network(dim, widths, rng);
            const auto r = count_regions(net, BoxDomain::unit(dim));
            const BoundValue b = deterministic_bound(Architecture{dim, widths}, dim);
            CHECK(Rational(r.count) <= *b.exact);
            const auto line =
                count_regions(net, BoxDomain::unit(dim), AffineSubspace::from_points({random_point(dim, rng),
                                                                                      random_point(dim, rng)}));
            CHECK(Rational(line.count) <= *deterministic_bound(Architecture{dim, widths}, 1).exact);
        }
    }

    TEST_CASE("fixing stable neurons does not change the count")
    {
        std::mt19937_64 rng(17);
        for (int t = 0; t < 15; ++t) {
            ReluNetwork net = random_network(2, {4, 4}, rng);
            // Push some first-layer neurons far from switching.
            net.layers[0].bias[0] += 5.0;
            net.layers[0].bias[1] -= 5.0;
            CountOptions with;
            CountOptions without;
            without.fix_stable = false;
            const auto a = count_regions(net, BoxDomain::unit(2), std::nullopt, with);
            const auto b = count_regions(net, BoxDomain::unit(2), std::nullopt, without);
            CHECK(a.count == b.count);
            CHECK(a.stable_fixed >= 2);
            CHECK(b.stable_fixed == 0);
        }
    }

    TEST_CASE("counts are stable across small epsilons")
    {
        std::mt19937_64 rng(19);
        int equal = 0;
        const int trials = 20;
        for (int t = 0; t < trials; ++t) {
            const ReluNetwork net = random_network(2, {4, 4}, rng);
            std::uint64_t previous = ~std::uint64_t{0};
            std::vector<std::uint64_t> counts;
            for (double eps : {1e-6, 1e-5, 1e-4}) {
                CountOptions o;
                o.epsilon = eps;
                counts.push_back(count_regions(net, BoxDomain::unit(2), std::nullopt, o).count);
                CHECK(counts.back() <= previous);
                previous = counts.back();
            }
            if (counts.front() == counts.back())
                ++equal;
        }
        CHECK(equal >= trials * 9 / 10);
    }

    TEST_CASE("preactivation bounds contain sampled values")
    {
        std::mt19937_64 rng(23);
        for (int t = 0; t < 10; ++t) {
            const ReluNetwork net = random_network(4, {6, 5, 3}, rng);
            const AffineSubspace sub = AffineSubspace::from_points({random_point(4, rng), random_point(4, rng),
                                                                     random_point(4, rng)});
            const NeuronBounds full = preactivation_bounds(net, BoxDomain::unit(4));
            const NeuronBounds restricted = preactivation_bounds(net, BoxDomain::unit(4), sub);
            REQUIRE(full.feasible);
            REQUIRE(restricted.feasible);
            std::uniform_real_distribution<double> u(0.0, 1.0);
            for (int s = 0; s < 200; ++s) {
                const auto x = random_point(4, rng);
                const auto g = net.preactivations(x);
                for (std::size_t l = 0; l < g.size(); ++l)
                    for (std::size_t i = 0; i < g[l].size(); ++i) {
                        CHECK(g[l][i] >= full.lo[l][i] - 1e-9);
                        CHECK(g[l][i] <= full.hi[l][i] + 1e-9);
                    }
                // Convex combination of the sample points stays in the box.
                const double a = u(rng);
                const double b = u(rng) * (1 - a);
                std::vector<double> y(4);
                for (std::size_t k = 0; k < 4; ++k)
                    y[k] = sub.base[k] + a * sub.directions[0][k] + b * sub.directions[1][k];
                const auto gy = net.preactivations(y);
                for (std::size_t l = 0; l < gy.size(); ++l)
                    for (std::size_t i = 0; i < gy[l].size(); ++i) {
                        CHECK(gy[l][i] >= restricted.lo[l][i] - 1e-9);
                        CHECK(gy[l][i] <= restricted.hi[l][i] + 1e-9);
                    }
            }
        }
    }

    TEST_CASE("a subspace missing the domain has no regions")
    {
        const ReluNetwork net = one_layer({1.0, 1.0}, {-0.5});
        const AffineSubspace outside = AffineSubspace::from_points({{2.0, 0.0}, {2.0, 1.0}});
        CHECK_FALSE(preactivation_bounds(net, BoxDomain::unit(2), outside).feasible);
        const auto r = count_regions(net, BoxDomain::unit(2), outside);
        CHECK(r.count == 0);
        CHECK(r.complete);
        CHECK(brute_force_count(net, BoxDomain::unit(2), outside) == 0);
    }

    TEST_CASE("points repeated in the sample give a lower-dimensional subspace")
    {
        const AffineSubspace s = AffineSubspace::from_points({{0.1, 0.2}, {0.4, 0.6}, {0.7, 1.0}});
        CHECK(s.dimension() == 1);
        CHECK_THROWS_AS(AffineSubspace::from_points({{0.1, 0.2}}), ConfigError);
    }

    TEST_CASE("brute force refuses large networks and bad inputs")
    {
        std::mt19937_64 rng(1);
        const ReluNetwork big = random_network(2, {11, 10}, rng);
        CHECK_THROWS_AS(brute_force_count(big, BoxDomain::unit(2)), UnsupportedError);
        const ReluNetwork small = random_network(2, {3}, rng);
        CHECK_THROWS_AS(brute_force_count(small, BoxDomain::unit(3)), ConfigError);
        CHECK_THROWS_AS(count_regions(small, BoxDomain::unit(2), std::nullopt, CountOptions{0.0}), ConfigError);
    }

    TEST_CASE("result JSON")
    {
        const auto r = count_regions(one_layer({1.0}, {-0.5}), BoxDomain::unit(1));
        const auto doc = r.to_json();
        CHECK(doc["count"] == 2);
        CHECK(doc["complete"] == true);
    }

    TEST_CASE("networks from trained models keep only hidden layers")
    {
        const MlpModel m = MlpModel::initialize(Architecture{5, {3, 2}}, 4, 0);
        const ReluNetwork net = ReluNetwork::from_model(m);
        CHECK(net.layers.size() == 2);
        CHECK(net.hidden_neurons() == 5);
        CHECK(net.layers[1].weights[0] == static_cast<double>(m.layers[1].weights[0]));
    }
}
