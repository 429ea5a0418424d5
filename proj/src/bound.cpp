#include "regionprune/bound.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <limits>

#include "regionprune/error.hpp"

namespace regionprune {

namespace {

void check_rank_inputs(const Architecture& arch, const DensityAssignment& densities,
                       std::span<const RankDistribution> ranks, std::size_t d0)
{
    arch.validate();
    densities.validate(arch);
    if (d0 > arch.input_dim)
        throw ConfigError("subspace dimension d0 exceeds the input dimension");
    if (ranks.size() != arch.depth())
        throw ConfigError("expected one rank distribution per hidden layer");
    for (std::size_t l = 0; l < arch.depth(); ++l) {
        const RankDistribution& dist = ranks[l];
        if (dist.rows != arch.widths[l] || dist.cols != arch.fan_in(l))
            throw ConfigError("rank distribution " + std::to_string(l) + " has shape "
                              + std::to_string(dist.rows) + "x" + std::to_string(dist.cols)
                              + " but layer weights are " + std::to_string(arch.widths[l]) + "x"
                              + std::to_string(arch.fan_in(l)));
        // The cache quantizes densities to 1e-6.
        if (std::abs(dist.density - densities.per_layer[l]) > 1e-6)
            throw ConfigError("rank distribution " + std::to_string(l) + " was built for density "
                              + std::to_string(dist.density) + ", not "
                              + std::to_string(densities.per_layer[l]));
    }
}

long double log_binomial(std::size_t n, std::size_t k)
{
    return std::lgamma(static_cast<long double>(n) + 1.0L) - std::lgamma(static_cast<long double>(k) + 1.0L)
        - std::lgamma(static_cast<long double>(n - k) + 1.0L);
}

// Accumulates log(sum exp(terms)).
class LogSum {
public:
    void add(long double log_term)
    {
        if (log_term == -std::numeric_limits<long double>::infinity())
            return;
        if (log_term <= max_) {
            sum_ += std::exp(log_term - max_);
        } else {
            sum_ = sum_ * std::exp(max_ - log_term) + 1.0L;
            max_ = log_term;
        }
    }
    long double value() const
    {
        return sum_ == 0.0L ? -std::numeric_limits<long double>::infinity() : max_ + std::log(sum_);
    }

private:
    long double max_ = -std::numeric_limits<long double>::infinity();
    long double sum_ = 0.0L;
};

} // namespace

std::vector<std::size_t> Architecture::weight_counts() const
{
    std::vector<std::size_t> counts;
    counts.reserve(widths.size());
    for (std::size_t l = 0; l < widths.size(); ++l)
        counts.push_back(widths[l] * fan_in(l));
    return counts;
}

void Architecture::validate() const
{
    if (input_dim == 0)
        throw ConfigError("architecture input dimension must be positive");
    if (widths.empty())
        throw ConfigError("architecture needs at least one hidden layer");
    for (std::size_t w : widths)
        if (w == 0)
            throw ConfigError("hidden layer widths must be positive");
}

std::string Architecture::to_string() const
{
    std::string text = std::to_string(input_dim);
    for (std::size_t w : widths)
        text += "x" + std::to_string(w);
    return text;
}

DensityAssignment DensityAssignment::uniform(const Architecture& arch, double density)
{
    return DensityAssignment{std::vector<double>(arch.depth(), density)};
}

void DensityAssignment::validate(const Architecture& arch) const
{
    if (per_layer.size() != arch.depth())
        throw ConfigError("got " + std::to_string(per_layer.size()) + " layer densities for "
                          + std::to_string(arch.depth()) + " hidden layers");
    for (double p : per_layer)
        if (!(p >= 0.0 && p <= 1.0))
            throw ConfigError("layer density must lie in [0, 1], got " + std::to_string(p));
}

nlohmann::json BoundValue::to_json() const
{
    nlohmann::json out;
    out["log2"] = log2;
    if (exact) {
        out["exact"] = exact->get_num().get_str() + "/" + exact->get_den().get_str();
    } else {
        out["exact"] = nullptr;
    }
    out["approximate"] = approximate;
    return out;
}

double log2_of(const Integer& value)
{
    if (sgn(value) <= 0)
        throw ConfigError("log2 of a non-positive value");
    long exponent = 0;
    const double mantissa = mpz_get_d_2exp(&exponent, value.get_mpz_t());
    return static_cast<double>(exponent) + std::log2(mantissa);
}

double log2_of(const Rational& value)
{
    return log2_of(Integer(value.get_num())) - log2_of(Integer(value.get_den()));
}

Integer binomial(std::size_t n, std::size_t k)
{
    Integer result;
    mpz_bin_uiui(result.get_mpz_t(), n, k);
    return result;
}

Integer zaslavsky_regions(std::size_t hyperplanes, std::size_t dim)
{
    Integer total = 0;
    const std::size_t top = std::min(hyperplanes, dim);
    for (std::size_t j = 0; j <= top; ++j)
        total += binomial(hyperplanes, j);
    return total;
}

BoundValue deterministic_bound(const Architecture& arch, std::size_t d0)
{
    arch.validate();
    if (d0 > arch.input_dim)
        throw ConfigError("subspace dimension d0 exceeds the input dimension");
    const std::size_t depth = arch.depth();
    std::vector<std::vector<std::optional<Integer>>> memo(depth);
    for (auto& row : memo)
        row.resize(d0 + 1);

    std::function<Integer(std::size_t, std::size_t)> regions = [&](std::size_t l, std::size_t d) -> Integer {
        auto& slot = memo[l][d];
        if (slot)
            return *slot;
        const std::size_t n = arch.widths[l];
        Integer total = 0;
        if (l + 1 == depth) {
            total = zaslavsky_regions(n, d);
        } else {
            for (std::size_t j = 0; j <= std::min(n, d); ++j)
                total += binomial(n, j) * regions(l + 1, std::min(n - j, d));
        }
        slot = total;
        return total;
    };

    const Integer value = regions(0, d0);
    return BoundValue{Rational(value), log2_of(value), false};
}

BoundValue expected_bound(const Architecture& arch, const DensityAssignment& densities,
                          std::span<const RankDistribution> ranks, std::size_t d0)
{
    check_rank_inputs(arch, densities, ranks, d0);
    const std::size_t depth = arch.depth();

    // dims[l]: largest input dimension layer l can see.
    std::vector<std::size_t> dims(depth);
    dims[0] = d0;
    for (std::size_t l = 1; l < depth; ++l)
        dims[l] = std::min(arch.widths[l - 1], dims[l - 1]);

    // The inner sums depend on (k, d) only through m = min(k, d):
    //   inner_l(m) = sum_{j<=m} C(n_l, j) * R_{l+1}(min(n_l - j, m))
    //   R_l(d)     = sum_k P_l(k) * inner_l(min(k, d))
    std::vector<Rational> next; // R_{l+1}(e) for e in [0, dims[l+1]]
    Rational result;
    for (std::size_t l = depth; l-- > 0;) {
        const std::size_t n = arch.widths[l];
        const std::size_t top = std::min(n, dims[l]);
        std::vector<Rational> inner(top + 1);
        if (l + 1 == depth) {
            Integer running = 0;
            for (std::size_t m = 0; m <= top; ++m) {
                running += binomial(n, m);
                inner[m] = running;
            }
        } else {
            std::vector<Integer> coeffs(top + 1);
            for (std::size_t j = 0; j <= top; ++j)
                coeffs[j] = binomial(n, j);
            for (std::size_t m = 0; m <= top; ++m) {
                Rational total = 0;
                for (std::size_t j = 0; j <= m; ++j)
                    total += coeffs[j] * next[std::min(n - j, m)];
                inner[m] = total;
            }
        }

        auto regions_at = [&](std::size_t d) {
            Rational total = 0;
            for (const auto& [k, p] : ranks[l].probs)
                total += p * inner[std::min(k, d)];
            return total;
        };

        if (l == 0) {
            result = regions_at(d0);
        } else {
            std::vector<Rational> current(dims[l] + 1);
            for (std::size_t d = 0; d <= dims[l]; ++d)
                current[d] = regions_at(d);
            next = std::move(current);
        }
    }
    return BoundValue{result, log2_of(result), false};
}

BoundValue expected_bound_log_domain(const Architecture& arch, const DensityAssignment& densities,
                                     std::span<const RankDistribution> ranks, std::size_t d0)
{
    check_rank_inputs(arch, densities, ranks, d0);
    const std::size_t depth = arch.depth();
    std::vector<std::size_t> dims(depth);
    dims[0] = d0;
    for (std::size_t l = 1; l < depth; ++l)
        dims[l] = std::min(arch.widths[l - 1], dims[l - 1]);

    std::vector<long double> next;
    long double result = 0.0L;
    for (std::size_t l = depth; l-- > 0;) {
        const std::size_t n = arch.widths[l];
        const std::size_t top = std::min(n, dims[l]);
        std::vector<long double> log_coeff(top + 1);
        for (std::size_t j = 0; j <= top; ++j)
            log_coeff[j] = log_binomial(n, j);
        std::vector<long double> inner(top + 1);
        if (l + 1 == depth) {
            LogSum running;
            for (std::size_t m = 0; m <= top; ++m) {
                running.add(log_coeff[m]);
                inner[m] = running.value();
            }
        } else {
            for (std::size_t m = 0; m <= top; ++m) {
                LogSum total;
                for (std::size_t j = 0; j <= m; ++j)
                    total.add(log_coeff[j] + next[std::min(n - j, m)]);
                inner[m] = total.value();
            }
        }
        std::vector<std::pair<std::size_t, long double>> log_probs;
        for (const auto& [k, p] : ranks[l].probs)
            if (sgn(p) > 0)
                log_probs.emplace_back(k, std::log(static_cast<long double>(p.get_d())));

        auto regions_at = [&](std::size_t d) {
            LogSum total;
            for (const auto& [k, lp] : log_probs)
                total.add(lp + inner[std::min(k, d)]);
            return total.value();
        };
        if (l == 0) {
            result = regions_at(d0);
        } else {
            std::vector<long double> current(dims[l] + 1);
            for (std::size_t d = 0; d <= dims[l]; ++d)
                current[d] = regions_at(d);
            next = std::move(current);
        }
    }
    return BoundValue{std::nullopt, static_cast<double>(result / std::log(2.0L)), true};
}

BoundValue evaluate_expected_bound(const Architecture& arch, const DensityAssignment& densities,
                                   std::span<const RankDistribution> ranks, std::size_t d0)
{
    const bool wide = std::any_of(arch.widths.begin(), arch.widths.end(),
                                  [](std::size_t w) { return w > kLogDomainWidthThreshold; });
    return wide ? expected_bound_log_domain(arch, densities, ranks, d0)
                : expected_bound(arch, densities, ranks, d0);
}

std::vector<RankDistribution> layer_rank_distributions(const Architecture& arch,
                                                       const DensityAssignment& densities,
                                                       const RankModel& model, RankDistributionCache* cache)
{
    arch.validate();
    densities.validate(arch);
    std::vector<RankDistribution> ranks;
    ranks.reserve(arch.depth());
    for (std::size_t l = 0; l < arch.depth(); ++l) {
        const std::size_t rows = arch.widths[l];
        const std::size_t cols = arch.fan_in(l);
        const double p = densities.per_layer[l];
        if (cache) {
            ranks.push_back(cache->get(rows, cols, p, model));
        } else if (model.method == RankMethod::sampled) {
            ranks.push_back(sample_rank_distribution(rows, cols, p, model.seed, model.sampling));
        } else {
            ranks.push_back(analytic_rank_distribution(rows, cols, p));
        }
    }
    return ranks;
}

LayerSpec parse_layer_spec(std::string_view text)
{
    std::vector<std::size_t> sizes;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find_first_of("xX", start);
        if (end == std::string_view::npos)
            end = text.size();
        const std::string_view token = text.substr(start, end - start);
        std::size_t value = 0;
        const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
        if (ec != std::errc{} || ptr != token.data() + token.size() || value == 0)
            throw ConfigError("malformed layer spec '" + std::string(text)
                              + "' (expected e.g. 784x100x100x10)");
        sizes.push_back(value);
        start = end + 1;
    }
    if (sizes.size() < 3)
        throw ConfigError("layer spec '" + std::string(text)
                          + "' needs input, at least one hidden layer, and output sizes");
    LayerSpec spec;
    spec.arch.input_dim = sizes.front();
    spec.arch.widths.assign(sizes.begin() + 1, sizes.end() - 1);
    spec.output_dim = sizes.back();
    return spec;
}

} // namespace regionprune
