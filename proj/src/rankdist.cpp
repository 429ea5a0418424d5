#include "regionprune/rankdist.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <sstream>
#include <thread>

#include "regionprune/error.hpp"

namespace regionprune {

namespace {

// SplitMix64 finalizer; the counter stream below is the SplitMix64 generator
// started at a per-sample key, so sample i never depends on sample i-1.
std::uint64_t mix64(std::uint64_t z)
{
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint64_t index, std::uint64_t stream)
        : state_(mix64(mix64(seed ^ 0x5851f42d4c957f2dULL) + index) ^ mix64(stream + 0x9e3779b97f4a7c15ULL))
    {
    }

    std::uint64_t next()
    {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix64(state_);
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double normal()
    {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * M_PI * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

constexpr std::uint64_t kPatternStream = 0;
constexpr std::uint64_t kValueStream = 1;

void check_density(double density)
{
    if (!(density >= 0.0 && density <= 1.0))
        throw ConfigError("density must lie in [0, 1], got " + std::to_string(density));
}

void check_shape(std::size_t rows, std::size_t cols)
{
    if (rows == 0 || cols == 0)
        throw ConfigError("matrix shape must be at least 1x1");
}

Rational exact_from_double(double value)
{
    Rational q(value);
    q.canonicalize();
    return q;
}

} // namespace

SparsityPattern::SparsityPattern(std::size_t rows, std::size_t cols)
    : rows_(rows)
    , cols_(cols)
    , cells_(rows * cols, 0)
{
}

std::size_t SparsityPattern::count_nonzero() const
{
    return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), std::uint8_t{1}));
}

std::size_t structural_rank(const SparsityPattern& pattern)
{
    const std::size_t rows = pattern.rows();
    const std::size_t cols = pattern.cols();
    if (rows == 0 || cols == 0)
        return 0;

    std::vector<std::vector<std::size_t>> adjacency(rows);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
            if (pattern.at(r, c))
                adjacency[r].push_back(c);

    constexpr std::size_t kFree = std::numeric_limits<std::size_t>::max();
    constexpr std::size_t kInfDist = std::numeric_limits<std::size_t>::max();
    std::vector<std::size_t> match_row(rows, kFree);
    std::vector<std::size_t> match_col(cols, kFree);
    std::vector<std::size_t> dist(rows, kInfDist);

    auto bfs = [&]() {
        std::queue<std::size_t> queue;
        for (std::size_t r = 0; r < rows; ++r) {
            if (match_row[r] == kFree) {
                dist[r] = 0;
                queue.push(r);
            } else {
                dist[r] = kInfDist;
            }
        }
        bool found_free = false;
        while (!queue.empty()) {
            const std::size_t r = queue.front();
            queue.pop();
            for (std::size_t c : adjacency[r]) {
                const std::size_t next = match_col[c];
                if (next == kFree) {
                    found_free = true;
                } else if (dist[next] == kInfDist) {
                    dist[next] = dist[r] + 1;
                    queue.push(next);
                }
            }
        }
        return found_free;
    };

    // Iterative DFS along layered alternating paths.
    std::vector<std::size_t> cursor(rows, 0);
    auto augment = [&](std::size_t root) {
        std::vector<std::size_t> stack{root};
        while (!stack.empty()) {
            const std::size_t r = stack.back();
            if (cursor[r] == adjacency[r].size()) {
                dist[r] = kInfDist;
                stack.pop_back();
                continue;
            }
            const std::size_t c = adjacency[r][cursor[r]];
            const std::size_t next = match_col[c];
            if (next == kFree) {
                // Flip the path recorded on the stack.
                for (std::size_t depth = stack.size(); depth-- > 0;) {
                    const std::size_t row = stack[depth];
                    const std::size_t col = adjacency[row][cursor[row]];
                    match_row[row] = col;
                    match_col[col] = row;
                }
                return true;
            }
            if (dist[next] == dist[r] + 1) {
                stack.push_back(next);
            } else {
                ++cursor[r];
            }
        }
        return false;
    };

    std::size_t matching = 0;
    while (bfs()) {
        std::fill(cursor.begin(), cursor.end(), 0);
        for (std::size_t r = 0; r < rows; ++r)
            if (match_row[r] == kFree && augment(r))
                ++matching;
    }
    return matching;
}

std::size_t numeric_rank(std::size_t rows, std::size_t cols, std::span<const double> values,
                         double relative_tolerance)
{
    if (values.size() != rows * cols)
        throw ConfigError("numeric_rank: value count does not match shape");
    if (rows == 0 || cols == 0)
        return 0;
    std::vector<double> a(values.begin(), values.end());
    double scale = 0.0;
    for (double v : a)
        scale = std::max(scale, std::abs(v));
    if (scale == 0.0)
        return 0;
    const double threshold = relative_tolerance * scale;

    std::size_t rank = 0;
    for (std::size_t col = 0; col < cols && rank < rows; ++col) {
        std::size_t pivot = rank;
        for (std::size_t r = rank + 1; r < rows; ++r)
            if (std::abs(a[r * cols + col]) > std::abs(a[pivot * cols + col]))
                pivot = r;
        if (std::abs(a[pivot * cols + col]) <= threshold)
            continue;
        if (pivot != rank)
            for (std::size_t c = 0; c < cols; ++c)
                std::swap(a[pivot * cols + c], a[rank * cols + c]);
        const double head = a[rank * cols + col];
        for (std::size_t r = rank + 1; r < rows; ++r) {
            const double factor = a[r * cols + col] / head;
            if (factor == 0.0)
                continue;
            for (std::size_t c = col; c < cols; ++c)
                a[r * cols + c] -= factor * a[rank * cols + c];
        }
        ++rank;
    }
    return rank;
}

std::string to_string(RankMethod method)
{
    return method == RankMethod::sampled ? "sampled" : "analytic";
}

RankMethod rank_method_from_string(std::string_view text)
{
    if (text == "sampled")
        return RankMethod::sampled;
    if (text == "analytic")
        return RankMethod::analytic;
    throw ConfigError("unknown rank model '" + std::string(text) + "'");
}

double RankDistribution::probability(std::size_t rank) const
{
    auto it = probs.find(rank);
    return it == probs.end() ? 0.0 : it->second.get_d();
}

double RankDistribution::mean() const
{
    double total = 0.0;
    for (const auto& [rank, p] : probs)
        total += static_cast<double>(rank) * p.get_d();
    return total;
}

void RankDistribution::validate() const
{
    check_shape(rows, cols);
    check_density(density);
    Rational total = 0;
    for (const auto& [rank, p] : probs) {
        if (rank > max_rank())
            throw ConfigError("rank " + std::to_string(rank) + " exceeds min(rows, cols)");
        if (p < 0 || p > 1)
            throw ConfigError("rank probability outside [0, 1]");
        total += p;
    }
    if (total != 1)
        throw ConfigError("rank probabilities do not sum to 1");
}

std::string RankDistribution::to_record() const
{
    std::ostringstream out;
    out.precision(17);
    out << "rank-distribution v1\n";
    out << "rows " << rows << '\n';
    out << "cols " << cols << '\n';
    out << "density " << density << '\n';
    out << "method " << to_string(method) << '\n';
    out << "seed " << (seed ? std::to_string(*seed) : std::string("-")) << '\n';
    out << "sample_count " << sample_count << '\n';
    for (const auto& [rank, p] : probs)
        out << "rank " << rank << ' ' << p.get_str() << '\n';
    return out.str();
}

RankDistribution RankDistribution::from_record(std::string_view text)
{
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line) || line != "rank-distribution v1")
        throw ConfigError("not a rank-distribution record");
    RankDistribution dist;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        std::istringstream fields(line);
        std::string key;
        fields >> key;
        if (key == "rows") {
            fields >> dist.rows;
        } else if (key == "cols") {
            fields >> dist.cols;
        } else if (key == "density") {
            fields >> dist.density;
        } else if (key == "method") {
            std::string value;
            fields >> value;
            dist.method = rank_method_from_string(value);
        } else if (key == "seed") {
            std::string value;
            fields >> value;
            if (value != "-")
                dist.seed = std::stoull(value);
        } else if (key == "sample_count") {
            fields >> dist.sample_count;
        } else if (key == "rank") {
            std::size_t rank = 0;
            std::string value;
            fields >> rank >> value;
            Rational p(value);
            p.canonicalize();
            dist.probs[rank] = p;
        } else {
            throw ConfigError("unknown rank-distribution field '" + key + "'");
        }
        if (fields.fail())
            throw ConfigError("malformed rank-distribution line: " + line);
    }
    dist.validate();
    return dist;
}

SparsityPattern sample_pattern(std::size_t rows, std::size_t cols, double density, std::uint64_t seed,
                               std::uint64_t index)
{
    SparsityPattern pattern(rows, cols);
    CounterRng rng(seed, index, kPatternStream);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
            if (rng.uniform() < density)
                pattern.set(r, c);
    return pattern;
}

std::vector<double> sample_sparse_gaussian(std::size_t rows, std::size_t cols, double density,
                                           std::uint64_t seed, std::uint64_t index)
{
    const SparsityPattern pattern = sample_pattern(rows, cols, density, seed, index);
    CounterRng rng(seed, index, kValueStream);
    std::vector<double> values(rows * cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            double v = rng.normal();
            // A standard normal is nonzero almost surely; keep the support exact.
            while (v == 0.0)
                v = rng.normal();
            if (pattern.at(r, c))
                values[r * cols + c] = v;
        }
    }
    return values;
}

RankDistribution sample_rank_distribution(std::size_t rows, std::size_t cols, double density,
                                          std::uint64_t seed, const SamplingOptions& options)
{
    check_shape(rows, cols);
    check_density(density);
    const std::size_t batch = std::max<std::size_t>(options.batch, 1);
    const std::size_t threads = std::max<std::size_t>(options.threads, 1);

    auto rank_of = [&](std::uint64_t index) -> std::size_t {
        if (options.numeric) {
            const auto values = sample_sparse_gaussian(rows, cols, density, seed, index);
            return numeric_rank(rows, cols, values);
        }
        return structural_rank(sample_pattern(rows, cols, density, seed, index));
    };

    std::map<std::size_t, std::size_t> counts;
    std::size_t total = 0;
    std::size_t min_rank = std::numeric_limits<std::size_t>::max();
    std::size_t max_rank = 0;
    auto satisfied = [&]() {
        return total >= batch && total >= (max_rank - min_rank + 1) * batch;
    };

    std::vector<std::size_t> ranks(batch);
    while (!satisfied()) {
        const std::uint64_t first = total;
        if (threads == 1) {
            for (std::size_t i = 0; i < batch; ++i)
                ranks[i] = rank_of(first + i);
        } else {
            std::vector<std::thread> workers;
            for (std::size_t t = 0; t < threads; ++t) {
                workers.emplace_back([&, t]() {
                    for (std::size_t i = t; i < batch; i += threads)
                        ranks[i] = rank_of(first + i);
                });
            }
            for (auto& w : workers)
                w.join();
        }
        // Consume in index order so the stopping point matches a serial run.
        for (std::size_t i = 0; i < batch && !satisfied(); ++i) {
            ++counts[ranks[i]];
            ++total;
            min_rank = std::min(min_rank, ranks[i]);
            max_rank = std::max(max_rank, ranks[i]);
        }
    }

    RankDistribution dist;
    dist.rows = rows;
    dist.cols = cols;
    dist.density = density;
    dist.method = RankMethod::sampled;
    dist.seed = seed;
    dist.sample_count = total;
    for (const auto& [rank, count] : counts) {
        Rational p(static_cast<unsigned long>(count), static_cast<unsigned long>(total));
        p.canonicalize();
        dist.probs[rank] = p;
    }
    return dist;
}

RankDistribution analytic_rank_distribution(std::size_t rows, std::size_t cols, double density)
{
    check_shape(rows, cols);
    check_density(density);
    const std::size_t m = std::min(rows, cols);
    const std::size_t n = std::max(rows, cols);

    RankDistribution dist;
    dist.rows = rows;
    dist.cols = cols;
    dist.density = density;
    dist.method = RankMethod::analytic;

    if (density == 1.0) {
        dist.probs[m] = 1;
        return dist;
    }
    if (density == 0.0) {
        dist.probs[0] = 1;
        return dist;
    }

    // r = P(a line of length n is entirely zero); q = 1 - r. Work with log r and
    // log1p(-r) so neither saturates when r is tiny.
    const long double log_r = static_cast<long double>(n) * std::log1p(-static_cast<long double>(density));
    const long double r = std::exp(log_r);
    const long double log_q = std::log1p(-r);
    const long double log_m_fact = std::lgamma(static_cast<long double>(m) + 1.0L);

    std::vector<double> mass(m + 1, 0.0);
    std::size_t mode = 0;
    for (std::size_t k = 0; k <= m; ++k) {
        const long double kk = static_cast<long double>(k);
        const long double log_p = log_m_fact - std::lgamma(kk + 1.0L)
            - std::lgamma(static_cast<long double>(m - k) + 1.0L)
            + (k == 0 ? 0.0L : kk * log_q)
            + (k == m ? 0.0L : static_cast<long double>(m - k) * log_r);
        mass[k] = static_cast<double>(std::exp(log_p));
        if (mass[k] > mass[mode])
            mode = k;
    }

    // Exact dyadic rationals from the doubles; the mode absorbs the rounding
    // residual so the stored mass sums to exactly one.
    Rational rest = 0;
    for (std::size_t k = 0; k <= m; ++k) {
        if (k == mode || mass[k] == 0.0)
            continue;
        Rational p = exact_from_double(mass[k]);
        rest += p;
        dist.probs[k] = p;
    }
    dist.probs[mode] = Rational(1) - rest;
    return dist;
}

Rational fixed_count_fullrank_probability(std::size_t n)
{
    if (n == 0)
        throw ConfigError("fixed_count_fullrank_probability requires n >= 1");
    Integer factorial;
    mpz_fac_ui(factorial.get_mpz_t(), n);
    Integer placements;
    mpz_bin_uiui(placements.get_mpz_t(), n * n, n);
    Rational result(factorial, placements);
    result.canonicalize();
    return result;
}

double RankDistributionCache::quantize(double density)
{
    return static_cast<double>(std::llround(density * 1e6)) / 1e6;
}

RankDistribution RankDistributionCache::get(std::size_t rows, std::size_t cols, double density,
                                            const RankModel& model)
{
    check_density(density);
    const double q = quantize(density);
    const std::uint64_t seed = model.method == RankMethod::sampled ? model.seed : 0;
    const Key key{rows, cols, std::llround(density * 1e6), static_cast<int>(model.method), seed};
    {
        std::lock_guard lock(mutex_);
        auto it = entries_.find(key);
        if (it != entries_.end())
            return it->second;
    }
    RankDistribution dist = model.method == RankMethod::sampled
        ? sample_rank_distribution(rows, cols, q, model.seed, model.sampling)
        : analytic_rank_distribution(rows, cols, q);
    std::lock_guard lock(mutex_);
    return entries_.emplace(key, std::move(dist)).first->second;
}

std::size_t RankDistributionCache::size() const
{
    std::lock_guard lock(mutex_);
    return entries_.size();
}

} // namespace regionprune
