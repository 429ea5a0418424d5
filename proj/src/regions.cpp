#include "regionprune/regions.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <thread>

#include "regionprune/error.hpp"
#include "regionprune/lp.hpp"

namespace regionprune {

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += a[i] * b[i];
    return s;
}

// Modified Gram-Schmidt with one re-orthogonalization pass; drops directions
// that are (numerically) in the span of earlier ones.
std::vector<std::vector<double>> orthonormal_basis(const std::vector<std::vector<double>>& directions)
{
    double scale = 0.0;
    for (const auto& d : directions)
        scale = std::max(scale, std::sqrt(dot(d, d)));
    std::vector<std::vector<double>> basis;
    for (const auto& d : directions) {
        std::vector<double> v = d;
        for (int pass = 0; pass < 2; ++pass)
            for (const auto& q : basis) {
                const double c = dot(v, q);
                for (std::size_t i = 0; i < v.size(); ++i)
                    v[i] -= c * q[i];
            }
        const double norm = std::sqrt(dot(v, v));
        if (norm <= 1e-9 * std::max(1.0, scale))
            continue;
        for (double& x : v)
            x /= norm;
        basis.push_back(std::move(v));
    }
    return basis;
}

double pad(double v, double direction)
{
    return v + direction * 1e-9 * (1.0 + std::abs(v));
}

// Feasible inputs written as x = offset + basis * y, with y inside a box and
// optionally a set of two-sided rows lo <= a.y <= hi.
struct InputSpace {
    struct Row {
        std::vector<double> a;
        double lo = 0.0;
        double hi = 0.0;
    };

    bool empty = false;
    bool identity = false; // basis is the identity and offset is zero
    std::size_t dim = 0;
    std::vector<double> offset;
    std::vector<std::vector<double>> basis_columns; // dim vectors of length n0
    std::vector<double> ylo;
    std::vector<double> yhi;
    std::vector<Row> rows;

    std::vector<double> point(const std::vector<double>& y) const
    {
        if (identity)
            return {y.begin(), y.begin() + static_cast<long>(dim)};
        std::vector<double> x = offset;
        for (std::size_t k = 0; k < dim; ++k)
            for (std::size_t i = 0; i < x.size(); ++i)
                x[i] += basis_columns[k][i] * y[k];
        return x;
    }

    // Constraint set over y (plus `extra` trailing variables) without objective.
    lp::LinearProgram program(std::size_t extra = 0) const
    {
        lp::LinearProgram p(dim + extra);
        for (std::size_t k = 0; k < dim; ++k) {
            p.lower[k] = ylo[k];
            p.upper[k] = yhi[k];
        }
        for (const Row& row : rows) {
            std::vector<double> coeffs(row.a);
            coeffs.resize(dim + extra, 0.0);
            p.add_constraint(coeffs, lp::Sense::greater_equal, row.lo);
            p.add_constraint(std::move(coeffs), lp::Sense::less_equal, row.hi);
        }
        return p;
    }
};

// Min and max of a.y + c over the input space.
std::pair<double, double> linear_range(const InputSpace& space, const std::vector<double>& a, double c)
{
    if (space.rows.empty()) {
        double lo = c;
        double hi = c;
        for (std::size_t k = 0; k < space.dim; ++k) {
            lo += std::min(a[k] * space.ylo[k], a[k] * space.yhi[k]);
            hi += std::max(a[k] * space.ylo[k], a[k] * space.yhi[k]);
        }
        return {lo, hi};
    }
    lp::LinearProgram p = space.program();
    double result[2];
    for (int side = 0; side < 2; ++side) {
        p.objective = a;
        if (side == 0)
            for (double& v : p.objective)
                v = -v;
        const lp::Result r = lp::solve_robust(p);
        if (r.status != lp::Status::optimal)
            throw NumericalError("bounding LP over the input set ended " + lp::to_string(r.status));
        result[side] = c + dot(a, r.x);
    }
    return {result[0], result[1]};
}

InputSpace make_input_space(const ReluNetwork& net, const BoxDomain& domain,
                            const std::optional<AffineSubspace>& subspace)
{
    domain.validate();
    const std::size_t n0 = net.input_dim;
    if (domain.lower.size() != n0)
        throw ConfigError("domain has dimension " + std::to_string(domain.lower.size()) + ", network input is "
                          + std::to_string(n0));
    InputSpace space;
    if (!subspace) {
        space.identity = true;
        space.dim = n0;
        space.ylo = domain.lower;
        space.yhi = domain.upper;
        return space;
    }
    if (subspace->base.size() != n0)
        throw ConfigError("subspace base has the wrong dimension");
    for (const auto& d : subspace->directions)
        if (d.size() != n0)
            throw ConfigError("subspace direction has the wrong dimension");

    space.offset = subspace->base;
    space.basis_columns = orthonormal_basis(subspace->directions);
    space.dim = space.basis_columns.size();
    space.ylo.assign(space.dim, -lp::kInfinity);
    space.yhi.assign(space.dim, lp::kInfinity);

    for (std::size_t i = 0; i < n0; ++i) {
        InputSpace::Row row;
        row.a.resize(space.dim);
        double norm = 0.0;
        for (std::size_t k = 0; k < space.dim; ++k) {
            row.a[k] = space.basis_columns[k][i];
            norm = std::max(norm, std::abs(row.a[k]));
        }
        row.lo = domain.lower[i] - space.offset[i];
        row.hi = domain.upper[i] - space.offset[i];
        if (norm <= 1e-12) {
            if (row.lo > 1e-9 || row.hi < -1e-9) {
                space.empty = true;
                return space;
            }
            continue;
        }
        space.rows.push_back(std::move(row));
    }

    if (space.dim == 1) {
        double lo = -lp::kInfinity;
        double hi = lp::kInfinity;
        for (const auto& row : space.rows) {
            const double a = row.a[0];
            const double l = (a > 0 ? row.lo : row.hi) / a;
            const double h = (a > 0 ? row.hi : row.lo) / a;
            lo = std::max(lo, l);
            hi = std::min(hi, h);
        }
        if (lo > hi) {
            space.empty = true;
            return space;
        }
        space.ylo[0] = lo;
        space.yhi[0] = hi;
        space.rows.clear();
        return space;
    }
    if (space.dim == 0 || space.rows.empty())
        return space;

    // Bounding box of the feasible y, then drop rows the box already implies.
    lp::LinearProgram p = space.program();
    std::vector<double> lo(space.dim);
    std::vector<double> hi(space.dim);
    for (std::size_t k = 0; k < space.dim; ++k) {
        for (int side = 0; side < 2; ++side) {
            p.objective.assign(space.dim, 0.0);
            p.objective[k] = side == 0 ? -1.0 : 1.0;
            const lp::Result r = lp::solve_robust(p);
            if (r.status == lp::Status::infeasible) {
                space.empty = true;
                return space;
            }
            if (r.status != lp::Status::optimal)
                throw NumericalError("bounding the subspace coordinates ended " + lp::to_string(r.status));
            (side == 0 ? lo : hi)[k] = r.x[k];
        }
    }
    for (std::size_t k = 0; k < space.dim; ++k) {
        space.ylo[k] = pad(lo[k], -1.0);
        space.yhi[k] = pad(hi[k], 1.0);
    }
    std::vector<InputSpace::Row> kept;
    for (auto& row : space.rows) {
        double rlo = 0.0;
        double rhi = 0.0;
        for (std::size_t k = 0; k < space.dim; ++k) {
            rlo += std::min(row.a[k] * space.ylo[k], row.a[k] * space.yhi[k]);
            rhi += std::max(row.a[k] * space.ylo[k], row.a[k] * space.yhi[k]);
        }
        if (rlo < row.lo || rhi > row.hi)
            kept.push_back(std::move(row));
    }
    space.rows = std::move(kept);
    return space;
}

// First-layer preactivations as affine functions of y: g = a.y + c.
struct FirstLayer {
    std::vector<std::vector<double>> a;
    std::vector<double> c;
};

FirstLayer first_layer(const ReluNetwork& net, const InputSpace& space)
{
    const ReluNetwork::Layer& layer = net.layers.front();
    FirstLayer out;
    out.a.assign(layer.rows, std::vector<double>(space.dim, 0.0));
    out.c = layer.bias;
    for (std::size_t r = 0; r < layer.rows; ++r) {
        const double* w = layer.weights.data() + r * layer.cols;
        if (space.identity) {
            out.a[r].assign(w, w + layer.cols);
            continue;
        }
        for (std::size_t i = 0; i < layer.cols; ++i)
            out.c[r] += w[i] * space.offset[i];
        for (std::size_t k = 0; k < space.dim; ++k) {
            double s = 0.0;
            for (std::size_t i = 0; i < layer.cols; ++i)
                s += w[i] * space.basis_columns[k][i];
            out.a[r][k] = s;
        }
    }
    return out;
}

NeuronBounds bounds_for(const ReluNetwork& net, const InputSpace& space, const FirstLayer& first)
{
    NeuronBounds bounds;
    if (space.empty) {
        bounds.feasible = false;
        return bounds;
    }
    bounds.lo.resize(net.layers.size());
    bounds.hi.resize(net.layers.size());
    for (std::size_t r = 0; r < net.layers.front().rows; ++r) {
        const auto [lo, hi] = linear_range(space, first.a[r], first.c[r]);
        bounds.lo[0].push_back(pad(lo, -1.0));
        bounds.hi[0].push_back(pad(hi, 1.0));
    }
    for (std::size_t l = 1; l < net.layers.size(); ++l) {
        const ReluNetwork::Layer& layer = net.layers[l];
        for (std::size_t r = 0; r < layer.rows; ++r) {
            double lo = layer.bias[r];
            double hi = layer.bias[r];
            for (std::size_t c = 0; c < layer.cols; ++c) {
                const double w = layer.weights[r * layer.cols + c];
                const double in_lo = std::max(0.0, bounds.lo[l - 1][c]);
                const double in_hi = std::max(0.0, bounds.hi[l - 1][c]);
                lo += w >= 0 ? w * in_lo : w * in_hi;
                hi += w >= 0 ? w * in_hi : w * in_lo;
            }
            bounds.lo[l].push_back(pad(lo, -1.0));
            bounds.hi[l].push_back(pad(hi, 1.0));
        }
    }
    return bounds;
}

constexpr signed char kFree = -1;

struct NeuronRef {
    std::size_t layer = 0;
    std::size_t index = 0;
};

struct Solved {
    bool feasible = false;
    std::vector<double> y;
};

// Outcome of a subtree search.
struct Tally {
    std::uint64_t count = 0;
    std::uint64_t nodes = 0;
    std::vector<std::string> patterns;
    std::string failure; // nonempty when the search had to stop
};

class RegionSearch {
public:
    RegionSearch(const ReluNetwork& net, const InputSpace& space, const FirstLayer& first,
                 const NeuronBounds& bounds, const CountOptions& options)
        : net_(net)
        , space_(space)
        , first_(first)
        , bounds_(bounds)
        , options_(options)
    {
        double largest = 0.0;
        for (std::size_t l = 0; l < net.layers.size(); ++l)
            for (std::size_t i = 0; i < net.layers[l].rows; ++i) {
                neurons_.push_back({l, i});
                largest = std::max({largest, std::abs(bounds.lo[l][i]), std::abs(bounds.hi[l][i])});
            }
        cap_ = 1.0 + largest;
    }

    std::vector<signed char> initial_state(std::uint64_t& stable) const
    {
        std::vector<signed char> state(neurons_.size(), kFree);
        stable = 0;
        if (!options_.fix_stable)
            return state;
        const double margin = 0.5 * options_.epsilon;
        for (std::size_t n = 0; n < neurons_.size(); ++n) {
            const auto [l, i] = neurons_[n];
            if (bounds_.lo[l][i] > -margin)
                state[n] = 1;
            else if (bounds_.hi[l][i] < margin)
                state[n] = 0;
            if (state[n] != kFree)
                ++stable;
        }
        return state;
    }

    std::size_t next_free(const std::vector<signed char>& state, std::size_t pos) const
    {
        while (pos < state.size() && state[pos] != kFree)
            ++pos;
        return pos;
    }

    std::size_t size() const { return neurons_.size(); }

    // Solves the relaxation for `state`. Throws NumericalError when the
    // oracle cannot decide.
    Solved solve(const std::vector<signed char>& state, bool careful = false) const
    {
        const lp::LinearProgram program = build(state);
        lp::Result r;
        if (careful) {
            lp::Options options;
            options.bland = true;
            options.pivot_tolerance = 1e-11;
            r = lp::solve(program, options);
            if (r.status == lp::Status::optimal && lp::max_violation(program, r.x) > lp::kFeasibilityTolerance)
                r.status = lp::Status::numerical_failure;
        } else {
            r = lp::solve_robust(program);
        }
        if (r.status == lp::Status::infeasible)
            return {};
        if (r.status != lp::Status::optimal)
            throw NumericalError("region LP ended " + lp::to_string(r.status) + " for pattern " + describe(state));
        Solved solved;
        solved.feasible = r.objective >= options_.epsilon * (1.0 - 1e-9);
        solved.y.assign(r.x.begin(), r.x.begin() + static_cast<long>(space_.dim));
        return solved;
    }

    // A complete pattern counts only if the LP point really lies in it.
    bool verified(const std::vector<signed char>& state, const std::vector<double>& y) const
    {
        const auto g = net_.preactivations(space_.point(y));
        const double margin = 0.5 * options_.epsilon;
        for (std::size_t n = 0; n < neurons_.size(); ++n) {
            const double v = g[neurons_[n].layer][neurons_[n].index];
            if (state[n] == 1 ? v < margin : v > -margin)
                return false;
        }
        return true;
    }

    void accept_leaf(const std::vector<signed char>& state, const std::vector<double>& y, Tally& tally) const
    {
        if (!verified(state, y)) {
            ++tally.nodes;
            const Solved again = solve(state, true);
            if (!again.feasible)
                return;
            if (!verified(state, again.y))
                throw NumericalError("LP point for pattern " + describe(state)
                                     + " fails the forward-pass check after re-solving");
        }
        ++tally.count;
        if (options_.keep_patterns)
            tally.patterns.push_back(describe(state));
    }

    void explore(std::vector<signed char>& state, std::size_t pos, const std::vector<double>& y, Tally& tally,
                 const std::atomic<bool>& stop) const
    {
        if (stop.load(std::memory_order_relaxed))
            throw NumericalError("search cancelled");
        pos = next_free(state, pos);
        if (pos == state.size()) {
            accept_leaf(state, y, tally);
            return;
        }
        for (signed char z : {static_cast<signed char>(1), static_cast<signed char>(0)}) {
            state[pos] = z;
            ++tally.nodes;
            const Solved child = solve(state);
            if (child.feasible)
                explore(state, pos + 1, child.y, tally, stop);
        }
        state[pos] = kFree;
    }

    std::string describe(const std::vector<signed char>& state) const
    {
        std::string s;
        s.reserve(state.size());
        for (signed char v : state)
            s.push_back(v == kFree ? '*' : static_cast<char>('0' + v));
        return s;
    }

private:
    // Variables: y (dim), f, then one h per free neuron outside the last layer.
    lp::LinearProgram build(const std::vector<signed char>& state) const
    {
        const std::size_t dim = space_.dim;
        const std::size_t f = dim;
        const std::size_t last = net_.layers.size() - 1;
        std::size_t extra = 1;
        for (std::size_t n = 0; n < neurons_.size(); ++n)
            if (state[n] == kFree && neurons_[n].layer < last)
                ++extra;
        lp::LinearProgram p = space_.program(extra);
        const std::size_t vars = p.num_vars;
        p.lower[f] = 0.0;
        p.upper[f] = cap_;
        p.objective.assign(vars, 0.0);
        p.objective[f] = 1.0;

        // Affine expressions over the LP variables; the last slot is the constant.
        using Expr = std::vector<double>;
        std::vector<Expr> h;
        std::size_t next_var = dim + 1;
        std::size_t n = 0;
        for (std::size_t l = 0; l < net_.layers.size(); ++l) {
            const ReluNetwork::Layer& layer = net_.layers[l];
            std::vector<Expr> next_h(layer.rows);
            for (std::size_t i = 0; i < layer.rows; ++i, ++n) {
                Expr g(vars + 1, 0.0);
                if (l == 0) {
                    std::copy(first_.a[i].begin(), first_.a[i].end(), g.begin());
                    g[vars] = first_.c[i];
                } else {
                    g[vars] = layer.bias[i];
                    const double* w = layer.weights.data() + i * layer.cols;
                    for (std::size_t c = 0; c < layer.cols; ++c) {
                        if (w[c] == 0.0 || h[c].empty())
                            continue;
                        for (std::size_t v = 0; v <= vars; ++v)
                            g[v] += w[c] * h[c][v];
                    }
                }
                const double lo = bounds_.lo[l][i];
                const double hi = bounds_.hi[l][i];
                if (state[n] == 1) {
                    Expr row = g;
                    row[f] -= 1.0;
                    add_row(p, row, lp::Sense::greater_equal);
                    next_h[i] = std::move(g);
                } else if (state[n] == 0) {
                    Expr row(vars + 1, 0.0);
                    for (std::size_t v = 0; v <= vars; ++v)
                        row[v] = -g[v];
                    row[f] -= 1.0;
                    add_row(p, row, lp::Sense::greater_equal);
                } else if (l < last) {
                    const std::size_t hv = next_var++;
                    p.lower[hv] = 0.0;
                    p.upper[hv] = std::max(hi, 0.0);
                    Expr above(vars + 1, 0.0);
                    for (std::size_t v = 0; v <= vars; ++v)
                        above[v] = -g[v];
                    above[hv] += 1.0;
                    add_row(p, above, lp::Sense::greater_equal); // h >= g
                    if (lo >= 0.0) {
                        add_row(p, above, lp::Sense::less_equal); // h <= g
                    } else if (hi > 0.0) {
                        // h <= hi (g - lo) / (hi - lo)
                        const double slope = hi / (hi - lo);
                        Expr envelope(vars + 1, 0.0);
                        for (std::size_t v = 0; v <= vars; ++v)
                            envelope[v] = -slope * g[v];
                        envelope[vars] += slope * lo;
                        envelope[hv] += 1.0;
                        add_row(p, envelope, lp::Sense::less_equal);
                    }
                    Expr unit(vars + 1, 0.0);
                    unit[hv] = 1.0;
                    next_h[i] = std::move(unit);
                }
            }
            h = std::move(next_h);
        }
        return p;
    }

    static void add_row(lp::LinearProgram& p, const std::vector<double>& expr, lp::Sense sense)
    {
        std::vector<double> coeffs(expr.begin(), expr.end() - 1);
        p.add_constraint(std::move(coeffs), sense, -expr.back());
    }

    const ReluNetwork& net_;
    const InputSpace& space_;
    const FirstLayer& first_;
    const NeuronBounds& bounds_;
    CountOptions options_;
    std::vector<NeuronRef> neurons_;
    double cap_ = 1.0;
};

struct Frontier {
    std::vector<signed char> state;
    std::size_t pos = 0;
    std::vector<double> y;
};

double seconds_since(std::chrono::steady_clock::time_point start)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

} // namespace

ReluNetwork ReluNetwork::from_model(const MlpModel& model)
{
    model.validate();
    ReluNetwork net;
    net.input_dim = model.arch.input_dim;
    for (std::size_t l = 0; l < model.prunable_layers(); ++l) {
        const DenseLayer& src = model.layers[l];
        Layer layer;
        layer.rows = src.rows;
        layer.cols = src.cols;
        layer.weights.resize(src.weights.size());
        for (std::size_t i = 0; i < src.weights.size(); ++i)
            layer.weights[i] = src.mask[i] ? static_cast<double>(src.weights[i]) : 0.0;
        layer.bias.assign(src.bias.begin(), src.bias.end());
        net.layers.push_back(std::move(layer));
    }
    return net;
}

std::size_t ReluNetwork::hidden_neurons() const
{
    std::size_t total = 0;
    for (const Layer& layer : layers)
        total += layer.rows;
    return total;
}

void ReluNetwork::validate() const
{
    if (input_dim == 0 || layers.empty())
        throw ConfigError("network needs an input dimension and at least one hidden layer");
    std::size_t fan_in = input_dim;
    for (const Layer& layer : layers) {
        if (layer.cols != fan_in || layer.rows == 0 || layer.weights.size() != layer.rows * layer.cols
            || layer.bias.size() != layer.rows)
            throw ConfigError("hidden layer shapes do not chain");
        fan_in = layer.rows;
    }
}

std::vector<std::vector<double>> ReluNetwork::preactivations(const std::vector<double>& x) const
{
    std::vector<std::vector<double>> out;
    std::vector<double> h = x;
    for (const Layer& layer : layers) {
        std::vector<double> g(layer.rows);
        for (std::size_t r = 0; r < layer.rows; ++r) {
            double s = layer.bias[r];
            for (std::size_t c = 0; c < layer.cols; ++c)
                s += layer.weights[r * layer.cols + c] * h[c];
            g[r] = s;
        }
        h.resize(layer.rows);
        for (std::size_t r = 0; r < layer.rows; ++r)
            h[r] = std::max(g[r], 0.0);
        out.push_back(std::move(g));
    }
    return out;
}

BoxDomain BoxDomain::unit(std::size_t dim)
{
    return BoxDomain{std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
}

void BoxDomain::validate() const
{
    if (lower.size() != upper.size())
        throw ConfigError("domain bounds have different lengths");
    for (std::size_t i = 0; i < lower.size(); ++i)
        if (!(lower[i] <= upper[i]) || !std::isfinite(lower[i]) || !std::isfinite(upper[i]))
            throw ConfigError("domain bound " + std::to_string(i) + " is not a finite interval");
}

AffineSubspace AffineSubspace::from_points(const std::vector<std::vector<double>>& points)
{
    if (points.size() < 2)
        throw ConfigError("a subspace needs at least two sample points");
    AffineSubspace s;
    s.base = points.front();
    for (std::size_t i = 1; i < points.size(); ++i) {
        if (points[i].size() != s.base.size())
            throw ConfigError("sample points have different dimensions");
        std::vector<double> d(s.base.size());
        for (std::size_t j = 0; j < d.size(); ++j)
            d[j] = points[i][j] - s.base[j];
        s.directions.push_back(std::move(d));
    }
    return s;
}

std::size_t AffineSubspace::dimension() const
{
    return orthonormal_basis(directions).size();
}

NeuronBounds preactivation_bounds(const ReluNetwork& net, const BoxDomain& domain,
                                  const std::optional<AffineSubspace>& subspace)
{
    net.validate();
    const InputSpace space = make_input_space(net, domain, subspace);
    if (space.empty)
        return bounds_for(net, space, {});
    return bounds_for(net, space, first_layer(net, space));
}

nlohmann::json RegionCountResult::to_json() const
{
    nlohmann::json doc{{"count", count},
                       {"epsilon", epsilon},
                       {"nodes_explored", nodes_explored},
                       {"stable_fixed", stable_fixed},
                       {"elapsed_seconds", elapsed_seconds},
                       {"subspace_dimension", subspace_dimension},
                       {"complete", complete}};
    if (!diagnostic.empty())
        doc["diagnostic"] = diagnostic;
    if (patterns)
        doc["patterns"] = *patterns;
    return doc;
}

RegionCountResult count_regions(const ReluNetwork& net, const BoxDomain& domain,
                                const std::optional<AffineSubspace>& subspace, const CountOptions& options)
{
    const auto start = std::chrono::steady_clock::now();
    if (!(options.epsilon > 0.0))
        throw ConfigError("epsilon must be positive");
    net.validate();
    RegionCountResult result;
    result.epsilon = options.epsilon;
    if (options.keep_patterns)
        result.patterns.emplace();

    const InputSpace space = make_input_space(net, domain, subspace);
    result.subspace_dimension = space.dim;
    if (space.empty) {
        result.elapsed_seconds = seconds_since(start);
        return result;
    }
    const FirstLayer first = first_layer(net, space);
    const NeuronBounds bounds = bounds_for(net, space, first);
    const RegionSearch search(net, space, first, bounds, options);

    std::atomic<bool> stop{false};
    Tally prefix;
    std::vector<Frontier> frontier;
    try {
        Frontier root;
        root.state = search.initial_state(result.stable_fixed);
        ++prefix.nodes;
        const Solved solved = search.solve(root.state);
        if (solved.feasible) {
            root.y = solved.y;
            frontier.push_back(std::move(root));
        }
        // Split the tree breadth-first into enough independent subtrees.
        const std::size_t target = options.threads > 1 ? 8 * options.threads : 1;
        bool grew = true;
        while (frontier.size() < target && grew) {
            grew = false;
            std::vector<Frontier> next;
            for (Frontier& node : frontier) {
                const std::size_t pos = search.next_free(node.state, node.pos);
                if (pos == node.state.size()) {
                    next.push_back(std::move(node));
                    continue;
                }
                grew = true;
                for (signed char z : {static_cast<signed char>(1), static_cast<signed char>(0)}) {
                    Frontier child{node.state, pos + 1, {}};
                    child.state[pos] = z;
                    ++prefix.nodes;
                    const Solved s = search.solve(child.state);
                    if (!s.feasible)
                        continue;
                    child.y = s.y;
                    next.push_back(std::move(child));
                }
            }
            frontier = std::move(next);
        }
    } catch (const NumericalError& e) {
        result.complete = false;
        result.diagnostic = e.what();
        result.nodes_explored = prefix.nodes;
        result.elapsed_seconds = seconds_since(start);
        return result;
    }

    std::vector<Tally> tallies(frontier.size());
    std::atomic<std::size_t> next_index{0};
    auto worker = [&] {
        while (true) {
            const std::size_t k = next_index.fetch_add(1);
            if (k >= frontier.size())
                return;
            Frontier& node = frontier[k];
            try {
                search.explore(node.state, node.pos, node.y, tallies[k], stop);
            } catch (const NumericalError& e) {
                tallies[k].failure = e.what();
                stop = true;
            }
        }
    };
    const std::size_t workers = std::min<std::size_t>(std::max<std::size_t>(options.threads, 1), frontier.size());
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < workers; ++t)
            pool.emplace_back(worker);
        for (auto& t : pool)
            t.join();
    }

    result.nodes_explored = prefix.nodes;
    for (Tally& t : tallies) {
        result.count += t.count;
        result.nodes_explored += t.nodes;
        if (result.patterns)
            result.patterns->insert(result.patterns->end(), t.patterns.begin(), t.patterns.end());
        if (!t.failure.empty() && t.failure != "search cancelled" && result.diagnostic.empty()) {
            result.complete = false;
            result.diagnostic = t.failure;
        }
    }
    if (stop && result.diagnostic.empty()) {
        result.complete = false;
        result.diagnostic = "search cancelled";
    }
    result.elapsed_seconds = seconds_since(start);
    return result;
}

std::uint64_t brute_force_count(const ReluNetwork& net, const BoxDomain& domain,
                                const std::optional<AffineSubspace>& subspace, double epsilon)
{
    net.validate();
    domain.validate();
    if (!(epsilon > 0.0))
        throw ConfigError("epsilon must be positive");
    const std::size_t neurons = net.hidden_neurons();
    if (neurons > kBruteForceMaxNeurons)
        throw UnsupportedError("brute-force enumeration refuses " + std::to_string(neurons) + " hidden neurons (limit "
                               + std::to_string(kBruteForceMaxNeurons) + ")");
    const std::size_t n0 = net.input_dim;
    if (domain.lower.size() != n0)
        throw ConfigError("domain dimension does not match the network input");

    // Input variables: x itself, or raw subspace coefficients with box rows.
    const std::size_t inputs = subspace ? subspace->directions.size() : n0;
    const std::size_t vars = inputs + 1;
    const std::size_t f = inputs;
    std::vector<std::vector<double>> x_expr(n0, std::vector<double>(vars + 1, 0.0));
    lp::LinearProgram base(vars);
    if (subspace) {
        for (std::size_t k = 0; k < inputs; ++k) {
            base.lower[k] = -lp::kInfinity;
            base.upper[k] = lp::kInfinity;
        }
        for (std::size_t i = 0; i < n0; ++i) {
            x_expr[i][vars] = subspace->base.at(i);
            for (std::size_t k = 0; k < inputs; ++k)
                x_expr[i][k] = subspace->directions[k].at(i);
            std::vector<double> coeffs(x_expr[i].begin(), x_expr[i].end() - 1);
            base.add_constraint(coeffs, lp::Sense::greater_equal, domain.lower[i] - x_expr[i][vars]);
            base.add_constraint(std::move(coeffs), lp::Sense::less_equal, domain.upper[i] - x_expr[i][vars]);
        }
    } else {
        for (std::size_t i = 0; i < n0; ++i) {
            base.lower[i] = domain.lower[i];
            base.upper[i] = domain.upper[i];
            x_expr[i][i] = 1.0;
        }
    }
    base.lower[f] = epsilon;

    std::uint64_t feasible = 0;
    for (std::uint64_t pattern = 0; pattern < (std::uint64_t{1} << neurons); ++pattern) {
        lp::LinearProgram p = base;
        std::vector<std::vector<double>> h = x_expr;
        std::size_t bit = 0;
        for (const ReluNetwork::Layer& layer : net.layers) {
            std::vector<std::vector<double>> next(layer.rows, std::vector<double>(vars + 1, 0.0));
            for (std::size_t r = 0; r < layer.rows; ++r, ++bit) {
                std::vector<double> g(vars + 1, 0.0);
                g[vars] = layer.bias[r];
                for (std::size_t c = 0; c < layer.cols; ++c)
                    for (std::size_t v = 0; v <= vars; ++v)
                        g[v] += layer.weights[r * layer.cols + c] * h[c][v];
                const bool active = (pattern >> bit) & 1u;
                // active: g - f >= 0; inactive: -g - f >= 0
                std::vector<double> coeffs(vars);
                for (std::size_t v = 0; v < vars; ++v)
                    coeffs[v] = active ? g[v] : -g[v];
                coeffs[f] -= 1.0;
                p.add_constraint(std::move(coeffs), lp::Sense::greater_equal, active ? -g[vars] : g[vars]);
                if (active)
                    next[r] = std::move(g);
            }
            h = std::move(next);
        }
        const lp::Result r = lp::solve_robust(p);
        if (r.status == lp::Status::numerical_failure)
            throw NumericalError("feasibility LP failed for pattern " + std::to_string(pattern));
        if (r.status == lp::Status::optimal)
            ++feasible;
    }
    return feasible;
}

} // namespace regionprune
