#include "regionprune/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "regionprune/error.hpp"
#include "regionprune/planner.hpp"
#include "regionprune/regions.hpp"
#include "regionprune/svg.hpp"

namespace regionprune {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b)
{
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::string number(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string density_tag(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

std::string timestamp()
{
    const std::time_t now = std::time(nullptr);
    std::tm utc{};
    gmtime_r(&now, &utc);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &utc);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// Runs task(0..count-1) on up to `jobs` threads and rethrows the first failure.
template <typename Task>
void parallel_for(std::size_t count, std::size_t jobs, Task task)
{
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        while (true) {
            const std::size_t k = next.fetch_add(1);
            if (k >= count)
                return;
            try {
                task(k);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure)
                    failure = std::current_exception();
                next = count;
            }
        }
    };
    const std::size_t workers = std::min(std::max<std::size_t>(jobs, 1), count);
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < workers; ++t)
            pool.emplace_back(worker);
        for (auto& t : pool)
            t.join();
    }
    if (failure)
        std::rethrow_exception(failure);
}

void save_atomically(const MlpModel& model, const std::filesystem::path& path)
{
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    model.save(tmp);
    std::filesystem::rename(tmp, path);
}

std::optional<MlpModel> load_checkpoint(const std::filesystem::path& path, const LayerSpec& layers)
{
    if (!std::filesystem::exists(path))
        return std::nullopt;
    try {
        MlpModel model = MlpModel::load(path);
        if (model.arch == layers.arch && model.output_dim == layers.output_dim)
            return model;
    } catch (const Error&) {
        // A damaged checkpoint is recomputed.
    }
    return std::nullopt;
}

std::string arch_tag(const LayerSpec& layers)
{
    std::string tag = std::to_string(layers.arch.input_dim);
    for (std::size_t w : layers.arch.widths)
        tag += "x" + std::to_string(w);
    return tag + "x" + std::to_string(layers.output_dim);
}

std::vector<std::string> split(const std::string& line, char sep)
{
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(line);
    while (std::getline(in, cur, sep))
        out.push_back(cur);
    if (!line.empty() && line.back() == sep)
        out.emplace_back();
    return out;
}

template <typename T>
std::string optional_field(const std::optional<T>& v)
{
    if (!v)
        return "";
    if constexpr (std::is_floating_point_v<T>)
        return number(*v);
    else
        return std::to_string(*v);
}

std::vector<double> ranks_of(const std::vector<double>& v)
{
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]])
            ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k)
            ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

} // namespace

std::string to_string(ExperimentKind kind)
{
    switch (kind) {
    case ExperimentKind::fig1:
        return "fig1";
    case ExperimentKind::fig2:
        return "fig2";
    case ExperimentKind::fig3:
        return "fig3";
    }
    return "fig1";
}

ExperimentKind experiment_kind_from_string(std::string_view text)
{
    if (text == "fig1")
        return ExperimentKind::fig1;
    if (text == "fig2")
        return ExperimentKind::fig2;
    if (text == "fig3")
        return ExperimentKind::fig3;
    throw ConfigError("unknown experiment '" + std::string(text) + "' (expected fig1, fig2 or fig3)");
}

std::filesystem::path resolve_data_dir(const std::optional<std::filesystem::path>& explicit_dir)
{
    if (explicit_dir)
        return *explicit_dir;
    if (const char* env = std::getenv("REGION_PRUNE_DATA"); env && *env)
        return env;
    return "data/mnist";
}

DataSplits load_mnist_dir(const std::filesystem::path& dir)
{
    auto pick = [&](const std::string& stem) {
        for (const char* suffix : {".gz", ""}) {
            const auto path = dir / (stem + suffix);
            if (std::filesystem::exists(path))
                return path;
        }
        throw IngestError((dir / stem).string() + ": not found (set REGION_PRUNE_DATA or --data-dir)");
    };
    DataSplits data;
    data.train = load_idx(pick("train-images-idx3-ubyte"), pick("train-labels-idx1-ubyte"));
    data.test = load_idx(pick("t10k-images-idx3-ubyte"), pick("t10k-labels-idx1-ubyte"));
    return data;
}

void ExperimentConfig::validate() const
{
    layers.arch.validate();
    train.validate();
    if (layers.output_dim == 0)
        throw ConfigError("output dimension must be positive");
    if (densities.empty() || seeds.empty())
        throw ConfigError("an experiment needs at least one density and one seed");
    for (double p : densities)
        if (!(p >= 0.0 && p <= 1.0))
            throw ConfigError("densities must lie in [0, 1]");
    if (kind != ExperimentKind::fig3 && sample_points < 1)
        throw ConfigError("at least one sample point is needed");
    if (kind == ExperimentKind::fig3 && layers.arch.depth() != 2)
        throw UnsupportedError("fig3 compares two-layer plans; architecture has "
                               + std::to_string(layers.arch.depth()) + " hidden layers");
    if (!(epsilon > 0.0))
        throw ConfigError("epsilon must be positive");
}

nlohmann::json ExperimentConfig::to_json() const
{
    return nlohmann::json{{"experiment", to_string(kind)},
                          {"dataset", dataset},
                          {"arch", arch_tag(layers)},
                          {"densities", densities},
                          {"seeds", seeds},
                          {"train",
                           {{"epochs", train.epochs},
                            {"batch_size", train.batch_size},
                            {"learning_rate", train.learning_rate}}},
                          {"sample_points", sample_points},
                          {"subspace_dimension_for_bound", sample_points > 0 ? sample_points - 1 : 0},
                          {"epsilon", epsilon},
                          {"subspace_seed", subspace_seed},
                          {"rank_model", to_string(rank_model.method)},
                          {"rank_seed", rank_model.seed},
                          {"jobs", jobs}};
}

std::string csv_header()
{
    return "experiment,dataset,arch,seed,global_density,p1,p2,acc_pre,acc_pruned,acc_finetuned,log2_bound,"
           "region_count,samples,epsilon,wall_seconds";
}

std::string csv_line(const ExperimentRow& r)
{
    std::ostringstream out;
    out << r.experiment << ',' << r.dataset << ',' << r.arch << ',' << r.seed << ',' << number(r.global_density)
        << ',' << number(r.p1) << ',' << optional_field(r.p2) << ',' << number(r.acc_pre) << ','
        << number(r.acc_pruned) << ',' << number(r.acc_finetuned) << ',' << optional_field(r.log2_bound) << ','
        << optional_field(r.region_count) << ',' << optional_field(r.samples) << ',' << optional_field(r.epsilon)
        << ',' << number(r.wall_seconds);
    return out.str();
}

std::vector<ExperimentRow> read_csv(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw IngestError(path.string() + ": cannot open");
    std::string line;
    if (!std::getline(in, line) || line != csv_header())
        throw IngestError(path.string() + ": unexpected CSV header");
    std::vector<ExperimentRow> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty())
            continue;
        const auto f = split(line, ',');
        if (f.size() != 15)
            throw IngestError(path.string() + ": line " + std::to_string(line_no) + " has " + std::to_string(f.size())
                              + " fields");
        auto opt_d = [](const std::string& s) { return s.empty() ? std::nullopt : std::optional<double>(std::stod(s)); };
        ExperimentRow r;
        r.experiment = f[0];
        r.dataset = f[1];
        r.arch = f[2];
        r.seed = std::stoull(f[3]);
        r.global_density = std::stod(f[4]);
        r.p1 = std::stod(f[5]);
        r.p2 = opt_d(f[6]);
        r.acc_pre = std::stod(f[7]);
        r.acc_pruned = std::stod(f[8]);
        r.acc_finetuned = std::stod(f[9]);
        r.log2_bound = opt_d(f[10]);
        if (!f[11].empty())
            r.region_count = std::stoull(f[11]);
        if (!f[12].empty())
            r.samples = std::stoull(f[12]);
        r.epsilon = opt_d(f[13]);
        r.wall_seconds = std::stod(f[14]);
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<DensitySummary> summarize(const std::vector<ExperimentRow>& rows, const std::string& experiment)
{
    std::vector<DensitySummary> out;
    std::vector<double> count_sum;
    std::vector<std::size_t> count_n;
    std::vector<double> bound_sum;
    std::vector<std::size_t> bound_n;
    for (const ExperimentRow& r : rows) {
        if (r.experiment != experiment)
            continue;
        auto it = std::find_if(out.begin(), out.end(), [&](const DensitySummary& s) { return s.density == r.global_density; });
        if (it == out.end()) {
            out.push_back({r.global_density, 0, 0.0, std::nullopt, std::nullopt});
            count_sum.push_back(0.0);
            count_n.push_back(0);
            bound_sum.push_back(0.0);
            bound_n.push_back(0);
            it = out.end() - 1;
        }
        const std::size_t k = static_cast<std::size_t>(it - out.begin());
        it->runs += 1;
        it->mean_accuracy += r.acc_finetuned;
        if (r.region_count) {
            count_sum[k] += static_cast<double>(*r.region_count);
            ++count_n[k];
        }
        if (r.log2_bound) {
            bound_sum[k] += *r.log2_bound;
            ++bound_n[k];
        }
    }
    for (std::size_t k = 0; k < out.size(); ++k) {
        out[k].mean_accuracy /= static_cast<double>(out[k].runs);
        if (count_n[k])
            out[k].mean_region_count = count_sum[k] / static_cast<double>(count_n[k]);
        if (bound_n[k])
            out[k].mean_log2_bound = bound_sum[k] / static_cast<double>(bound_n[k]);
    }
    return out;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y)
{
    if (x.size() != y.size() || x.size() < 2)
        throw ConfigError("spearman correlation needs two equally long series of length >= 2");
    const auto rx = ranks_of(x);
    const auto ry = ranks_of(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0)
        return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

std::vector<std::size_t> draw_sample_indices(std::size_t test_size, std::size_t count, std::uint64_t subspace_seed,
                                             std::uint64_t seed, double density)
{
    if (count > test_size)
        throw ConfigError("cannot draw " + std::to_string(count) + " samples from " + std::to_string(test_size));
    std::mt19937_64 rng(mix(mix(subspace_seed, seed), std::bit_cast<std::uint64_t>(density)));
    std::vector<std::size_t> picked;
    while (picked.size() < count) {
        const std::size_t k = std::uniform_int_distribution<std::size_t>(0, test_size - 1)(rng);
        if (std::find(picked.begin(), picked.end(), k) == picked.end())
            picked.push_back(k);
    }
    return picked;
}

ExperimentOutput run_experiment(const ExperimentConfig& config, const DataSplits& data)
{
    config.validate();
    if (data.train.input_dim != config.layers.arch.input_dim || data.test.input_dim != config.layers.arch.input_dim)
        throw ConfigError("dataset input dimension does not match architecture " + arch_tag(config.layers));
    const std::string started = timestamp();
    const std::string kind = to_string(config.kind);
    const std::string arch = arch_tag(config.layers);
    const auto ckpt_dir = config.out_dir / "checkpoints";
    std::filesystem::create_directories(ckpt_dir);
    const std::string prefix = config.dataset + "-" + arch + "-s";

    // Stage 1: one trained model per seed, shared by every density.
    std::vector<MlpModel> trained(config.seeds.size());
    std::vector<double> acc_pre(config.seeds.size());
    parallel_for(config.seeds.size(), config.jobs, [&](std::size_t k) {
        const std::uint64_t seed = config.seeds[k];
        const auto path = ckpt_dir / (prefix + std::to_string(seed) + "-trained.json");
        if (auto model = load_checkpoint(path, config.layers)) {
            trained[k] = std::move(*model);
        } else {
            TrainConfig tc = config.train;
            tc.seed = seed;
            trained[k] = train(MlpModel::initialize(config.layers.arch, config.layers.output_dim, seed), data.train, tc);
            save_atomically(trained[k], path);
        }
        acc_pre[k] = evaluate(trained[k], data.test);
    });

    RankDistributionCache cache;
    const std::size_t depth = config.layers.arch.depth();
    // Per-density plans: uniform for fig1/fig2, uniform and planned for fig3.
    struct Variant {
        std::string label;
        std::vector<double> per_layer;
        std::optional<double> log2_bound;
    };
    std::vector<std::vector<Variant>> variants(config.densities.size());
    for (std::size_t d = 0; d < config.densities.size(); ++d) {
        const double p = config.densities[d];
        const DensityAssignment uniform = DensityAssignment::uniform(config.layers.arch, p);
        if (config.kind == ExperimentKind::fig3) {
            const auto ranks = layer_rank_distributions(config.layers.arch, uniform, config.rank_model, &cache);
            const BoundValue ub = evaluate_expected_bound(config.layers.arch, uniform, ranks, config.layers.arch.input_dim);
            const auto counts = config.layers.arch.weight_counts();
            const PruningPlan plan = plan_densities(config.layers.arch, counts, p, config.rank_model,
                                                    config.layers.arch.input_dim, PlannerOptions{}, &cache);
            variants[d].push_back({"fig3:uniform", uniform.per_layer, ub.log2});
            variants[d].push_back({"fig3:planned", plan.per_layer_density, plan.predicted_log2_bound});
        } else {
            const std::size_t d0 = config.sample_points - 1;
            const auto ranks = layer_rank_distributions(config.layers.arch, uniform, config.rank_model, &cache);
            const BoundValue b = evaluate_expected_bound(config.layers.arch, uniform, ranks, d0);
            variants[d].push_back({kind, uniform.per_layer, b.log2});
        }
    }

    // Stage 2: prune, fine-tune and measure every (density, seed, variant) cell.
    struct Cell {
        std::size_t density;
        std::size_t seed;
        std::size_t variant;
    };
    std::vector<Cell> cells;
    for (std::size_t d = 0; d < config.densities.size(); ++d)
        for (std::size_t s = 0; s < config.seeds.size(); ++s)
            for (std::size_t v = 0; v < variants[d].size(); ++v)
                cells.push_back({d, s, v});
    std::vector<ExperimentRow> rows(cells.size());
    parallel_for(cells.size(), config.jobs, [&](std::size_t k) {
        const auto start = std::chrono::steady_clock::now();
        const Cell& cell = cells[k];
        const double p = config.densities[cell.density];
        const std::uint64_t seed = config.seeds[cell.seed];
        const Variant& variant = variants[cell.density][cell.variant];
        const MlpModel pruned = magnitude_prune(trained[cell.seed], variant.per_layer);

        std::string variant_tag = variant.label.substr(variant.label.find(':') + 1);
        if (variant_tag == "fig1" || variant_tag == "fig2")
            variant_tag = "uniform";
        const auto path = ckpt_dir / (prefix + std::to_string(seed) + "-p" + density_tag(p) + "-" + variant_tag + ".json");
        MlpModel tuned;
        if (auto model = load_checkpoint(path, config.layers)) {
            tuned = std::move(*model);
        } else {
            TrainConfig tc = config.train;
            // Same stream for both variants, so density 1 yields identical models.
            tc.seed = mix(seed, std::bit_cast<std::uint64_t>(p));
            tuned = train(pruned, data.train, tc);
            save_atomically(tuned, path);
        }

        ExperimentRow& row = rows[k];
        row.experiment = variant.label;
        row.dataset = config.dataset;
        row.arch = arch;
        row.seed = seed;
        row.global_density = p;
        row.p1 = variant.per_layer[0];
        if (depth > 1)
            row.p2 = variant.per_layer[1];
        row.acc_pre = acc_pre[cell.seed];
        row.acc_pruned = evaluate(pruned, data.test);
        row.acc_finetuned = evaluate(tuned, data.test);
        row.log2_bound = variant.log2_bound;
        if (config.kind == ExperimentKind::fig1) {
            const auto picks = draw_sample_indices(data.test.size(), config.sample_points, config.subspace_seed, seed, p);
            std::vector<std::vector<double>> points;
            for (std::size_t i : picks) {
                const auto x = data.test.input(i);
                points.emplace_back(x.begin(), x.end());
            }
            std::optional<AffineSubspace> subspace;
            if (points.size() >= 2)
                subspace = AffineSubspace::from_points(points);
            CountOptions co;
            co.epsilon = config.epsilon;
            const RegionCountResult rc = count_regions(ReluNetwork::from_model(tuned),
                                                       BoxDomain::unit(config.layers.arch.input_dim), subspace, co);
            if (!rc.complete)
                throw NumericalError("region count for seed " + std::to_string(seed) + ", density " + density_tag(p)
                                     + " stopped early: " + rc.diagnostic);
            row.region_count = rc.count;
            row.samples = config.sample_points;
            row.epsilon = config.epsilon;
        }
        row.wall_seconds = seconds_since(start);
    });

    std::filesystem::create_directories(config.out_dir);
    ExperimentOutput output;
    output.rows = rows;
    output.csv_path = config.out_dir / (kind + ".csv");
    output.svg_path = config.out_dir / (kind + ".svg");
    output.meta_path = config.out_dir / (kind + ".meta.json");
    {
        std::ofstream csv(output.csv_path, std::ios::binary);
        csv << csv_header() << '\n';
        for (const ExperimentRow& r : rows)
            csv << csv_line(r) << '\n';
    }

    svg::LineChart chart;
    chart.log_x = std::all_of(config.densities.begin(), config.densities.end(), [](double p) { return p > 0.0; });
    chart.x_label = "density (fraction of weights kept)";
    auto series_of = [&](const std::string& label, auto value) {
        svg::Series s;
        s.label = label;
        for (const DensitySummary& d : summarize(rows, label == "fig3:uniform" || label == "fig3:planned" ? label : kind)) {
            const std::optional<double> v = value(d);
            if (!v)
                continue;
            s.x.push_back(d.density);
            s.y.push_back(*v);
        }
        return s;
    };
    const auto accuracy = [](const DensitySummary& d) { return std::optional<double>(d.mean_accuracy); };
    if (config.kind == ExperimentKind::fig1) {
        chart.title = "Linear regions on sample subspaces, " + arch;
        chart.y_label = "mean region count";
        chart.right_label = "mean test accuracy";
        chart.series.push_back(series_of("mean regions", [](const DensitySummary& d) { return d.mean_region_count; }));
        chart.right_series.push_back(series_of("mean test accuracy", accuracy));
    } else if (config.kind == ExperimentKind::fig2) {
        chart.title = "Expected region bound, " + arch;
        chart.y_label = "log2 expected bound";
        chart.right_label = "mean test accuracy";
        chart.series.push_back(series_of("log2 expected bound", [](const DensitySummary& d) { return d.mean_log2_bound; }));
        chart.right_series.push_back(series_of("mean test accuracy", accuracy));
    } else {
        chart.title = "Planned versus uniform densities, " + arch;
        chart.y_label = "mean fine-tuned accuracy";
        chart.right_label = "gain (planned - uniform)";
        svg::Series uniform = series_of("fig3:uniform", accuracy);
        svg::Series planned = series_of("fig3:planned", accuracy);
        svg::Series gain;
        gain.label = "gain";
        for (std::size_t i = 0; i < uniform.x.size() && i < planned.x.size(); ++i) {
            gain.x.push_back(uniform.x[i]);
            gain.y.push_back(planned.y[i] - uniform.y[i]);
        }
        uniform.label = "uniform";
        planned.label = "planned";
        chart.series = {uniform, planned};
        chart.right_series = {gain};
    }
    {
        std::ofstream out(output.svg_path, std::ios::binary);
        out << svg::render(chart);
    }

    nlohmann::json meta;
    meta["config"] = config.to_json();
    meta["started"] = started;
    meta["finished"] = timestamp();
    meta["train_samples"] = data.train.size();
    meta["test_samples"] = data.test.size();
    meta["rows"] = rows.size();
    meta["checkpoint_dir"] = ckpt_dir.string();
    {
        std::ofstream out(output.meta_path, std::ios::binary);
        out << meta.dump(2) << '\n';
    }
    return output;
}

} // namespace regionprune
