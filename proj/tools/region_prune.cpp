// region-prune: command-line front end for the bound, planner, training
// harness, region counter and experiment runner.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "regionprune/bound.hpp"
#include "regionprune/error.hpp"
#include "regionprune/experiment.hpp"
#include "regionprune/network.hpp"
#include "regionprune/planner.hpp"
#include "regionprune/regions.hpp"

using namespace regionprune;
using nlohmann::json;

namespace {

struct DensityFlags {
    std::optional<double> density;
    std::vector<double> per_layer;
    std::string plan_file;

    void attach(CLI::App* cmd)
    {
        cmd->add_option("--density", density, "Global density p, applied to every hidden layer")
            ->check(CLI::Range(0.0, 1.0));
        cmd->add_option("--per-layer-density", per_layer, "Comma-separated density per hidden layer")
            ->delimiter(',');
        cmd->add_option("--plan-file", plan_file, "Plan JSON written by the plan command");
    }

    std::vector<double> resolve(const Architecture& arch) const
    {
        const int given = (density ? 1 : 0) + (per_layer.empty() ? 0 : 1) + (plan_file.empty() ? 0 : 1);
        if (given != 1)
            throw ConfigError("give exactly one of --density, --per-layer-density, --plan-file");
        std::vector<double> out;
        if (density) {
            out = DensityAssignment::uniform(arch, *density).per_layer;
        } else if (!per_layer.empty()) {
            out = per_layer;
        } else {
            std::ifstream in(plan_file);
            if (!in)
                throw ConfigError(plan_file + ": cannot open");
            out = PruningPlan::from_json(json::parse(in)).per_layer_density;
        }
        DensityAssignment{out}.validate(arch);
        return out;
    }
};

struct TrainFlags {
    TrainConfig config;

    void attach(CLI::App* cmd)
    {
        cmd->add_option("--epochs", config.epochs, "Training epochs")->capture_default_str();
        cmd->add_option("--batch-size", config.batch_size, "Minibatch size")->capture_default_str();
        cmd->add_option("--lr", config.learning_rate, "SGD learning rate")->capture_default_str();
    }
};

RankModel make_rank_model(const std::string& name, std::uint64_t seed)
{
    return rank_method_from_string(name) == RankMethod::analytic ? RankModel::analytic() : RankModel::sampled(seed);
}

void emit(const json& doc, const std::string& out)
{
    std::cout << doc.dump(2) << '\n';
    if (!out.empty()) {
        std::ofstream file(out, std::ios::binary);
        if (!file)
            throw ConfigError(out + ": cannot open for writing");
        file << doc.dump(2) << '\n';
    }
}

double achieved_density(const MlpModel& model)
{
    std::size_t kept = 0;
    std::size_t total = 0;
    for (std::size_t l = 0; l < model.prunable_layers(); ++l) {
        kept += model.layers[l].kept();
        total += model.layers[l].weights.size();
    }
    return total ? static_cast<double>(kept) / static_cast<double>(total) : 1.0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Expected region bounds, density planning and exact region counting for pruned rectifier networks"};
    app.require_subcommand(1);

    std::string arch_text;
    std::string rank_model = "analytic";
    std::uint64_t seed = 0;
    std::string out;
    std::optional<std::string> data_dir;
    std::size_t jobs = 1;
    double epsilon = 1e-6;

    auto add_arch = [&](CLI::App* cmd, bool required) {
        auto* opt = cmd->add_option("--arch", arch_text, "Layer sizes including input and output, e.g. 784x100x100x10");
        if (required)
            opt->required();
    };
    auto add_rank = [&](CLI::App* cmd) {
        cmd->add_option("--rank-model", rank_model, "Rank distribution model")
            ->check(CLI::IsMember({"analytic", "sampled"}))
            ->capture_default_str();
    };
    auto add_data = [&](CLI::App* cmd) {
        cmd->add_option("--data-dir", data_dir, "IDX directory (default: $REGION_PRUNE_DATA, then data/mnist)");
    };

    // bound
    auto* bound_cmd = app.add_subcommand("bound", "Expected upper bound on the number of linear regions");
    add_arch(bound_cmd, true);
    DensityFlags bound_density;
    bound_density.attach(bound_cmd);
    std::optional<std::size_t> d0;
    bound_cmd->add_option("--d0", d0, "Dimension of the input region (default: input size)");
    add_rank(bound_cmd);
    bound_cmd->add_option("--seed", seed, "Seed for the sampled rank model");
    bound_cmd->add_option("--out", out, "Also write the JSON result here");

    // plan
    auto* plan_cmd = app.add_subcommand("plan", "Per-layer densities for two hidden layers under a global budget");
    add_arch(plan_cmd, true);
    double plan_p = 1.0;
    plan_cmd->add_option("--density", plan_p, "Global density p")->required()->check(CLI::Range(0.0, 1.0));
    plan_cmd->add_option("--d0", d0, "Dimension of the input region (default: input size)");
    std::size_t grid_points = PlannerOptions{}.grid_points;
    plan_cmd->add_option("--grid-points", grid_points, "Fallback grid size")->capture_default_str();
    add_rank(plan_cmd);
    plan_cmd->add_option("--seed", seed, "Seed for the sampled rank model");
    plan_cmd->add_option("--out", out, "Also write the plan JSON here");

    // train
    auto* train_cmd = app.add_subcommand("train", "Train a classifier from scratch");
    add_arch(train_cmd, true);
    add_data(train_cmd);
    TrainFlags train_flags;
    train_flags.attach(train_cmd);
    train_cmd->add_option("--seed", seed, "Initialization and shuffling seed");
    train_cmd->add_option("--out", out, "Model JSON to write")->required();

    // prune
    auto* prune_cmd = app.add_subcommand("prune", "Magnitude-prune hidden layers of a model");
    std::string model_path;
    prune_cmd->add_option("--model", model_path, "Model JSON")->required()->check(CLI::ExistingFile);
    DensityFlags prune_density;
    prune_density.attach(prune_cmd);
    prune_cmd->add_option("--out", out, "Pruned model JSON to write")->required();

    // finetune
    auto* finetune_cmd = app.add_subcommand("finetune", "Retrain a pruned model with its mask held fixed");
    finetune_cmd->add_option("--model", model_path, "Model JSON")->required()->check(CLI::ExistingFile);
    add_data(finetune_cmd);
    TrainFlags finetune_flags;
    finetune_flags.attach(finetune_cmd);
    finetune_cmd->add_option("--seed", seed, "Shuffling seed");
    finetune_cmd->add_option("--out", out, "Model JSON to write")->required();

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Classification accuracy of a model");
    eval_cmd->add_option("--model", model_path, "Model JSON")->required()->check(CLI::ExistingFile);
    add_data(eval_cmd);
    std::string split = "test";
    eval_cmd->add_option("--split", split, "Dataset split")->check(CLI::IsMember({"train", "test"}))->capture_default_str();

    // count
    auto* count_cmd = app.add_subcommand("count", "Exact number of linear regions over a box or a sample subspace");
    count_cmd->add_option("--model", model_path, "Model JSON")->required()->check(CLI::ExistingFile);
    std::size_t samples = 0;
    std::vector<std::size_t> sample_indices;
    std::string points_file;
    count_cmd->add_option("--samples", samples, "Number of test samples spanning the subspace, drawn with --seed");
    count_cmd->add_option("--sample-indices", sample_indices, "Explicit test-set indices")->delimiter(',');
    count_cmd->add_option("--points", points_file, "JSON array of input vectors spanning the subspace");
    count_cmd->add_option("--seed", seed, "Seed for drawing samples");
    add_data(count_cmd);
    double lower = 0.0;
    double upper = 1.0;
    count_cmd->add_option("--lower", lower, "Lower bound of every input coordinate")->capture_default_str();
    count_cmd->add_option("--upper", upper, "Upper bound of every input coordinate")->capture_default_str();
    count_cmd->add_option("--epsilon", epsilon, "Required distance from every activation threshold")
        ->capture_default_str();
    count_cmd->add_option("--jobs", jobs, "Worker threads")->capture_default_str();
    bool no_stability = false;
    bool keep_patterns = false;
    count_cmd->add_flag("--no-stability", no_stability, "Do not pre-fix stable neurons");
    count_cmd->add_flag("--patterns", keep_patterns, "List the activation pattern of every region");
    count_cmd->add_option("--out", out, "Also write the JSON result here");

    // experiment
    auto* exp_cmd = app.add_subcommand("experiment", "Density sweeps: fig1, fig2 or fig3");
    std::string exp_name;
    exp_cmd->add_option("name", exp_name, "fig1, fig2 or fig3")->required()->check(CLI::IsMember({"fig1", "fig2", "fig3"}));
    add_arch(exp_cmd, false);
    add_data(exp_cmd);
    add_rank(exp_cmd);
    std::vector<double> densities;
    std::vector<std::uint64_t> seeds;
    std::size_t seed_count = 0;
    std::size_t exp_samples = 2;
    std::uint64_t subspace_seed = ExperimentConfig{}.subspace_seed;
    exp_cmd->add_option("--densities", densities, "Comma-separated global densities")->delimiter(',');
    exp_cmd->add_option("--seeds", seeds, "Comma-separated seeds")->delimiter(',');
    exp_cmd->add_option("--seed-count", seed_count, "Use seeds 0..N-1");
    exp_cmd->add_option("--samples", exp_samples, "Sample points per subspace (fig1) and d = samples - 1 for the bound")
        ->capture_default_str();
    exp_cmd->add_option("--subspace-seed", subspace_seed, "Seed for drawing subspace samples")->capture_default_str();
    exp_cmd->add_option("--epsilon", epsilon, "Region separation epsilon")->capture_default_str();
    exp_cmd->add_option("--jobs", jobs, "Parallel (seed, density) cells")->capture_default_str();
    TrainFlags exp_train;
    exp_train.attach(exp_cmd);
    exp_cmd->add_option("--seed", seed, "Seed for the sampled rank model");
    std::string out_dir = "results";
    exp_cmd->add_option("--out", out_dir, "Output directory")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (bound_cmd->parsed()) {
            const LayerSpec spec = parse_layer_spec(arch_text);
            const DensityAssignment densities{bound_density.resolve(spec.arch)};
            const std::size_t dim = d0.value_or(spec.arch.input_dim);
            const auto ranks = layer_rank_distributions(spec.arch, densities, make_rank_model(rank_model, seed));
            const BoundValue value = evaluate_expected_bound(spec.arch, densities, ranks, dim);
            emit(json{{"arch", arch_text},
                      {"per_layer_density", densities.per_layer},
                      {"d0", dim},
                      {"rank_model", rank_model},
                      {"bound", value.to_json()}},
                 out);
        } else if (plan_cmd->parsed()) {
            const LayerSpec spec = parse_layer_spec(arch_text);
            const std::size_t dim = d0.value_or(spec.arch.input_dim);
            const RankModel model = make_rank_model(rank_model, seed);
            RankDistributionCache cache;
            PlannerOptions options;
            options.grid_points = grid_points;
            const auto counts = spec.arch.weight_counts();
            const PruningPlan plan = plan_densities(spec.arch, counts, plan_p, model, dim, options, &cache);
            const DensityAssignment uniform = DensityAssignment::uniform(spec.arch, plan_p);
            const BoundValue ub = evaluate_expected_bound(
                spec.arch, uniform, layer_rank_distributions(spec.arch, uniform, model, &cache), dim);
            json doc = plan.to_json();
            doc["uniform_log2_bound"] = ub.log2;
            emit(doc, out);
        } else if (train_cmd->parsed()) {
            const LayerSpec spec = parse_layer_spec(arch_text);
            const DataSplits data = load_mnist_dir(resolve_data_dir(data_dir));
            TrainConfig config = train_flags.config;
            config.seed = seed;
            const MlpModel model = train(MlpModel::initialize(spec.arch, spec.output_dim, seed), data.train, config);
            model.save(out);
            emit(json{{"model", out},
                      {"train_accuracy", evaluate(model, data.train)},
                      {"test_accuracy", evaluate(model, data.test)}},
                 "");
        } else if (prune_cmd->parsed()) {
            const MlpModel model = MlpModel::load(model_path);
            const auto densities = prune_density.resolve(model.arch);
            const MlpModel pruned = magnitude_prune(model, densities);
            pruned.save(out);
            json kept = json::array();
            for (std::size_t l = 0; l < pruned.prunable_layers(); ++l)
                kept.push_back({{"kept", pruned.layers[l].kept()}, {"total", pruned.layers[l].weights.size()}});
            emit(json{{"model", out}, {"per_layer_density", densities}, {"layers", kept},
                      {"global_density", achieved_density(pruned)}},
                 "");
        } else if (finetune_cmd->parsed()) {
            const MlpModel model = MlpModel::load(model_path);
            const DataSplits data = load_mnist_dir(resolve_data_dir(data_dir));
            TrainConfig config = finetune_flags.config;
            config.seed = seed;
            const MlpModel tuned = train(model, data.train, config);
            tuned.save(out);
            emit(json{{"model", out}, {"test_accuracy", evaluate(tuned, data.test)}}, "");
        } else if (eval_cmd->parsed()) {
            const MlpModel model = MlpModel::load(model_path);
            const DataSplits data = load_mnist_dir(resolve_data_dir(data_dir));
            emit(json{{"split", split}, {"accuracy", evaluate(model, split == "test" ? data.test : data.train)}}, "");
        } else if (count_cmd->parsed()) {
            const MlpModel model = MlpModel::load(model_path);
            const ReluNetwork net = ReluNetwork::from_model(model);
            std::vector<std::vector<double>> points;
            if (!points_file.empty()) {
                std::ifstream in(points_file);
                if (!in)
                    throw ConfigError(points_file + ": cannot open");
                points = json::parse(in).get<std::vector<std::vector<double>>>();
            } else if (samples > 0 || !sample_indices.empty()) {
                const DataSplits data = load_mnist_dir(resolve_data_dir(data_dir));
                if (sample_indices.empty())
                    sample_indices = draw_sample_indices(data.test.size(), samples, seed, seed, 0.0);
                for (std::size_t i : sample_indices) {
                    if (i >= data.test.size())
                        throw ConfigError("sample index " + std::to_string(i) + " is outside the test set");
                    const auto x = data.test.input(i);
                    points.emplace_back(x.begin(), x.end());
                }
            }
            std::optional<AffineSubspace> subspace;
            if (points.size() == 1)
                points.push_back(points.front());
            if (!points.empty())
                subspace = AffineSubspace::from_points(points);
            CountOptions options;
            options.epsilon = epsilon;
            options.threads = jobs;
            options.fix_stable = !no_stability;
            options.keep_patterns = keep_patterns;
            const BoxDomain domain{std::vector<double>(net.input_dim, lower), std::vector<double>(net.input_dim, upper)};
            const RegionCountResult result = count_regions(net, domain, subspace, options);
            json doc = result.to_json();
            if (!sample_indices.empty())
                doc["sample_indices"] = sample_indices;
            emit(doc, out);
            if (!result.complete)
                return 4;
        } else if (exp_cmd->parsed()) {
            ExperimentConfig config;
            config.kind = experiment_kind_from_string(exp_name);
            if (arch_text.empty())
                arch_text = config.kind == ExperimentKind::fig3 ? "784x100x100x10" : "784x20x20x10";
            config.layers = parse_layer_spec(arch_text);
            if (!densities.empty())
                config.densities = densities;
            if (seed_count > 0) {
                config.seeds.clear();
                for (std::size_t s = 0; s < seed_count; ++s)
                    config.seeds.push_back(s);
            }
            if (!seeds.empty())
                config.seeds = seeds;
            config.train = exp_train.config;
            config.sample_points = exp_samples;
            config.subspace_seed = subspace_seed;
            config.epsilon = epsilon;
            config.rank_model = make_rank_model(rank_model, seed);
            config.jobs = jobs;
            config.out_dir = out_dir;
            const DataSplits data = load_mnist_dir(resolve_data_dir(data_dir));
            const ExperimentOutput output = run_experiment(config, data);
            std::printf("%-14s %8s %6s %10s %12s %12s\n", "experiment", "density", "runs", "accuracy", "regions",
                        "log2_bound");
            for (const std::string& label : {std::string(exp_name), std::string("fig3:uniform"), std::string("fig3:planned")})
                for (const DensitySummary& s : summarize(output.rows, label))
                    std::printf("%-14s %8.4g %6zu %10.4f %12s %12s\n", label.c_str(), s.density, s.runs,
                                s.mean_accuracy,
                                s.mean_region_count ? std::to_string(*s.mean_region_count).c_str() : "-",
                                s.mean_log2_bound ? std::to_string(*s.mean_log2_bound).c_str() : "-");
            std::printf("wrote %s, %s, %s\n", output.csv_path.c_str(), output.svg_path.c_str(),
                        output.meta_path.c_str());
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const UnsupportedError& e) {
        std::cerr << "unsupported: " << e.what() << '\n';
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: malformed JSON: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
