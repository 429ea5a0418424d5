#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "regionprune/bound.hpp"

namespace regionprune {

/// Fully-connected layer: weights are rows = fan-out, cols = fan-in,
/// row-major. `mask` is 0 where a weight has been pruned.
struct DenseLayer {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> weights;
    std::vector<float> bias;
    std::vector<std::uint8_t> mask;

    DenseLayer() = default;
    DenseLayer(std::size_t rows, std::size_t cols);

    float weight(std::size_t r, std::size_t c) const { return weights[r * cols + c]; }
    std::size_t kept() const;
};

/// Rectifier classifier: hidden layers from `arch`, then a linear output
/// layer of `output_dim` logits.
struct MlpModel {
    Architecture arch;
    std::size_t output_dim = 0;
    std::vector<DenseLayer> layers; // hidden layers followed by the output layer
    std::uint64_t seed = 0;
    std::size_t epochs_trained = 0;

    /// He-normal weights (std = sqrt(2 / fan_in)), zero biases, full masks.
    static MlpModel initialize(const Architecture& arch, std::size_t output_dim, std::uint64_t seed);

    std::size_t prunable_layers() const { return arch.depth(); }
    /// Throws ConfigError when shapes do not chain or a masked weight is nonzero.
    void validate() const;

    /// Output logits for one input.
    std::vector<float> logits(std::span<const float> input) const;
    std::size_t predict(std::span<const float> input) const;

    nlohmann::json to_json() const;
    static MlpModel from_json(const nlohmann::json& doc);
    void save(const std::filesystem::path& path) const;
    static MlpModel load(const std::filesystem::path& path);
};

/// Row-major inputs in [0, 1] with integer labels.
struct Dataset {
    std::vector<float> inputs;
    std::vector<std::uint8_t> labels;
    std::size_t input_dim = 0;
    std::size_t num_classes = 0;

    std::size_t size() const { return labels.size(); }
    std::span<const float> input(std::size_t i) const { return {inputs.data() + i * input_dim, input_dim}; }
    /// Subset in the order given by `indices`.
    Dataset select(std::span<const std::size_t> indices) const;
};

/// Reads an IDX image/label file pair (big-endian; magic 0x803 / 0x801).
/// Files ending in ".gz" are decompressed transparently.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Writes `dataset` as an IDX pair; images are stored as rows x cols bytes.
/// Paths ending in ".gz" are gzip-compressed.
void save_idx(const Dataset& dataset, std::size_t image_rows, std::size_t image_cols,
              const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

struct TrainConfig {
    std::size_t epochs = 15;
    std::size_t batch_size = 128;
    double learning_rate = 0.01;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Plain minibatch SGD on softmax cross-entropy. Pruned weights get zero
/// gradient, so they stay exactly zero.
MlpModel train(MlpModel model, const Dataset& data, const TrainConfig& config);

/// Within each hidden layer keep the ceil(density * N_l) weights of largest
/// magnitude (ties broken by row-major index) and zero the rest.
/// The output layer is never pruned.
MlpModel magnitude_prune(MlpModel model, std::span<const double> per_layer_density);

/// Weights kept by `magnitude_prune` for a layer of `count` weights.
std::size_t kept_weight_count(std::size_t count, double density);

/// Fraction of samples whose argmax logit (lowest index on ties) equals the label.
double evaluate(const MlpModel& model, const Dataset& data);

} // namespace regionprune
