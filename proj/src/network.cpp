#include "regionprune/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <zlib.h>

#include "regionprune/error.hpp"

namespace regionprune {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

bool has_gz_extension(const std::filesystem::path& path)
{
    return path.extension() == ".gz";
}

std::vector<std::uint8_t> read_all(const std::filesystem::path& path)
{
    // gzread passes uncompressed files through unchanged.
    gzFile file = gzopen(path.c_str(), "rb");
    if (!file)
        throw IngestError(path.string() + ": cannot open");
    std::vector<std::uint8_t> bytes;
    std::vector<std::uint8_t> chunk(1 << 16);
    while (true) {
        const int n = gzread(file, chunk.data(), static_cast<unsigned>(chunk.size()));
        if (n < 0) {
            int code = 0;
            const std::string message = gzerror(file, &code);
            const std::size_t offset = bytes.size();
            gzclose(file);
            throw IngestError(path.string() + ": read error at offset " + std::to_string(offset) + ": " + message);
        }
        if (n == 0)
            break;
        bytes.insert(bytes.end(), chunk.begin(), chunk.begin() + n);
    }
    gzclose(file);
    return bytes;
}

void write_all(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes)
{
    if (has_gz_extension(path)) {
        gzFile file = gzopen(path.c_str(), "wb9");
        if (!file)
            throw IngestError(path.string() + ": cannot open for writing");
        const int written = gzwrite(file, bytes.data(), static_cast<unsigned>(bytes.size()));
        gzclose(file);
        if (written != static_cast<int>(bytes.size()))
            throw IngestError(path.string() + ": short write");
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IngestError(path.string() + ": cannot open for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

class ByteReader {
public:
    ByteReader(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes)
        : path_(path)
        , bytes_(bytes)
    {
    }

    std::uint32_t u32()
    {
        require(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v = (v << 8) | bytes_[offset_ + i];
        offset_ += 4;
        return v;
    }

    const std::uint8_t* take(std::size_t n)
    {
        require(n);
        const std::uint8_t* p = bytes_.data() + offset_;
        offset_ += n;
        return p;
    }

    std::size_t offset() const { return offset_; }

    [[noreturn]] void fail(const std::string& what, std::size_t at) const
    {
        throw IngestError(path_.string() + ": " + what + " at offset " + std::to_string(at));
    }

private:
    void require(std::size_t n) const
    {
        if (bytes_.size() - offset_ < n)
            fail("truncated file (needed " + std::to_string(n) + " more bytes)", offset_);
    }

    const std::filesystem::path& path_;
    const std::vector<std::uint8_t>& bytes_;
    std::size_t offset_ = 0;
};

void push_u32(std::vector<std::uint8_t>& out, std::uint32_t v)
{
    for (int shift = 24; shift >= 0; shift -= 8)
        out.push_back(static_cast<std::uint8_t>((v >> shift) & 0xff));
}

std::string hex(std::uint32_t v)
{
    std::ostringstream s;
    s << "0x" << std::hex << v;
    return s.str();
}

} // namespace

DenseLayer::DenseLayer(std::size_t rows_, std::size_t cols_)
    : rows(rows_)
    , cols(cols_)
    , weights(rows_ * cols_, 0.0f)
    , bias(rows_, 0.0f)
    , mask(rows_ * cols_, 1)
{
}

std::size_t DenseLayer::kept() const
{
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

MlpModel MlpModel::initialize(const Architecture& arch, std::size_t output_dim, std::uint64_t seed)
{
    arch.validate();
    if (output_dim == 0)
        throw ConfigError("output dimension must be positive");
    MlpModel model;
    model.arch = arch;
    model.output_dim = output_dim;
    model.seed = seed;
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l <= arch.depth(); ++l) {
        const std::size_t fan_in = arch.fan_in(l);
        const std::size_t fan_out = l < arch.depth() ? arch.widths[l] : output_dim;
        DenseLayer layer(fan_out, fan_in);
        std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
        for (float& w : layer.weights)
            w = static_cast<float>(normal(rng));
        model.layers.push_back(std::move(layer));
    }
    return model;
}

void MlpModel::validate() const
{
    arch.validate();
    if (layers.size() != arch.depth() + 1)
        throw ConfigError("model has " + std::to_string(layers.size()) + " layers, expected "
                          + std::to_string(arch.depth() + 1));
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const DenseLayer& layer = layers[l];
        const std::size_t rows = l < arch.depth() ? arch.widths[l] : output_dim;
        if (layer.rows != rows || layer.cols != arch.fan_in(l) || layer.weights.size() != rows * layer.cols
            || layer.mask.size() != layer.weights.size() || layer.bias.size() != rows)
            throw ConfigError("layer " + std::to_string(l) + " shape does not chain");
        for (std::size_t i = 0; i < layer.weights.size(); ++i)
            if (layer.mask[i] == 0 && layer.weights[i] != 0.0f)
                throw ConfigError("layer " + std::to_string(l) + " has a nonzero pruned weight");
    }
}

std::vector<float> MlpModel::logits(std::span<const float> input) const
{
    std::vector<float> current(input.begin(), input.end());
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const DenseLayer& layer = layers[l];
        std::vector<float> next(layer.rows);
        for (std::size_t r = 0; r < layer.rows; ++r) {
            float sum = layer.bias[r];
            const float* w = layer.weights.data() + r * layer.cols;
            for (std::size_t c = 0; c < layer.cols; ++c)
                sum += w[c] * current[c];
            next[r] = (l + 1 < layers.size()) ? std::max(sum, 0.0f) : sum;
        }
        current = std::move(next);
    }
    return current;
}

std::size_t MlpModel::predict(std::span<const float> input) const
{
    const auto out = logits(input);
    std::size_t best = 0;
    for (std::size_t i = 1; i < out.size(); ++i)
        if (out[i] > out[best])
            best = i;
    return best;
}

nlohmann::json MlpModel::to_json() const
{
    nlohmann::json doc;
    doc["arch"] = {{"input_dim", arch.input_dim}, {"widths", arch.widths}, {"output_dim", output_dim}};
    doc["layers"] = nlohmann::json::array();
    for (const DenseLayer& layer : layers) {
        std::vector<int> mask(layer.mask.begin(), layer.mask.end());
        doc["layers"].push_back({{"weights", layer.weights}, {"bias", layer.bias}, {"mask", mask}});
    }
    doc["metadata"] = {{"seed", seed}, {"epochs_trained", epochs_trained}};
    return doc;
}

MlpModel MlpModel::from_json(const nlohmann::json& doc)
{
    MlpModel model;
    try {
        const auto& arch = doc.at("arch");
        model.arch.input_dim = arch.at("input_dim").get<std::size_t>();
        model.arch.widths = arch.at("widths").get<std::vector<std::size_t>>();
        model.output_dim = arch.at("output_dim").get<std::size_t>();
        model.arch.validate();
        const auto& layers = doc.at("layers");
        if (layers.size() != model.arch.depth() + 1)
            throw ConfigError("model document has the wrong number of layers");
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const std::size_t rows = l < model.arch.depth() ? model.arch.widths[l] : model.output_dim;
            DenseLayer layer(rows, model.arch.fan_in(l));
            layer.weights = layers[l].at("weights").get<std::vector<float>>();
            layer.bias = layers[l].at("bias").get<std::vector<float>>();
            const auto mask = layers[l].at("mask").get<std::vector<int>>();
            layer.mask.assign(mask.begin(), mask.end());
            model.layers.push_back(std::move(layer));
        }
        if (doc.contains("metadata")) {
            model.seed = doc["metadata"].value("seed", std::uint64_t{0});
            model.epochs_trained = doc["metadata"].value("epochs_trained", std::size_t{0});
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed model document: ") + e.what());
    }
    model.validate();
    return model;
}

void MlpModel::save(const std::filesystem::path& path) const
{
    std::ofstream out(path);
    if (!out)
        throw ConfigError(path.string() + ": cannot open for writing");
    out << to_json().dump() << '\n';
}

MlpModel MlpModel::load(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError(path.string() + ": cannot open");
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

Dataset Dataset::select(std::span<const std::size_t> indices) const
{
    Dataset out;
    out.input_dim = input_dim;
    out.num_classes = num_classes;
    out.inputs.reserve(indices.size() * input_dim);
    out.labels.reserve(indices.size());
    for (std::size_t i : indices) {
        const auto x = input(i);
        out.inputs.insert(out.inputs.end(), x.begin(), x.end());
        out.labels.push_back(labels[i]);
    }
    return out;
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path)
{
    const auto image_bytes = read_all(images_path);
    const auto label_bytes = read_all(labels_path);

    ByteReader images(images_path, image_bytes);
    const std::uint32_t image_magic = images.u32();
    if (image_magic != kImageMagic)
        images.fail("bad magic " + hex(image_magic) + " (expected 0x803)", 0);
    const std::size_t count = images.u32();
    const std::size_t rows = images.u32();
    const std::size_t cols = images.u32();

    ByteReader labels(labels_path, label_bytes);
    const std::uint32_t label_magic = labels.u32();
    if (label_magic != kLabelMagic)
        labels.fail("bad magic " + hex(label_magic) + " (expected 0x801)", 0);
    const std::size_t label_count = labels.u32();
    if (label_count != count)
        labels.fail("label count " + std::to_string(label_count) + " does not match image count "
                        + std::to_string(count),
                    4);

    Dataset data;
    data.input_dim = rows * cols;
    const std::uint8_t* pixels = images.take(count * data.input_dim);
    const std::uint8_t* raw_labels = labels.take(count);
    data.inputs.resize(count * data.input_dim);
    for (std::size_t i = 0; i < data.inputs.size(); ++i)
        data.inputs[i] = static_cast<float>(pixels[i]) / 255.0f;
    data.labels.assign(raw_labels, raw_labels + count);
    for (std::uint8_t label : data.labels)
        data.num_classes = std::max<std::size_t>(data.num_classes, std::size_t{label} + 1);
    return data;
}

void save_idx(const Dataset& dataset, std::size_t image_rows, std::size_t image_cols,
              const std::filesystem::path& images_path, const std::filesystem::path& labels_path)
{
    if (image_rows * image_cols != dataset.input_dim)
        throw ConfigError("image shape does not match dataset input dimension");
    std::vector<std::uint8_t> images;
    images.reserve(16 + dataset.inputs.size());
    push_u32(images, kImageMagic);
    push_u32(images, static_cast<std::uint32_t>(dataset.size()));
    push_u32(images, static_cast<std::uint32_t>(image_rows));
    push_u32(images, static_cast<std::uint32_t>(image_cols));
    for (float v : dataset.inputs)
        images.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
    std::vector<std::uint8_t> labels;
    push_u32(labels, kLabelMagic);
    push_u32(labels, static_cast<std::uint32_t>(dataset.size()));
    labels.insert(labels.end(), dataset.labels.begin(), dataset.labels.end());
    write_all(images_path, images);
    write_all(labels_path, labels);
}

void TrainConfig::validate() const
{
    if (epochs == 0 || batch_size == 0 || !(learning_rate > 0.0))
        throw ConfigError("epochs, batch size and learning rate must be positive");
}

MlpModel train(MlpModel model, const Dataset& data, const TrainConfig& config)
{
    config.validate();
    model.validate();
    if (data.input_dim != model.arch.input_dim)
        throw ConfigError("dataset input dimension " + std::to_string(data.input_dim)
                          + " does not match model input " + std::to_string(model.arch.input_dim));
    for (std::uint8_t label : data.labels)
        if (label >= model.output_dim)
            throw ConfigError("label " + std::to_string(label) + " exceeds model output dimension");
    if (data.size() == 0) {
        model.epochs_trained += config.epochs;
        return model;
    }

    const std::size_t num_layers = model.layers.size();
    const std::size_t batch_cap = std::min(config.batch_size, data.size());
    // activations[l] is the input of layer l; activations[num_layers] the logits.
    std::vector<std::vector<float>> activations(num_layers + 1);
    std::vector<std::vector<float>> deltas(num_layers);
    activations[0].resize(batch_cap * model.arch.input_dim);
    for (std::size_t l = 0; l < num_layers; ++l) {
        activations[l + 1].resize(batch_cap * model.layers[l].rows);
        deltas[l].resize(batch_cap * model.layers[l].rows);
    }
    std::vector<std::vector<float>> grad_w(num_layers);
    std::vector<std::vector<float>> grad_b(num_layers);
    for (std::size_t l = 0; l < num_layers; ++l) {
        grad_w[l].resize(model.layers[l].weights.size());
        grad_b[l].resize(model.layers[l].rows);
    }

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(config.seed);
    const float lr = static_cast<float>(config.learning_rate);

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0, batch_index = 0; start < data.size(); start += batch_cap, ++batch_index) {
            const std::size_t batch = std::min(batch_cap, data.size() - start);
            for (std::size_t b = 0; b < batch; ++b) {
                const auto x = data.input(order[start + b]);
                std::copy(x.begin(), x.end(), activations[0].begin() + b * model.arch.input_dim);
            }

            for (std::size_t l = 0; l < num_layers; ++l) {
                const DenseLayer& layer = model.layers[l];
                const bool hidden = l + 1 < num_layers;
                for (std::size_t b = 0; b < batch; ++b) {
                    const float* in = activations[l].data() + b * layer.cols;
                    float* out = activations[l + 1].data() + b * layer.rows;
                    for (std::size_t r = 0; r < layer.rows; ++r) {
                        const float* w = layer.weights.data() + r * layer.cols;
                        float sum = 0.0f;
                        for (std::size_t c = 0; c < layer.cols; ++c)
                            sum += w[c] * in[c];
                        sum += layer.bias[r];
                        out[r] = hidden ? std::max(sum, 0.0f) : sum;
                    }
                }
            }

            // Softmax cross-entropy, averaged over the batch.
            double loss = 0.0;
            const std::size_t classes = model.output_dim;
            const float inv_batch = 1.0f / static_cast<float>(batch);
            for (std::size_t b = 0; b < batch; ++b) {
                const float* z = activations[num_layers].data() + b * classes;
                float* delta = deltas[num_layers - 1].data() + b * classes;
                const float peak = *std::max_element(z, z + classes);
                float total = 0.0f;
                for (std::size_t k = 0; k < classes; ++k) {
                    delta[k] = std::exp(z[k] - peak);
                    total += delta[k];
                }
                const std::size_t label = data.labels[order[start + b]];
                loss += -(static_cast<double>(z[label] - peak) - std::log(static_cast<double>(total)));
                for (std::size_t k = 0; k < classes; ++k)
                    delta[k] = (delta[k] / total - (k == label ? 1.0f : 0.0f)) * inv_batch;
            }
            if (!std::isfinite(loss))
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch "
                                    + std::to_string(batch_index) + " (learning rate "
                                    + std::to_string(config.learning_rate) + " may be too high)");

            for (std::size_t l = num_layers; l-- > 0;) {
                DenseLayer& layer = model.layers[l];
                std::fill(grad_w[l].begin(), grad_w[l].end(), 0.0f);
                std::fill(grad_b[l].begin(), grad_b[l].end(), 0.0f);
                for (std::size_t b = 0; b < batch; ++b) {
                    const float* in = activations[l].data() + b * layer.cols;
                    const float* delta = deltas[l].data() + b * layer.rows;
                    for (std::size_t r = 0; r < layer.rows; ++r) {
                        const float d = delta[r];
                        if (d == 0.0f)
                            continue;
                        float* g = grad_w[l].data() + r * layer.cols;
                        for (std::size_t c = 0; c < layer.cols; ++c)
                            g[c] += d * in[c];
                        grad_b[l][r] += d;
                    }
                }
                if (l > 0) {
                    // Back through the weights and the ReLU of layer l - 1.
                    for (std::size_t b = 0; b < batch; ++b) {
                        const float* delta = deltas[l].data() + b * layer.rows;
                        const float* in = activations[l].data() + b * layer.cols;
                        float* prev = deltas[l - 1].data() + b * layer.cols;
                        std::fill(prev, prev + layer.cols, 0.0f);
                        for (std::size_t r = 0; r < layer.rows; ++r) {
                            const float d = delta[r];
                            if (d == 0.0f)
                                continue;
                            const float* w = layer.weights.data() + r * layer.cols;
                            for (std::size_t c = 0; c < layer.cols; ++c)
                                prev[c] += d * w[c];
                        }
                        for (std::size_t c = 0; c < layer.cols; ++c)
                            if (in[c] <= 0.0f)
                                prev[c] = 0.0f;
                    }
                }
                for (std::size_t i = 0; i < layer.weights.size(); ++i)
                    if (layer.mask[i])
                        layer.weights[i] -= lr * grad_w[l][i];
                for (std::size_t r = 0; r < layer.rows; ++r)
                    layer.bias[r] -= lr * grad_b[l][r];
            }
        }
    }
    model.epochs_trained += config.epochs;
    return model;
}

std::size_t kept_weight_count(std::size_t count, double density)
{
    if (!(density >= 0.0 && density <= 1.0))
        throw ConfigError("layer density must lie in [0, 1]");
    const double target = density * static_cast<double>(count);
    const double nearest = std::round(target);
    // Products like 0.1 * 10 land a hair above the integer.
    const double kept = std::abs(target - nearest) <= 1e-9 * std::max(1.0, target) ? nearest : std::ceil(target);
    return std::min(count, static_cast<std::size_t>(kept));
}

MlpModel magnitude_prune(MlpModel model, std::span<const double> per_layer_density)
{
    model.validate();
    if (per_layer_density.size() != model.prunable_layers())
        throw ConfigError("got " + std::to_string(per_layer_density.size()) + " densities for "
                          + std::to_string(model.prunable_layers()) + " prunable layers");
    for (std::size_t l = 0; l < model.prunable_layers(); ++l) {
        DenseLayer& layer = model.layers[l];
        const std::size_t keep = kept_weight_count(layer.weights.size(), per_layer_density[l]);
        std::vector<std::size_t> order(layer.weights.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            const float ma = std::abs(layer.weights[a]);
            const float mb = std::abs(layer.weights[b]);
            return ma != mb ? ma > mb : a < b;
        });
        for (std::size_t rank = keep; rank < order.size(); ++rank) {
            layer.weights[order[rank]] = 0.0f;
            layer.mask[order[rank]] = 0;
        }
    }
    return model;
}

double evaluate(const MlpModel& model, const Dataset& data)
{
    if (data.size() == 0)
        return 0.0;
    if (data.input_dim != model.arch.input_dim)
        throw ConfigError("dataset input dimension does not match the model");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (model.predict(data.input(i)) == data.labels[i])
            ++correct;
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

} // namespace regionprune
