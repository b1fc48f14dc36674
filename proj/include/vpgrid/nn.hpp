#pragma once

#include "vpgrid/dataset.hpp"
#include "vpgrid/geometry.hpp"
#include "vpgrid/image.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace vpgrid::nn {

/// Dense row-major array of doubles.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> dims, double fill = 0.0);

    std::size_t size() const noexcept { return data.size(); }
    int dim(std::size_t i) const { return shape.at(i); }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

std::size_t element_count(std::span<const int> shape);

struct Conv {
    int out_channels = 1;
    int kernel = 3;
    int stride = 1;
    int padding = 0;
    friend bool operator==(const Conv&, const Conv&) = default;
};
struct ReLU {
    friend bool operator==(const ReLU&, const ReLU&) = default;
};
struct MaxPool {
    int window = 2;
    int stride = 2;
    friend bool operator==(const MaxPool&, const MaxPool&) = default;
};
struct Flatten {
    friend bool operator==(const Flatten&, const Flatten&) = default;
};
struct Dense {
    int out_features = 1;
    friend bool operator==(const Dense&, const Dense&) = default;
};

using LayerSpec = std::variant<Conv, ReLU, MaxPool, Flatten, Dense>;

std::string describe(const LayerSpec& spec);

/// Activation shape of a single sample, channels x height x width. Flat
/// vectors are (features, 1, 1).
struct Shape3 {
    int c = 1;
    int h = 1;
    int w = 1;

    std::size_t size() const noexcept { return static_cast<std::size_t>(c) * h * w; }
    friend bool operator==(const Shape3&, const Shape3&) = default;
};

struct Layer {
    LayerSpec spec;
    Shape3 in;
    Shape3 out;
    Tensor weights; ///< empty for parameter-free layers
    Tensor bias;

    bool has_params() const noexcept { return !weights.data.empty(); }

    friend bool operator==(const Layer&, const Layer&) = default;
};

/// Ordered layer stack ending in a Dense classification head.
class Network {
public:
    /// Builds the stack and He-initializes weights (std sqrt(2/fan_in)) from
    /// `init_seed`; biases start at zero. Parameters are rounded to float
    /// precision so the model file holds them exactly.
    Network(Shape3 input, std::vector<LayerSpec> specs, std::uint64_t init_seed);

    /// Same stack with every parameter zero.
    static Network zeros(Shape3 input, std::vector<LayerSpec> specs);

    Shape3 input_shape() const noexcept { return input_; }
    int head_classes() const noexcept { return static_cast<int>(layers_.back().out.size()); }
    const std::vector<Layer>& layers() const noexcept { return layers_; }
    std::vector<Layer>& layers() noexcept { return layers_; }
    std::vector<LayerSpec> specs() const;
    std::size_t parameter_count() const noexcept;

    /// Rounds every parameter to the nearest float.
    void round_to_storage_precision();

    friend bool operator==(const Network&, const Network&) = default;

private:
    Network(Shape3 input, std::vector<LayerSpec> specs);

    Shape3 input_;
    std::vector<Layer> layers_;
};

/// Output shape of every layer for a given input, validating the stack.
std::vector<Shape3> infer_shapes(Shape3 input, std::span<const LayerSpec> specs);

/// Small network for 64x64 inputs: three Conv-ReLU-MaxPool stages (8, 16,
/// 32 channels), Dense(128), ReLU, Dense(head).
std::vector<LayerSpec> reference_architecture(int head_classes);

/// Per-layer gradients, shaped like the network's parameters.
struct Gradients {
    std::vector<Tensor> weights;
    std::vector<Tensor> bias;

    static Gradients zeros_like(const Network& net);
    void add(const Gradients& other);
    void scale(double factor);
};

/// Logits for a batch [B, C, H, W] -> [B, head_classes].
Tensor forward(const Network& net, const Tensor& batch);

struct LossResult {
    double loss = 0.0;
    Tensor dlogits;
};

/// Mean cross-entropy of softmax(logits) against `labels` and its gradient
/// (softmax - onehot) / B.
LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

std::vector<double> softmax(std::span<const double> logits);

struct BackwardResult {
    double loss = 0.0;
    Gradients grads;
};

/// Reverse-mode gradients of the mean cross-entropy over the batch.
/// Per-sample contributions are summed in sample order.
BackwardResult backward(const Network& net, const Tensor& batch, std::span<const int> labels);

/// Per-activation pattern of ReLU signs and MaxPool winners; gradients are
/// only smooth while it stays fixed.
using ActivationPattern = std::vector<std::int32_t>;

ActivationPattern activation_pattern(const Network& net, const Tensor& batch);

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t checked = 0;
    /// Parameters whose +/- eps probes change the activation pattern.
    std::size_t excluded_kinks = 0;
};

struct GradCheckOptions {
    double eps = 1e-4;
    /// 0 checks every parameter; otherwise a seeded random subsample.
    std::size_t max_parameters = 0;
    std::uint64_t seed = 0;
};

/// Central differences against backward(); error per parameter is
/// |a - n| / max(|a|, |n|, 1e-8).
GradCheckResult grad_check(const Network& net, const Tensor& batch, std::span<const int> labels,
                           const GradCheckOptions& options = {});

struct TrainConfig {
    double learning_rate = 0.01;
    double momentum = 0.9;
    int batch_size = 16;
    int epochs = 20;
    std::uint64_t seed = 0;
    bool shuffle = true;
    /// Random window shift of up to this many pixels per axis, drawn per
    /// sample and epoch. Localization labels follow the shifted VP.
    int jitter = 0;

    void validate() const;
};

struct TrainResult {
    Network net;
    std::vector<double> loss_curve; ///< mean sample loss per epoch
};

enum class Task { existence, localization };

Task parse_task(const std::string& name);
const char* to_string(Task task) noexcept;

/// Training images and labels for a task: existence uses every entry
/// (label 1 iff has_vp), localization only positives labelled
/// linearize(pixel_to_cell(vp)) and keeps the VPs for relabelling.
struct LabelledSet {
    Task task = Task::localization;
    std::vector<ImageRaster> images;
    std::vector<int> labels;
    std::vector<PixelPoint> vps;
};

/// SGD with momentum on in-memory samples. Every image must match the
/// network's input shape. The returned parameters are float-representable.
TrainResult train_samples(Network net, std::span<const ImageRaster> images, std::span<const int> labels,
                          const TrainConfig& cfg);

/// As above; with cfg.jitter > 0 each sample is re-jittered every epoch and
/// localization labels are recomputed on `grid`.
TrainResult train_samples(Network net, const LabelledSet& set, const GridSpec& grid, const TrainConfig& cfg);

LabelledSet load_split(const DatasetManifest& manifest, const std::filesystem::path& manifest_dir, Split split,
                       Task task, const GridSpec& grid);

/// Trains on the manifest's train split.
TrainResult train(Network net, const DatasetManifest& manifest, const std::filesystem::path& manifest_dir,
                  Task task, const GridSpec& grid, const TrainConfig& cfg);

Tensor image_batch(std::span<const ImageRaster> images);

/// Probability that `img` contains a vanishing point.
double predict_existence(const Network& net, const ImageRaster& img);

RankedPrediction predict_localization(const Network& net, const ImageRaster& img, const GridSpec& grid,
                                      std::size_t top_k);

/// Binary model file: "VPG1", input c/h/w, layer count, per-layer tag and
/// hyperparameters (little-endian int32), then each parametric layer's
/// weight and bias tensors as rank, dims (int32) and float32 values.
std::vector<std::uint8_t> encode_model(const Network& net);
Network decode_model(std::span<const std::uint8_t> bytes);

void save_model(const Network& net, const std::filesystem::path& path);
Network load_model(const std::filesystem::path& path);

} // namespace vpgrid::nn
