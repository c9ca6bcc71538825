#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ricenet/ops.hpp"
#include "ricenet/random.hpp"
#include "ricenet/tensor.hpp"

namespace ricenet {

enum class LayerKind { conv2d, maxpool, relu, flatten, dense, global_avg_pool, softmax };

std::string_view to_string(LayerKind kind);
LayerKind parse_layer_kind(std::string_view text);

using LayerSpec = std::variant<std::monostate, ConvSpec, PoolSpec, DenseSpec>;

template <typename T>
struct Param {
    std::string name;
    Tensor<T> value;
};

template <typename T>
struct Layer {
    LayerKind kind = LayerKind::relu;
    std::string name;
    LayerSpec spec;
    /// conv2d: kernel [out, in, kh, kw], bias [out]. dense: weight [in, out], bias [out].
    std::vector<Param<T>> params;
    bool frozen = false;

    const Tensor<T>& param(std::string_view param_name) const;
    Tensor<T>& param(std::string_view param_name);
};

struct ParamKey {
    std::string layer;
    std::string param;

    std::string str() const { return layer + "/" + param; }
    auto operator<=>(const ParamKey&) const = default;
};

template <typename T>
using Gradients = std::map<ParamKey, Tensor<T>>;

using Metadata = std::map<std::string, std::string>;

/// Per-sample output shape of one layer (no batch axis). Throws ShapeError.
Shape infer_output_shape(LayerKind kind, const LayerSpec& spec, const Shape& in);

/// Expected parameter shapes for a layer kind and spec, in storage order.
std::vector<std::pair<std::string, Shape>> expected_param_shapes(LayerKind kind, const LayerSpec& spec);

/// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
template <typename T>
void init_parameters(Layer<T>& layer, Rng& rng);

/**
 * A validated sequential network ending in softmax.
 *
 * Construction runs a symbolic shape pass over every layer and checks the
 * parameter shapes, unique names and the softmax width. Mutable access to a
 * parameter bumps `revision()`, which invalidates outstanding forward caches.
 */
template <typename T>
class Model {
public:
    Model(Shape input_shape, std::vector<Layer<T>> layers, std::vector<std::string> class_labels,
          Metadata metadata = {});

    const Shape& input_shape() const noexcept { return input_shape_; }
    std::span<const Layer<T>> layers() const noexcept { return layers_; }
    const Layer<T>& layer(std::size_t index) const { return layers_.at(index); }
    const std::vector<std::string>& class_labels() const noexcept { return class_labels_; }
    std::size_t num_classes() const noexcept { return class_labels_.size(); }

    const Metadata& metadata() const noexcept { return metadata_; }
    Metadata& metadata() noexcept { return metadata_; }

    /// Per-sample output shape of every layer.
    const std::vector<Shape>& output_shapes() const noexcept { return output_shapes_; }

    const Tensor<T>& parameter(const ParamKey& key) const;
    Tensor<T>& parameter(const ParamKey& key);

    void set_frozen(std::size_t index, bool frozen) { layers_.at(index).frozen = frozen; }

    /// Keys of every parameter of a non-frozen layer, in layer order.
    std::vector<ParamKey> trainable_parameters() const;
    std::vector<ParamKey> all_parameters() const;

    std::uint64_t revision() const noexcept { return revision_; }

private:
    void validate();

    Shape input_shape_;
    std::vector<Layer<T>> layers_;
    std::vector<std::string> class_labels_;
    Metadata metadata_;
    std::vector<Shape> output_shapes_;
    std::uint64_t revision_ = 0;
};

template <typename To, typename From>
Model<To> model_cast(const Model<From>& model);

/// Fluent construction that infers channel and feature counts from the running shape.
template <typename T>
class ModelBuilder {
public:
    explicit ModelBuilder(Shape input_shape);

    ModelBuilder& conv2d(std::string name, std::size_t out_channels, std::size_t kernel, std::size_t stride = 1,
                         Padding padding = Padding::same);
    ModelBuilder& maxpool(std::string name, std::size_t window = 2, std::size_t stride = 2);
    ModelBuilder& relu(std::string name);
    ModelBuilder& flatten(std::string name);
    ModelBuilder& dense(std::string name, std::size_t out_features);
    ModelBuilder& global_avg_pool(std::string name);
    ModelBuilder& softmax(std::string name);

    /// Layers built so far with initialized parameters.
    std::vector<Layer<T>> layers(std::uint64_t seed) const;
    Model<T> build(std::vector<std::string> class_labels, std::uint64_t seed) const;

private:
    ModelBuilder& push(LayerKind kind, std::string name, LayerSpec spec);

    Shape input_shape_;
    Shape current_;
    std::vector<Layer<T>> layers_;
};

template <typename T>
struct ForwardCache {
    const void* model = nullptr;
    std::uint64_t revision = 0;
    /// inputs[i] is the batch tensor fed into layer i.
    std::vector<Tensor<T>> inputs;
    std::vector<std::vector<std::size_t>> argmax;
};

template <typename T>
struct ForwardResult {
    Tensor<T> probabilities;
    ForwardCache<T> cache;
};

/// Batch shape must be [batch] + input_shape. Errors name the failing layer.
template <typename T>
ForwardResult<T> model_forward(const Model<T>& model, const Tensor<T>& batch);

/// Forward pass without keeping intermediate activations.
template <typename T>
Tensor<T> model_predict(const Model<T>& model, const Tensor<T>& batch);

enum class GradientWrt {
    probabilities,  ///< gradient of the loss w.r.t. the softmax output
    logits          ///< gradient w.r.t. the softmax input; the softmax layer is skipped
};

/// Gradients for every parameter of every non-frozen layer; frozen layers produce no entries.
template <typename T>
Gradients<T> model_backward(const Model<T>& model, const ForwardCache<T>& cache, const Tensor<T>& grad,
                            GradientWrt wrt);

}  // namespace ricenet
