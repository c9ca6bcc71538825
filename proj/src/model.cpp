#include "ricenet/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>

namespace ricenet {

namespace {

constexpr std::pair<LayerKind, std::string_view> kKindNames[] = {
    {LayerKind::conv2d, "conv2d"},   {LayerKind::maxpool, "maxpool"},
    {LayerKind::relu, "relu"},       {LayerKind::flatten, "flatten"},
    {LayerKind::dense, "dense"},     {LayerKind::global_avg_pool, "global_avg_pool"},
    {LayerKind::softmax, "softmax"},
};

template <typename Spec>
const Spec& spec_as(const LayerSpec& spec, LayerKind kind) {
    if (const auto* s = std::get_if<Spec>(&spec)) return *s;
    throw ShapeError(fmt::format("{} layer is missing its spec", to_string(kind)));
}

}  // namespace

std::string_view to_string(LayerKind kind) {
    for (const auto& [k, name] : kKindNames)
        if (k == kind) return name;
    return "unknown";
}

LayerKind parse_layer_kind(std::string_view text) {
    for (const auto& [k, name] : kKindNames)
        if (name == text) return k;
    throw ValidationError(fmt::format("unknown layer kind '{}'", text));
}

template <typename T>
const Tensor<T>& Layer<T>::param(std::string_view param_name) const {
    for (const auto& p : params)
        if (p.name == param_name) return p.value;
    throw ValidationError(fmt::format("layer '{}' has no parameter '{}'", name, param_name));
}

template <typename T>
Tensor<T>& Layer<T>::param(std::string_view param_name) {
    return const_cast<Tensor<T>&>(std::as_const(*this).param(param_name));
}

Shape infer_output_shape(LayerKind kind, const LayerSpec& spec, const Shape& in) {
    switch (kind) {
        case LayerKind::conv2d: {
            const auto& s = spec_as<ConvSpec>(spec, kind);
            if (in.size() != 3) throw ShapeError("conv2d needs a [channels, h, w] input, got " + format_shape(in));
            if (in[0] != s.in_channels) {
                throw ShapeError(fmt::format("conv2d expects {} input channels, got {}", s.in_channels, in[0]));
            }
            const ConvGeometry g = conv_geometry(s, in[1], in[2]);
            return {s.out_channels, g.out_h, g.out_w};
        }
        case LayerKind::maxpool: {
            const auto& s = spec_as<PoolSpec>(spec, kind);
            if (in.size() != 3) throw ShapeError("maxpool needs a [channels, h, w] input, got " + format_shape(in));
            if (s.stride == 0 || s.window_h == 0 || s.window_w == 0) throw ShapeError("maxpool window/stride is 0");
            if (s.window_h > in[1] || s.window_w > in[2]) {
                throw ShapeError(fmt::format("maxpool window {}x{} larger than input {}x{}", s.window_h, s.window_w,
                                             in[1], in[2]));
            }
            return {in[0], (in[1] - s.window_h) / s.stride + 1, (in[2] - s.window_w) / s.stride + 1};
        }
        case LayerKind::relu:
            return in;
        case LayerKind::flatten:
            return {shape_elements(in)};
        case LayerKind::dense: {
            const auto& s = spec_as<DenseSpec>(spec, kind);
            if (in.size() != 1 || in[0] != s.in_features) {
                throw ShapeError(fmt::format("dense expects [{}] input, got {}", s.in_features, format_shape(in)));
            }
            return {s.out_features};
        }
        case LayerKind::global_avg_pool:
            if (in.size() != 3) {
                throw ShapeError("global_avg_pool needs a [channels, h, w] input, got " + format_shape(in));
            }
            return {in[0]};
        case LayerKind::softmax:
            if (in.size() != 1) throw ShapeError("softmax needs a flat input, got " + format_shape(in));
            return in;
    }
    throw ShapeError("unknown layer kind");
}

std::vector<std::pair<std::string, Shape>> expected_param_shapes(LayerKind kind, const LayerSpec& spec) {
    if (kind == LayerKind::conv2d) {
        const auto& s = spec_as<ConvSpec>(spec, kind);
        return {{"kernel", {s.out_channels, s.in_channels, s.kernel_h, s.kernel_w}}, {"bias", {s.out_channels}}};
    }
    if (kind == LayerKind::dense) {
        const auto& s = spec_as<DenseSpec>(spec, kind);
        return {{"weight", {s.in_features, s.out_features}}, {"bias", {s.out_features}}};
    }
    return {};
}

template <typename T>
void init_parameters(Layer<T>& layer, Rng& rng) {
    std::size_t fan_in = 0, fan_out = 0;
    if (layer.kind == LayerKind::conv2d) {
        const auto& s = std::get<ConvSpec>(layer.spec);
        fan_in = s.in_channels * s.kernel_h * s.kernel_w;
        fan_out = s.out_channels * s.kernel_h * s.kernel_w;
    } else if (layer.kind == LayerKind::dense) {
        const auto& s = std::get<DenseSpec>(layer.spec);
        fan_in = s.in_features;
        fan_out = s.out_features;
    }
    layer.params.clear();
    for (auto& [name, shape] : expected_param_shapes(layer.kind, layer.spec)) {
        Tensor<T> value(shape);
        if (name != "bias") {
            const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
            for (auto& v : value.values()) v = static_cast<T>(rng.uniform(-limit, limit));
        }
        layer.params.push_back({name, std::move(value)});
    }
}

template <typename T>
Model<T>::Model(Shape input_shape, std::vector<Layer<T>> layers, std::vector<std::string> class_labels,
                Metadata metadata)
    : input_shape_(std::move(input_shape)),
      layers_(std::move(layers)),
      class_labels_(std::move(class_labels)),
      metadata_(std::move(metadata)) {
    validate();
}

template <typename T>
void Model<T>::validate() {
    if (input_shape_.size() != 3) {
        throw ShapeError("model input shape must be [channels, height, width], got " + format_shape(input_shape_));
    }
    for (auto d : input_shape_)
        if (d == 0) throw ShapeError("model input shape has a zero dimension");
    if (layers_.empty()) throw ShapeError("model has no layers");

    std::set<std::string> names;
    Shape shape = input_shape_;
    output_shapes_.clear();
    for (const auto& layer : layers_) {
        if (layer.name.empty()) throw ValidationError("layer with empty name");
        if (!names.insert(layer.name).second) throw ValidationError("duplicate layer name '" + layer.name + "'");
        try {
            shape = infer_output_shape(layer.kind, layer.spec, shape);
        } catch (const ShapeError& e) {
            throw ShapeError(fmt::format("layer '{}': {}", layer.name, e.what()));
        }
        const auto expected = expected_param_shapes(layer.kind, layer.spec);
        if (expected.size() != layer.params.size()) {
            throw ShapeError(fmt::format("layer '{}': expected {} parameters, has {}", layer.name, expected.size(),
                                         layer.params.size()));
        }
        for (std::size_t i = 0; i < expected.size(); ++i) {
            if (layer.params[i].name != expected[i].first || layer.params[i].value.shape() != expected[i].second) {
                throw ShapeError(fmt::format("layer '{}': parameter '{}' {} does not match expected '{}' {}",
                                             layer.name, layer.params[i].name,
                                             format_shape(layer.params[i].value.shape()), expected[i].first,
                                             format_shape(expected[i].second)));
            }
        }
        output_shapes_.push_back(shape);
    }
    if (layers_.back().kind != LayerKind::softmax) {
        throw ShapeError("final layer '" + layers_.back().name + "' must be softmax");
    }
    if (shape[0] != class_labels_.size()) {
        throw ShapeError(fmt::format("softmax width {} does not match {} class labels", shape[0],
                                     class_labels_.size()));
    }
}

template <typename T>
const Tensor<T>& Model<T>::parameter(const ParamKey& key) const {
    for (const auto& layer : layers_)
        if (layer.name == key.layer) return layer.param(key.param);
    throw ValidationError("no layer named '" + key.layer + "'");
}

template <typename T>
Tensor<T>& Model<T>::parameter(const ParamKey& key) {
    ++revision_;
    return const_cast<Tensor<T>&>(std::as_const(*this).parameter(key));
}

template <typename T>
std::vector<ParamKey> Model<T>::trainable_parameters() const {
    std::vector<ParamKey> keys;
    for (const auto& layer : layers_) {
        if (layer.frozen) continue;
        for (const auto& p : layer.params) keys.push_back({layer.name, p.name});
    }
    return keys;
}

template <typename T>
std::vector<ParamKey> Model<T>::all_parameters() const {
    std::vector<ParamKey> keys;
    for (const auto& layer : layers_)
        for (const auto& p : layer.params) keys.push_back({layer.name, p.name});
    return keys;
}

template <typename To, typename From>
Model<To> model_cast(const Model<From>& model) {
    std::vector<Layer<To>> layers;
    for (const auto& l : model.layers()) {
        Layer<To> out{l.kind, l.name, l.spec, {}, l.frozen};
        for (const auto& p : l.params) out.params.push_back({p.name, tensor_cast<To>(p.value)});
        layers.push_back(std::move(out));
    }
    return Model<To>(model.input_shape(), std::move(layers), model.class_labels(), model.metadata());
}

template <typename T>
ModelBuilder<T>::ModelBuilder(Shape input_shape) : input_shape_(input_shape), current_(std::move(input_shape)) {}

template <typename T>
ModelBuilder<T>& ModelBuilder<T>::push(LayerKind kind, std::string name, LayerSpec spec) {
    try {
        current_ = infer_output_shape(kind, spec, current_);
    } catch (const ShapeError& e) {
        throw ShapeError(fmt::format("layer '{}': {}", name, e.what()));
    }
    layers_.push_back(Layer<T>{kind, std::move(name), std::move(spec), {}, false});
    return *this;
}

template <typename T>
ModelBuilder<T>& ModelBuilder<T>::conv2d(std::string name, std::size_t out_channels, std::size_t kernel,
                                         std::size_t stride, Padding padding) {
    if (current_.size() != 3) throw ShapeError("layer '" + name + "': conv2d needs a rank-3 input");
    return push(LayerKind::conv2d, std::move(name), ConvSpec{current_[0], out_channels, kernel, kernel, stride, padding});
}

template <typename T>
ModelBuilder<T>& ModelBuilder<T>::maxpool(std::string name, std::size_t window, std::size_t stride) {
    return push(LayerKind::maxpool, std::move(name), PoolSpec{window, window, stride});
}

template <typename T>
ModelBuilder<T>& ModelBuilder<T>::relu(std::string name) {
    return push(LayerKind::relu, std::move(name), std::monostate{});
}

template <typename T>
ModelBuilder<T>& ModelBuilder<T>::flatten(std::string name) {
    return push(LayerKind::flatten, std::move(name), std::monostate{});
}

template <typename T>
ModelBuilder<T>& ModelBuilder<T>::dense(std::string name, std::size_t out_features) {
    if (current_.size() != 1) throw ShapeError("layer '" + name + "': dense needs a flat input");
    return push(LayerKind::dense, std::move(name), DenseSpec{current_[0], out_features});
}

template <typename T>
ModelBuilder<T>& ModelBuilder<T>::global_avg_pool(std::string name) {
    return push(LayerKind::global_avg_pool, std::move(name), std::monostate{});
}

template <typename T>
ModelBuilder<T>& ModelBuilder<T>::softmax(std::string name) {
    return push(LayerKind::softmax, std::move(name), std::monostate{});
}

template <typename T>
std::vector<Layer<T>> ModelBuilder<T>::layers(std::uint64_t seed) const {
    std::vector<Layer<T>> out = layers_;
    for (std::size_t i = 0; i < out.size(); ++i) {
        Rng rng(derive_seed(seed, i));
        init_parameters(out[i], rng);
    }
    return out;
}

template <typename T>
Model<T> ModelBuilder<T>::build(std::vector<std::string> class_labels, std::uint64_t seed) const {
    return Model<T>(input_shape_, layers(seed), std::move(class_labels));
}

namespace {

template <typename T>
Tensor<T> forward_layer(const Layer<T>& layer, const Tensor<T>& x, std::vector<std::size_t>* argmax) {
    switch (layer.kind) {
        case LayerKind::conv2d:
            return conv2d_forward_im2col(x, layer.param("kernel"), layer.param("bias"), std::get<ConvSpec>(layer.spec));
        case LayerKind::maxpool: {
            auto r = maxpool_forward(x, std::get<PoolSpec>(layer.spec));
            if (argmax) *argmax = std::move(r.argmax);
            return std::move(r.output);
        }
        case LayerKind::relu:
            return relu(x);
        case LayerKind::flatten:
            return x.reshape({x.dim(0), x.size() / x.dim(0)});
        case LayerKind::dense:
            return dense_forward(x, layer.param("weight"), layer.param("bias"));
        case LayerKind::global_avg_pool:
            return global_avg_pool(x);
        case LayerKind::softmax:
            return softmax(x);
    }
    throw ShapeError("unknown layer kind");
}

template <typename T>
void check_batch(const Model<T>& model, const Tensor<T>& batch) {
    Shape expected{batch.rank() > 0 ? batch.dim(0) : 1};
    expected.insert(expected.end(), model.input_shape().begin(), model.input_shape().end());
    if (batch.shape() != expected) {
        throw ShapeError(fmt::format("input batch {} does not match model input [batch, {}, {}, {}]",
                                     format_shape(batch.shape()), model.input_shape()[0], model.input_shape()[1],
                                     model.input_shape()[2]));
    }
}

}  // namespace

template <typename T>
ForwardResult<T> model_forward(const Model<T>& model, const Tensor<T>& batch) {
    check_batch(model, batch);
    ForwardResult<T> r;
    r.cache.model = &model;
    r.cache.revision = model.revision();
    r.cache.argmax.resize(model.layers().size());
    Tensor<T> x = batch;
    for (std::size_t i = 0; i < model.layers().size(); ++i) {
        const auto& layer = model.layers()[i];
        r.cache.inputs.push_back(x);
        try {
            x = forward_layer(layer, x, &r.cache.argmax[i]);
        } catch (const ShapeError& e) {
            throw ShapeError(fmt::format("layer '{}': {}", layer.name, e.what()));
        }
    }
    r.probabilities = std::move(x);
    return r;
}

template <typename T>
Tensor<T> model_predict(const Model<T>& model, const Tensor<T>& batch) {
    check_batch(model, batch);
    Tensor<T> x = batch;
    for (const auto& layer : model.layers()) {
        try {
            x = forward_layer(layer, x, nullptr);
        } catch (const ShapeError& e) {
            throw ShapeError(fmt::format("layer '{}': {}", layer.name, e.what()));
        }
    }
    return x;
}

template <typename T>
Gradients<T> model_backward(const Model<T>& model, const ForwardCache<T>& cache, const Tensor<T>& grad,
                            GradientWrt wrt) {
    const auto layers = model.layers();
    if (cache.model != &model || cache.revision != model.revision() || cache.inputs.size() != layers.size()) {
        throw ConsistencyError("model_backward: forward cache is stale or belongs to another model");
    }

    Gradients<T> grads;
    // Nothing below the lowest trainable layer needs an input gradient.
    std::size_t lowest = layers.size();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (!layers[i].frozen && !layers[i].params.empty()) {
            lowest = i;
            break;
        }
    }
    if (lowest == layers.size()) return grads;

    std::size_t top = layers.size();
    Tensor<T> g = grad;
    if (wrt == GradientWrt::logits) {
        if (g.shape() != cache.inputs.back().shape()) {
            throw ShapeError("model_backward: logit gradient shape " + format_shape(g.shape()) +
                             " does not match " + format_shape(cache.inputs.back().shape()));
        }
        --top;
    }

    for (std::size_t i = top; i-- > lowest;) {
        const auto& layer = layers[i];
        const Tensor<T>& x = cache.inputs[i];
        switch (layer.kind) {
            case LayerKind::conv2d: {
                auto cg = conv2d_backward(x, layer.param("kernel"), std::get<ConvSpec>(layer.spec), g);
                if (!layer.frozen) {
                    grads.emplace(ParamKey{layer.name, "kernel"}, std::move(cg.kernel));
                    grads.emplace(ParamKey{layer.name, "bias"}, std::move(cg.bias));
                }
                g = std::move(cg.input);
                break;
            }
            case LayerKind::dense: {
                auto dg = dense_backward(x, layer.param("weight"), g);
                if (!layer.frozen) {
                    grads.emplace(ParamKey{layer.name, "weight"}, std::move(dg.weight));
                    grads.emplace(ParamKey{layer.name, "bias"}, std::move(dg.bias));
                }
                g = std::move(dg.input);
                break;
            }
            case LayerKind::maxpool:
                g = maxpool_backward(cache.argmax[i], g, x.shape());
                break;
            case LayerKind::relu:
                g = relu_backward(x, g);
                break;
            case LayerKind::flatten:
                g = std::move(g).reshape(x.shape());
                break;
            case LayerKind::global_avg_pool:
                g = global_avg_pool_backward(g, x.shape());
                break;
            case LayerKind::softmax:
                g = softmax_backward(softmax(x), g);
                break;
        }
    }
    return grads;
}

#define RICENET_INSTANTIATE(T)                                                                            \
    template struct Layer<T>;                                                                             \
    template class Model<T>;                                                                              \
    template class ModelBuilder<T>;                                                                       \
    template void init_parameters(Layer<T>&, Rng&);                                                       \
    template ForwardResult<T> model_forward(const Model<T>&, const Tensor<T>&);                           \
    template Tensor<T> model_predict(const Model<T>&, const Tensor<T>&);                                  \
    template Gradients<T> model_backward(const Model<T>&, const ForwardCache<T>&, const Tensor<T>&, GradientWrt);

RICENET_INSTANTIATE(float)
RICENET_INSTANTIATE(double)

#undef RICENET_INSTANTIATE

template Model<float> model_cast(const Model<double>&);
template Model<double> model_cast(const Model<float>&);
template Model<float> model_cast(const Model<float>&);
template Model<double> model_cast(const Model<double>&);

}  // namespace ricenet
