#include "ricenet/modelio.hpp"

#include <bit>
#include <cstring>
#include <set>

#include <fmt/format.h>
#include "json.hpp"

#include "ricenet/image.hpp"

namespace ricenet {

using nlohmann::json;

namespace {

constexpr std::uint8_t kMagic[4] = {'R', 'D', 'N', '1'};
constexpr std::size_t kAlign = 16;
constexpr std::size_t kHeaderSize = 8;

std::size_t align_up(std::size_t n) { return (n + kAlign - 1) / kAlign * kAlign; }

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

json spec_to_json(const LayerSpec& spec) {
    if (const auto* c = std::get_if<ConvSpec>(&spec)) {
        return {{"in_channels", c->in_channels}, {"out_channels", c->out_channels}, {"kernel_h", c->kernel_h},
                {"kernel_w", c->kernel_w},       {"stride", c->stride},
                {"padding", c->padding == Padding::same ? "same" : "valid"}};
    }
    if (const auto* p = std::get_if<PoolSpec>(&spec)) {
        return {{"window_h", p->window_h}, {"window_w", p->window_w}, {"stride", p->stride}};
    }
    if (const auto* d = std::get_if<DenseSpec>(&spec)) {
        return {{"in_features", d->in_features}, {"out_features", d->out_features}};
    }
    return json::object();
}

/// Reads a required manifest field, reporting its path on failure.
template <typename V>
V field(const json& j, const char* key, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) throw FormatError(fmt::format("manifest: missing field {}.{}", where, key));
    try {
        return j.at(key).get<V>();
    } catch (const json::exception&) {
        throw FormatError(fmt::format("manifest: field {}.{} has the wrong type", where, key));
    }
}

LayerSpec spec_from_json(LayerKind kind, const json& j, const std::string& where) {
    switch (kind) {
        case LayerKind::conv2d: {
            const auto pad = field<std::string>(j, "padding", where);
            if (pad != "same" && pad != "valid") throw FormatError(fmt::format("manifest: {}.padding '{}'", where, pad));
            return ConvSpec{field<std::size_t>(j, "in_channels", where), field<std::size_t>(j, "out_channels", where),
                            field<std::size_t>(j, "kernel_h", where),    field<std::size_t>(j, "kernel_w", where),
                            field<std::size_t>(j, "stride", where),      pad == "same" ? Padding::same : Padding::valid};
        }
        case LayerKind::maxpool:
            return PoolSpec{field<std::size_t>(j, "window_h", where), field<std::size_t>(j, "window_w", where),
                            field<std::size_t>(j, "stride", where)};
        case LayerKind::dense:
            return DenseSpec{field<std::size_t>(j, "in_features", where), field<std::size_t>(j, "out_features", where)};
        default: return std::monostate{};
    }
}

}  // namespace

template <typename T>
std::vector<std::uint8_t> save_model(const Model<T>& model) {
    json layers = json::array();
    std::size_t offset = 0;
    std::vector<const Tensor<T>*> tensors;
    for (const auto& layer : model.layers()) {
        json params = json::array();
        for (const auto& p : layer.params) {
            offset = align_up(offset);
            const std::size_t length = p.value.size() * 4;
            params.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"offset", offset}, {"length", length}});
            tensors.push_back(&p.value);
            offset += length;
        }
        layers.push_back({{"name", layer.name},
                          {"kind", std::string(to_string(layer.kind))},
                          {"spec", spec_to_json(layer.spec)},
                          {"frozen", layer.frozen},
                          {"params", std::move(params)}});
    }
    const json manifest = {{"format_version", kModelFormatVersion},
                           {"input_shape", model.input_shape()},
                           {"class_labels", model.class_labels()},
                           {"metadata", model.metadata()},
                           {"layers", std::move(layers)}};
    const std::string text = manifest.dump();

    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    const std::size_t blob_start = align_up(out.size());
    out.resize(blob_start + offset, 0);

    std::size_t cursor = 0;
    for (const auto* t : tensors) {
        cursor = align_up(cursor);
        std::uint8_t* dst = out.data() + blob_start + cursor;
        for (std::size_t i = 0; i < t->size(); ++i) {
            const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>((*t)[i]));
            for (int b = 0; b < 4; ++b) *dst++ = static_cast<std::uint8_t>(bits >> (8 * b));
        }
        cursor += t->size() * 4;
    }
    return out;
}

template <typename T>
void save_model_file(const Model<T>& model, const std::filesystem::path& path) {
    write_file_atomic(path, save_model(model));
}

Model<float> load_model(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kHeaderSize || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw FormatError("not an RDN1 model file (bad magic)");
    }
    const std::size_t manifest_len = get_u32(bytes.data() + 4);
    if (kHeaderSize + manifest_len > bytes.size()) {
        throw CorruptionError("manifest_length",
                              fmt::format("declares {} bytes but only {} follow the header", manifest_len,
                                          bytes.size() - kHeaderSize));
    }
    json manifest;
    try {
        manifest = json::parse(bytes.begin() + kHeaderSize, bytes.begin() + kHeaderSize + manifest_len);
    } catch (const json::parse_error& e) {
        throw FormatError(fmt::format("manifest is not valid JSON: {}", e.what()));
    }
    const auto version = field<std::uint32_t>(manifest, "format_version", "manifest");
    if (version != kModelFormatVersion) {
        throw FormatError(fmt::format("unsupported format_version {} (expected {})", version, kModelFormatVersion));
    }
    const auto input_shape = field<Shape>(manifest, "input_shape", "manifest");
    const auto labels = field<std::vector<std::string>>(manifest, "class_labels", "manifest");
    const auto metadata = field<Metadata>(manifest, "metadata", "manifest");
    const auto layer_docs = field<json>(manifest, "layers", "manifest");
    if (!layer_docs.is_array()) throw FormatError("manifest: layers must be an array");

    const std::size_t blob_start = align_up(kHeaderSize + manifest_len);
    const std::size_t blob_size = bytes.size() >= blob_start ? bytes.size() - blob_start : 0;
    const std::uint8_t* blob = bytes.data() + std::min(blob_start, bytes.size());

    std::vector<Layer<float>> layers;
    std::size_t expected_offset = 0;
    for (std::size_t i = 0; i < layer_docs.size(); ++i) {
        const auto& doc = layer_docs[i];
        const std::string where = fmt::format("layers[{}]", i);
        Layer<float> layer;
        layer.name = field<std::string>(doc, "name", where);
        try {
            layer.kind = parse_layer_kind(field<std::string>(doc, "kind", where));
        } catch (const ValidationError& e) {
            throw FormatError(fmt::format("manifest: {}.kind: {}", where, e.what()));
        }
        layer.spec = spec_from_json(layer.kind, field<json>(doc, "spec", where), where + ".spec");
        layer.frozen = field<bool>(doc, "frozen", where);

        const auto param_docs = field<json>(doc, "params", where);
        if (!param_docs.is_array()) throw FormatError(fmt::format("manifest: {}.params must be an array", where));
        std::vector<std::pair<std::string, Shape>> expected;
        try {
            expected = expected_param_shapes(layer.kind, layer.spec);
        } catch (const std::exception& e) {
            throw CorruptionError(layer.name, e.what());
        }
        if (param_docs.size() != expected.size()) {
            throw CorruptionError(layer.name, fmt::format("declares {} parameter tensors, its kind needs {}",
                                                          param_docs.size(), expected.size()));
        }
        for (std::size_t p = 0; p < param_docs.size(); ++p) {
            const auto& pd = param_docs[p];
            const std::string pwhere = fmt::format("{}.params[{}]", where, p);
            const auto name = field<std::string>(pd, "name", pwhere);
            const auto shape = field<Shape>(pd, "shape", pwhere);
            const auto offset = field<std::size_t>(pd, "offset", pwhere);
            const auto length = field<std::size_t>(pd, "length", pwhere);
            const std::string tensor = layer.name + "/" + name;
            if (name != expected[p].first) {
                throw CorruptionError(tensor, fmt::format("expected parameter '{}' at position {}", expected[p].first, p));
            }
            if (shape != expected[p].second) {
                throw CorruptionError(tensor, fmt::format("shape {} does not match the layer spec, which needs {}",
                                                          format_shape(shape), format_shape(expected[p].second)));
            }
            if (length != shape_elements(shape) * 4) {
                throw CorruptionError(tensor, fmt::format("length {} bytes does not hold {} float32 values", length,
                                                          shape_elements(shape)));
            }
            if (offset % kAlign != 0 || offset != align_up(expected_offset)) {
                throw CorruptionError(tensor, fmt::format("offset {} is not the next 16-byte aligned position {}",
                                                          offset, align_up(expected_offset)));
            }
            if (offset > blob_size || length > blob_size - offset) {
                throw CorruptionError(tensor, fmt::format("bytes [{}, {}) lie outside the {}-byte blob", offset,
                                                          offset + length, blob_size));
            }
            std::vector<float> values(shape_elements(shape));
            const std::uint8_t* src = blob + offset;
            for (auto& v : values) {
                v = std::bit_cast<float>(get_u32(src));
                src += 4;
            }
            layer.params.push_back({name, Tensorf(shape, std::move(values))});
            expected_offset = offset + length;
        }
        layers.push_back(std::move(layer));
    }
    if (blob_size != expected_offset) {
        throw CorruptionError("blob", fmt::format("{} bytes present, tensors account for {}", blob_size, expected_offset));
    }
    try {
        return Model<float>(input_shape, std::move(layers), labels, metadata);
    } catch (const ShapeError& e) {
        throw CorruptionError("layers", e.what());
    } catch (const ValidationError& e) {
        throw CorruptionError("layers", e.what());
    }
}

Model<float> load_model_file(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    try {
        return load_model(bytes);
    } catch (const CorruptionError& e) {
        throw CorruptionError(e.field(), fmt::format("{}: {}", path.string(), e.what()));
    } catch (const FormatError& e) {
        throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

std::string model_id(std::span<const std::uint8_t> bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (auto b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return fmt::format("{:016x}", h);
}

void HeadSpec::validate() const {
    if (class_labels.size() < 2) throw ConfigError("a head needs at least two class labels");
    std::set<std::string> seen;
    for (const auto& l : class_labels) {
        if (l.empty()) throw ConfigError("empty class label");
        if (!seen.insert(l).second) throw ConfigError(fmt::format("duplicate class label '{}'", l));
    }
}

template <typename T>
Model<T> attach_head(const Model<T>& backbone, const HeadSpec& head, bool freeze_backbone, std::uint64_t seed) {
    head.validate();
    const auto& shapes = backbone.output_shapes();
    std::size_t keep = 0;
    for (std::size_t i = shapes.size(); i > 0; --i) {
        if (shapes[i - 1].size() == 3) {
            keep = i;
            break;
        }
    }
    if (keep == 0) {
        throw StructureError(
            "backbone has no layer with a [C, H, W] output to cut at; save or load the backbone without its "
            "classifier (top excluded)");
    }

    std::vector<Layer<T>> layers(backbone.layers().begin(), backbone.layers().begin() + static_cast<std::ptrdiff_t>(keep));
    for (auto& l : layers) {
        if (!l.name.starts_with("base.")) l.name = "base." + l.name;
        l.frozen = freeze_backbone;
    }
    auto head_layers = ModelBuilder<T>(shapes[keep - 1])
                           .global_avg_pool("head.gap")
                           .dense("head.fc", head.num_classes())
                           .softmax("head.softmax")
                           .layers(seed);
    for (auto& l : head_layers) layers.push_back(std::move(l));

    Metadata meta = backbone.metadata();
    meta["head_seed"] = std::to_string(seed);
    return Model<T>(backbone.input_shape(), std::move(layers), head.class_labels, std::move(meta));
}

template std::vector<std::uint8_t> save_model(const Model<float>&);
template std::vector<std::uint8_t> save_model(const Model<double>&);
template void save_model_file(const Model<float>&, const std::filesystem::path&);
template void save_model_file(const Model<double>&, const std::filesystem::path&);
template Model<float> attach_head(const Model<float>&, const HeadSpec&, bool, std::uint64_t);
template Model<double> attach_head(const Model<double>&, const HeadSpec&, bool, std::uint64_t);

}  // namespace ricenet
