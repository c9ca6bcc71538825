#include "ricenet/config.hpp"

#include <functional>
#include <map>

#include <fmt/format.h>

#include "ricenet/image.hpp"

namespace ricenet {

using nlohmann::json;

namespace {

enum class Kind { unsigned_integer, number, boolean, string, path, string_list };

struct KeySpec {
    std::string_view key;
    Kind kind;
};

constexpr KeySpec kSchema[] = {
    {"seed", Kind::unsigned_integer},
    {"preset", Kind::string},
    {"data.manifest", Kind::path},
    {"data.classes", Kind::path},
    {"data.image_height", Kind::unsigned_integer},
    {"data.image_width", Kind::unsigned_integer},
    {"data.split_fraction", Kind::number},
    {"model.backbone", Kind::path},
    {"model.out", Kind::path},
    {"train.epochs", Kind::unsigned_integer},
    {"train.batch_size", Kind::unsigned_integer},
    {"train.learning_rate", Kind::number},
    {"train.beta1", Kind::number},
    {"train.beta2", Kind::number},
    {"train.epsilon", Kind::number},
    {"train.freeze", Kind::string_list},
    {"train.augmentation", Kind::boolean},
    {"augment.horizontal_flip", Kind::boolean},
    {"augment.flip_probability", Kind::number},
    {"augment.shear", Kind::boolean},
    {"augment.shear_range", Kind::number},
};

constexpr std::string_view kSections[] = {"data", "model", "train", "augment"};

const KeySpec* find_key(std::string_view key) {
    for (const auto& k : kSchema)
        if (k.key == key) return &k;
    return nullptr;
}

bool is_section(std::string_view key) {
    for (auto s : kSections)
        if (s == key) return true;
    return false;
}

std::string_view kind_name(Kind kind) {
    switch (kind) {
        case Kind::unsigned_integer: return "a non-negative integer";
        case Kind::number: return "a number";
        case Kind::boolean: return "true or false";
        case Kind::string:
        case Kind::path: return "a string";
        case Kind::string_list: return "a list of strings";
    }
    return "?";
}

bool matches(const json& v, Kind kind) {
    switch (kind) {
        case Kind::unsigned_integer: return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
        case Kind::number: return v.is_number();
        case Kind::boolean: return v.is_boolean();
        case Kind::string:
        case Kind::path: return v.is_string();
        case Kind::string_list:
            if (!v.is_array()) return false;
            for (const auto& e : v)
                if (!e.is_string()) return false;
            return true;
    }
    return false;
}

void check_leaf(const std::string& key, const json& value, std::vector<std::string>& errors) {
    const auto* spec = find_key(key);
    if (!spec) {
        errors.push_back(fmt::format("unknown key '{}'", key));
    } else if (!value.is_null() && !matches(value, spec->kind)) {
        errors.push_back(fmt::format("'{}' must be {}", key, kind_name(spec->kind)));
    }
}

std::vector<std::string> check_document(const json& doc) {
    std::vector<std::string> errors;
    if (!doc.is_object()) return {"config must be a JSON object"};
    for (const auto& [key, value] : doc.items()) {
        if (is_section(key)) {
            if (!value.is_object()) {
                errors.push_back(fmt::format("'{}' must be an object", key));
                continue;
            }
            for (const auto& [sub, v] : value.items()) check_leaf(key + "." + sub, v, errors);
        } else {
            check_leaf(key, value, errors);
        }
    }
    return errors;
}

[[noreturn]] void throw_all(const std::vector<std::string>& errors) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
}

const json* lookup(const json& doc, std::string_view key) {
    const auto dot = key.find('.');
    if (dot == std::string_view::npos) {
        const auto it = doc.find(std::string(key));
        return it == doc.end() || it->is_null() ? nullptr : &*it;
    }
    const auto sec = doc.find(std::string(key.substr(0, dot)));
    if (sec == doc.end() || !sec->is_object()) return nullptr;
    const auto it = sec->find(std::string(key.substr(dot + 1)));
    return it == sec->end() || it->is_null() ? nullptr : &*it;
}

template <typename V>
void assign(const json& doc, std::string_view key, V& target) {
    if (const auto* v = lookup(doc, key)) target = v->get<V>();
}

void assign_path(const json& doc, std::string_view key, std::optional<std::filesystem::path>& target) {
    if (const auto* v = lookup(doc, key)) target = std::filesystem::path(v->get<std::string>());
}

json path_or_null(const std::optional<std::filesystem::path>& p) { return p ? json(p->string()) : json(nullptr); }

}  // namespace

json parse_config_text(std::string_view text, const std::filesystem::path& base_dir) {
    json doc;
    try {
        doc = json::parse(text, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw ConfigError(fmt::format("config is not valid JSON: {}", e.what()));
    }
    const auto errors = check_document(doc);
    if (!errors.empty()) throw_all(errors);
    for (const auto& spec : kSchema) {
        if (spec.kind != Kind::path) continue;
        const auto dot = spec.key.find('.');
        const std::string sec(spec.key.substr(0, dot)), leaf(spec.key.substr(dot + 1));
        if (!doc.contains(sec) || !doc[sec].contains(leaf) || !doc[sec][leaf].is_string()) continue;
        std::filesystem::path p(doc[sec][leaf].get<std::string>());
        if (p.is_relative()) doc[sec][leaf] = (base_dir / p).lexically_normal().string();
    }
    return doc;
}

json load_config_file(const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes;
    try {
        bytes = read_file(path);
    } catch (const IoError& e) {
        throw ConfigError(e.what());
    }
    try {
        return parse_config_text(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
                                 path.parent_path());
    } catch (const ConfigError& e) {
        throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

CliConfig resolve_config(const json& doc) {
    auto errors = check_document(doc);
    if (!errors.empty()) throw_all(errors);

    CliConfig c;
    if (const auto* p = lookup(doc, "preset")) {
        c.preset = p->get<std::string>();
        try {
            c.train = iteration_preset(*c.preset);
        } catch (const ConfigError& e) {
            errors.push_back(e.what());
        }
    }
    assign(doc, "seed", c.seed);
    assign_path(doc, "data.manifest", c.manifest);
    assign_path(doc, "data.classes", c.classes);
    assign(doc, "data.image_height", c.image_height);
    assign(doc, "data.image_width", c.image_width);
    assign(doc, "data.split_fraction", c.split_fraction);
    assign_path(doc, "model.backbone", c.backbone);
    assign_path(doc, "model.out", c.out);

    auto& t = c.train;
    assign(doc, "train.epochs", t.epochs);
    assign(doc, "train.batch_size", t.batch_size);
    assign(doc, "train.learning_rate", t.adam.learning_rate);
    assign(doc, "train.beta1", t.adam.beta1);
    assign(doc, "train.beta2", t.adam.beta2);
    assign(doc, "train.epsilon", t.adam.epsilon);
    assign(doc, "train.freeze", t.freeze_policy);
    assign(doc, "train.augmentation", t.augmentation_enabled);
    assign(doc, "augment.horizontal_flip", t.augmentation.horizontal_flip);
    assign(doc, "augment.flip_probability", t.augmentation.flip_probability);
    assign(doc, "augment.shear", t.augmentation.shear);
    assign(doc, "augment.shear_range", t.augmentation.shear_range);
    t.seed = c.seed;
    t.augmentation.seed = c.seed;

    if (c.image_height < 1 || c.image_width < 1) errors.push_back("image size must be at least 1x1");
    if (!(c.split_fraction > 0 && c.split_fraction < 1)) errors.push_back("data.split_fraction must be in (0, 1)");
    for (const auto& check : {std::function<void()>([&] { t.validate(); }),
                              std::function<void()>([&] { t.augmentation.validate(); })}) {
        try {
            check();
        } catch (const ConfigError& e) {
            errors.push_back(e.what());
        }
    }
    if (!errors.empty()) throw_all(errors);
    return c;
}

std::vector<std::string> missing_keys(const CliConfig& c, const std::vector<std::string>& required) {
    const std::map<std::string, bool> present = {{"data.manifest", c.manifest.has_value()},
                                                 {"data.classes", c.classes.has_value()},
                                                 {"model.backbone", c.backbone.has_value()},
                                                 {"model.out", c.out.has_value()}};
    std::vector<std::string> missing;
    for (const auto& key : required) {
        const auto it = present.find(key);
        if (it != present.end() && !it->second) missing.push_back(key);
    }
    return missing;
}

std::string echo_config(const CliConfig& c) {
    const auto& t = c.train;
    const json doc = {
        {"seed", c.seed},
        {"preset", c.preset ? json(*c.preset) : json(nullptr)},
        {"data",
         {{"manifest", path_or_null(c.manifest)},
          {"classes", path_or_null(c.classes)},
          {"image_height", c.image_height},
          {"image_width", c.image_width},
          {"split_fraction", c.split_fraction}}},
        {"model", {{"backbone", path_or_null(c.backbone)}, {"out", path_or_null(c.out)}}},
        {"train",
         {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"learning_rate", t.adam.learning_rate},
          {"beta1", t.adam.beta1},
          {"beta2", t.adam.beta2},
          {"epsilon", t.adam.epsilon},
          {"freeze", t.freeze_policy},
          {"augmentation", t.augmentation_enabled}}},
        {"augment",
         {{"horizontal_flip", t.augmentation.horizontal_flip},
          {"flip_probability", t.augmentation.flip_probability},
          {"shear", t.augmentation.shear},
          {"shear_range", t.augmentation.shear_range}}},
    };
    return doc.dump(2);
}

}  // namespace ricenet
