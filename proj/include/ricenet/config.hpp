#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "ricenet/train.hpp"

namespace ricenet {

/**
 * Effective settings for `train` and `augment-preview`.
 *
 * Config files are JSON with `//` and block comments allowed. Layout (every key optional):
 *
 *     {
 *       "seed": 42,
 *       "preset": "paper-iter3",
 *       "data":  {"manifest": "m.tsv", "classes": "m.tsv.classes",
 *                 "image_height": 128, "image_width": 128, "split_fraction": 0.8},
 *       "model": {"backbone": "backbone.rdn1", "out": "model.rdn1"},
 *       "train": {"epochs": 20, "batch_size": 32, "learning_rate": 0.001, "beta1": 0.9,
 *                 "beta2": 0.999, "epsilon": 1e-8, "freeze": ["base."], "augmentation": true},
 *       "augment": {"horizontal_flip": true, "flip_probability": 0.5, "shear": true, "shear_range": 0.2}
 *     }
 *
 * Relative paths in a file resolve against the file's directory. Precedence:
 * command-line flags, then the file, then the preset, then built-in defaults.
 */
struct CliConfig {
    std::uint64_t seed = 42;
    std::optional<std::string> preset;

    std::optional<std::filesystem::path> manifest;
    std::optional<std::filesystem::path> classes;
    std::size_t image_height = 128;
    std::size_t image_width = 128;
    double split_fraction = 0.8;

    std::optional<std::filesystem::path> backbone;
    std::optional<std::filesystem::path> out;

    /// Training settings including the augmentation spec; `train.seed` mirrors `seed`.
    TrainConfig train;
};

/// Parses a config file body. Comments are allowed; relative paths resolve against `base_dir`.
/// Throws ConfigError listing every unknown key and type error at once.
nlohmann::json parse_config_text(std::string_view text, const std::filesystem::path& base_dir);
nlohmann::json load_config_file(const std::filesystem::path& path);

/// Builds the effective config from a merged document (file values overlaid with flag values).
CliConfig resolve_config(const nlohmann::json& document);

/// Names of required keys that are unset, e.g. "data.manifest".
std::vector<std::string> missing_keys(const CliConfig& config, const std::vector<std::string>& required);

/// Effective config as pretty-printed JSON.
std::string echo_config(const CliConfig& config);

}  // namespace ricenet
