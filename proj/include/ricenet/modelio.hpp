#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ricenet/model.hpp"

namespace ricenet {

/*
 * RDN1 model file:
 *
 *   "RDN1" | u32 LE manifest length | manifest (UTF-8 JSON) | zero padding | blob
 *
 * The blob starts at the first 16-byte boundary after the manifest. Each
 * parameter tensor is stored as little-endian IEEE-754 binary32 values in
 * row-major order at a 16-byte aligned offset relative to the blob start, in
 * manifest order. The blob ends at the last byte of the last tensor.
 */

inline constexpr std::uint32_t kModelFormatVersion = 1;

class ModelFileError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Not an RDN1 file, an unsupported version, or an unparseable manifest.
class FormatError : public ModelFileError {
public:
    using ModelFileError::ModelFileError;
};

/// Manifest and blob disagree. `field()` names the offending manifest entry or tensor.
class CorruptionError : public ModelFileError {
public:
    CorruptionError(std::string field, const std::string& message)
        : ModelFileError(field + ": " + message), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

/// A backbone that cannot take a new head.
class StructureError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

template <typename T>
std::vector<std::uint8_t> save_model(const Model<T>& model);

/// Atomic write (temporary file, then rename). Throws IoError.
template <typename T>
void save_model_file(const Model<T>& model, const std::filesystem::path& path);

Model<float> load_model(std::span<const std::uint8_t> bytes);
Model<float> load_model_file(const std::filesystem::path& path);

/// FNV-1a 64 of the file bytes as 16 hex digits.
std::string model_id(std::span<const std::uint8_t> bytes);

struct HeadSpec {
    std::vector<std::string> class_labels;

    std::size_t num_classes() const noexcept { return class_labels.size(); }
    /// At least two labels, all unique and non-empty. Throws ConfigError.
    void validate() const;
};

/**
 * Keeps the backbone up to its last layer with a [C, H, W] output, renames those layers
 * with a "base." prefix, and appends head.gap -> head.fc -> head.softmax initialized from `seed`.
 * Throws StructureError when no layer produces a feature map.
 */
template <typename T>
Model<T> attach_head(const Model<T>& backbone, const HeadSpec& head, bool freeze_backbone, std::uint64_t seed);

}  // namespace ricenet
