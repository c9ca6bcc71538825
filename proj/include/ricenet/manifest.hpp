#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ricenet {

enum class Split { train, val };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct ManifestRecord {
    std::string path;   ///< relative to the manifest file's directory
    std::string label;
    std::optional<Split> split;

    bool operator==(const ManifestRecord&) const = default;
};

/**
 * Dataset index.
 *
 * On disk: one record per line, `<relative-path>\t<label>[\t<train|val>]`, UTF-8.
 * Lines starting with '#' are comments; `# split_seed=<n>` records the split seed.
 * The class vocabulary lives in a sidecar file, one label per line, order significant.
 */
struct DatasetManifest {
    std::vector<ManifestRecord> records;
    std::vector<std::string> classes;
    std::optional<std::uint64_t> split_seed;

    std::size_t class_index(std::string_view label) const;
    bool is_split() const;
    std::vector<std::size_t> indices(Split split) const;
    std::vector<std::size_t> class_counts() const;

    /// Every label in the vocabulary, vocabulary unique; split tags all-or-nothing.
    void validate() const;

    bool operator==(const DatasetManifest&) const = default;
};

/// "leaf_blast", "brown_spot", "hispa".
const std::vector<std::string>& default_classes();

/// Sidecar vocabulary path used when none is given: `<manifest>.classes`.
std::filesystem::path default_classes_path(const std::filesystem::path& manifest);

DatasetManifest parse_manifest(std::string_view text, std::vector<std::string> classes);
std::vector<std::string> parse_classes(std::string_view text);
std::string format_manifest(const DatasetManifest& manifest);
std::string format_classes(const std::vector<std::string>& classes);

DatasetManifest read_manifest(const std::filesystem::path& manifest, const std::filesystem::path& classes);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path,
                    const std::filesystem::path& classes_path);

/// Stratified split: within each class the records are shuffled with a seeded generator and the
/// first floor(train_fraction * n_c) are tagged train, the rest val.
DatasetManifest split_dataset(DatasetManifest manifest, double train_fraction, std::uint64_t seed);

struct ScanReport {
    DatasetManifest manifest;
    std::map<std::string, std::size_t> counts;
    std::size_t skipped_files = 0;
    std::vector<std::string> warnings;
};

/**
 * Imports a directory-per-class tree (e.g. the Kaggle rice-disease layout with folders
 * `LeafBlast`, `BrownSpot`, `Hispa`, `Healthy`). Folder names match vocabulary labels after
 * lower-casing and dropping non-alphanumerics. Unmatched folders and non-image files are skipped
 * with warnings; vocabulary classes without a folder are dropped from the result with a warning.
 * Paths are written relative to `manifest_dir`.
 */
ScanReport scan_directory(const std::filesystem::path& root, const std::filesystem::path& manifest_dir,
                          const std::vector<std::string>& classes = default_classes());

}  // namespace ricenet
