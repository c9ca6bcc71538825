#include "ricenet/manifest.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "ricenet/error.hpp"
#include "ricenet/image.hpp"
#include "ricenet/random.hpp"

namespace ricenet {

std::string_view to_string(Split split) {
    return split == Split::train ? "train" : "val";
}

Split parse_split(std::string_view text) {
    if (text == "train") return Split::train;
    if (text == "val") return Split::val;
    throw ValidationError(fmt::format("unknown split tag '{}', expected train or val", text));
}

std::size_t DatasetManifest::class_index(std::string_view label) const {
    for (std::size_t i = 0; i < classes.size(); ++i)
        if (classes[i] == label) return i;
    throw ValidationError(fmt::format("label '{}' is not in the class vocabulary", label));
}

bool DatasetManifest::is_split() const {
    return !records.empty() && std::all_of(records.begin(), records.end(), [](const auto& r) { return r.split; });
}

std::vector<std::size_t> DatasetManifest::indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records.size(); ++i)
        if (records[i].split == split) out.push_back(i);
    return out;
}

std::vector<std::size_t> DatasetManifest::class_counts() const {
    std::vector<std::size_t> counts(classes.size());
    for (const auto& r : records) ++counts[class_index(r.label)];
    return counts;
}

void DatasetManifest::validate() const {
    if (classes.empty()) throw ValidationError("class vocabulary is empty");
    std::set<std::string> seen;
    for (const auto& c : classes) {
        if (c.empty()) throw ValidationError("empty class label in vocabulary");
        if (!seen.insert(c).second) throw ValidationError("duplicate class label '" + c + "'");
    }
    std::size_t tagged = 0;
    for (const auto& r : records) {
        if (!seen.count(r.label)) throw ValidationError(fmt::format("record '{}': label '{}' not in vocabulary", r.path, r.label));
        tagged += r.split.has_value();
    }
    if (tagged != 0 && tagged != records.size()) {
        throw ValidationError(fmt::format("{} of {} records carry a split tag; tag all or none", tagged, records.size()));
    }
}

const std::vector<std::string>& default_classes() {
    static const std::vector<std::string> classes{"leaf_blast", "brown_spot", "hispa"};
    return classes;
}

std::filesystem::path default_classes_path(const std::filesystem::path& manifest) {
    auto p = manifest;
    p += ".classes";
    return p;
}

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const auto tab = line.find('\t', start);
        fields.push_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
        if (tab == std::string_view::npos) break;
        start = tab + 1;
    }
    return fields;
}

std::vector<std::string_view> lines_of(std::string_view text) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (start < text.size()) {
        auto nl = text.find('\n', start);
        if (nl == std::string_view::npos) nl = text.size();
        auto line = text.substr(start, nl - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        out.push_back(line);
        start = nl + 1;
    }
    return out;
}

std::string normalize_name(std::string_view s) {
    std::string out;
    for (unsigned char c : s)
        if (std::isalnum(c)) out.push_back(static_cast<char>(std::tolower(c)));
    return out;
}

}  // namespace

std::vector<std::string> parse_classes(std::string_view text) {
    std::vector<std::string> classes;
    for (auto line : lines_of(text)) {
        if (line.empty() || line.front() == '#') continue;
        classes.emplace_back(line);
    }
    return classes;
}

DatasetManifest parse_manifest(std::string_view text, std::vector<std::string> classes) {
    DatasetManifest m;
    m.classes = std::move(classes);
    std::size_t line_no = 0;
    for (auto line : lines_of(text)) {
        ++line_no;
        if (line.empty()) continue;
        if (line.front() == '#') {
            constexpr std::string_view key = "# split_seed=";
            if (line.starts_with(key)) {
                try {
                    m.split_seed = std::stoull(std::string(line.substr(key.size())));
                } catch (const std::exception&) {
                    throw ValidationError(fmt::format("manifest line {}: bad split_seed", line_no));
                }
            }
            continue;
        }
        const auto fields = split_tabs(line);
        if (fields.size() < 2 || fields.size() > 3 || fields[0].empty()) {
            throw ValidationError(fmt::format("manifest line {}: expected <path>\\t<label>[\\t<split>]", line_no));
        }
        ManifestRecord r{std::string(fields[0]), std::string(fields[1]), std::nullopt};
        if (fields.size() == 3) {
            try {
                r.split = parse_split(fields[2]);
            } catch (const ValidationError& e) {
                throw ValidationError(fmt::format("manifest line {}: {}", line_no, e.what()));
            }
        }
        m.records.push_back(std::move(r));
    }
    m.validate();
    return m;
}

std::string format_manifest(const DatasetManifest& manifest) {
    std::string out;
    if (manifest.split_seed) out += fmt::format("# split_seed={}\n", *manifest.split_seed);
    for (const auto& r : manifest.records) {
        out += r.path;
        out += '\t';
        out += r.label;
        if (r.split) {
            out += '\t';
            out += to_string(*r.split);
        }
        out += '\n';
    }
    return out;
}

std::string format_classes(const std::vector<std::string>& classes) {
    std::string out;
    for (const auto& c : classes) out += c + "\n";
    return out;
}

DatasetManifest read_manifest(const std::filesystem::path& manifest, const std::filesystem::path& classes) {
    const auto text = read_file(manifest);
    const auto vocab = read_file(classes);
    try {
        return parse_manifest(std::string_view(reinterpret_cast<const char*>(text.data()), text.size()),
                              parse_classes(std::string_view(reinterpret_cast<const char*>(vocab.data()), vocab.size())));
    } catch (const ValidationError& e) {
        throw ValidationError(manifest.string() + ": " + e.what());
    }
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path,
                    const std::filesystem::path& classes_path) {
    manifest.validate();
    write_file_atomic(classes_path, format_classes(manifest.classes));
    write_file_atomic(path, format_manifest(manifest));
}

DatasetManifest split_dataset(DatasetManifest manifest, double train_fraction, std::uint64_t seed) {
    manifest.validate();
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ConfigError(fmt::format("train fraction {} must lie strictly between 0 and 1", train_fraction));
    }
    std::vector<std::vector<std::size_t>> by_class(manifest.classes.size());
    for (std::size_t i = 0; i < manifest.records.size(); ++i)
        by_class[manifest.class_index(manifest.records[i].label)].push_back(i);

    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& members = by_class[c];
        if (members.empty()) throw ValidationError("class '" + manifest.classes[c] + "' has no records");
        Rng rng(derive_seed(seed, c));
        rng.shuffle(members);
        // The epsilon absorbs representation error in train_fraction * n.
        const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(members.size()) + 1e-9));
        for (std::size_t k = 0; k < members.size(); ++k)
            manifest.records[members[k]].split = k < n_train ? Split::train : Split::val;
    }
    manifest.split_seed = seed;
    return manifest;
}

ScanReport scan_directory(const std::filesystem::path& root, const std::filesystem::path& manifest_dir,
                          const std::vector<std::string>& classes) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw IoError("'" + root.string() + "' is not a directory");

    std::map<std::string, std::size_t> by_normalized;
    for (std::size_t i = 0; i < classes.size(); ++i) by_normalized[normalize_name(classes[i])] = i;

    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());

    ScanReport report;
    std::vector<std::vector<std::string>> files(classes.size());
    const fs::path base = fs::absolute(manifest_dir);
    for (const auto& dir : dirs) {
        const auto it = by_normalized.find(normalize_name(dir.filename().string()));
        if (it == by_normalized.end()) {
            report.warnings.push_back(fmt::format("skipping folder '{}': not a known class", dir.filename().string()));
            continue;
        }
        std::vector<fs::path> entries;
        for (const auto& entry : fs::recursive_directory_iterator(dir))
            if (entry.is_regular_file()) entries.push_back(entry.path());
        std::sort(entries.begin(), entries.end());
        for (const auto& p : entries) {
            if (parse_image_format(p.extension().string()) == ImageFormat::unknown) {
                ++report.skipped_files;
                continue;
            }
            files[it->second].push_back(fs::absolute(p).lexically_relative(base).generic_string());
        }
    }

    for (std::size_t c = 0; c < classes.size(); ++c) {
        if (files[c].empty()) {
            report.warnings.push_back(fmt::format("no images found for class '{}'; it is left out", classes[c]));
            continue;
        }
        report.manifest.classes.push_back(classes[c]);
        report.counts[classes[c]] = files[c].size();
        for (auto& f : files[c]) report.manifest.records.push_back({std::move(f), classes[c], std::nullopt});
    }
    if (report.skipped_files > 0) {
        report.warnings.push_back(fmt::format("skipped {} non-image files", report.skipped_files));
    }
    if (report.manifest.records.empty()) {
        throw IoError("no class folders with images found under '" + root.string() + "'");
    }
    return report;
}

}  // namespace ricenet
