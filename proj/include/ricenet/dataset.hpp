#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ricenet/augment.hpp"
#include "ricenet/image.hpp"
#include "ricenet/manifest.hpp"

namespace ricenet {

/// Random-access source of preprocessed [3, H, W] images in [0, 1] with class indices.
class Dataset {
public:
    virtual ~Dataset() = default;

    virtual std::size_t size() const = 0;
    virtual std::size_t num_classes() const = 0;
    virtual std::size_t label(std::size_t index) const = 0;
    virtual ImageTensor image(std::size_t index) const = 0;
    /// Human-readable identity of a record for error messages.
    virtual std::string describe(std::size_t index) const { return "#" + std::to_string(index); }
};

class InMemoryDataset final : public Dataset {
public:
    InMemoryDataset(std::vector<ImageTensor> images, std::vector<std::size_t> labels, std::size_t num_classes);

    std::size_t size() const override { return images_.size(); }
    std::size_t num_classes() const override { return num_classes_; }
    std::size_t label(std::size_t index) const override { return labels_.at(index); }
    ImageTensor image(std::size_t index) const override { return images_.at(index); }

private:
    std::vector<ImageTensor> images_;
    std::vector<std::size_t> labels_;
    std::size_t num_classes_;
};

/// Records of one split (or all records) of a manifest, decoded from disk on every access.
class ManifestDataset final : public Dataset {
public:
    ManifestDataset(const DatasetManifest& manifest, std::optional<Split> split, std::filesystem::path base_dir,
                    std::size_t height, std::size_t width);

    std::size_t size() const override { return records_.size(); }
    std::size_t num_classes() const override { return num_classes_; }
    std::size_t label(std::size_t index) const override { return labels_.at(index); }
    /// Throws IoError naming the path when the file cannot be read or decoded.
    ImageTensor image(std::size_t index) const override;
    std::string describe(std::size_t index) const override { return path(index).string(); }

    std::filesystem::path path(std::size_t index) const { return base_dir_ / records_.at(index).path; }

private:
    std::vector<ManifestRecord> records_;
    std::vector<std::size_t> labels_;
    std::size_t num_classes_;
    std::filesystem::path base_dir_;
    std::size_t height_;
    std::size_t width_;
};

/// [n] row of zeros with a single 1 at `index`.
Tensorf one_hot(std::size_t index, std::size_t n);

struct BatchOptions {
    std::size_t batch_size = 32;
    bool shuffle = true;
    std::uint64_t seed = 0;
    /// Applied per record when set; callers enable it only for the training split.
    std::optional<AugmentSpec> augment;
};

struct Batch {
    Tensorf images;                    ///< [b, 3, H, W]
    Tensorf targets;                   ///< [b, num_classes] one-hot
    std::vector<std::size_t> labels;
    std::vector<std::size_t> indices;  ///< dataset indices, in batch order
};

/// Record order for one epoch: identity without shuffling, otherwise a seeded permutation.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch, bool shuffle);

/**
 * One epoch of minibatches. The last batch may be short. Augmentation draws for a record depend
 * only on (augment seed, epoch, record index), so they are independent of batch composition.
 */
class BatchStream {
public:
    BatchStream(const Dataset& dataset, BatchOptions options, std::size_t epoch);

    std::optional<Batch> next();
    std::size_t num_batches() const;

private:
    const Dataset& dataset_;
    BatchOptions options_;
    std::size_t epoch_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
};

}  // namespace ricenet
