#include "ricenet/dataset.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>

namespace ricenet {

InMemoryDataset::InMemoryDataset(std::vector<ImageTensor> images, std::vector<std::size_t> labels,
                                 std::size_t num_classes)
    : images_(std::move(images)), labels_(std::move(labels)), num_classes_(num_classes) {
    if (images_.size() != labels_.size()) {
        throw ValidationError(fmt::format("{} images but {} labels", images_.size(), labels_.size()));
    }
    for (auto l : labels_)
        if (l >= num_classes_) throw ValidationError(fmt::format("label {} out of range for {} classes", l, num_classes_));
}

ManifestDataset::ManifestDataset(const DatasetManifest& manifest, std::optional<Split> split,
                                 std::filesystem::path base_dir, std::size_t height, std::size_t width)
    : num_classes_(manifest.classes.size()), base_dir_(std::move(base_dir)), height_(height), width_(width) {
    manifest.validate();
    if (split && !manifest.is_split()) throw ValidationError("manifest has no split tags");
    for (const auto& r : manifest.records) {
        if (split && r.split != split) continue;
        records_.push_back(r);
        labels_.push_back(manifest.class_index(r.label));
    }
}

ImageTensor ManifestDataset::image(std::size_t index) const {
    const auto p = path(index);
    try {
        return preprocess(load_image(p), height_, width_);
    } catch (const IoError&) {
        throw;
    } catch (const std::exception& e) {
        throw IoError(fmt::format("cannot load '{}': {}", p.string(), e.what()));
    }
}

Tensorf one_hot(std::size_t index, std::size_t n) {
    if (index >= n) throw ValidationError(fmt::format("class index {} out of range for {} classes", index, n));
    Tensorf t({n});
    t[index] = 1.0f;
    return t;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch, bool shuffle) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (shuffle) {
        Rng rng(derive_seed(seed, epoch, 0x5EED));
        rng.shuffle(order);
    }
    return order;
}

BatchStream::BatchStream(const Dataset& dataset, BatchOptions options, std::size_t epoch)
    : dataset_(dataset), options_(std::move(options)), epoch_(epoch) {
    if (options_.batch_size == 0) throw ConfigError("batch size must be >= 1");
    if (options_.augment) options_.augment->validate();
    order_ = epoch_order(dataset_.size(), options_.seed, epoch_, options_.shuffle);
}

std::size_t BatchStream::num_batches() const {
    return (order_.size() + options_.batch_size - 1) / options_.batch_size;
}

std::optional<Batch> BatchStream::next() {
    if (cursor_ >= order_.size()) return std::nullopt;
    const std::size_t end = std::min(order_.size(), cursor_ + options_.batch_size);
    const std::size_t classes = dataset_.num_classes();

    Batch batch;
    std::vector<ImageTensor> images;
    for (std::size_t k = cursor_; k < end; ++k) {
        const std::size_t idx = order_[k];
        ImageTensor img = dataset_.image(idx);
        if (options_.augment) {
            Rng draw(derive_seed(options_.augment->seed, epoch_, idx));
            img = augment(img, *options_.augment, draw);
        }
        if (!images.empty() && img.shape() != images.front().shape()) {
            throw ShapeError(fmt::format("record {} has shape {}, batch expects {}", dataset_.describe(idx),
                                         format_shape(img.shape()), format_shape(images.front().shape())));
        }
        images.push_back(std::move(img));
        batch.labels.push_back(dataset_.label(idx));
        batch.indices.push_back(idx);
    }
    cursor_ = end;

    const std::size_t b = images.size();
    const std::size_t per = images.front().size();
    Shape shape{b};
    shape.insert(shape.end(), images.front().shape().begin(), images.front().shape().end());
    batch.images = Tensorf(shape);
    batch.targets = Tensorf({b, classes});
    for (std::size_t i = 0; i < b; ++i) {
        std::copy(images[i].data(), images[i].data() + per, batch.images.data() + i * per);
        batch.targets.at(i, batch.labels[i]) = 1.0f;
    }
    return batch;
}

}  // namespace ricenet
