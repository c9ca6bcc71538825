#pragma once

#include <cstdint>

#include "ricenet/image.hpp"
#include "ricenet/random.hpp"

namespace ricenet {

/// Training-time augmentation. Intensity rescaling to [0, 1] is not part of this: every
/// image gets it in `preprocess`.
struct AugmentSpec {
    bool horizontal_flip = true;
    double flip_probability = 0.5;
    bool shear = true;
    /// Shear factors are drawn uniformly from [-shear_range, shear_range].
    double shear_range = 0.2;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const AugmentSpec&) const = default;
};

ImageTensor flip_horizontal(const ImageTensor& image);

/// Horizontal shear x' = x + factor * y about the top-left corner. Each output row is
/// resampled linearly from the source row; positions outside the source read as zero.
ImageTensor shear_horizontal(const ImageTensor& image, double factor);

/// Optional flip, then optional shear, drawing from `draw` in that order.
ImageTensor augment(const ImageTensor& image, const AugmentSpec& spec, Rng& draw);

}  // namespace ricenet
