#include "ricenet/augment.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace ricenet {

void AugmentSpec::validate() const {
    if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) {
        throw ConfigError(fmt::format("flip probability {} outside [0, 1]", flip_probability));
    }
    if (!std::isfinite(shear_range) || shear_range < 0.0) {
        throw ConfigError(fmt::format("shear range {} must be finite and non-negative", shear_range));
    }
}

namespace {

void require_image(const ImageTensor& image, const char* op) {
    if (image.rank() != 3) throw ShapeError(fmt::format("{}: expected [c, h, w], got {}", op, format_shape(image.shape())));
}

}  // namespace

ImageTensor flip_horizontal(const ImageTensor& image) {
    require_image(image, "flip_horizontal");
    const std::size_t rows = image.dim(0) * image.dim(1), w = image.dim(2);
    ImageTensor out(image.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const float* src = image.data() + r * w;
        float* dst = out.data() + r * w;
        for (std::size_t x = 0; x < w; ++x) dst[x] = src[w - 1 - x];
    }
    return out;
}

ImageTensor shear_horizontal(const ImageTensor& image, double factor) {
    require_image(image, "shear_horizontal");
    const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
    ImageTensor out(image.shape());
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t y = 0; y < H; ++y) {
            const float* src = image.data() + (c * H + y) * W;
            float* dst = out.data() + (c * H + y) * W;
            const double shift = factor * static_cast<double>(y);
            auto at = [&](std::ptrdiff_t i) {
                return i < 0 || i >= static_cast<std::ptrdiff_t>(W) ? 0.0f : src[i];
            };
            for (std::size_t x = 0; x < W; ++x) {
                const double u = static_cast<double>(x) - shift;
                const double base = std::floor(u);
                const auto i0 = static_cast<std::ptrdiff_t>(base);
                const auto f = static_cast<float>(u - base);
                dst[x] = f == 0.0f ? at(i0) : lerp_clamped(at(i0), at(i0 + 1), f);
            }
        }
    }
    return out;
}

ImageTensor augment(const ImageTensor& image, const AugmentSpec& spec, Rng& draw) {
    ImageTensor out = image;
    if (spec.horizontal_flip && draw.bernoulli(spec.flip_probability)) out = flip_horizontal(out);
    if (spec.shear) {
        const double factor = draw.uniform(-spec.shear_range, spec.shear_range);
        out = shear_horizontal(out, factor);
    }
    return out;
}

}  // namespace ricenet
