#include "synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <jpeglib.h>
#include <png.h>

namespace ricenet::testing {

Palette warm_palette() {
    return {{{0.9f, 0.2f, 0.15f}, {0.2f, 0.8f, 0.25f}, {0.2f, 0.3f, 0.9f}}, {0.1f, 0.1f, 0.1f}, 0.05f};
}

Palette cool_palette() {
    return {{{0.95f, 0.9f, 0.2f}, {0.2f, 0.85f, 0.9f}, {0.85f, 0.25f, 0.85f}}, {0.15f, 0.12f, 0.18f}, 0.05f};
}

namespace {

bool inside(Blob kind, double dx, double dy, double r) {
    switch (kind) {
        case Blob::circle: return dx * dx + dy * dy <= r * r;
        case Blob::square: return std::abs(dx) <= r * 0.85 && std::abs(dy) <= r * 0.85;
        case Blob::triangle: {
            // Upward triangle: apex at -r, base at +r.
            if (dy < -r || dy > r) return false;
            const double half = (dy + r) / 2.0;
            return std::abs(dx) <= half;
        }
        case Blob::cross: return (std::abs(dx) <= r * 0.3 && std::abs(dy) <= r) || (std::abs(dy) <= r * 0.3 && std::abs(dx) <= r);
    }
    return false;
}

}  // namespace

ImageTensor render_blob(Blob kind, std::size_t size, const Palette& palette, Rng& rng) {
    const double s = static_cast<double>(size);
    const double r = s * rng.uniform(0.22, 0.32);
    const double cx = s / 2.0 + rng.uniform(-0.12, 0.12) * s;
    const double cy = s / 2.0 + rng.uniform(-0.12, 0.12) * s;
    const Rgb fg = palette.foreground[rng.below(palette.foreground.size())];
    ImageTensor img({3, size, size});
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const bool on = inside(kind, static_cast<double>(x) + 0.5 - cx, static_cast<double>(y) + 0.5 - cy, r);
            for (std::size_t c = 0; c < 3; ++c) {
                const float base = on ? fg[c] : palette.background[c];
                const float noise = static_cast<float>(rng.uniform(-palette.noise, palette.noise));
                img[(c * size + y) * size + x] = std::clamp(base + noise, 0.0f, 1.0f);
            }
        }
    }
    return img;
}

SyntheticSet make_blob_set(const std::vector<Blob>& kinds, std::size_t per_class, std::size_t size,
                           const Palette& palette, std::uint64_t seed) {
    SyntheticSet set;
    Rng rng(seed);
    for (std::size_t i = 0; i < per_class; ++i) {
        for (std::size_t k = 0; k < kinds.size(); ++k) {
            set.images.push_back(render_blob(kinds[k], size, palette, rng));
            set.labels.push_back(k);
        }
    }
    return set;
}

std::vector<std::uint8_t> encode_png(const ImageTensor& image) {
    const std::size_t h = image.dim(1), w = image.dim(2), plane = h * w;
    std::vector<std::uint8_t> rgb(plane * 3);
    for (std::size_t i = 0; i < plane; ++i)
        for (std::size_t c = 0; c < 3; ++c)
            rgb[i * 3 + c] = static_cast<std::uint8_t>(std::lround(std::clamp(image[c * plane + i], 0.0f, 1.0f) * 255.0f));
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(w);
    png.height = static_cast<png_uint_32>(h);
    png.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    png_image_write_to_memory(&png, nullptr, &size, 0, rgb.data(), 0, nullptr);
    std::vector<std::uint8_t> out(size);
    png_image_write_to_memory(&png, out.data(), &size, 0, rgb.data(), 0, nullptr);
    out.resize(size);
    return out;
}

std::vector<std::uint8_t> encode_jpeg(const ImageTensor& image, int quality) {
    const std::size_t h = image.dim(1), w = image.dim(2), plane = h * w;
    std::vector<std::uint8_t> rgb(plane * 3);
    for (std::size_t i = 0; i < plane; ++i)
        for (std::size_t c = 0; c < 3; ++c)
            rgb[i * 3 + c] = static_cast<std::uint8_t>(std::lround(std::clamp(image[c * plane + i], 0.0f, 1.0f) * 255.0f));
    jpeg_compress_struct cinfo{};
    jpeg_error_mgr err{};
    cinfo.err = jpeg_std_error(&err);
    jpeg_create_compress(&cinfo);
    unsigned char* mem = nullptr;
    unsigned long mem_size = 0;
    jpeg_mem_dest(&cinfo, &mem, &mem_size);
    cinfo.image_width = static_cast<JDIMENSION>(w);
    cinfo.image_height = static_cast<JDIMENSION>(h);
    cinfo.input_components = 3;
    cinfo.in_color_space = JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    jpeg_start_compress(&cinfo, TRUE);
    while (cinfo.next_scanline < cinfo.image_height) {
        JSAMPROW row = rgb.data() + static_cast<std::size_t>(cinfo.next_scanline) * w * 3;
        jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
    std::vector<std::uint8_t> out(mem, mem + mem_size);
    jpeg_destroy_compress(&cinfo);
    std::free(mem);
    return out;
}

void write_blob_tree(const std::filesystem::path& root, const std::vector<std::string>& folders,
                     std::size_t per_class, std::size_t size, std::uint64_t seed) {
    const std::vector<Blob> kinds{Blob::circle, Blob::square, Blob::triangle, Blob::cross};
    const Palette palette = warm_palette();
    Rng rng(seed);
    for (std::size_t k = 0; k < folders.size(); ++k) {
        const auto dir = root / folders[k];
        std::filesystem::create_directories(dir);
        for (std::size_t i = 0; i < per_class; ++i) {
            const auto img = render_blob(kinds[k % kinds.size()], size, palette, rng);
            switch (i % 3) {
                case 0: write_file_atomic(dir / (std::to_string(i) + ".ppm"), encode_ppm(img)); break;
                case 1: write_file_atomic(dir / (std::to_string(i) + ".png"), encode_png(img)); break;
                default: write_file_atomic(dir / (std::to_string(i) + ".jpg"), encode_jpeg(img)); break;
            }
        }
    }
}

}  // namespace ricenet::testing
