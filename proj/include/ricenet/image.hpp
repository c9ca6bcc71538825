#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ricenet/tensor.hpp"

namespace ricenet {

/// [3, height, width], RGB. Raw decodes hold 0..255; preprocessed images hold [0, 1].
using ImageTensor = Tensorf;

enum class ImageFormat { unknown, ppm, png, jpeg };

std::string_view to_string(ImageFormat format);

/// Accepts MIME types ("image/png"), extensions (".jpg") or bare names ("jpeg").
ImageFormat parse_image_format(std::string_view hint);
ImageFormat sniff_image_format(std::span<const std::uint8_t> bytes);

class DecodeError : public std::runtime_error {
public:
    DecodeError(const std::string& message, std::size_t offset)
        : std::runtime_error(message + " (at byte " + std::to_string(offset) + ")"), detail_(message), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    std::string detail_;
    std::size_t offset_;
};

class UnsupportedFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Decodes PPM (P6, maxval 255), PNG or JPEG. With an unknown hint the format is sniffed from the bytes.
ImageTensor decode_image(std::span<const std::uint8_t> bytes, ImageFormat hint = ImageFormat::unknown);

/// P6 decoder. Throws DecodeError on malformed or truncated input, UnsupportedFormatError for
/// anything other than binary RGB with maxval 255.
ImageTensor decode_ppm(std::span<const std::uint8_t> bytes);

/// Writes a [0, 1] image as P6 with maxval 255 (values rounded to the nearest level).
std::vector<std::uint8_t> encode_ppm(const ImageTensor& image);

/// Bilinear resample with half-pixel centres and edge clamping. Aspect ratio is not preserved.
ImageTensor resize(const ImageTensor& image, std::size_t height, std::size_t width);

/// Multiplies every value by 1/255.
ImageTensor rescale_intensity(const ImageTensor& raw);

/// resize + rescale_intensity: the fixed path every image takes before the network.
ImageTensor preprocess(const ImageTensor& raw, std::size_t height, std::size_t width);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

ImageTensor load_image(const std::filesystem::path& path);

/// a + t * (b - a), clamped to the closed interval spanned by a and b.
inline float lerp_clamped(float a, float b, float t) {
    const float v = a + t * (b - a);
    const float lo = a < b ? a : b;
    const float hi = a < b ? b : a;
    return v < lo ? lo : (v > hi ? hi : v);
}

}  // namespace ricenet
