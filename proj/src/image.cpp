#include "ricenet/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>

#include <fmt/format.h>
#include <jpeglib.h>
#include <png.h>

namespace ricenet {

std::string_view to_string(ImageFormat format) {
    switch (format) {
        case ImageFormat::ppm: return "ppm";
        case ImageFormat::png: return "png";
        case ImageFormat::jpeg: return "jpeg";
        case ImageFormat::unknown: break;
    }
    return "unknown";
}

ImageFormat parse_image_format(std::string_view hint) {
    std::string h(hint);
    std::transform(h.begin(), h.end(), h.begin(), [](unsigned char c) { return std::tolower(c); });
    if (auto semi = h.find(';'); semi != std::string::npos) h.resize(semi);
    while (!h.empty() && std::isspace(static_cast<unsigned char>(h.back()))) h.pop_back();
    if (h.starts_with("image/")) h = h.substr(6);
    if (h.starts_with(".")) h = h.substr(1);
    if (h == "png") return ImageFormat::png;
    if (h == "jpeg" || h == "jpg" || h == "pjpeg") return ImageFormat::jpeg;
    if (h == "ppm" || h == "x-portable-pixmap" || h == "pnm") return ImageFormat::ppm;
    return ImageFormat::unknown;
}

ImageFormat sniff_image_format(std::span<const std::uint8_t> b) {
    if (b.size() >= 8 && b[0] == 0x89 && b[1] == 'P' && b[2] == 'N' && b[3] == 'G') return ImageFormat::png;
    if (b.size() >= 3 && b[0] == 0xFF && b[1] == 0xD8 && b[2] == 0xFF) return ImageFormat::jpeg;
    if (b.size() >= 2 && b[0] == 'P' && b[1] >= '1' && b[1] <= '7') return ImageFormat::ppm;
    return ImageFormat::unknown;
}

namespace {

class PpmReader {
public:
    explicit PpmReader(std::span<const std::uint8_t> bytes) : b_(bytes) {}

    void skip_space_and_comments() {
        while (pos_ < b_.size()) {
            if (std::isspace(b_[pos_])) {
                ++pos_;
            } else if (b_[pos_] == '#') {
                while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    std::size_t number(const char* what) {
        skip_space_and_comments();
        if (pos_ >= b_.size()) throw DecodeError(fmt::format("ppm: truncated header, expected {}", what), pos_);
        if (!std::isdigit(b_[pos_])) throw DecodeError(fmt::format("ppm: expected {}", what), pos_);
        std::size_t v = 0;
        while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
            v = v * 10 + (b_[pos_] - '0');
            if (v > 1u << 24) throw DecodeError(fmt::format("ppm: {} too large", what), pos_);
            ++pos_;
        }
        return v;
    }

    std::size_t& pos() { return pos_; }

private:
    std::span<const std::uint8_t> b_;
    std::size_t pos_ = 0;
};

ImageTensor from_interleaved_rgb(const std::uint8_t* px, std::size_t h, std::size_t w) {
    ImageTensor img({3, h, w});
    const std::size_t plane = h * w;
    for (std::size_t i = 0; i < plane; ++i)
        for (std::size_t c = 0; c < 3; ++c) img[c * plane + i] = static_cast<float>(px[i * 3 + c]);
    return img;
}

ImageTensor decode_png(std::span<const std::uint8_t> bytes) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
        std::string msg = image.message;
        png_image_free(&image);
        throw DecodeError("png: " + msg, 0);
    }
    image.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw DecodeError("png: " + msg, 0);
    }
    return from_interleaved_rgb(buffer.data(), image.height, image.width);
}

struct JpegErrorManager {
    jpeg_error_mgr base;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

// Corrupt-data warnings (e.g. premature end of file) are treated as hard errors; trace messages are dropped.
void jpeg_silence(j_common_ptr cinfo, int level) {
    if (level < 0) jpeg_error_exit(cinfo);
}

struct JpegOutcome {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t error_offset = 0;
    bool ok = false;
};

// Only trivially destructible locals live in this frame; `pixels` belongs to the caller,
// so the longjmp out of libjpeg cannot skip a destructor.
JpegOutcome jpeg_decode_into(std::span<const std::uint8_t> bytes, std::vector<std::uint8_t>* pixels,
                             JpegErrorManager* err) {
    jpeg_decompress_struct cinfo{};
    cinfo.err = jpeg_std_error(&err->base);
    err->base.error_exit = jpeg_error_exit;
    err->base.emit_message = jpeg_silence;
    JpegOutcome outcome;
    if (setjmp(err->jump)) {
        outcome.error_offset = cinfo.src ? bytes.size() - cinfo.src->bytes_in_buffer : 0;
        jpeg_destroy_decompress(&cinfo);
        return outcome;
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    const std::size_t width = cinfo.output_width;
    pixels->resize(static_cast<std::size_t>(cinfo.output_height) * width * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = pixels->data() + static_cast<std::size_t>(cinfo.output_scanline) * width * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    outcome.height = cinfo.output_height;
    outcome.width = width;
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    outcome.ok = true;
    return outcome;
}

ImageTensor decode_jpeg(std::span<const std::uint8_t> bytes) {
    std::vector<std::uint8_t> pixels;
    JpegErrorManager err{};
    const JpegOutcome r = jpeg_decode_into(bytes, &pixels, &err);
    if (!r.ok) throw DecodeError(std::string("jpeg: ") + err.message, r.error_offset);
    return from_interleaved_rgb(pixels.data(), r.height, r.width);
}

}  // namespace

ImageTensor decode_ppm(std::span<const std::uint8_t> bytes) {
    if (bytes.empty()) throw DecodeError("ppm: empty input", 0);
    if (bytes.size() < 2 || bytes[0] != 'P') throw DecodeError("ppm: missing 'P' magic", 0);
    if (bytes[1] != '6') throw UnsupportedFormatError(fmt::format("ppm: variant P{} is not supported, only P6",
                                                                  static_cast<char>(bytes[1])));
    PpmReader r(bytes);
    r.pos() = 2;
    const std::size_t width = r.number("width");
    const std::size_t height = r.number("height");
    const std::size_t maxval = r.number("maxval");
    if (width == 0 || height == 0) throw DecodeError("ppm: zero image dimension", r.pos());
    if (maxval != 255) throw UnsupportedFormatError(fmt::format("ppm: maxval {} is not supported, only 255", maxval));
    if (r.pos() >= bytes.size() || !std::isspace(bytes[r.pos()])) {
        throw DecodeError("ppm: expected a single whitespace byte after maxval", r.pos());
    }
    const std::size_t start = r.pos() + 1;
    const std::size_t need = width * height * 3;
    if (bytes.size() - start < need) {
        throw DecodeError(fmt::format("ppm: truncated pixel data, need {} bytes, have {}", need, bytes.size() - start),
                          bytes.size());
    }
    return from_interleaved_rgb(bytes.data() + start, height, width);
}

ImageTensor decode_image(std::span<const std::uint8_t> bytes, ImageFormat hint) {
    if (bytes.empty()) throw DecodeError("empty image data", 0);
    const ImageFormat format = hint == ImageFormat::unknown ? sniff_image_format(bytes) : hint;
    switch (format) {
        case ImageFormat::ppm: return decode_ppm(bytes);
        case ImageFormat::png: return decode_png(bytes);
        case ImageFormat::jpeg: return decode_jpeg(bytes);
        case ImageFormat::unknown: break;
    }
    throw UnsupportedFormatError("unrecognized image format");
}

std::vector<std::uint8_t> encode_ppm(const ImageTensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw ShapeError("encode_ppm: expected [3, h, w], got " + format_shape(image.shape()));
    }
    const std::size_t h = image.dim(1), w = image.dim(2), plane = h * w;
    const std::string header = fmt::format("P6\n{} {}\n255\n", w, h);
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + plane * 3);
    for (std::size_t i = 0; i < plane; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            const float v = std::clamp(image[c * plane + i], 0.0f, 1.0f) * 255.0f;
            out.push_back(static_cast<std::uint8_t>(std::lround(v)));
        }
    }
    return out;
}

ImageTensor resize(const ImageTensor& image, std::size_t height, std::size_t width) {
    if (height == 0 || width == 0) throw ShapeError("resize: target dimensions must be >= 1");
    if (image.rank() != 3) throw ShapeError("resize: expected [c, h, w], got " + format_shape(image.shape()));
    const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
    if (H == height && W == width) return image;

    // Source coordinate of each destination row/column (half-pixel centres, clamped).
    auto sample_points = [](std::size_t src, std::size_t dst) {
        std::vector<std::pair<std::size_t, float>> pts(dst);
        const double ratio = static_cast<double>(src) / static_cast<double>(dst);
        for (std::size_t i = 0; i < dst; ++i) {
            double s = (static_cast<double>(i) + 0.5) * ratio - 0.5;
            s = std::clamp(s, 0.0, static_cast<double>(src - 1));
            const auto i0 = static_cast<std::size_t>(std::floor(s));
            pts[i] = {i0, static_cast<float>(s - static_cast<double>(i0))};
        }
        return pts;
    };
    const auto ys = sample_points(H, height);
    const auto xs = sample_points(W, width);

    ImageTensor out({C, height, width});
    for (std::size_t c = 0; c < C; ++c) {
        const float* src = image.data() + c * H * W;
        float* dst = out.data() + c * height * width;
        for (std::size_t y = 0; y < height; ++y) {
            const auto [y0, fy] = ys[y];
            const std::size_t y1 = std::min(y0 + 1, H - 1);
            for (std::size_t x = 0; x < width; ++x) {
                const auto [x0, fx] = xs[x];
                const std::size_t x1 = std::min(x0 + 1, W - 1);
                const float top = lerp_clamped(src[y0 * W + x0], src[y0 * W + x1], fx);
                const float bottom = lerp_clamped(src[y1 * W + x0], src[y1 * W + x1], fx);
                dst[y * width + x] = lerp_clamped(top, bottom, fy);
            }
        }
    }
    return out;
}

ImageTensor rescale_intensity(const ImageTensor& raw) {
    return scale(raw, 1.0f / 255.0f);
}

ImageTensor preprocess(const ImageTensor& raw, std::size_t height, std::size_t width) {
    return rescale_intensity(resize(raw, height, width));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("error reading '" + path.string() + "'");
    return data;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write '" + tmp.string() + "'");
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            out.close();
            std::filesystem::remove(tmp);
            throw IoError("error writing '" + tmp.string() + "'");
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw IoError("cannot move '" + tmp.string() + "' into place: " + ec.message());
    }
}

void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
    write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

ImageTensor load_image(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    try {
        return decode_image(bytes, parse_image_format(path.extension().string()));
    } catch (const DecodeError& e) {
        throw DecodeError(path.string() + ": " + e.detail(), e.offset());
    } catch (const UnsupportedFormatError& e) {
        throw UnsupportedFormatError(path.string() + ": " + e.what());
    }
}

}  // namespace ricenet
