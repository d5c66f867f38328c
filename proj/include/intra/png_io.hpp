#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "intra/errors.hpp"
#include "intra/image.hpp"

namespace intra {

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw IoError("cannot open '" + path.string() + "'");
    return f;
}

// libpng reports errors through longjmp; the message is stashed here first.
struct PngErrorSink {
    std::string message;
};

inline void png_error_fn(png_structp png, png_const_charp msg) {
    if (auto* sink = static_cast<PngErrorSink*>(png_get_error_ptr(png))) sink->message = msg;
    png_longjmp(png, 1);
}

inline void png_warning_fn(png_structp, png_const_charp) {}

}  // namespace detail

/// Decodes an 8- or 16-bit PNG (grey, grey+alpha, RGB, RGBA or palette) to a
/// unit-range image with 1 (grey) or 3 (colour) channels; alpha is dropped.
inline Image read_png(const std::filesystem::path& path) {
    auto file = detail::open_file(path, "rb");
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) throw FormatError("'" + path.string() + "' is not a PNG file", 0);

    detail::PngErrorSink sink;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &sink, detail::png_error_fn, detail::png_warning_fn);
    if (!png) throw IoError("png: cannot allocate decoder");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png: cannot allocate decoder");
    }
    Image img;
    std::vector<png_bytep> rows;
    std::vector<unsigned char> buffer;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("'" + path.string() + "': " + sink.message, 0);
    }
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const png_uint_32 w = png_get_image_width(png, info), h = png_get_image_height(png, info);
    const int depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    if (depth == 16) png_set_swap(png);  // host order (little-endian)
    png_read_update_info(png, info);
    const std::size_t channels = png_get_channels(png, info);
    const int out_depth = png_get_bit_depth(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    buffer.resize(stride * h);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = buffer.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    if (channels != 1 && channels != 3) throw FormatError("'" + path.string() + "': unsupported channel count " + std::to_string(channels), 0);
    img = Image(h, w, channels);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t i = 0; i < w * channels; ++i) {
            float v;
            if (out_depth == 16) {
                std::uint16_t s;
                std::memcpy(&s, rows[y] + 2 * i, 2);
                v = static_cast<float>(s) / 65535.0f;
            } else {
                v = static_cast<float>(rows[y][i]) / 255.0f;
            }
            img.data[y * w * channels + i] = v;
        }
    }
    return img;
}

/// Writes an 8-bit grey (1 channel) or RGB (3 channels) PNG; values are
/// clamped to [0, 1] and rounded.
inline void write_png(const std::filesystem::path& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3) throw ValueError("write_png: need 1 or 3 channels, got " + std::to_string(img.channels));
    if (img.height == 0 || img.width == 0) throw ValueError("write_png: empty image");
    std::vector<unsigned char> buffer(img.data.size());
    for (std::size_t i = 0; i < buffer.size(); ++i) {
        const float v = std::clamp(img.data[i], 0.0f, 1.0f);
        buffer[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    auto file = detail::open_file(path, "wb");
    detail::PngErrorSink sink;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &sink, detail::png_error_fn, detail::png_warning_fn);
    if (!png) throw IoError("png: cannot allocate encoder");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png: cannot allocate encoder");
    }
    std::vector<png_bytep> rows(img.height);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("'" + path.string() + "': " + sink.message);
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < img.height; ++y) rows[y] = buffer.data() + y * img.width * img.channels;
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

/// Reads a ground-truth mask: any decoded value of at least 0.5 is anomalous.
inline Mask read_mask(const std::filesystem::path& path) {
    const Image img = read_png(path);
    Mask m(img.height, img.width);
    for (std::size_t i = 0; i < img.pixels(); ++i) {
        float v = 0.0f;
        for (std::size_t c = 0; c < img.channels; ++c) v += img.data[i * img.channels + c];
        m.data[i] = v / static_cast<float>(img.channels) >= 0.5f ? 1 : 0;
    }
    return m;
}

inline void write_mask(const std::filesystem::path& path, const Mask& m) {
    Image img(m.height, m.width, 1);
    for (std::size_t i = 0; i < m.data.size(); ++i) img.data[i] = m.data[i] ? 1.0f : 0.0f;
    write_png(path, img);
}

}  // namespace intra
