#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <vector>

#include "intra/errors.hpp"

namespace intra {

/// H x W x C image (or single-channel map), row-major, channel-last.
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::vector<float> data;

    Image() = default;
    Image(std::size_t h, std::size_t w, std::size_t c, float fill = 0.0f) : height(h), width(w), channels(c), data(h * w * c, fill) {}

    std::size_t pixels() const noexcept { return height * width; }
    float at(std::size_t y, std::size_t x, std::size_t c = 0) const { return data[(y * width + x) * channels + c]; }
    float& at(std::size_t y, std::size_t x, std::size_t c = 0) { return data[(y * width + x) * channels + c]; }
    bool same_shape(const Image& o) const { return height == o.height && width == o.width && channels == o.channels; }

    friend bool operator==(const Image&, const Image&) = default;
};

/// Binary ground-truth mask; 1 marks anomalous pixels.
struct Mask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> data;

    Mask() = default;
    Mask(std::size_t h, std::size_t w) : height(h), width(w), data(h * w, 0) {}
    std::uint8_t at(std::size_t y, std::size_t x) const { return data[y * width + x]; }

    friend bool operator==(const Mask&, const Mask&) = default;
};

/// Mirror index without repeating the edge sample (d c b | a b c d | c b a),
/// folding as often as needed for offsets wider than the signal.
inline std::size_t reflect_index(long i, std::size_t n) {
    if (n == 1) return 0;
    const long period = 2 * static_cast<long>(n) - 2;
    long m = i % period;
    if (m < 0) m += period;
    if (m >= static_cast<long>(n)) m = period - m;
    return static_cast<std::size_t>(m);
}

/// Normalized 1-D Gaussian taps, centred, `size` odd.
inline std::vector<double> gaussian_taps(std::size_t size, double sigma) {
    if (size % 2 == 0) throw ValueError("gaussian_taps: kernel size must be odd, got " + std::to_string(size));
    std::vector<double> k(size);
    const double r = static_cast<double>(size / 2);
    double total = 0.0;
    for (std::size_t i = 0; i < size; ++i) {
        const double x = static_cast<double>(i) - r;
        k[i] = std::exp(-(x * x) / (2.0 * sigma * sigma));
        total += k[i];
    }
    for (double& v : k) v /= total;
    return k;
}

inline std::vector<double> box_taps(std::size_t size) {
    if (size % 2 == 0) throw ValueError("box_taps: kernel size must be odd, got " + std::to_string(size));
    return std::vector<double>(size, 1.0 / static_cast<double>(size));
}

/// Single-channel plane in double precision, used for filter arithmetic.
struct Plane {
    std::size_t height = 0, width = 0;
    std::vector<double> data;
    Plane() = default;
    Plane(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), data(h * w, fill) {}
    double& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
    double at(std::size_t y, std::size_t x) const { return data[y * width + x]; }
};

inline Plane channel_plane(const Image& img, std::size_t c) {
    Plane p(img.height, img.width);
    for (std::size_t i = 0; i < img.pixels(); ++i) p.data[i] = img.data[i * img.channels + c];
    return p;
}

/// Separable correlation with centred taps and mirror padding: `col_taps`
/// runs down the rows (vertical), `row_taps` along each row (horizontal).
inline Plane filter_separable(const Plane& in, const std::vector<double>& col_taps, const std::vector<double>& row_taps) {
    const long rc = static_cast<long>(col_taps.size() / 2);
    const long rr = static_cast<long>(row_taps.size() / 2);
    Plane tmp(in.height, in.width), out(in.height, in.width);
    for (std::size_t y = 0; y < in.height; ++y) {
        for (std::size_t x = 0; x < in.width; ++x) {
            double s = 0.0;
            for (long o = -rr; o <= rr; ++o) s += row_taps[static_cast<std::size_t>(o + rr)] * in.at(y, reflect_index(static_cast<long>(x) + o, in.width));
            tmp.at(y, x) = s;
        }
    }
    for (std::size_t y = 0; y < in.height; ++y) {
        for (std::size_t x = 0; x < in.width; ++x) {
            double s = 0.0;
            for (long o = -rc; o <= rc; ++o) s += col_taps[static_cast<std::size_t>(o + rc)] * tmp.at(reflect_index(static_cast<long>(y) + o, in.height), x);
            out.at(y, x) = s;
        }
    }
    return out;
}

inline Image filter_separable(const Image& img, const std::vector<double>& col_taps, const std::vector<double>& row_taps) {
    Image out(img.height, img.width, img.channels);
    for (std::size_t c = 0; c < img.channels; ++c) {
        const Plane f = filter_separable(channel_plane(img, c), col_taps, row_taps);
        for (std::size_t i = 0; i < img.pixels(); ++i) out.data[i * img.channels + c] = static_cast<float>(f.data[i]);
    }
    return out;
}

/// Bilinear resampling with half-pixel centres and edge clamping. An exact
/// factor-2 downscale averages each 2x2 block.
inline Image resize_bilinear(const Image& img, std::size_t out_h, std::size_t out_w) {
    if (out_h == 0 || out_w == 0) throw ValueError("resize_bilinear: zero target size");
    if (img.height == out_h && img.width == out_w) return img;
    Image out(out_h, out_w, img.channels);
    const double sy = static_cast<double>(img.height) / static_cast<double>(out_h);
    const double sx = static_cast<double>(img.width) / static_cast<double>(out_w);
    auto coord = [](double dst, double scale, std::size_t n, std::size_t& i0, std::size_t& i1, double& t) {
        double src = (dst + 0.5) * scale - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(n - 1));
        i0 = static_cast<std::size_t>(std::floor(src));
        i1 = std::min(i0 + 1, n - 1);
        t = src - static_cast<double>(i0);
    };
    for (std::size_t y = 0; y < out_h; ++y) {
        std::size_t y0, y1;
        double ty;
        coord(static_cast<double>(y), sy, img.height, y0, y1, ty);
        for (std::size_t x = 0; x < out_w; ++x) {
            std::size_t x0, x1;
            double tx;
            coord(static_cast<double>(x), sx, img.width, x0, x1, tx);
            for (std::size_t c = 0; c < img.channels; ++c) {
                const double top = (1.0 - tx) * img.at(y0, x0, c) + tx * img.at(y0, x1, c);
                const double bot = (1.0 - tx) * img.at(y1, x0, c) + tx * img.at(y1, x1, c);
                out.at(y, x, c) = static_cast<float>((1.0 - ty) * top + ty * bot);
            }
        }
    }
    return out;
}

/// Element `e` of the dihedral group of the square: rotate by (e % 4) quarter
/// turns counter-clockwise, then mirror horizontally when e >= 4.
inline Image dihedral_transform(const Image& img, int e) {
    if (e < 0 || e > 7) throw ValueError("dihedral_transform: element must be in [0, 7]");
    if (img.height != img.width) throw ValueError("dihedral_transform: image must be square");
    const std::size_t n = img.height;
    Image out(n, n, img.channels);
    const int rot = e % 4;
    const bool flip = e >= 4;
    for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
            // Source pixel of output (y, x).
            const std::size_t xx = flip ? n - 1 - x : x;
            std::size_t sy = y, sx = xx;
            switch (rot) {
                case 1: sy = xx; sx = n - 1 - y; break;
                case 2: sy = n - 1 - y; sx = n - 1 - xx; break;
                case 3: sy = n - 1 - xx; sx = y; break;
                default: break;
            }
            for (std::size_t c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(sy, sx, c);
        }
    }
    return out;
}

/// Group inverse: rotations invert to the opposite rotation, reflections are involutions.
inline int dihedral_inverse(int e) { return e < 4 ? (4 - e) % 4 : e; }

/// Rotation by an arbitrary angle about the image centre, bilinear, mirror border.
inline Image rotate_bilinear(const Image& img, double degrees) {
    const double th = degrees * std::numbers::pi / 180.0;
    const double cs = std::cos(th), sn = std::sin(th);
    const double cy = (static_cast<double>(img.height) - 1.0) / 2.0;
    const double cx = (static_cast<double>(img.width) - 1.0) / 2.0;
    Image out(img.height, img.width, img.channels);
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
            const double sy = cy + cs * dy - sn * dx;
            const double sx = cx + sn * dy + cs * dx;
            const double fy = std::floor(sy), fx = std::floor(sx);
            const double ty = sy - fy, tx = sx - fx;
            const auto y0 = reflect_index(static_cast<long>(fy), img.height), y1 = reflect_index(static_cast<long>(fy) + 1, img.height);
            const auto x0 = reflect_index(static_cast<long>(fx), img.width), x1 = reflect_index(static_cast<long>(fx) + 1, img.width);
            for (std::size_t c = 0; c < img.channels; ++c) {
                const double top = (1.0 - tx) * img.at(y0, x0, c) + tx * img.at(y0, x1, c);
                const double bot = (1.0 - tx) * img.at(y1, x0, c) + tx * img.at(y1, x1, c);
                out.at(y, x, c) = static_cast<float>((1.0 - ty) * top + ty * bot);
            }
        }
    }
    return out;
}

}  // namespace intra
