#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "intra/errors.hpp"
#include "intra/image.hpp"

namespace intra {

/// An image cut into an N x M grid of non-overlapping K x K patches, each
/// flattened row-major and channel-last into K*K*C values.
struct PatchGrid {
    std::size_t rows = 0;   // N
    std::size_t cols = 0;   // M
    std::size_t side = 0;   // K
    std::size_t channels = 0;
    std::vector<float> values;  // rows * cols * patch_size()

    std::size_t patch_size() const noexcept { return side * side * channels; }

    /// Patch at 1-based grid position (i, j).
    std::span<const float> patch(std::size_t i, std::size_t j) const {
        return std::span<const float>(values).subspan(((i - 1) * cols + (j - 1)) * patch_size(), patch_size());
    }
    std::span<float> patch(std::size_t i, std::size_t j) {
        return std::span<float>(values).subspan(((i - 1) * cols + (j - 1)) * patch_size(), patch_size());
    }
};

/// L x L window of the grid anchored at 1-based (r, s), with the patch to
/// inpaint at (t, u).
struct WindowSpec {
    std::size_t r = 1, s = 1;
    std::size_t side = 1;  // L
    std::size_t t = 1, u = 1;

    friend bool operator==(const WindowSpec&, const WindowSpec&) = default;
};

inline PatchGrid split_into_patches(const Image& image, std::size_t k) {
    if (k == 0 || image.height % k != 0 || image.width % k != 0) {
        throw ValueError("split_into_patches: patch side " + std::to_string(k) + " does not divide image " +
                         std::to_string(image.height) + "x" + std::to_string(image.width) + "; resize the image first");
    }
    PatchGrid g{image.height / k, image.width / k, k, image.channels, {}};
    g.values.resize(image.data.size());
    const std::size_t c = image.channels;
    for (std::size_t i = 0; i < g.rows; ++i) {
        for (std::size_t j = 0; j < g.cols; ++j) {
            float* dst = g.values.data() + (i * g.cols + j) * g.patch_size();
            for (std::size_t y = 0; y < k; ++y) {
                const float* src = image.data.data() + ((i * k + y) * image.width + j * k) * c;
                std::copy_n(src, k * c, dst + y * k * c);
            }
        }
    }
    return g;
}

inline Image assemble_patches(const PatchGrid& g) {
    const std::size_t k = g.side, c = g.channels;
    Image img(g.rows * k, g.cols * k, c);
    for (std::size_t i = 0; i < g.rows; ++i) {
        for (std::size_t j = 0; j < g.cols; ++j) {
            const float* src = g.values.data() + (i * g.cols + j) * g.patch_size();
            for (std::size_t y = 0; y < k; ++y) {
                std::copy_n(src + y * k * c, k * c, img.data.data() + ((i * k + y) * img.width + j * k) * c);
            }
        }
    }
    return img;
}

/// f(i, j) = (i - 1) * N + j on a square N x N grid, 1-based.
inline std::size_t linear_position(std::size_t i, std::size_t j, std::size_t n, std::size_t m) {
    if (n != m) throw ValueError("linear_position: grid must be square, got " + std::to_string(n) + "x" + std::to_string(m));
    if (i < 1 || i > n || j < 1 || j > m) {
        throw ValueError("linear_position: (" + std::to_string(i) + "," + std::to_string(j) + ") outside " +
                         std::to_string(n) + "x" + std::to_string(m) + " grid");
    }
    return (i - 1) * n + j;
}

inline std::size_t linear_position(std::size_t i, std::size_t j, std::size_t n) { return linear_position(i, j, n, n); }

/// Window of side L placing (t, u) as close to its centre as the grid allows.
inline WindowSpec select_window(std::size_t t, std::size_t u, std::size_t n, std::size_t m, std::size_t l) {
    if (l == 0 || l > n || l > m) {
        throw ValueError("select_window: window side " + std::to_string(l) + " exceeds grid " + std::to_string(n) + "x" + std::to_string(m));
    }
    if (t < 1 || t > n || u < 1 || u > m) throw ValueError("select_window: target outside grid");
    const long half = static_cast<long>(l / 2);
    auto g = [half](std::size_t c) { return std::max(1L, static_cast<long>(c) - half); };
    auto anchor = [&](std::size_t c, std::size_t extent) {
        const long gc = g(c);
        return static_cast<std::size_t>(gc - std::max(0L, gc + static_cast<long>(l) - static_cast<long>(extent) - 1));
    };
    return WindowSpec{anchor(t, n), anchor(u, m), l, t, u};
}

/// Uniform anchor over all valid windows, then a uniform target inside it.
template <class Rng>
WindowSpec sample_window_spec(std::size_t n, std::size_t m, std::size_t l, Rng& rng) {
    if (l == 0 || l > n || l > m) throw ValueError("sample_window_spec: window side exceeds grid");
    std::uniform_int_distribution<std::size_t> rd(1, n - l + 1), sd(1, m - l + 1), off(0, l - 1);
    WindowSpec w;
    w.side = l;
    w.r = rd(rng);
    w.s = sd(rng);
    w.t = w.r + off(rng);
    w.u = w.s + off(rng);
    return w;
}

/// Flattened patches of a window in row-major grid order.
inline std::vector<float> window_patches(const PatchGrid& grid, const WindowSpec& w) {
    std::vector<float> out;
    out.reserve(w.side * w.side * grid.patch_size());
    for (std::size_t i = w.r; i < w.r + w.side; ++i)
        for (std::size_t j = w.s; j < w.s + w.side; ++j) {
            auto p = grid.patch(i, j);
            out.insert(out.end(), p.begin(), p.end());
        }
    return out;
}

template <class Rng>
std::pair<std::vector<float>, WindowSpec> sample_training_window(const PatchGrid& grid, std::size_t l, Rng& rng) {
    WindowSpec w = sample_window_spec(grid.rows, grid.cols, l, rng);
    return {window_patches(grid, w), w};
}

}  // namespace intra
