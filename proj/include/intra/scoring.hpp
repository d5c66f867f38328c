#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "intra/errors.hpp"
#include "intra/image.hpp"
#include "intra/model.hpp"
#include "intra/parallel.hpp"
#include "intra/patching.hpp"
#include "intra/similarity.hpp"

namespace intra {

struct ScoringOptions {
    std::size_t batch_size = 64;  // windows per forward pass
    std::size_t workers = 1;
};

/// Inpaints every patch of `image` from its most centred window and
/// reassembles the result. Each output patch is written exactly once.
template <class Real>
Image reconstruct_image(const IntraModel<Real>& model, const Image& image, const ScoringOptions& opt = {}) {
    const auto& cfg = model.config();
    if (image.height != cfg.image_size || image.width != cfg.image_size || image.channels != cfg.channels) {
        throw ShapeError("reconstruct_image: model expects " + shape_str({cfg.image_size, cfg.image_size, cfg.channels}) +
                         ", got " + shape_str({image.height, image.width, image.channels}) + "; resize first");
    }
    const PatchGrid grid = split_into_patches(image, cfg.patch_size);
    const std::size_t cells = grid.rows * grid.cols, p = grid.patch_size();
    std::vector<WindowRef> refs;
    refs.reserve(cells);
    for (std::size_t t = 1; t <= grid.rows; ++t)
        for (std::size_t u = 1; u <= grid.cols; ++u) refs.push_back({&grid, select_window(t, u, grid.rows, grid.cols, cfg.window_side)});

    const std::size_t bs = std::max<std::size_t>(1, opt.batch_size);
    const std::size_t batches = (cells + bs - 1) / bs;
    const auto params = model.bind(false);
    PatchGrid out = grid;
    std::vector<unsigned char> written(cells, 0);
    parallel_for(batches, opt.workers, [&](std::size_t bi) {
        const std::size_t lo = bi * bs, hi = std::min(cells, lo + bs);
        const auto pred = model.forward(params, make_window_batch<Real>(std::span<const WindowRef>(refs).subspan(lo, hi - lo))).value();
        for (std::size_t k = lo; k < hi; ++k) {
            const auto& w = refs[k].spec;
            const std::size_t cell = (w.t - 1) * grid.cols + (w.u - 1);
            // Cells are disjoint across batches, so no two threads touch one flag.
            if (written[cell]++) throw ValueError("reconstruct_image: patch written twice");
            auto dst = out.patch(w.t, w.u);
            for (std::size_t i = 0; i < p; ++i) dst[i] = static_cast<float>(pred[(k - lo) * p + i]);
        }
    });
    for (unsigned char w : written)
        if (w != 1) throw ValueError("reconstruct_image: patch coverage incomplete");
    return assemble_patches(out);
}

/// Box and Gaussian kernel side for one scale: the size used at 512 pixels,
/// scaled linearly with the working resolution, rounded, made odd, at least 3.
inline std::size_t scaled_kernel_size(std::size_t size_at_512, std::size_t image_side) {
    auto k = static_cast<std::size_t>(std::lround(static_cast<double>(size_at_512) * static_cast<double>(image_side) / 512.0));
    if (k % 2 == 0) ++k;
    return std::max<std::size_t>(k, 3);
}

struct DiffScale {
    double factor;
    std::size_t kernel_at_512;
};

inline constexpr DiffScale kDiffScales[] = {{0.5, 21}, {0.25, 11}};
inline constexpr double kDiffSigma = 2.0;

/// Multi-scale gradient-similarity difference: for each scale both images
/// are resized, compared with 1 - GMS, box- then Gaussian-filtered, resized
/// back; the scales are averaged. Single-channel H x W result in [0, 1].
inline Image multiscale_diff(const Image& x, const Image& xhat) {
    check_same_shape("multiscale_diff", x, xhat);
    const std::size_t h = x.height, w = x.width;
    std::vector<double> acc(h * w, 0.0);
    for (const auto& sc : kDiffScales) {
        const auto sh = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(h) * sc.factor)));
        const auto sw = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(w) * sc.factor)));
        const Image gms = gms_map(resize_bilinear(x, sh, sw), resize_bilinear(xhat, sh, sw));
        Plane d(sh, sw);
        for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] = 1.0 - static_cast<double>(gms.data[i]);
        const std::size_t k = scaled_kernel_size(sc.kernel_at_512, h);
        const auto box = box_taps(k);
        const auto gauss = gaussian_taps(k, kDiffSigma);
        const Plane blurred = filter_separable(filter_separable(d, box, box), gauss, gauss);
        Image small(sh, sw, 1);
        for (std::size_t i = 0; i < small.data.size(); ++i) small.data[i] = static_cast<float>(blurred.data[i]);
        const Image back = resize_bilinear(small, h, w);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += back.data[i];
    }
    Image out(h, w, 1);
    const double n = static_cast<double>(std::size(kDiffScales));
    for (std::size_t i = 0; i < acc.size(); ++i) out.data[i] = static_cast<float>(std::clamp(acc[i] / n, 0.0, 1.0));
    return out;
}

/// Mean diff map of the normal training images, at model resolution.
struct ReferenceDiff {
    Image map;
    std::size_t count = 0;

    bool empty() const { return count == 0; }
};

/// Pixel-wise mean of diff maps, summed in the given order in double.
inline ReferenceDiff mean_diff(std::span<const Image> diffs) {
    if (diffs.empty()) throw ValueError("build_reference: no training images");
    const Image& first = diffs.front();
    std::vector<double> acc(first.data.size(), 0.0);
    for (const auto& d : diffs) {
        check_same_shape("build_reference", first, d);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += d.data[i];
    }
    ReferenceDiff ref{Image(first.height, first.width, first.channels), diffs.size()};
    for (std::size_t i = 0; i < acc.size(); ++i) ref.map.data[i] = static_cast<float>(acc[i] / static_cast<double>(diffs.size()));
    return ref;
}

template <class Real>
Image diff_map(const IntraModel<Real>& model, const Image& image, const ScoringOptions& opt = {}) {
    return multiscale_diff(image, reconstruct_image(model, image, opt));
}

template <class Real>
ReferenceDiff build_reference(const IntraModel<Real>& model, std::span<const Image> training, const ScoringOptions& opt = {}) {
    if (training.empty()) throw ValueError("build_reference: no training images");
    std::vector<Image> diffs(training.size());
    ScoringOptions inner = opt;
    inner.workers = 1;
    parallel_for(training.size(), opt.workers, [&](std::size_t i) { diffs[i] = diff_map(model, training[i], inner); });
    return mean_diff(diffs);
}

struct AnomalyMap {
    Image map;  // H x W x 1, non-negative
    float score = 0.0f;
};

/// (diff - reference)^2 with the image score taken as the map's maximum.
inline AnomalyMap anomaly_from_diff(const Image& diff, const ReferenceDiff& reference) {
    if (reference.empty()) throw ValueError("anomaly_map: missing reference diff map");
    check_same_shape("anomaly_map", diff, reference.map);
    AnomalyMap a{Image(diff.height, diff.width, 1), 0.0f};
    for (std::size_t i = 0; i < diff.data.size(); ++i) {
        const float d = diff.data[i] - reference.map.data[i];
        a.map.data[i] = d * d;
    }
    a.score = *std::max_element(a.map.data.begin(), a.map.data.end());
    return a;
}

template <class Real>
AnomalyMap anomaly_map(const Image& image, const IntraModel<Real>& model, const ReferenceDiff& reference, const ScoringOptions& opt = {}) {
    if (reference.empty()) throw ValueError("anomaly_map: missing reference diff map");
    return anomaly_from_diff(diff_map(model, image, opt), reference);
}

/// Map resized (bilinear) to an image's original resolution for pixel evaluation.
inline Image map_at_resolution(const AnomalyMap& a, std::size_t height, std::size_t width) {
    return resize_bilinear(a.map, height, width);
}

/// Blue-to-red false colour of a single-channel map scaled by `max_value`.
inline Image heat_map(const Image& map, float max_value) {
    Image out(map.height, map.width, 3);
    const float scale = max_value > 0.0f ? 1.0f / max_value : 0.0f;
    for (std::size_t i = 0; i < map.pixels(); ++i) {
        const float v = std::clamp(map.data[i] * scale, 0.0f, 1.0f);
        out.data[i * 3 + 0] = std::clamp(1.5f - std::abs(4.0f * v - 3.0f), 0.0f, 1.0f);
        out.data[i * 3 + 1] = std::clamp(1.5f - std::abs(4.0f * v - 2.0f), 0.0f, 1.0f);
        out.data[i * 3 + 2] = std::clamp(1.5f - std::abs(4.0f * v - 1.0f), 0.0f, 1.0f);
    }
    return out;
}

/// Original | reconstruction | heat map, side by side, 3 channels.
inline Image triptych(const Image& original, const Image& reconstruction, const Image& heat) {
    auto rgb = [](const Image& im) {
        if (im.channels == 3) return im;
        Image o(im.height, im.width, 3);
        for (std::size_t i = 0; i < im.pixels(); ++i)
            for (std::size_t c = 0; c < 3; ++c) o.data[i * 3 + c] = im.data[i * im.channels];
        return o;
    };
    const Image a = rgb(original), b = rgb(reconstruction), c = rgb(heat);
    if (!a.same_shape(b) || !a.same_shape(c)) throw ShapeError("triptych: panels differ in size");
    Image out(a.height, a.width * 3, 3);
    for (std::size_t y = 0; y < a.height; ++y)
        for (std::size_t x = 0; x < a.width; ++x)
            for (std::size_t ch = 0; ch < 3; ++ch) {
                out.at(y, x, ch) = a.at(y, x, ch);
                out.at(y, x + a.width, ch) = b.at(y, x, ch);
                out.at(y, x + 2 * a.width, ch) = c.at(y, x, ch);
            }
    return out;
}

}  // namespace intra
