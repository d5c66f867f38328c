#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "intra/autodiff.hpp"
#include "intra/errors.hpp"
#include "intra/image.hpp"

namespace intra {

namespace similarity {
inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;
inline constexpr double kGmsC = 0.0026;
// Added under the square root of the differentiable gradient magnitude so
// its derivative stays finite on flat patches.
inline constexpr double kMagnitudeEps = 1e-12;

inline const std::vector<double>& ssim_taps() {
    static const std::vector<double> taps = gaussian_taps(kSsimWindow, kSsimSigma);
    return taps;
}
// Prewitt: [1 1 1]/3 smoothing across the derivative direction, [1 0 -1] along it.
inline const std::vector<double>& prewitt_smooth() {
    static const std::vector<double> taps{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    return taps;
}
inline const std::vector<double>& prewitt_diff() {
    static const std::vector<double> taps{1.0, 0.0, -1.0};
    return taps;
}
}  // namespace similarity

struct LossWeights {
    double alpha = 0.01;
    double beta = 0.01;
};

inline void check_same_shape(const char* op, const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw ShapeError(op, Shape{a.height, a.width, a.channels}, Shape{b.height, b.width, b.channels});
}

/// Per-pixel SSIM (Gaussian 11x11, sigma 1.5, mirror padding), averaged over channels.
inline Image ssim_map(const Image& a, const Image& b) {
    check_same_shape("ssim_map", a, b);
    using namespace similarity;
    const auto& k = ssim_taps();
    Image out(a.height, a.width, 1);
    std::vector<double> acc(a.pixels(), 0.0);
    for (std::size_t c = 0; c < a.channels; ++c) {
        const Plane pa = channel_plane(a, c), pb = channel_plane(b, c);
        Plane aa(a.height, a.width), bb(a.height, a.width), ab(a.height, a.width);
        for (std::size_t i = 0; i < a.pixels(); ++i) {
            aa.data[i] = pa.data[i] * pa.data[i];
            bb.data[i] = pb.data[i] * pb.data[i];
            ab.data[i] = pa.data[i] * pb.data[i];
        }
        const Plane ma = filter_separable(pa, k, k), mb = filter_separable(pb, k, k);
        const Plane saa = filter_separable(aa, k, k), sbb = filter_separable(bb, k, k), sab = filter_separable(ab, k, k);
        for (std::size_t i = 0; i < a.pixels(); ++i) {
            const double mua = ma.data[i], mub = mb.data[i];
            const double va = saa.data[i] - mua * mua;
            const double vb = sbb.data[i] - mub * mub;
            const double cov = sab.data[i] - mua * mub;
            acc[i] += ((2.0 * mua * mub + kSsimC1) * (2.0 * cov + kSsimC2)) /
                      ((mua * mua + mub * mub + kSsimC1) * (va + vb + kSsimC2));
        }
    }
    for (std::size_t i = 0; i < a.pixels(); ++i) out.data[i] = static_cast<float>(acc[i] / static_cast<double>(a.channels));
    return out;
}

/// Prewitt gradient magnitude of one channel plane.
inline Plane gradient_magnitude(const Plane& p) {
    using namespace similarity;
    const Plane gx = filter_separable(p, prewitt_smooth(), prewitt_diff());
    const Plane gy = filter_separable(p, prewitt_diff(), prewitt_smooth());
    Plane m(p.height, p.width);
    for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = std::sqrt(gx.data[i] * gx.data[i] + gy.data[i] * gy.data[i]);
    return m;
}

/// Per-pixel gradient magnitude similarity, averaged over channels.
inline Image gms_map(const Image& a, const Image& b) {
    check_same_shape("gms_map", a, b);
    using similarity::kGmsC;
    std::vector<double> acc(a.pixels(), 0.0);
    for (std::size_t c = 0; c < a.channels; ++c) {
        const Plane ma = gradient_magnitude(channel_plane(a, c));
        const Plane mb = gradient_magnitude(channel_plane(b, c));
        for (std::size_t i = 0; i < a.pixels(); ++i) {
            acc[i] += (2.0 * ma.data[i] * mb.data[i] + kGmsC) / (ma.data[i] * ma.data[i] + mb.data[i] * mb.data[i] + kGmsC);
        }
    }
    Image out(a.height, a.width, 1);
    for (std::size_t i = 0; i < a.pixels(); ++i) out.data[i] = static_cast<float>(acc[i] / static_cast<double>(a.channels));
    return out;
}

namespace detail {

/// n x n matrix applying mirror-padded correlation with `taps` to a column
/// vector: (A v)[i] = sum_o taps[o] * v[reflect(i + o)].
inline std::vector<double> correlation_matrix(std::size_t n, const std::vector<double>& taps) {
    std::vector<double> a(n * n, 0.0);
    const long r = static_cast<long>(taps.size() / 2);
    for (std::size_t i = 0; i < n; ++i)
        for (long o = -r; o <= r; ++o) a[i * n + reflect_index(static_cast<long>(i) + o, n)] += taps[static_cast<std::size_t>(o + r)];
    return a;
}

/// Pair of constant operators filtering a [B, K, K*C] channel-last patch
/// stack: rows via `left` [K,K], columns via `right` [K*C, K*C].
template <class Real>
struct SeparableOperator {
    Var<Real> left;
    Var<Real> right;

    SeparableOperator(std::size_t k, std::size_t c, const std::vector<double>& col_taps, const std::vector<double>& row_taps) {
        const auto a = correlation_matrix(k, col_taps);
        const auto b = correlation_matrix(k, row_taps);
        std::vector<Real> l(a.begin(), a.end());
        std::vector<Real> r(k * c * k * c, Real(0));
        // Right factor = kron(B^T, I_C).
        for (std::size_t j = 0; j < k; ++j)
            for (std::size_t q = 0; q < k; ++q)
                for (std::size_t ch = 0; ch < c; ++ch) r[(q * c + ch) * (k * c) + j * c + ch] = static_cast<Real>(b[j * k + q]);
        left = Var<Real>::constant(Tensor<Real>({k, k}, std::move(l)));
        right = Var<Real>::constant(Tensor<Real>({k * c, k * c}, std::move(r)));
    }

    Var<Real> operator()(const Var<Real>& x) const { return matmul(matmul(left, x), right); }
};

}  // namespace detail

/// Composite inpainting loss, averaged over a batch of patches:
/// MSE + alpha * mean(1 - GMS_avg) + beta * mean(max(0, 1 - SSIM_avg)).
/// `original` and `reconstructed` are [B, K*K*C], channel-last within each patch.
template <class Real>
Var<Real> inpaint_loss(const Tensor<Real>& original, const Var<Real>& reconstructed, std::size_t k, std::size_t c,
                       const LossWeights& w = {}) {
    if (original.shape() != reconstructed.shape()) throw ShapeError("inpaint_loss", original.shape(), reconstructed.shape());
    if (original.rank() != 2 || original.dim(1) != k * k * c) throw ShapeError("inpaint_loss: expected [B, " + std::to_string(k * k * c) + "], got " + shape_str(original.shape()));
    using namespace similarity;
    const std::size_t b = original.dim(0);
    const Shape stack{b, k, k * c};
    const Shape per_channel{b, k, k, c};

    const auto x = Var<Real>::constant(original.reshaped(stack));
    const auto y = reshape(reconstructed, stack);

    const auto mse = mean(square(sub(y, x)));

    auto channel_avg = [&](const Var<Real>& m) { return mean_axis(reshape(m, per_channel), -1); };

    // GMS
    const detail::SeparableOperator<Real> grad_x(k, c, prewitt_smooth(), prewitt_diff());
    const detail::SeparableOperator<Real> grad_y(k, c, prewitt_diff(), prewitt_smooth());
    auto magnitude = [&](const Var<Real>& v) {
        return sqrt(add_scalar(add(square(grad_x(v)), square(grad_y(v))), Real(kMagnitudeEps)));
    };
    const auto mx = magnitude(x), my = magnitude(y);
    const auto gms = div(add_scalar(mul_scalar(mul(mx, my), Real(2)), Real(kGmsC)),
                         add_scalar(add(square(mx), square(my)), Real(kGmsC)));
    const auto gms_term = mean(rsub_scalar(channel_avg(gms), Real(1)));

    // SSIM
    const detail::SeparableOperator<Real> blur(k, c, ssim_taps(), ssim_taps());
    const auto mux = blur(x), muy = blur(y);
    const auto mux2 = square(mux), muy2 = square(muy), muxy = mul(mux, muy);
    const auto vx = sub(blur(square(x)), mux2);
    const auto vy = sub(blur(square(y)), muy2);
    const auto cov = sub(blur(mul(x, y)), muxy);
    const auto num = mul(add_scalar(mul_scalar(muxy, Real(2)), Real(kSsimC1)), add_scalar(mul_scalar(cov, Real(2)), Real(kSsimC2)));
    const auto den = mul(add_scalar(add(mux2, muy2), Real(kSsimC1)), add_scalar(add(vx, vy), Real(kSsimC2)));
    const auto ssim = div(num, den);
    const auto ssim_term = mean(clamp_min(rsub_scalar(channel_avg(ssim), Real(1)), Real(0)));

    return add(mse, add(mul_scalar(gms_term, static_cast<Real>(w.alpha)), mul_scalar(ssim_term, static_cast<Real>(w.beta))));
}

}  // namespace intra
