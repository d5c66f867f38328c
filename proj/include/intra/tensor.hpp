#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "intra/errors.hpp"

namespace intra {

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major array of `Real` (float for training, double for
/// gradient verification).
template <class Real>
class Tensor {
   public:
    using value_type = Real;

    Tensor() = default;

    explicit Tensor(Shape shape, Real fill = Real(0)) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
        check_extents();
    }

    Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_extents();
        if (data_.size() != shape_numel(shape_)) {
            throw ShapeError("tensor: shape " + shape_str(shape_) + " needs " + std::to_string(shape_numel(shape_)) +
                             " values, got " + std::to_string(data_.size()));
        }
    }

    static Tensor scalar(Real v) { return Tensor(Shape{}, std::vector<Real>{v}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t numel() const noexcept { return data_.size(); }

    std::span<const Real> data() const noexcept { return data_; }
    std::span<Real> data() noexcept { return data_; }
    const std::vector<Real>& vec() const& noexcept { return data_; }
    std::vector<Real> vec() && noexcept { return std::move(data_); }

    Real operator[](std::size_t i) const { return data_[i]; }
    Real& operator[](std::size_t i) { return data_[i]; }

    Real item() const {
        if (data_.size() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape_) + " is not a scalar");
        return data_[0];
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
    }

    Tensor reshaped(Shape shape) const {
        if (shape_numel(shape) != numel()) throw ShapeError("reshape", shape_, shape);
        return Tensor(std::move(shape), data_);
    }

    template <class To>
    Tensor<To> cast() const {
        std::vector<To> out(data_.begin(), data_.end());
        return Tensor<To>(shape_, std::move(out));
    }

    friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

   private:
    void check_extents() const {
        for (std::size_t e : shape_) {
            if (e == 0) throw ShapeError("tensor: zero extent in shape " + shape_str(shape_));
        }
    }

    Shape shape_;
    std::vector<Real> data_;
};

namespace kernels {

/// C[M,N] (+)= op(A) * op(B). A is MxK (or KxM when trans_a), B is KxN (or
/// NxK when trans_b), all row-major and densely packed. Single-threaded, so
/// results are bit-reproducible for fixed inputs.
template <class Real>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b,
          Real* c, bool accumulate) {
    using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using ConstMap = Eigen::Map<const Mat>;
    const auto mi = static_cast<Eigen::Index>(m), ni = static_cast<Eigen::Index>(n), ki = static_cast<Eigen::Index>(k);
    Eigen::Map<Mat> cm(c, mi, ni);
    if (!accumulate) cm.setZero();
    const ConstMap am(a, trans_a ? ki : mi, trans_a ? mi : ki);
    const ConstMap bm(b, trans_b ? ni : ki, trans_b ? ki : ni);
    if (!trans_a && !trans_b) cm.noalias() += am * bm;
    else if (trans_a && !trans_b) cm.noalias() += am.transpose() * bm;
    else if (!trans_a && trans_b) cm.noalias() += am * bm.transpose();
    else cm.noalias() += am.transpose() * bm.transpose();
}

/// C[M,N] = A[M,K] * B[K,N], row-major. Every output row goes through the
/// same instruction sequence whatever M is, so a row's result depends only on
/// its own inputs and B; batching rows differently gives bit-identical output.
template <class Real>
void gemm_rowwise(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c) {
    constexpr std::size_t tile = 256 / sizeof(Real);
    Real acc[tile];
    for (std::size_t i = 0; i < m; ++i) {
        const Real* ai = a + i * k;
        for (std::size_t j0 = 0; j0 < n; j0 += tile) {
            const std::size_t jn = std::min(tile, n - j0);
            std::fill(acc, acc + tile, Real(0));
            for (std::size_t kk = 0; kk < k; ++kk) {
                const Real s = ai[kk];
                const Real* bk = b + kk * n + j0;
                if (jn == tile) {
                    for (std::size_t j = 0; j < tile; ++j) acc[j] += s * bk[j];
                } else {
                    for (std::size_t j = 0; j < jn; ++j) acc[j] += s * bk[j];
                }
            }
            std::copy(acc, acc + jn, c + i * n + j0);
        }
    }
}

/// Numpy-style broadcast of two shapes (trailing alignment, extent 1 stretches).
inline bool broadcast_shapes(const Shape& a, const Shape& b, Shape& out) {
    const std::size_t r = std::max(a.size(), b.size());
    out.assign(r, 1);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1) return false;
        out[i] = std::max(da, db);
    }
    return true;
}

/// For each flat index of `out`, the flat index into a tensor of shape `in`
/// broadcast to `out`. `in` must be broadcast-compatible with `out`.
inline std::vector<std::size_t> broadcast_index(const Shape& in, const Shape& out) {
    const std::size_t r = out.size();
    const std::size_t total = shape_numel(out);
    std::vector<std::size_t> idx(total);
    if (in == out) {
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        return idx;
    }
    Shape padded(r, 1);
    std::copy(in.begin(), in.end(), padded.begin() + static_cast<std::ptrdiff_t>(r - in.size()));
    std::vector<std::size_t> stride(r, 0);
    std::size_t s = 1;
    for (std::size_t i = r; i-- > 0;) {
        stride[i] = padded[i] == 1 ? 0 : s;
        s *= padded[i];
    }
    std::vector<std::size_t> counter(r, 0);
    std::size_t src = 0;
    for (std::size_t f = 0; f < total; ++f) {
        idx[f] = src;
        for (std::size_t d = r; d-- > 0;) {
            ++counter[d];
            src += stride[d];
            if (counter[d] < out[d]) break;
            src -= stride[d] * counter[d];
            counter[d] = 0;
        }
    }
    return idx;
}

/// Row-major strides of a shape.
inline std::vector<std::size_t> strides_of(const Shape& shape) {
    std::vector<std::size_t> st(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) st[i - 1] = st[i] * shape[i];
    return st;
}

/// out[perm-ordered] = in, where out.shape[i] = in.shape[perm[i]].
template <class Real>
void permute(const Real* in, const Shape& in_shape, const std::vector<std::size_t>& perm, Real* out) {
    const std::size_t r = in_shape.size();
    const auto in_st = strides_of(in_shape);
    Shape out_shape(r);
    std::vector<std::size_t> src_stride(r);
    for (std::size_t i = 0; i < r; ++i) {
        out_shape[i] = in_shape[perm[i]];
        src_stride[i] = in_st[perm[i]];
    }
    const std::size_t total = shape_numel(in_shape);
    if (r == 0) {
        out[0] = in[0];
        return;
    }
    // Innermost output axis handled as a strided copy.
    const std::size_t inner = out_shape[r - 1];
    const std::size_t inner_stride = src_stride[r - 1];
    std::vector<std::size_t> counter(r, 0);
    std::size_t src = 0;
    for (std::size_t f = 0; f < total; f += inner) {
        for (std::size_t j = 0; j < inner; ++j) out[f + j] = in[src + j * inner_stride];
        for (std::size_t d = r - 1; d-- > 0;) {
            ++counter[d];
            src += src_stride[d];
            if (counter[d] < out_shape[d]) break;
            src -= src_stride[d] * counter[d];
            counter[d] = 0;
        }
    }
}

}  // namespace kernels
}  // namespace intra
