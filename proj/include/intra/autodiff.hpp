#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numbers>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "intra/errors.hpp"
#include "intra/tensor.hpp"

namespace intra {

template <class Real>
struct Node {
    std::string op;
    Tensor<Real> value;
    std::vector<Real> grad;  // empty until something flows in; otherwise value.numel()
    std::vector<std::shared_ptr<Node>> inputs;
    // Reads `self.grad` and accumulates into the grads of `self.inputs`.
    std::function<void(Node& self)> backward;
    bool requires_grad = false;

    std::vector<Real>& grad_buffer() {
        if (grad.empty()) grad.assign(value.numel(), Real(0));
        return grad;
    }
};

/// Handle to a node of the computation graph. Cheap to copy; values are
/// never mutated after construction.
template <class Real>
class Var {
   public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<Real>> node) : node_(std::move(node)) {}

    static Var constant(Tensor<Real> value) { return leaf(std::move(value), false, "constant"); }
    static Var parameter(Tensor<Real> value) { return leaf(std::move(value), true, "parameter"); }

    const Tensor<Real>& value() const { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t numel() const { return node_->value.numel(); }
    bool requires_grad() const { return node_->requires_grad; }
    const std::string& op() const { return node_->op; }

    /// Gradient accumulated by the last backward pass (zeros if none reached this node).
    Tensor<Real> grad() const {
        if (node_->grad.empty()) return Tensor<Real>(shape(), Real(0));
        return Tensor<Real>(shape(), node_->grad);
    }

    const std::shared_ptr<Node<Real>>& node() const { return node_; }
    explicit operator bool() const { return static_cast<bool>(node_); }

   private:
    static Var leaf(Tensor<Real> value, bool requires_grad, const char* op) {
        auto n = std::make_shared<Node<Real>>();
        n->op = op;
        n->value = std::move(value);
        n->requires_grad = requires_grad;
        return Var(std::move(n));
    }

    std::shared_ptr<Node<Real>> node_;
};

namespace detail {

template <class Real>
void check_finite(const std::string& op, const Tensor<Real>& t) {
    if (!t.all_finite()) throw NumericError(op + ": non-finite value in output");
}

/// Creates the output node of a primitive. The backward closure is only kept
/// when some input requires a gradient.
template <class Real>
Var<Real> make_node(std::string op, Tensor<Real> value, std::vector<Var<Real>> inputs,
                    std::function<void(Node<Real>&)> backward) {
    check_finite(op, value);
    auto n = std::make_shared<Node<Real>>();
    n->op = std::move(op);
    n->value = std::move(value);
    for (const auto& v : inputs) n->requires_grad = n->requires_grad || v.requires_grad();
    if (n->requires_grad) {
        n->inputs.reserve(inputs.size());
        for (const auto& v : inputs) n->inputs.push_back(v.node());
        n->backward = std::move(backward);
    }
    return Var<Real>(std::move(n));
}

template <class Real>
bool wants(const Node<Real>& self, std::size_t i) {
    return self.inputs[i]->requires_grad;
}

/// How an operand maps onto a broadcast output: identical shape, repeated
/// as a trailing block (bias-style, index = i % size), or a general gather.
struct BroadcastMap {
    enum class Kind { same, tiled, gather } kind = Kind::same;
    std::size_t size = 0;
    std::vector<std::size_t> index;

    BroadcastMap(const Shape& in, const Shape& out) : size(shape_numel(in)) {
        if (in == out) return;
        // Tiled when `in`, left-padded with ones, is ones followed by a suffix of `out`.
        const std::size_t pad = out.size() - in.size();
        std::size_t first = 0;
        while (first < in.size() && in[first] == 1) ++first;
        bool tiled = true;
        for (std::size_t i = first; i < in.size(); ++i) tiled = tiled && in[i] == out[pad + i];
        if (tiled) {
            kind = Kind::tiled;
            return;
        }
        kind = Kind::gather;
        index = kernels::broadcast_index(in, out);
    }

    std::size_t operator()(std::size_t i) const {
        switch (kind) {
            case Kind::same: return i;
            case Kind::tiled: return i % size;
            default: return index[i];
        }
    }
};

template <class Real, class Fwd, class Da, class Db>
Var<Real> binary_elementwise(const char* op, const Var<Real>& a, const Var<Real>& b, Fwd fwd, Da da, Db db) {
    Shape out_shape;
    if (!kernels::broadcast_shapes(a.shape(), b.shape(), out_shape)) throw ShapeError(op, a.shape(), b.shape());
    const std::size_t n = shape_numel(out_shape);
    std::vector<Real> out(n);
    const auto& av = a.value().vec();
    const auto& bv = b.value().vec();
    auto ma = std::make_shared<const BroadcastMap>(a.shape(), out_shape);
    auto mb = std::make_shared<const BroadcastMap>(b.shape(), out_shape);
    using K = BroadcastMap::Kind;
    if (ma->kind == K::same && mb->kind == K::same) {
        for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[i]);
    } else if (ma->kind == K::same && mb->kind == K::tiled) {
        const std::size_t m = mb->size;
        for (std::size_t i = 0; i < n; i += m)
            for (std::size_t j = 0; j < m; ++j) out[i + j] = fwd(av[i + j], bv[j]);
    } else {
        for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[(*ma)(i)], bv[(*mb)(i)]);
    }
    return make_node<Real>(op, Tensor<Real>(out_shape, std::move(out)), {a, b}, [ma, mb, da, db](Node<Real>& self) {
        const auto& g = self.grad;
        const auto& x = self.inputs[0]->value.vec();
        const auto& y = self.inputs[1]->value.vec();
        const auto& z = self.value.vec();
        const std::size_t n = g.size();
        const bool plain = ma->kind == K::same && mb->kind == K::same;
        if (wants(self, 0)) {
            auto& dst = self.inputs[0]->grad_buffer();
            if (plain) {
                for (std::size_t i = 0; i < n; ++i) dst[i] += g[i] * da(x[i], y[i], z[i]);
            } else {
                for (std::size_t i = 0; i < n; ++i) {
                    const std::size_t xi = (*ma)(i), yi = (*mb)(i);
                    dst[xi] += g[i] * da(x[xi], y[yi], z[i]);
                }
            }
        }
        if (wants(self, 1)) {
            auto& dst = self.inputs[1]->grad_buffer();
            if (plain) {
                for (std::size_t i = 0; i < n; ++i) dst[i] += g[i] * db(x[i], y[i], z[i]);
            } else {
                for (std::size_t i = 0; i < n; ++i) {
                    const std::size_t xi = (*ma)(i), yi = (*mb)(i);
                    dst[yi] += g[i] * db(x[xi], y[yi], z[i]);
                }
            }
        }
    });
}

template <class Real, class Fwd, class Deriv>
Var<Real> unary_elementwise(const char* op, const Var<Real>& x, Fwd fwd, Deriv deriv) {
    const auto& xv = x.value().vec();
    std::vector<Real> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
    return make_node<Real>(op, Tensor<Real>(x.shape(), std::move(out)), {x}, [deriv](Node<Real>& self) {
        auto& dst = self.inputs[0]->grad_buffer();
        const auto& xin = self.inputs[0]->value.vec();
        const auto& z = self.value.vec();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += self.grad[i] * deriv(xin[i], z[i]);
    });
}

inline std::size_t normalize_axis(long axis, std::size_t rank, const char* op) {
    const long r = static_cast<long>(rank);
    if (axis < -r || axis >= r) throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
    return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <class Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b) {
    return detail::binary_elementwise<Real>(
        "add", a, b, [](Real x, Real y) { return x + y; }, [](Real, Real, Real) { return Real(1); },
        [](Real, Real, Real) { return Real(1); });
}

template <class Real>
Var<Real> sub(const Var<Real>& a, const Var<Real>& b) {
    return detail::binary_elementwise<Real>(
        "sub", a, b, [](Real x, Real y) { return x - y; }, [](Real, Real, Real) { return Real(1); },
        [](Real, Real, Real) { return Real(-1); });
}

template <class Real>
Var<Real> mul(const Var<Real>& a, const Var<Real>& b) {
    return detail::binary_elementwise<Real>(
        "mul", a, b, [](Real x, Real y) { return x * y; }, [](Real, Real y, Real) { return y; },
        [](Real x, Real, Real) { return x; });
}

template <class Real>
Var<Real> div(const Var<Real>& a, const Var<Real>& b) {
    return detail::binary_elementwise<Real>(
        "div", a, b, [](Real x, Real y) { return x / y; }, [](Real, Real y, Real) { return Real(1) / y; },
        [](Real, Real y, Real z) { return -z / y; });
}

template <class Real>
Var<Real> operator+(const Var<Real>& a, const Var<Real>& b) { return add(a, b); }
template <class Real>
Var<Real> operator-(const Var<Real>& a, const Var<Real>& b) { return sub(a, b); }
template <class Real>
Var<Real> operator*(const Var<Real>& a, const Var<Real>& b) { return mul(a, b); }
template <class Real>
Var<Real> operator/(const Var<Real>& a, const Var<Real>& b) { return div(a, b); }

template <class Real>
Var<Real> add_scalar(const Var<Real>& x, Real s) {
    return detail::unary_elementwise<Real>("add_scalar", x, [s](Real v) { return v + s; }, [](Real, Real) { return Real(1); });
}

template <class Real>
Var<Real> mul_scalar(const Var<Real>& x, Real s) {
    return detail::unary_elementwise<Real>("mul_scalar", x, [s](Real v) { return v * s; }, [s](Real, Real) { return s; });
}

/// s - x
template <class Real>
Var<Real> rsub_scalar(const Var<Real>& x, Real s) {
    return detail::unary_elementwise<Real>("rsub_scalar", x, [s](Real v) { return s - v; }, [](Real, Real) { return Real(-1); });
}

template <class Real>
Var<Real> square(const Var<Real>& x) {
    return detail::unary_elementwise<Real>("square", x, [](Real v) { return v * v; }, [](Real v, Real) { return Real(2) * v; });
}

template <class Real>
Var<Real> sqrt(const Var<Real>& x) {
    return detail::unary_elementwise<Real>(
        "sqrt", x,
        [](Real v) {
            if (v < Real(0)) throw NumericError("sqrt: negative input");
            return std::sqrt(v);
        },
        [](Real, Real z) { return Real(0.5) / z; });
}

template <class Real>
Var<Real> sigmoid(const Var<Real>& x) {
    return detail::unary_elementwise<Real>(
        "sigmoid", x,
        [](Real v) {
            if (v >= Real(0)) return Real(1) / (Real(1) + std::exp(-v));
            const Real e = std::exp(v);
            return e / (Real(1) + e);
        },
        [](Real, Real z) { return z * (Real(1) - z); });
}

/// Exact GELU, x * Phi(x). Phi is kept from the forward pass for backward.
template <class Real>
Var<Real> gelu(const Var<Real>& x) {
    constexpr Real inv_sqrt2 = Real(0.70710678118654752440);
    constexpr Real inv_sqrt_2pi = Real(0.39894228040143267794);
    const auto& xv = x.value().vec();
    std::vector<Real> out(xv.size());
    auto cdf = std::make_shared<std::vector<Real>>(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        (*cdf)[i] = Real(0.5) * (Real(1) + std::erf(xv[i] * inv_sqrt2));
        out[i] = xv[i] * (*cdf)[i];
    }
    return detail::make_node<Real>("gelu", Tensor<Real>(x.shape(), std::move(out)), {x}, [cdf](Node<Real>& self) {
        auto& dst = self.inputs[0]->grad_buffer();
        const auto& xin = self.inputs[0]->value.vec();
        for (std::size_t i = 0; i < dst.size(); ++i) {
            const Real v = xin[i];
            dst[i] += self.grad[i] * ((*cdf)[i] + v * inv_sqrt_2pi * std::exp(Real(-0.5) * v * v));
        }
    });
}

/// max(x, lo); the subgradient at the kink is taken as 0.
template <class Real>
Var<Real> clamp_min(const Var<Real>& x, Real lo) {
    return detail::unary_elementwise<Real>(
        "clamp_min", x, [lo](Real v) { return v > lo ? v : lo; }, [lo](Real v, Real) { return v > lo ? Real(1) : Real(0); });
}

// ---------------------------------------------------------------- shape ops

template <class Real>
Var<Real> reshape(const Var<Real>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) throw ShapeError("reshape", x.shape(), shape);
    return detail::make_node<Real>("reshape", x.value().reshaped(std::move(shape)), {x}, [](Node<Real>& self) {
        auto& dst = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += self.grad[i];
    });
}

/// Output axis i is input axis perm[i].
template <class Real>
Var<Real> permute(const Var<Real>& x, std::vector<std::size_t> perm) {
    const std::size_t r = x.shape().size();
    std::vector<bool> seen(r, false);
    if (perm.size() != r) throw ShapeError("permute: permutation rank " + std::to_string(perm.size()) + " vs tensor " + shape_str(x.shape()));
    for (std::size_t p : perm) {
        if (p >= r || seen[p]) throw ShapeError("permute: invalid permutation for " + shape_str(x.shape()));
        seen[p] = true;
    }
    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.shape()[perm[i]];
    std::vector<Real> out(x.numel());
    kernels::permute(x.value().vec().data(), x.shape(), perm, out.data());
    return detail::make_node<Real>("permute", Tensor<Real>(out_shape, std::move(out)), {x},
                                   [perm, out_shape](Node<Real>& self) {
                                       std::vector<std::size_t> inv(perm.size());
                                       for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
                                       std::vector<Real> back(self.grad.size());
                                       kernels::permute(self.grad.data(), out_shape, inv, back.data());
                                       auto& dst = self.inputs[0]->grad_buffer();
                                       for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += back[i];
                                   });
}

template <class Real>
Var<Real> transpose(const Var<Real>& x, std::size_t a1, std::size_t a2) {
    std::vector<std::size_t> perm(x.shape().size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    if (a1 >= perm.size() || a2 >= perm.size()) throw ShapeError("transpose: axis out of range for " + shape_str(x.shape()));
    std::swap(perm[a1], perm[a2]);
    return permute(x, std::move(perm));
}

template <class Real>
Var<Real> broadcast_to(const Var<Real>& x, const Shape& shape) {
    Shape out;
    if (!kernels::broadcast_shapes(x.shape(), shape, out) || out != shape) throw ShapeError("broadcast_to", x.shape(), shape);
    auto idx = kernels::broadcast_index(x.shape(), shape);
    std::vector<Real> v(idx.size());
    const auto& xv = x.value().vec();
    for (std::size_t i = 0; i < idx.size(); ++i) v[i] = xv[idx[i]];
    return detail::make_node<Real>("broadcast_to", Tensor<Real>(shape, std::move(v)), {x},
                                   [idx = std::move(idx)](Node<Real>& self) {
                                       auto& dst = self.inputs[0]->grad_buffer();
                                       for (std::size_t i = 0; i < idx.size(); ++i) dst[idx[i]] += self.grad[i];
                                   });
}

template <class Real>
Var<Real> concat(const std::vector<Var<Real>>& xs, long axis_in) {
    if (xs.empty()) throw ShapeError("concat: no inputs");
    const Shape& first = xs.front().shape();
    const std::size_t axis = detail::normalize_axis(axis_in, first.size(), "concat");
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const auto& x : xs) {
        if (x.shape().size() != first.size()) throw ShapeError("concat", first, x.shape());
        for (std::size_t d = 0; d < first.size(); ++d)
            if (d != axis && x.shape()[d] != first[d]) throw ShapeError("concat", first, x.shape());
        out_shape[axis] += x.shape()[axis];
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
    for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
    std::vector<Real> out(shape_numel(out_shape));
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    const std::size_t row = out_shape[axis] * inner;
    for (const auto& x : xs) {
        offsets.push_back(off);
        const std::size_t chunk = x.shape()[axis] * inner;
        const auto& xv = x.value().vec();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(o * chunk), chunk, out.begin() + static_cast<std::ptrdiff_t>(o * row + off));
        off += chunk;
    }
    return detail::make_node<Real>("concat", Tensor<Real>(out_shape, std::move(out)), xs,
                                   [offsets, outer, row, inner, axis](Node<Real>& self) {
                                       for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                                           if (!detail::wants(self, k)) continue;
                                           auto& in = *self.inputs[k];
                                           auto& dst = in.grad_buffer();
                                           const std::size_t chunk = in.value.shape()[axis] * inner;
                                           for (std::size_t o = 0; o < outer; ++o)
                                               for (std::size_t j = 0; j < chunk; ++j) dst[o * chunk + j] += self.grad[o * row + offsets[k] + j];
                                       }
                                   });
}

template <class Real>
std::vector<Var<Real>> split(const Var<Real>& x, long axis_in, const std::vector<std::size_t>& sizes) {
    const std::size_t axis = detail::normalize_axis(axis_in, x.shape().size(), "split");
    const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
    if (total != x.shape()[axis]) throw ShapeError("split: sizes sum to " + std::to_string(total) + " but axis extent of " + shape_str(x.shape()) + " is " + std::to_string(x.shape()[axis]));
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= x.shape()[d];
    for (std::size_t d = axis + 1; d < x.shape().size(); ++d) inner *= x.shape()[d];
    const std::size_t row = x.shape()[axis] * inner;
    std::vector<Var<Real>> parts;
    std::size_t off = 0;
    const auto& xv = x.value().vec();
    for (std::size_t s : sizes) {
        Shape ps = x.shape();
        ps[axis] = s;
        const std::size_t chunk = s * inner;
        std::vector<Real> out(outer * chunk);
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(o * row + off), chunk, out.begin() + static_cast<std::ptrdiff_t>(o * chunk));
        parts.push_back(detail::make_node<Real>("split", Tensor<Real>(ps, std::move(out)), {x},
                                                [off, chunk, outer, row](Node<Real>& self) {
                                                    auto& dst = self.inputs[0]->grad_buffer();
                                                    for (std::size_t o = 0; o < outer; ++o)
                                                        for (std::size_t j = 0; j < chunk; ++j) dst[o * row + off + j] += self.grad[o * chunk + j];
                                                }));
        off += chunk;
    }
    return parts;
}

/// Rows of `table` [T, D] selected by `indices`; output shape is
/// `prefix` + [D] with numel(prefix) == indices.size().
template <class Real>
Var<Real> gather_rows(const Var<Real>& table, std::vector<std::size_t> indices, Shape prefix) {
    if (table.shape().size() != 2) throw ShapeError("gather_rows: table must be rank 2, got " + shape_str(table.shape()));
    if (shape_numel(prefix) != indices.size()) throw ShapeError("gather_rows: index count does not match prefix " + shape_str(prefix));
    const std::size_t rows = table.shape()[0], d = table.shape()[1];
    std::vector<Real> out(indices.size() * d);
    const auto& tv = table.value().vec();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= rows) throw ValueError("gather_rows: index " + std::to_string(indices[i]) + " exceeds table of " + std::to_string(rows) + " rows");
        std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(indices[i] * d), d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    prefix.push_back(d);
    return detail::make_node<Real>("gather_rows", Tensor<Real>(std::move(prefix), std::move(out)), {table},
                                   [indices = std::move(indices), d](Node<Real>& self) {
                                       auto& dst = self.inputs[0]->grad_buffer();
                                       for (std::size_t i = 0; i < indices.size(); ++i)
                                           for (std::size_t j = 0; j < d; ++j) dst[indices[i] * d + j] += self.grad[i * d + j];
                                   });
}

// ---------------------------------------------------------------- matmul

/// a[..., m, k] @ b[..., k, n]. Batch dims must match, or one operand is a
/// plain matrix shared across the other's batch.
template <class Real>
Var<Real> matmul(const Var<Real>& a, const Var<Real>& b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (as.size() < 2 || bs.size() < 2 || as[as.size() - 1] != bs[bs.size() - 2]) throw ShapeError("matmul", as, bs);
    const Shape a_batch(as.begin(), as.end() - 2);
    const Shape b_batch(bs.begin(), bs.end() - 2);
    if (!a_batch.empty() && !b_batch.empty() && a_batch != b_batch) throw ShapeError("matmul", as, bs);
    const std::size_t m = as[as.size() - 2], k = as.back(), n = bs.back();
    const std::size_t batch = std::max(shape_numel(a_batch), shape_numel(b_batch));
    const std::size_t a_step = a_batch.empty() ? 0 : m * k;
    const std::size_t b_step = b_batch.empty() ? 0 : k * n;
    Shape out_shape = a_batch.empty() ? b_batch : a_batch;
    out_shape.push_back(m);
    out_shape.push_back(n);
    std::vector<Real> out(batch * m * n);
    const Real* ap = a.value().vec().data();
    const Real* bp = b.value().vec().data();
    if (b_batch.empty()) {
        // Fold a's batch into its rows; row-wise so batch composition cannot
        // change any row's result.
        kernels::gemm_rowwise(batch * m, n, k, ap, bp, out.data());
    } else {
        for (std::size_t i = 0; i < batch; ++i)
            kernels::gemm(false, false, m, n, k, ap + i * a_step, bp + i * b_step, out.data() + i * m * n, false);
    }
    return detail::make_node<Real>(
        "matmul", Tensor<Real>(out_shape, std::move(out)), {a, b},
        [m, n, k, batch, a_step, b_step, a_shared = a_batch.empty(), b_shared = b_batch.empty()](Node<Real>& self) {
            const Real* g = self.grad.data();
            const Real* ap = self.inputs[0]->value.vec().data();
            const Real* bp = self.inputs[1]->value.vec().data();
            if (detail::wants(self, 0)) {
                Real* da = self.inputs[0]->grad_buffer().data();
                if (b_shared) {
                    kernels::gemm(false, true, batch * m, k, n, g, bp, da, true);
                } else {
                    for (std::size_t i = 0; i < batch; ++i)
                        kernels::gemm(false, true, m, k, n, g + i * m * n, bp + i * b_step, da + i * a_step, true);
                }
            }
            if (detail::wants(self, 1)) {
                Real* db = self.inputs[1]->grad_buffer().data();
                if (b_shared) {
                    kernels::gemm(true, false, k, n, batch * m, ap, g, db, true);
                } else {
                    for (std::size_t i = 0; i < batch; ++i)
                        kernels::gemm(true, false, k, n, m, ap + i * a_step, g + i * m * n, db + i * b_step, true);
                }
            }
            (void)a_shared;
        });
}

// ---------------------------------------------------------------- reductions

template <class Real>
Var<Real> sum(const Var<Real>& x) {
    Real s = 0;
    for (Real v : x.value().vec()) s += v;
    return detail::make_node<Real>("sum", Tensor<Real>::scalar(s), {x}, [](Node<Real>& self) {
        auto& dst = self.inputs[0]->grad_buffer();
        const Real g = self.grad[0];
        for (auto& d : dst) d += g;
    });
}

template <class Real>
Var<Real> mean(const Var<Real>& x) {
    return mul_scalar(sum(x), Real(1) / static_cast<Real>(x.numel()));
}

/// Sum over one axis; the axis is kept with extent 1 when `keepdim`.
template <class Real>
Var<Real> sum_axis(const Var<Real>& x, long axis_in, bool keepdim = false) {
    const Shape& s = x.shape();
    const std::size_t axis = detail::normalize_axis(axis_in, s.size(), "sum_axis");
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
    for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
    const std::size_t len = s[axis];
    Shape out_shape;
    for (std::size_t d = 0; d < s.size(); ++d) {
        if (d != axis) out_shape.push_back(s[d]);
        else if (keepdim) out_shape.push_back(1);
    }
    std::vector<Real> out(outer * inner, Real(0));
    const auto& xv = x.value().vec();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t l = 0; l < len; ++l)
            for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xv[(o * len + l) * inner + i];
    return detail::make_node<Real>("sum_axis", Tensor<Real>(out_shape, std::move(out)), {x},
                                   [outer, inner, len](Node<Real>& self) {
                                       auto& dst = self.inputs[0]->grad_buffer();
                                       for (std::size_t o = 0; o < outer; ++o)
                                           for (std::size_t l = 0; l < len; ++l)
                                               for (std::size_t i = 0; i < inner; ++i) dst[(o * len + l) * inner + i] += self.grad[o * inner + i];
                                   });
}

template <class Real>
Var<Real> mean_axis(const Var<Real>& x, long axis, bool keepdim = false) {
    const std::size_t a = detail::normalize_axis(axis, x.shape().size(), "mean_axis");
    return mul_scalar(sum_axis(x, axis, keepdim), Real(1) / static_cast<Real>(x.shape()[a]));
}

// ---------------------------------------------------------------- fused

/// Softmax over the last axis.
template <class Real>
Var<Real> softmax(const Var<Real>& x) {
    if (x.shape().empty()) throw ShapeError("softmax: scalar input");
    const std::size_t len = x.shape().back();
    const std::size_t rows = x.numel() / len;
    const auto& xv = x.value().vec();
    std::vector<Real> out(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* in = xv.data() + r * len;
        Real* o = out.data() + r * len;
        const Real mx = *std::max_element(in, in + len);
        Real z = 0;
        for (std::size_t i = 0; i < len; ++i) z += (o[i] = std::exp(in[i] - mx));
        const Real inv = Real(1) / z;
        for (std::size_t i = 0; i < len; ++i) o[i] *= inv;
    }
    return detail::make_node<Real>("softmax", Tensor<Real>(x.shape(), std::move(out)), {x}, [rows, len](Node<Real>& self) {
        auto& dst = self.inputs[0]->grad_buffer();
        const auto& y = self.value.vec();
        const auto& g = self.grad;
        for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t base = r * len;
            Real dot = 0;
            for (std::size_t i = 0; i < len; ++i) dot += g[base + i] * y[base + i];
            for (std::size_t i = 0; i < len; ++i) dst[base + i] += y[base + i] * (g[base + i] - dot);
        }
    });
}

/// Layer normalization over the last axis followed by `scale * xhat + shift`.
template <class Real>
Var<Real> layer_norm(const Var<Real>& x, const Var<Real>& scale, const Var<Real>& shift, Real eps = Real(1e-5)) {
    if (x.shape().empty()) throw ShapeError("layer_norm: scalar input");
    const std::size_t len = x.shape().back();
    if (scale.shape() != Shape{len}) throw ShapeError("layer_norm", x.shape(), scale.shape());
    if (shift.shape() != Shape{len}) throw ShapeError("layer_norm", x.shape(), shift.shape());
    const std::size_t rows = x.numel() / len;
    const auto& xv = x.value().vec();
    const auto& gv = scale.value().vec();
    const auto& bv = shift.value().vec();
    std::vector<Real> xhat(xv.size()), rstd(rows), out(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* in = xv.data() + r * len;
        Real mu = 0;
        for (std::size_t i = 0; i < len; ++i) mu += in[i];
        mu /= static_cast<Real>(len);
        Real var = 0;
        for (std::size_t i = 0; i < len; ++i) var += (in[i] - mu) * (in[i] - mu);
        var /= static_cast<Real>(len);
        const Real rs = Real(1) / std::sqrt(var + eps);
        rstd[r] = rs;
        for (std::size_t i = 0; i < len; ++i) {
            const Real h = (in[i] - mu) * rs;
            xhat[r * len + i] = h;
            out[r * len + i] = h * gv[i] + bv[i];
        }
    }
    return detail::make_node<Real>(
        "layer_norm", Tensor<Real>(x.shape(), std::move(out)), {x, scale, shift},
        [rows, len, xhat = std::move(xhat), rstd = std::move(rstd)](Node<Real>& self) {
            const auto& g = self.grad;
            const auto& gamma = self.inputs[1]->value.vec();
            if (detail::wants(self, 0)) {
                auto& dx = self.inputs[0]->grad_buffer();
                std::vector<Real> dh(len);
                for (std::size_t r = 0; r < rows; ++r) {
                    const std::size_t base = r * len;
                    Real m1 = 0, m2 = 0;
                    for (std::size_t i = 0; i < len; ++i) {
                        dh[i] = g[base + i] * gamma[i];
                        m1 += dh[i];
                        m2 += dh[i] * xhat[base + i];
                    }
                    m1 /= static_cast<Real>(len);
                    m2 /= static_cast<Real>(len);
                    for (std::size_t i = 0; i < len; ++i) dx[base + i] += rstd[r] * (dh[i] - m1 - xhat[base + i] * m2);
                }
            }
            if (detail::wants(self, 1)) {
                auto& dg = self.inputs[1]->grad_buffer();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t i = 0; i < len; ++i) dg[i] += g[r * len + i] * xhat[r * len + i];
            }
            if (detail::wants(self, 2)) {
                auto& db = self.inputs[2]->grad_buffer();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t i = 0; i < len; ++i) db[i] += g[r * len + i];
            }
        });
}

// ---------------------------------------------------------------- backward

/// Reverse-mode accumulation from a scalar `loss`. Gradients land in each
/// reachable node; read them with `Var::grad()`.
template <class Real>
void backward(const Var<Real>& loss) {
    if (loss.numel() != 1) throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;
    // Iterative post-order DFS gives a topological order.
    std::vector<Node<Real>*> order;
    std::unordered_set<Node<Real>*> visited;
    std::vector<std::pair<Node<Real>*, std::size_t>> stack{{loss.node().get(), 0}};
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node<Real>* child = node->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Node<Real>* n : order) n->grad.clear();
    loss.node()->grad_buffer()[0] = Real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<Real>* n = *it;
        if (n->grad.empty()) continue;
        for (Real g : n->grad) {
            if (!std::isfinite(g)) throw NumericError("backward: non-finite gradient at node '" + n->op + "'");
        }
        if (n->backward) n->backward(*n);
    }
}

/// Runs backward and collects dLoss/dParam for each of `params` (zeros for
/// parameters the loss does not depend on).
template <class Real>
std::vector<Tensor<Real>> gradients(const Var<Real>& loss, const std::vector<Var<Real>>& params) {
    for (const auto& p : params) p.node()->grad.clear();
    backward(loss);
    std::vector<Tensor<Real>> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back(p.grad());
    return out;
}

}  // namespace intra
