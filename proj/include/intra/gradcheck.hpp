#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "intra/errors.hpp"
#include "intra/tensor.hpp"

namespace intra {

/// Central-difference estimate (f(p+h) - f(p-h)) / 2h of every coordinate of
/// every parameter tensor. `f` must be deterministic.
template <class Real>
std::vector<Tensor<Real>> finite_diff_gradient(const std::function<Real(const std::vector<Tensor<Real>>&)>& f,
                                               std::vector<Tensor<Real>> params, Real step) {
    if (!(step > Real(0))) throw ValueError("finite_diff_gradient: step must be positive");
    std::vector<Tensor<Real>> grads;
    grads.reserve(params.size());
    for (std::size_t t = 0; t < params.size(); ++t) {
        Tensor<Real> g(params[t].shape(), Real(0));
        for (std::size_t i = 0; i < params[t].numel(); ++i) {
            const Real orig = params[t][i];
            params[t][i] = orig + step;
            const Real up = f(params);
            params[t][i] = orig - step;
            const Real down = f(params);
            params[t][i] = orig;
            g[i] = (up - down) / (Real(2) * step);
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

struct GradientComparison {
    double max_relative_error = 0.0;  // worst single coordinate
    double max_absolute_error = 0.0;
    std::size_t worst_tensor = 0;
    std::size_t worst_index = 0;
    // Worst per-tensor ||a - n|| / max(||a||, ||n||, floor).
    double max_tensor_relative_error = 0.0;
    std::size_t worst_tensor_by_norm = 0;
    std::size_t compared = 0;
};

/// Elementwise |a - n| / max(|a|, |n|, floor), plus the same ratio taken over
/// the Euclidean norms of each tensor. The floor keeps gradients that are
/// (numerically) zero from dividing noise by noise.
template <class Real>
GradientComparison compare_gradients(const std::vector<Tensor<Real>>& analytic, const std::vector<Tensor<Real>>& numeric,
                                     double floor = 1e-6) {
    if (analytic.size() != numeric.size()) throw ShapeError("compare_gradients: tensor count mismatch");
    GradientComparison out;
    for (std::size_t t = 0; t < analytic.size(); ++t) {
        if (analytic[t].shape() != numeric[t].shape()) throw ShapeError("compare_gradients", analytic[t].shape(), numeric[t].shape());
        double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
        for (std::size_t i = 0; i < analytic[t].numel(); ++i) {
            const double a = static_cast<double>(analytic[t][i]);
            const double n = static_cast<double>(numeric[t][i]);
            const double abs_err = std::abs(a - n);
            diff2 += abs_err * abs_err;
            a2 += a * a;
            n2 += n * n;
            const double rel = abs_err / std::max({std::abs(a), std::abs(n), floor});
            out.max_absolute_error = std::max(out.max_absolute_error, abs_err);
            if (rel > out.max_relative_error) {
                out.max_relative_error = rel;
                out.worst_tensor = t;
                out.worst_index = i;
            }
            ++out.compared;
        }
        const double tensor_rel = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), floor});
        if (tensor_rel > out.max_tensor_relative_error) {
            out.max_tensor_relative_error = tensor_rel;
            out.worst_tensor_by_norm = t;
        }
    }
    return out;
}

}  // namespace intra
