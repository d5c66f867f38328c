#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "intra/errors.hpp"
#include "intra/tensor.hpp"

namespace intra {

struct AdamOptions {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <class Real>
struct AdamState {
    AdamOptions options;
    std::vector<Tensor<Real>> first_moment;
    std::vector<Tensor<Real>> second_moment;
    std::uint64_t step = 0;
};

/// One bias-corrected Adam update, in place. Moments are created lazily on
/// the first call and must keep matching the parameter shapes afterwards.
template <class Real>
void adam_step(std::span<Tensor<Real>> params, std::span<const Tensor<Real>> grads, AdamState<Real>& state) {
    if (params.size() != grads.size()) throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters but " + std::to_string(grads.size()) + " gradients");
    if (state.first_moment.empty()) {
        for (const auto& p : params) {
            state.first_moment.emplace_back(p.shape(), Real(0));
            state.second_moment.emplace_back(p.shape(), Real(0));
        }
    }
    if (state.first_moment.size() != params.size()) throw ShapeError("adam_step: optimizer state tracks a different parameter set");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].shape() != grads[i].shape()) throw ShapeError("adam_step", params[i].shape(), grads[i].shape());
        if (params[i].shape() != state.first_moment[i].shape()) throw ShapeError("adam_step", params[i].shape(), state.first_moment[i].shape());
    }
    const auto& o = state.options;
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(o.beta1, t);
    const double c2 = 1.0 - std::pow(o.beta2, t);
    const Real b1 = static_cast<Real>(o.beta1), b2 = static_cast<Real>(o.beta2);
    const Real lr = static_cast<Real>(o.lr), eps = static_cast<Real>(o.eps);
    const Real ic1 = static_cast<Real>(1.0 / c1), ic2 = static_cast<Real>(1.0 / c2);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].data();
        auto g = grads[i].data();
        auto m = state.first_moment[i].data();
        auto v = state.second_moment[i].data();
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = b1 * m[j] + (Real(1) - b1) * g[j];
            v[j] = b2 * v[j] + (Real(1) - b2) * g[j] * g[j];
            const Real mhat = m[j] * ic1;
            const Real vhat = v[j] * ic2;
            p[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

}  // namespace intra
