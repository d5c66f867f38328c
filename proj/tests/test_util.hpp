#pragma once

#include <functional>
#include <random>
#include <vector>

#include "intra/autodiff.hpp"
#include "intra/gradcheck.hpp"

namespace intra::testing {

template <class Real>
Tensor<Real> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor<Real> t(shape);
    for (auto& v : t.data()) v = static_cast<Real>(dist(rng));
    return t;
}

/// Compares backward() against central differences for a graph built by
/// `build` from leaf variables. The output is contracted with fixed random
/// weights so every output element matters.
inline GradientComparison check_primitive(const std::vector<Tensor<double>>& inputs,
                                          const std::function<Var<double>(const std::vector<Var<double>>&)>& build,
                                          std::uint64_t seed = 7, double step = 1e-3) {
    std::mt19937_64 rng(seed);
    Tensor<double> weights;
    auto loss_of = [&](const std::vector<Var<double>>& vars) {
        auto out = build(vars);
        if (weights.numel() == 0) weights = random_tensor<double>(out.shape(), rng);
        return sum(mul(out, Var<double>::constant(weights)));
    };
    std::vector<Var<double>> vars;
    for (const auto& t : inputs) vars.push_back(Var<double>::parameter(t));
    const auto analytic = gradients(loss_of(vars), vars);
    const std::function<double(const std::vector<Tensor<double>>&)> f = [&](const std::vector<Tensor<double>>& ps) {
        std::vector<Var<double>> cs;
        for (const auto& t : ps) cs.push_back(Var<double>::constant(t));
        return loss_of(cs).value().item();
    };
    const auto numeric = finite_diff_gradient<double>(f, inputs, step);
    return compare_gradients(analytic, numeric);
}

}  // namespace intra::testing
