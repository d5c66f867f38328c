#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "intra/gradcheck.hpp"
#include "intra/model.hpp"
#include "intra/similarity.hpp"

namespace intra {

/// Smallest configuration that still exercises every layer type.
inline ModelConfig toy_gradcheck_config() {
    ModelConfig cfg;
    cfg.patch_size = 4;
    cfg.window_side = 3;
    cfg.latent_dim = 16;
    cfg.num_blocks = 2;
    cfg.num_heads = 2;
    cfg.channels = 1;
    cfg.image_size = 16;
    return cfg;
}

struct ModelGradcheckOptions {
    std::uint64_t seed = 1;
    std::size_t batch = 2;
    double step = 1e-3;
    LossWeights weights{};
};

/// Backward pass of the inpainting loss through a freshly initialised model
/// against central differences over every parameter, in double precision.
inline GradientComparison check_model_gradient(const ModelConfig& cfg, const ModelGradcheckOptions& opt = {}) {
    std::mt19937_64 rng(opt.seed);
    IntraModel<double> model(cfg, rng);
    // The head starts at zero, which would block every other gradient.
    model.randomize("head.weight", rng);
    Image img(cfg.image_size, cfg.image_size, cfg.channels);
    std::uniform_real_distribution<float> pix(0.0f, 1.0f);
    for (auto& v : img.data) v = pix(rng);
    const PatchGrid grid = split_into_patches(img, cfg.patch_size);
    std::vector<WindowRef> refs;
    for (std::size_t b = 0; b < opt.batch; ++b) refs.push_back({&grid, sample_window_spec(grid.rows, grid.cols, cfg.window_side, rng)});
    const auto batch = make_window_batch<double>(refs);

    auto loss_of = [&](const std::vector<Var<double>>& p) {
        return inpaint_loss(batch.targets, model.forward(p, batch), cfg.patch_size, cfg.channels, opt.weights);
    };
    const auto params = model.bind(true);
    const auto analytic = gradients(loss_of(params), params);
    const std::function<double(const std::vector<Tensor<double>>&)> f = [&](const std::vector<Tensor<double>>& ts) {
        std::vector<Var<double>> p;
        p.reserve(ts.size());
        for (const auto& t : ts) p.push_back(Var<double>::constant(t));
        return loss_of(p).value().item();
    };
    const auto numeric = finite_diff_gradient<double>(f, model.parameters(), opt.step);
    return compare_gradients(analytic, numeric);
}

}  // namespace intra
