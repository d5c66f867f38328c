#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "intra/config.hpp"
#include "intra/errors.hpp"
#include "intra/image.hpp"
#include "intra/model.hpp"
#include "intra/optim.hpp"
#include "intra/parallel.hpp"
#include "intra/patching.hpp"
#include "intra/similarity.hpp"
#include "intra/synthetic.hpp"

namespace intra {

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double best_val = 0.0;
    std::size_t patience_left = 0;
};

struct TrainConfig {
    std::size_t windows_per_image = 600;
    std::size_t batch_size = 256;
    double lr = 1e-4;
    std::size_t patience = 50;
    std::size_t max_epochs = 1000;
    double validation_fraction = 0.10;
    std::size_t validation_cap = 20;
    bool use_validation = true;  // false: early stopping tracks the training loss
    Augmentation augment = Augmentation::dihedral;
    std::uint64_t seed = 1;
    LossWeights weights{};
    std::size_t workers = 1;
    std::function<void(const EpochRecord&)> on_epoch;

    static TrainConfig from(const RunConfig& rc) {
        TrainConfig t;
        t.windows_per_image = rc.windows_per_image;
        t.batch_size = rc.batch_size;
        t.lr = rc.lr;
        t.patience = rc.patience;
        t.max_epochs = rc.max_epochs;
        t.augment = rc.augment;
        t.seed = rc.seed;
        t.weights = rc.loss_weights();
        t.workers = rc.effective_workers();
        return t;
    }
};

struct TrainResult {
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double best_val = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> train_ids;       // indices into the input images
    std::vector<std::size_t> validation_ids;
    std::uint64_t validation_seed = 0;        // windows used by validation_loss
    std::size_t steps = 0;
};

/// Validation set size for n training images: 10%, rounded up, at most 20.
inline std::size_t validation_count(std::size_t n, double fraction = 0.10, std::size_t cap = 20) {
    return std::min(static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9)), cap);
}

/// Seed-determined disjoint split of image indices into {train, validation}.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_validation(std::size_t n, std::size_t n_val, std::uint64_t seed) {
    if (n_val >= n) throw ValueError("split_validation: validation set would leave no training images");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(seed, 101));
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<std::size_t> val(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> tr(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
    std::sort(val.begin(), val.end());
    std::sort(tr.begin(), tr.end());
    return {tr, val};
}

/// Index of the dihedral element used for one augmentation draw.
template <class Rng>
int draw_dihedral(Rng& rng) {
    return std::uniform_int_distribution<int>(0, 7)(rng);
}

/// Random rotation and flip. Dihedral mode picks one of the 8 symmetries of
/// the square; rotate mode uses an arbitrary angle (bilinear, mirror border)
/// and an optional horizontal flip.
template <class Rng>
Image augment(const Image& image, Rng& rng, Augmentation mode = Augmentation::dihedral) {
    switch (mode) {
        case Augmentation::none: return image;
        case Augmentation::dihedral: return dihedral_transform(image, draw_dihedral(rng));
        case Augmentation::rotate: {
            const double angle = std::uniform_real_distribution<double>(0.0, 360.0)(rng);
            const bool flip = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
            Image r = rotate_bilinear(image, angle);
            return flip ? dihedral_transform(r, 4) : r;
        }
    }
    return image;
}

/// Anything that maps a window batch to predicted targets [B, K*K*C].
template <class Real>
using Predictor = std::function<Tensor<Real>(const WindowBatch<Real>&)>;

/// Mean inpainting loss over a seed-determined set of windows drawn from
/// `images` (windows_per_image each). The same seed always gives the same
/// windows, so values from different epochs are comparable.
template <class Real>
double validation_loss(const Predictor<Real>& predict, std::span<const Image> images, std::uint64_t seed, const ModelConfig& cfg,
                       std::size_t windows_per_image, const LossWeights& weights, std::size_t batch_size = 256) {
    if (images.empty()) throw ValueError("validation_loss: empty validation set");
    if (windows_per_image == 0) throw ValueError("validation_loss: windows_per_image must be positive");
    std::vector<PatchGrid> grids;
    grids.reserve(images.size());
    for (const auto& im : images) grids.push_back(split_into_patches(im, cfg.patch_size));
    std::mt19937_64 rng(derive_seed(seed, 102));
    std::vector<WindowRef> refs;
    refs.reserve(images.size() * windows_per_image);
    for (const auto& g : grids)
        for (std::size_t w = 0; w < windows_per_image; ++w) refs.push_back({&g, sample_window_spec(g.rows, g.cols, cfg.window_side, rng)});
    const std::size_t bs = std::max<std::size_t>(1, batch_size);
    double total = 0.0;
    for (std::size_t lo = 0; lo < refs.size(); lo += bs) {
        const std::size_t hi = std::min(refs.size(), lo + bs);
        const auto batch = make_window_batch<Real>(std::span<const WindowRef>(refs).subspan(lo, hi - lo));
        const Tensor<Real> pred = predict(batch);
        const double l = static_cast<double>(inpaint_loss(batch.targets, Var<Real>::constant(pred), cfg.patch_size, cfg.channels, weights).value().item());
        total += l * static_cast<double>(hi - lo);
    }
    return total / static_cast<double>(refs.size());
}

template <class Real>
double validation_loss(const IntraModel<Real>& model, std::span<const Image> images, std::uint64_t seed, std::size_t windows_per_image,
                       const LossWeights& weights, std::size_t batch_size = 256) {
    const auto params = model.bind(false);
    Predictor<Real> p = [&](const WindowBatch<Real>& b) { return model.forward(params, b).value(); };
    return validation_loss<Real>(p, images, seed, model.config(), windows_per_image, weights, batch_size);
}

/// Minimises the inpainting loss with Adam. Every epoch draws
/// windows_per_image windows from each training image (augmented once per
/// image per epoch), shuffles them and trains on batches of batch_size,
/// including the short final batch. Stops after `patience` epochs without a
/// better validation loss or at max_epochs, and leaves the model holding the
/// weights of the best epoch.
template <class Real>
TrainResult train(IntraModel<Real>& model, std::span<const Image> images, const TrainConfig& tc) {
    if (images.empty()) throw ValueError("train: no training images");
    if (tc.batch_size == 0 || tc.windows_per_image == 0) throw ConfigError("train: batch_size and windows_per_image must be positive");
    if (tc.max_epochs == 0) throw ConfigError("train: max_epochs must be positive");
    const ModelConfig& cfg = model.config();
    for (const auto& im : images)
        if (im.height != cfg.image_size || im.width != cfg.image_size || im.channels != cfg.channels)
            throw ShapeError("train: image " + shape_str({im.height, im.width, im.channels}) + " does not match model " +
                             shape_str({cfg.image_size, cfg.image_size, cfg.channels}));

    TrainResult res;
    if (tc.use_validation) {
        if (images.size() < 2) throw ValueError("train: need at least 2 images to hold out a validation set");
        std::tie(res.train_ids, res.validation_ids) = split_validation(images.size(), validation_count(images.size(), tc.validation_fraction, tc.validation_cap), tc.seed);
        if (res.validation_ids.empty()) throw ValueError("train: validation set is empty");
    } else {
        res.train_ids.resize(images.size());
        std::iota(res.train_ids.begin(), res.train_ids.end(), std::size_t{0});
    }
    res.validation_seed = derive_seed(tc.seed, 103);
    std::vector<Image> val_images;
    for (std::size_t i : res.validation_ids) val_images.push_back(images[i]);

    AdamState<Real> opt;
    opt.options.lr = tc.lr;
    std::vector<Tensor<Real>> best = model.parameters();
    std::size_t since_best = 0;

    for (std::size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
        const std::uint64_t epoch_seed = derive_seed(tc.seed, 1000 + epoch);
        // Augment each training image once for this epoch.
        std::vector<PatchGrid> grids(res.train_ids.size());
        parallel_for(res.train_ids.size(), tc.workers, [&](std::size_t j) {
            std::mt19937_64 arng(derive_seed(epoch_seed, j));
            grids[j] = split_into_patches(augment(images[res.train_ids[j]], arng, tc.augment), cfg.patch_size);
        });
        std::mt19937_64 rng(derive_seed(epoch_seed, 1u << 20));
        std::vector<WindowRef> refs;
        refs.reserve(grids.size() * tc.windows_per_image);
        for (const auto& g : grids)
            for (std::size_t w = 0; w < tc.windows_per_image; ++w) refs.push_back({&g, sample_window_spec(g.rows, g.cols, cfg.window_side, rng)});
        std::shuffle(refs.begin(), refs.end(), rng);

        double epoch_loss = 0.0;
        for (std::size_t lo = 0; lo < refs.size(); lo += tc.batch_size) {
            const std::size_t hi = std::min(refs.size(), lo + tc.batch_size);
            const auto batch = make_window_batch<Real>(std::span<const WindowRef>(refs).subspan(lo, hi - lo));
            const auto params = model.bind(true);
            const auto loss = inpaint_loss(batch.targets, model.forward(params, batch), cfg.patch_size, cfg.channels, tc.weights);
            const double lv = static_cast<double>(loss.value().item());
            if (!std::isfinite(lv))
                throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(res.steps + 1) +
                                   " (lr " + std::to_string(tc.lr) + ", batch " + std::to_string(hi - lo) + ")");
            const auto grads = gradients(loss, params);
            adam_step<Real>(model.parameters(), grads, opt);
            ++res.steps;
            epoch_loss += lv * static_cast<double>(hi - lo);
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = epoch_loss / static_cast<double>(refs.size());
        rec.val_loss = tc.use_validation
                           ? validation_loss(model, std::span<const Image>(val_images), res.validation_seed, tc.windows_per_image, tc.weights, tc.batch_size)
                           : rec.train_loss;
        if (rec.val_loss < res.best_val) {
            res.best_val = rec.val_loss;
            res.best_epoch = epoch;
            best = model.parameters();
            since_best = 0;
        } else {
            ++since_best;
        }
        rec.best_val = res.best_val;
        rec.patience_left = tc.patience > since_best ? tc.patience - since_best : 0;
        res.history.push_back(rec);
        if (tc.on_epoch) tc.on_epoch(rec);
        if (since_best >= tc.patience) break;
    }
    model.parameters() = std::move(best);
    return res;
}

inline std::string history_header() { return "epoch,train_loss,val_loss,best_val,patience_left"; }

inline std::string history_line(const EpochRecord& r) {
    std::ostringstream os;
    os.precision(9);
    os << r.epoch << ',' << r.train_loss << ',' << r.val_loss << ',' << r.best_val << ',' << r.patience_left;
    return os.str();
}

inline void write_history(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << history_header() << '\n';
    for (const auto& r : history) out << history_line(r) << '\n';
}

/// Best validation loss of a run, averaged over the epochs within `radius`
/// of the best epoch (clipped to the run).
inline double smoothed_best_loss(const std::vector<EpochRecord>& history, std::size_t radius = 5) {
    if (history.empty()) throw ValueError("smoothed_best_loss: empty history");
    std::size_t best = 0;
    for (std::size_t i = 1; i < history.size(); ++i)
        if (history[i].val_loss < history[best].val_loss) best = i;
    const std::size_t lo = best >= radius ? best - radius : 0, hi = std::min(history.size() - 1, best + radius);
    double s = 0.0;
    for (std::size_t i = lo; i <= hi; ++i) s += history[i].val_loss;
    return s / static_cast<double>(hi - lo + 1);
}

/// Smallest size whose successor improves the loss by less than `threshold`;
/// the largest size when every step improves enough.
inline std::size_t choose_image_size(const std::vector<std::size_t>& sizes, const std::vector<double>& losses, double threshold = 1e-4) {
    if (sizes.size() < 2 || sizes.size() != losses.size()) throw ValueError("choose_image_size: need at least two sizes with one loss each");
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i)
        if (sizes[i] >= sizes[i + 1]) throw ValueError("choose_image_size: sizes must be ascending");
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i)
        if (losses[i] - losses[i + 1] < threshold) return sizes[i];
    return sizes.back();
}

struct SizeSelection {
    std::size_t chosen = 0;
    std::vector<std::size_t> sizes;
    std::vector<double> smoothed_losses;
};

/// Trains a fresh model per candidate size for a fixed number of epochs and
/// applies choose_image_size to the smoothed best validation losses.
/// `images_at(size)` returns the training images resized to size x size.
inline SizeSelection select_image_size(const std::function<std::vector<Image>(std::size_t)>& images_at, const std::vector<std::size_t>& sizes,
                                       std::size_t epochs, const RunConfig& base, std::size_t channels = 3) {
    if (sizes.size() < 2) throw ValueError("select_image_size: need at least two candidate sizes");
    SizeSelection sel;
    sel.sizes = sizes;
    for (std::size_t size : sizes) {
        RunConfig rc = base;
        rc.image_size = size;
        rc.max_epochs = epochs;
        rc.patience = epochs;  // fixed-length runs
        IntraModel<float> model(rc.model(channels), rc.seed);
        const std::vector<Image> imgs = images_at(size);
        TrainConfig tc = TrainConfig::from(rc);
        const TrainResult r = train(model, std::span<const Image>(imgs), tc);
        sel.smoothed_losses.push_back(smoothed_best_loss(r.history));
    }
    sel.chosen = choose_image_size(sizes, sel.smoothed_losses);
    return sel;
}

}  // namespace intra
