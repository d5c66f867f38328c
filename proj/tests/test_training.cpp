#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "intra/training.hpp"

using namespace intra;

namespace {

ModelConfig tiny() {
    ModelConfig cfg;
    cfg.patch_size = 4;
    cfg.window_side = 3;
    cfg.latent_dim = 8;
    cfg.num_blocks = 2;
    cfg.num_heads = 2;
    cfg.image_size = 16;
    return cfg;
}

TrainConfig quick() {
    TrainConfig tc;
    tc.windows_per_image = 12;
    tc.batch_size = 10;
    tc.lr = 1e-3;
    tc.patience = 3;
    tc.max_epochs = 4;
    tc.seed = 9;
    return tc;
}

std::vector<Image> textures(std::size_t n, std::uint64_t seed = 2) {
    const SyntheticTexture tex(seed, 16);
    std::vector<Image> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(tex.render(100 + i));
    return out;
}

bool same_parameters(const IntraModel<float>& a, const IntraModel<float>& b) {
    for (std::size_t i = 0; i < a.parameters().size(); ++i)
        if (a.parameters()[i].vec() != b.parameters()[i].vec()) return false;
    return true;
}

}  // namespace

TEST(Validation, SizeIsTenPercentCappedAtTwenty) {
    EXPECT_EQ(validation_count(2), 1u);
    EXPECT_EQ(validation_count(10), 1u);
    EXPECT_EQ(validation_count(11), 2u);
    EXPECT_EQ(validation_count(20), 2u);
    EXPECT_EQ(validation_count(199), 20u);
    EXPECT_EQ(validation_count(391), 20u);
}

TEST(Validation, SplitIsDisjointCoveringAndSeeded) {
    for (std::size_t n : {2u, 7u, 60u, 391u}) {
        const auto [tr, val] = split_validation(n, validation_count(n), 5);
        EXPECT_EQ(val.size(), validation_count(n));
        std::vector<int> seen(n, 0);
        for (auto i : tr) ++seen[i];
        for (auto i : val) ++seen[i];
        for (int s : seen) EXPECT_EQ(s, 1);
        EXPECT_EQ(split_validation(n, validation_count(n), 5), std::make_pair(tr, val));
    }
    EXPECT_THROW(split_validation(3, 3, 1), ValueError);
}

TEST(Augment, IdentityAndInverses) {
    const Image img = textures(1)[0];
    std::mt19937_64 rng(1);
    EXPECT_EQ(augment(img, rng, Augmentation::none), img);
    EXPECT_EQ(dihedral_transform(img, 0), img);
    for (int e = 0; e < 8; ++e) EXPECT_EQ(dihedral_transform(dihedral_transform(img, e), dihedral_inverse(e)), img) << e;
}

TEST(Augment, AllEightTransformsUniform) {
    std::mt19937_64 rng(77);
    std::array<int, 8> counts{};
    const int n = 10000;
    for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(draw_dihedral(rng))];
    double chi2 = 0.0;
    const double expected = n / 8.0;
    for (int c : counts) {
        EXPECT_GT(c, 0);
        EXPECT_LT(std::abs(c - expected), 3.0 * std::sqrt(expected * (1.0 - 1.0 / 8.0)));
        chi2 += (c - expected) * (c - expected) / expected;
    }
    EXPECT_LT(chi2, 24.32);  // 7 dof, p = 0.001
}

TEST(Augment, ArbitraryRotationKeepsShape) {
    const Image img = textures(1)[0];
    std::mt19937_64 rng(3);
    const Image r = augment(img, rng, Augmentation::rotate);
    EXPECT_TRUE(r.same_shape(img));
    for (float v : r.data) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
    }
}

TEST(ValidationLoss, SameSeedSameValue) {
    const IntraModel<float> model(tiny(), 1);
    const auto imgs = textures(2);
    const double a = validation_loss(model, std::span<const Image>(imgs), 42, 30, LossWeights{}, 7);
    const double b = validation_loss(model, std::span<const Image>(imgs), 42, 30, LossWeights{}, 7);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, validation_loss(model, std::span<const Image>(imgs), 43, 30, LossWeights{}, 7));
    EXPECT_THROW(validation_loss(model, std::span<const Image>{}, 42, 30, LossWeights{}), ValueError);
}

TEST(ValidationLoss, OracleThatCopiesTargetScoresZero) {
    const auto imgs = textures(2);
    Predictor<float> oracle = [](const WindowBatch<float>& b) { return b.targets; };
    EXPECT_LT(validation_loss<float>(oracle, std::span<const Image>(imgs), 1, tiny(), 40, LossWeights{}, 16), 1e-6);
}

TEST(Train, PatienceZeroRunsOneEpoch) {
    IntraModel<float> model(tiny(), 1);
    auto tc = quick();
    tc.patience = 0;
    tc.max_epochs = 10;
    const auto imgs = textures(4);
    const auto r = train(model, std::span<const Image>(imgs), tc);
    EXPECT_EQ(r.history.size(), 1u);
    EXPECT_EQ(r.history[0].patience_left, 0u);
}

TEST(Train, ZeroLearningRateLeavesWeightsUnchanged) {
    IntraModel<float> model(tiny(), 1);
    const IntraModel<float> before = model;
    auto tc = quick();
    tc.lr = 0.0;
    tc.patience = 10;
    const auto imgs = textures(4);
    const auto r = train(model, std::span<const Image>(imgs), tc);
    EXPECT_TRUE(same_parameters(model, before));
    ASSERT_EQ(r.history.size(), 4u);
    for (const auto& e : r.history) EXPECT_EQ(e.val_loss, r.history[0].val_loss);
}

TEST(Train, SeedGivesBitIdenticalHistory) {
    const auto imgs = textures(5);
    IntraModel<float> a(tiny(), 1), b(tiny(), 1);
    auto tc = quick();
    const auto ra = train(a, std::span<const Image>(imgs), tc);
    tc.workers = 3;
    const auto rb = train(b, std::span<const Image>(imgs), tc);
    ASSERT_EQ(ra.history.size(), rb.history.size());
    for (std::size_t i = 0; i < ra.history.size(); ++i) {
        EXPECT_EQ(ra.history[i].train_loss, rb.history[i].train_loss);
        EXPECT_EQ(ra.history[i].val_loss, rb.history[i].val_loss);
    }
    EXPECT_TRUE(same_parameters(a, b));
}

TEST(Train, ValidationImagesNeverReachTheOptimizer) {
    auto imgs = textures(6);
    IntraModel<float> a(tiny(), 1), b(tiny(), 1);
    const auto tc = quick();
    const auto ra = train(a, std::span<const Image>(imgs), tc);
    ASSERT_EQ(ra.validation_ids.size(), 1u);
    for (auto& v : imgs[ra.validation_ids[0]].data) v = 1.0f - v;
    const auto rb = train(b, std::span<const Image>(imgs), tc);
    EXPECT_EQ(ra.validation_ids, rb.validation_ids);
    for (std::size_t i = 0; i < ra.history.size(); ++i) EXPECT_EQ(ra.history[i].train_loss, rb.history[i].train_loss);
    EXPECT_NE(ra.history[0].val_loss, rb.history[0].val_loss);
}

TEST(Train, EarlyStoppingRestoresBestWeights) {
    const auto imgs = textures(6);
    IntraModel<float> model(tiny(), 1);
    auto tc = quick();
    tc.max_epochs = 6;
    tc.patience = 6;
    const auto r = train(model, std::span<const Image>(imgs), tc);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& e : r.history) {
        best = std::min(best, e.val_loss);
        EXPECT_EQ(e.best_val, best);
    }
    std::vector<Image> val;
    for (auto i : r.validation_ids) val.push_back(imgs[i]);
    EXPECT_EQ(validation_loss(model, std::span<const Image>(val), r.validation_seed, tc.windows_per_image, tc.weights, tc.batch_size), r.best_val);
}

TEST(Train, ShortFinalBatchIsTrained) {
    const auto imgs = textures(3);
    IntraModel<float> model(tiny(), 1);
    auto tc = quick();
    tc.max_epochs = 1;
    tc.windows_per_image = 7;  // 2 training images -> 14 windows -> batches of 10 and 4
    const auto r = train(model, std::span<const Image>(imgs), tc);
    EXPECT_EQ(r.steps, 2u);
}

TEST(Train, TrainedBeatsUntrained) {
    const auto imgs = textures(4, 5);
    IntraModel<float> model(tiny(), 1);
    auto tc = quick();
    tc.windows_per_image = 200;
    tc.batch_size = 32;
    tc.lr = 3e-3;
    tc.max_epochs = 5;
    tc.augment = Augmentation::none;
    const auto r = train(model, std::span<const Image>(imgs), tc);
    std::vector<Image> val;
    for (auto i : r.validation_ids) val.push_back(imgs[i]);
    const IntraModel<float> fresh(tiny(), 1);
    const double untrained = validation_loss(fresh, std::span<const Image>(val), r.validation_seed, tc.windows_per_image, tc.weights, tc.batch_size);
    EXPECT_LT(r.best_val, untrained);
}

TEST(Train, Errors) {
    IntraModel<float> model(tiny(), 1);
    EXPECT_THROW(train(model, std::span<const Image>{}, quick()), ValueError);
    const auto one = textures(1);
    EXPECT_THROW(train(model, std::span<const Image>(one), quick()), ValueError);
    auto tc = quick();
    tc.use_validation = false;
    EXPECT_NO_THROW(train(model, std::span<const Image>(one), tc));
    std::vector<Image> wrong{Image(32, 32, 3), Image(32, 32, 3)};
    EXPECT_THROW(train(model, std::span<const Image>(wrong), quick()), ShapeError);
    auto bad = textures(3);
    for (auto& im : bad) im.data[5] = std::nanf("");
    EXPECT_THROW(train(model, std::span<const Image>(bad), quick()), NumericError);
}

TEST(SizeSelection, ThresholdRule) {
    EXPECT_EQ(choose_image_size({256, 320, 512}, {0.5, 0.5, 0.5}), 256u);
    EXPECT_EQ(choose_image_size({256, 320, 512}, {0.5, 0.4, 0.3}), 512u);
    EXPECT_EQ(choose_image_size({256, 320, 512}, {0.5, 0.4, 0.39995}), 320u);
    EXPECT_EQ(choose_image_size({256, 320, 512}, {0.5, 0.49995, 0.1}), 256u);
    EXPECT_THROW(choose_image_size({256}, {0.5}), ValueError);
    EXPECT_THROW(choose_image_size({320, 256}, {0.5, 0.4}), ValueError);
}

TEST(SizeSelection, SmoothedBestAveragesNeighbourhood) {
    std::vector<EpochRecord> h;
    for (std::size_t e = 1; e <= 20; ++e) h.push_back({e, 0.0, e == 10 ? 0.1 : 1.0, 0.0, 0});
    EXPECT_NEAR(smoothed_best_loss(h), (0.1 + 10.0) / 11.0, 1e-12);
    std::vector<EpochRecord> short_run{{1, 0, 0.2, 0, 0}, {2, 0, 0.4, 0, 0}};
    EXPECT_NEAR(smoothed_best_loss(short_run), 0.3, 1e-12);
}

TEST(SizeSelection, TrainsFreshModelPerSize) {
    RunConfig rc;
    rc.patch_size = 4;
    rc.window_side = 3;
    rc.latent_dim = 8;
    rc.num_blocks = 1;
    rc.num_heads = 2;
    rc.windows_per_image = 10;
    rc.batch_size = 10;
    const SyntheticTexture tex(3, 32);
    std::vector<std::size_t> asked;
    auto images_at = [&](std::size_t s) {
        asked.push_back(s);
        std::vector<Image> out;
        for (int i = 0; i < 3; ++i) out.push_back(resize_bilinear(tex.render(static_cast<std::uint64_t>(i)), s, s));
        return out;
    };
    const auto sel = select_image_size(images_at, {16, 24, 32}, 2, rc);
    EXPECT_EQ(asked, (std::vector<std::size_t>{16, 24, 32}));
    EXPECT_EQ(sel.smoothed_losses.size(), 3u);
    EXPECT_TRUE(sel.chosen == 16 || sel.chosen == 24 || sel.chosen == 32);
}

TEST(History, CsvFormat) {
    EXPECT_EQ(history_header(), "epoch,train_loss,val_loss,best_val,patience_left");
    EXPECT_EQ(history_line({3, 0.5, 0.25, 0.125, 7}), "3,0.5,0.25,0.125,7");
}
