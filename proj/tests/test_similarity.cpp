#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "intra/roc_auc.hpp"
#include "intra/similarity.hpp"
#include "test_util.hpp"

using namespace intra;

namespace {

Image random_image(std::size_t h, std::size_t w, std::size_t c, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> d(0.0f, 1.0f);
    Image img(h, w, c);
    for (auto& v : img.data) v = d(rng);
    return img;
}

Image step_edge(std::size_t n) {
    Image img(n, n, 1);
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = n / 2; x < n; ++x) img.at(y, x) = 1.0f;
    return img;
}

double pair_counting_auc(const std::vector<double>& s, const std::vector<int>& l) {
    double num = 0.0;
    double pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!l[i]) continue;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (l[j]) continue;
            pairs += 1.0;
            num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        }
    }
    return num / pairs;
}

Tensor<double> patches_of(const std::vector<Image>& imgs) {
    const std::size_t p = imgs.front().data.size();
    Tensor<double> t({imgs.size(), p});
    for (std::size_t b = 0; b < imgs.size(); ++b)
        for (std::size_t i = 0; i < p; ++i) t[b * p + i] = imgs[b].data[i];
    return t;
}

}  // namespace

TEST(SsimMap, IdenticalInputsGiveOnes) {
    std::mt19937_64 rng(1);
    const Image a = random_image(16, 16, 3, rng);
    for (float v : ssim_map(a, a).data) EXPECT_NEAR(v, 1.0f, 1e-6f);
}

TEST(SsimMap, BlackVersusWhiteIsNearZero) {
    const Image a(16, 16, 3, 0.0f), b(16, 16, 3, 1.0f);
    const double expected = similarity::kSsimC1 / (1.0 + similarity::kSsimC1);
    for (float v : ssim_map(a, b).data) {
        EXPECT_LT(v, 0.01f);
        EXPECT_NEAR(v, expected, 1e-7);
    }
}

TEST(SsimMap, SymmetricAndBounded) {
    std::mt19937_64 rng(2);
    const Image a = random_image(20, 20, 3, rng), b = random_image(20, 20, 3, rng);
    const Image ab = ssim_map(a, b), ba = ssim_map(b, a);
    EXPECT_EQ(ab, ba);
    for (float v : ab.data) {
        EXPECT_GE(v, -1.0f);
        EXPECT_LE(v, 1.0f);
    }
}

TEST(SsimMap, RejectsShapeMismatch) { EXPECT_THROW(ssim_map(Image(8, 8, 3), Image(8, 8, 1)), ShapeError); }

TEST(GmsMap, IdenticalAndConstantInputsGiveOnes) {
    std::mt19937_64 rng(3);
    const Image a = random_image(16, 16, 3, rng);
    for (float v : gms_map(a, a).data) EXPECT_NEAR(v, 1.0f, 1e-6f);
    for (float v : gms_map(Image(8, 8, 3, 0.2f), Image(8, 8, 3, 0.9f)).data) EXPECT_NEAR(v, 1.0f, 1e-6f);
}

TEST(GmsMap, StepEdgeAgainstFlatScoresLowOnEdge) {
    const std::size_t n = 16;
    const Image m = gms_map(step_edge(n), Image(n, n, 1, 0.0f));
    const double c = similarity::kGmsC;
    for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x : {n / 2 - 1, n / 2}) {
            EXPECT_LT(m.at(y, x), 0.1f);
            EXPECT_NEAR(m.at(y, x), c / (1.0 + c), 1e-6);
        }
        EXPECT_FLOAT_EQ(m.at(y, 2), 1.0f);
    }
}

TEST(GmsMap, SymmetricAndInUnitInterval) {
    std::mt19937_64 rng(4);
    const Image a = random_image(12, 12, 3, rng), b = random_image(12, 12, 3, rng);
    EXPECT_EQ(gms_map(a, b), gms_map(b, a));
    for (float v : gms_map(a, b).data) {
        EXPECT_GT(v, 0.0f);
        EXPECT_LE(v, 1.0f);
    }
}

TEST(InpaintLoss, IdenticalPatchesGiveZero) {
    std::mt19937_64 rng(5);
    const auto x = patches_of({random_image(16, 16, 3, rng), random_image(16, 16, 3, rng)});
    EXPECT_LT(inpaint_loss(x, Var<double>::constant(x), 16, 3).value().item(), 1e-6);
    const auto xf = x.cast<float>();
    EXPECT_LT(inpaint_loss(xf, Var<float>::constant(xf), 16, 3).value().item(), 1e-6f);
}

TEST(InpaintLoss, PositiveForAnyDifference) {
    std::mt19937_64 rng(6);
    const auto x = patches_of({random_image(8, 8, 3, rng)});
    auto y = x;
    y[37] += 1e-3;
    EXPECT_GT(inpaint_loss(x, Var<double>::constant(y), 8, 3).value().item(), 0.0);
    for (int trial = 0; trial < 20; ++trial) {
        const auto z = patches_of({random_image(8, 8, 3, rng)});
        EXPECT_GT(inpaint_loss(x, Var<double>::constant(z), 8, 3).value().item(), 0.0);
    }
}

TEST(InpaintLoss, TermsMatchImageMaps) {
    std::mt19937_64 rng(7);
    std::vector<Image> xs, ys;
    for (int b = 0; b < 3; ++b) {
        xs.push_back(random_image(8, 8, 3, rng));
        ys.push_back(random_image(8, 8, 3, rng));
    }
    const auto x = patches_of(xs), y = patches_of(ys);
    double mse = 0.0, gms = 0.0, ssim = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) mse += (x[i] - y[i]) * (x[i] - y[i]);
    mse /= static_cast<double>(x.numel());
    for (int b = 0; b < 3; ++b) {
        for (float v : gms_map(xs[b], ys[b]).data) gms += 1.0 - v;
        for (float v : ssim_map(xs[b], ys[b]).data) ssim += std::max(0.0, 1.0 - v);
    }
    gms /= 3.0 * 64.0;
    ssim /= 3.0 * 64.0;
    const auto loss = [&](double a, double b) { return inpaint_loss(x, Var<double>::constant(y), 8, 3, {a, b}).value().item(); };
    EXPECT_NEAR(loss(0.0, 0.0), mse, 1e-12);
    // Image maps are stored in float.
    EXPECT_NEAR(loss(1.0, 0.0) - mse, gms, 1e-6);
    EXPECT_NEAR(loss(0.0, 1.0) - mse, ssim, 1e-6);
    EXPECT_NEAR(loss(0.01, 0.01), mse + 0.01 * gms + 0.01 * ssim, 1e-8);
}

TEST(InpaintLoss, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(8);
    const auto x = patches_of({random_image(4, 4, 3, rng), random_image(4, 4, 3, rng)});
    const auto y0 = patches_of({random_image(4, 4, 3, rng), random_image(4, 4, 3, rng)});
    const auto build = [&](const auto& v) { return inpaint_loss(x, v[0], 4, 3, {0.5, 0.5}); };
    const auto coarse = intra::testing::check_primitive({y0}, build, 7, 1e-3);
    EXPECT_LT(coarse.max_tensor_relative_error, 1e-4);
    // The square root inside the gradient magnitude is sharply curved on
    // low-contrast pixels; a finer step removes the O(h^2) truncation.
    const auto fine = intra::testing::check_primitive({y0}, build, 7, 1e-4);
    EXPECT_LT(fine.max_relative_error, 1e-4);
}

TEST(InpaintLoss, RejectsShapeMismatch) {
    const Tensor<double> x({2, 48}, 0.5);
    EXPECT_THROW(inpaint_loss(x, Var<double>::constant(Tensor<double>({2, 47}, 0.5)), 4, 3), ShapeError);
    EXPECT_THROW(inpaint_loss(x, Var<double>::constant(x), 4, 1), ShapeError);
}

TEST(RocAuc, WorkedExample) {
    EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1}), 0.75);
}

TEST(RocAuc, SeparatedAndTied) {
    EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{0.1, 0.2, 0.3, 0.9}, std::vector<int>{0, 0, 1, 1}), 1.0);
    EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{0.9, 0.8, 0.3, 0.1}, std::vector<int>{0, 0, 1, 1}), 0.0);
    EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>(7, 0.3), std::vector<int>{0, 1, 0, 1, 1, 0, 0}), 0.5);
}

TEST(RocAuc, Errors) {
    EXPECT_THROW(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), ValueError);
    EXPECT_THROW(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{0, 0}), ValueError);
    EXPECT_THROW(roc_auc(std::vector<double>{0.1}, std::vector<int>{0, 1}), ShapeError);
}

TEST(RocAuc, EqualsPairCountingOnRandomInstances) {
    std::mt19937_64 rng(99);
    std::size_t mismatches = 0;
    for (int inst = 0; inst < 1000; ++inst) {
        const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 200)(rng);
        // Few distinct levels so ties are common.
        const int levels = std::uniform_int_distribution<int>(1, 30)(rng);
        std::vector<double> s(n);
        std::vector<int> l(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = std::uniform_int_distribution<int>(0, levels)(rng) / static_cast<double>(levels);
            l[i] = std::bernoulli_distribution(0.3)(rng);
        }
        l[0] = 0;
        l[1] = 1;
        if (roc_auc(s, l) != pair_counting_auc(s, l)) ++mismatches;
    }
    EXPECT_EQ(mismatches, 0u);
}

TEST(RocAuc, InvariantUnderIncreasingTransforms) {
    std::mt19937_64 rng(17);
    for (int inst = 0; inst < 100; ++inst) {
        std::vector<double> s(80), t(80);
        std::vector<int> l(80);
        for (std::size_t i = 0; i < s.size(); ++i) {
            s[i] = std::uniform_int_distribution<int>(0, 20)(rng) / 10.0 - 1.0;
            l[i] = std::bernoulli_distribution(0.5)(rng);
            t[i] = std::exp(3.0 * s[i]) + 7.0;
        }
        l[0] = 0;
        l[1] = 1;
        EXPECT_EQ(roc_auc(s, l), roc_auc(t, l));
    }
}
