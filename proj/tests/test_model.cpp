#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "intra/model.hpp"
#include "intra/model_gradcheck.hpp"

using namespace intra;

namespace {

ModelConfig full_config() { return ModelConfig{}; }

ModelConfig small_config() {
    ModelConfig cfg;
    cfg.patch_size = 4;
    cfg.window_side = 3;
    cfg.latent_dim = 16;
    cfg.num_blocks = 4;
    cfg.num_heads = 2;
    cfg.image_size = 24;
    cfg.channels = 3;
    return cfg;
}

// Independent per-layer tally.
std::size_t closed_form_count(const ModelConfig& c) {
    const std::size_t d = c.latent_dim, p = c.patch_dim(), t = c.grid_side() * c.grid_side();
    const std::size_t qk = c.use_mfsa ? 2 * ((d * 2 * d + 2 * d) + (2 * d * (d / 2) + d / 2)) : 2 * (d * d + d);
    const std::size_t block = 2 * d + qk + 2 * (d * d + d) + 2 * d + (d * 4 * d + 4 * d) + (4 * d * d + d);
    return p * d + t * d + d + c.num_blocks * block + d * p + p;
}

Image random_image(std::size_t n, std::size_t c, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> d(0.0f, 1.0f);
    Image img(n, n, c);
    for (auto& v : img.data) v = d(rng);
    return img;
}

template <class Real>
Tensor<Real> permute_rows(const Tensor<Real>& seq, const std::vector<std::size_t>& perm) {
    const std::size_t b = seq.dim(0), s = seq.dim(1), d = seq.dim(2);
    Tensor<Real> out(seq.shape());
    for (std::size_t w = 0; w < b; ++w)
        for (std::size_t i = 0; i < s; ++i)
            for (std::size_t k = 0; k < d; ++k) out[(w * s + i) * d + k] = seq[(w * s + perm[i]) * d + k];
    return out;
}

}  // namespace

TEST(ModelConfig, Validation) {
    EXPECT_NO_THROW(full_config().validate());
    auto c = small_config();
    c.num_heads = 3;
    EXPECT_THROW(c.validate(), ConfigError);
    c = small_config();
    c.latent_dim = 12;
    c.num_heads = 4;  // 12/4 ok, 6/4 not
    EXPECT_THROW(c.validate(), ConfigError);
    c = small_config();
    c.window_side = 1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = small_config();
    c.image_size = 26;
    EXPECT_THROW(c.validate(), ConfigError);
    c = small_config();
    c.window_side = 7;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(CountParameters, FullConfigIsAbout55M) {
    const auto n = count_parameters(full_config());
    EXPECT_GE(n, 54'000'000u);
    EXPECT_LE(n, 57'000'000u);
    EXPECT_EQ(n, closed_form_count(full_config()));
    EXPECT_EQ(n, 55'551'232u);
}

TEST(CountParameters, MatchesClosedFormAcrossConfigs) {
    for (bool mfsa : {true, false})
        for (std::size_t blocks : {0u, 1u, 3u, 13u}) {
            auto c = small_config();
            c.use_mfsa = mfsa;
            c.num_blocks = blocks;
            EXPECT_EQ(count_parameters(c), closed_form_count(c));
            EXPECT_EQ(IntraModel<float>(c, 1ull).parameter_count(), count_parameters(c));
        }
}

TEST(CountParameters, ZeroBlocksIsEmbeddingsAndHead) {
    auto c = full_config();
    c.num_blocks = 0;
    const std::size_t d = 512, p = 768;
    EXPECT_EQ(count_parameters(c), p * d + 256 * d + d + d * p + p);
}

TEST(CountParameters, BlockShareIsLinearInDepth) {
    auto c = full_config();
    c.num_blocks = 0;
    const auto base = count_parameters(c);
    c.num_blocks = 6;
    const auto six = count_parameters(c) - base;
    c.num_blocks = 12;
    EXPECT_EQ(count_parameters(c) - base, 2 * six);
}

TEST(CountParameters, PlainAttentionDelta) {
    for (std::size_t d : {16u, 64u, 512u}) {
        auto c = full_config();
        c.latent_dim = d;
        const auto mfsa = count_parameters(c);
        c.use_mfsa = false;
        const auto msa = count_parameters(c);
        EXPECT_EQ(mfsa - msa, c.num_blocks * (4 * d * d + 3 * d));
    }
}

TEST(LongResidual, Pairing) {
    const auto s13 = long_residual_sources(13);
    for (std::size_t i = 1; i <= 6; ++i) EXPECT_EQ(s13[14 - i], i);
    EXPECT_EQ(s13[7], 0u);
    for (std::size_t i = 1; i <= 6; ++i) EXPECT_EQ(s13[i], 0u);
    const auto s4 = long_residual_sources(4);
    EXPECT_EQ(s4[4], 1u);
    EXPECT_EQ(s4[3], 0u);  // 2 -> 3 would be adjacent
    const auto s2 = long_residual_sources(2);
    EXPECT_EQ(s2[2], 0u);
}

TEST(Embed, ZeroWeightsGiveZeroSequence) {
    const auto cfg = small_config();
    IntraModel<float> model(cfg, 3ull);
    for (const char* n : {"embed.patch.weight", "embed.position", "embed.inpaint_token"})
        std::fill(model.parameter(n).data().begin(), model.parameter(n).data().end(), 0.0f);
    std::mt19937_64 rng(1);
    const Image img = random_image(cfg.image_size, 3, rng);
    const auto grid = split_into_patches(img, cfg.patch_size);
    const std::vector<WindowRef> refs{{&grid, select_window(2, 3, grid.rows, grid.cols, 3)}};
    const auto seq = model.embed(model.bind(false), make_window_batch<float>(refs));
    EXPECT_EQ(seq.shape(), (Shape{1, 9, 16}));
    for (float v : seq.value().vec()) EXPECT_EQ(v, 0.0f);
}

TEST(Embed, SequenceLengthIsWindowArea) {
    auto cfg = full_config();
    cfg.num_blocks = 0;
    cfg.latent_dim = 16;
    cfg.num_heads = 2;
    IntraModel<float> model(cfg, 5ull);
    const Image img(256, 256, 3, 0.5f);
    const auto grid = split_into_patches(img, 16);
    const std::vector<WindowRef> refs{{&grid, select_window(8, 8, 16, 16, 7)}};
    EXPECT_EQ(model.embed(model.bind(false), make_window_batch<float>(refs)).shape(), (Shape{1, 49, 16}));
}

TEST(Embed, TargetContentIsHiddenAndMovingTargetTouchesTwoSlots) {
    const auto cfg = small_config();
    IntraModel<double> model(cfg, 4ull);
    std::mt19937_64 rng(2);
    Image img = random_image(cfg.image_size, 3, rng);
    const auto grid = split_into_patches(img, cfg.patch_size);
    WindowSpec w = select_window(3, 3, grid.rows, grid.cols, 3);
    const auto p = model.bind(false);
    const auto base = model.embed(p, make_window_batch<double>(std::vector<WindowRef>{{&grid, w}})).value();

    // Changing the pixels under the target changes nothing.
    for (std::size_t y = 8; y < 12; ++y)
        for (std::size_t x = 8; x < 12; ++x) img.at(y, x, 1) = 1.0f - img.at(y, x, 1);
    const auto grid2 = split_into_patches(img, cfg.patch_size);
    EXPECT_EQ(model.embed(p, make_window_batch<double>(std::vector<WindowRef>{{&grid2, w}})).value(), base);

    // Moving the target within the same window changes exactly the old and new target slots.
    WindowSpec moved = w;
    moved.t = w.r;
    moved.u = w.s;
    const auto other = model.embed(p, make_window_batch<double>(std::vector<WindowRef>{{&grid, moved}})).value();
    std::vector<std::size_t> changed;
    for (std::size_t i = 0; i < 9; ++i) {
        bool same = true;
        for (std::size_t k = 0; k < 16; ++k) same = same && base[i * 16 + k] == other[i * 16 + k];
        if (!same) changed.push_back(i);
    }
    EXPECT_EQ(changed, (std::vector<std::size_t>{0, 4}));
}

TEST(Embed, RejectsDuplicateAndOutOfRangePositions) {
    const auto cfg = small_config();
    IntraModel<float> model(cfg, 4ull);
    std::mt19937_64 rng(3);
    const auto grid = split_into_patches(random_image(cfg.image_size, 3, rng), cfg.patch_size);
    auto batch = make_window_batch<float>(std::vector<WindowRef>{{&grid, select_window(1, 1, 6, 6, 3)}});
    const auto p = model.bind(false);
    auto dup = batch;
    dup.positions[1] = dup.positions[0];
    EXPECT_THROW(model.embed(p, dup), ValueError);
    auto far = batch;
    far.positions[2] = 36;
    EXPECT_THROW(model.embed(p, far), ValueError);
}

TEST(Attention, RowsSumToOneAndIdenticalRowsStayIdentical) {
    const auto cfg = small_config();
    IntraModel<double> model(cfg, 6ull);
    std::mt19937_64 rng(4);
    Tensor<double> x({2, 9, 16});
    std::normal_distribution<double> nd;
    for (auto& v : x.data()) v = nd(rng);
    // Rows 3 and 7 of the first sequence are equal.
    for (std::size_t k = 0; k < 16; ++k) x[7 * 16 + k] = x[3 * 16 + k];
    Var<double> weights;
    const auto out = model.attention(model.bind(false), 0, Var<double>::constant(x), &weights).value();
    EXPECT_EQ(weights.shape(), (Shape{2, 2, 9, 9}));
    for (std::size_t r = 0; r < 2 * 2 * 9; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < 9; ++c) s += weights.value()[r * 9 + c];
        EXPECT_NEAR(s, 1.0, 1e-6);
    }
    for (std::size_t k = 0; k < 16; ++k) EXPECT_NEAR(out[3 * 16 + k], out[7 * 16 + k], 1e-12);
}

TEST(Attention, PermutationEquivariant) {
    for (bool mfsa : {true, false}) {
        auto cfg = small_config();
        cfg.use_mfsa = mfsa;
        IntraModel<double> model(cfg, 7ull);
        std::mt19937_64 rng(5);
        Tensor<double> x({1, 9, 16});
        std::normal_distribution<double> nd;
        for (auto& v : x.data()) v = nd(rng);
        std::vector<std::size_t> perm(9);
        std::iota(perm.begin(), perm.end(), 0u);
        std::shuffle(perm.begin(), perm.end(), rng);
        const auto p = model.bind(false);
        const auto a = permute_rows(model.attention(p, 1, Var<double>::constant(x)).value(), perm);
        const auto b = model.attention(p, 1, Var<double>::constant(permute_rows(x, perm))).value();
        for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
    }
}

TEST(Block, ZeroOutputWeightsGiveIdentity) {
    const auto cfg = small_config();
    IntraModel<float> model(cfg, 8ull);
    for (const char* n : {"attn.out.weight", "attn.out.bias", "mlp.fc2.weight", "mlp.fc2.bias"}) {
        auto& t = model.parameter(block_prefix(2) + n);
        std::fill(t.data().begin(), t.data().end(), 0.0f);
    }
    std::mt19937_64 rng(6);
    Tensor<float> x({3, 9, 16});
    std::normal_distribution<float> nd;
    for (auto& v : x.data()) v = nd(rng);
    const auto y = model.block(model.bind(false), 2, Var<float>::constant(x)).value();
    EXPECT_EQ(y, x);
    // Other blocks are not the identity.
    EXPECT_NE(model.block(model.bind(false), 1, Var<float>::constant(x)).value(), x);
}

class ForwardTest : public ::testing::Test {
   protected:
    ModelConfig cfg = small_config();
    std::mt19937_64 rng{9};
    Image img = random_image(cfg.image_size, 3, rng);
    PatchGrid grid = split_into_patches(img, cfg.patch_size);

    WindowBatch<float> random_batch(std::size_t n) {
        std::vector<WindowRef> refs;
        for (std::size_t i = 0; i < n; ++i) refs.push_back({&grid, sample_window_spec(grid.rows, grid.cols, cfg.window_side, rng)});
        return make_window_batch<float>(refs);
    }
};

TEST_F(ForwardTest, FreshModelPredictsHalf) {
    IntraModel<float> model(cfg, 10ull);
    for (float v : model.predict(random_batch(4)).vec()) EXPECT_EQ(v, 0.5f);
}

TEST_F(ForwardTest, OutputsInOpenUnitInterval) {
    // Double precision: float sigmoids round to exactly 1 beyond logits of ~17.
    IntraModel<double> model(cfg, 10ull);
    model.randomize("head.weight", rng);
    std::vector<WindowRef> refs;
    for (int i = 0; i < 16; ++i) refs.push_back({&grid, sample_window_spec(grid.rows, grid.cols, cfg.window_side, rng)});
    const auto out = model.predict(make_window_batch<double>(refs));
    EXPECT_EQ(out.shape(), (Shape{16, cfg.patch_dim()}));
    for (double v : out.vec()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
    }
}

TEST_F(ForwardTest, InvariantUnderSequencePermutation) {
    IntraModel<float> model(cfg, 11ull);
    model.randomize("head.weight", rng);
    const auto p = model.bind(false);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto batch = random_batch(1);
        const auto seq = model.embed(p, batch).value();
        std::vector<std::size_t> perm(cfg.sequence_length());
        std::iota(perm.begin(), perm.end(), 0u);
        std::shuffle(perm.begin(), perm.end(), rng);
        const auto a = model.head(p, model.encode(p, Var<float>::constant(seq))).value();
        const auto b = model.head(p, model.encode(p, Var<float>::constant(permute_rows(seq, perm)))).value();
        for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, static_cast<double>(std::abs(a[i] - b[i])));
    }
    EXPECT_LT(worst, 1e-5);
}

TEST_F(ForwardTest, LongResidualsChangeOutputs) {
    IntraModel<float> with(cfg, 12ull);
    with.randomize("head.weight", rng);
    auto plain_cfg = cfg;
    plain_cfg.use_long_residuals = false;
    IntraModel<float> without(plain_cfg, with.named_parameters());
    const auto batch = random_batch(4);
    const auto a = with.predict(batch), b = without.predict(batch);
    double diff = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) diff = std::max(diff, static_cast<double>(std::abs(a[i] - b[i])));
    EXPECT_GT(diff, 1e-4);
}

TEST_F(ForwardTest, DeterministicAndBatchIndependent) {
    IntraModel<float> model(cfg, 13ull);
    model.randomize("head.weight", rng);
    const auto batch = random_batch(6);
    const auto a = model.predict(batch), b = model.predict(batch);
    EXPECT_EQ(a, b);
    // A window's prediction does not depend on its batch-mates.
    std::vector<WindowRef> refs;
    for (int i = 0; i < 5; ++i) refs.push_back({&grid, sample_window_spec(grid.rows, grid.cols, cfg.window_side, rng)});
    const auto full = model.predict(make_window_batch<float>(refs));
    const auto last = model.predict(make_window_batch<float>(std::vector<WindowRef>{refs.back()}));
    for (std::size_t i = 0; i < cfg.patch_dim(); ++i) EXPECT_NEAR(full[4 * cfg.patch_dim() + i], last[i], 1e-6f);
}

TEST_F(ForwardTest, SameSeedSameWeights) {
    IntraModel<float> a(cfg, 77ull), b(cfg, 77ull), c(cfg, 78ull);
    EXPECT_EQ(a.parameters(), b.parameters());
    EXPECT_NE(a.parameters(), c.parameters());
}

TEST_F(ForwardTest, NamedRoundTripAndCast) {
    IntraModel<float> a(cfg, 14ull);
    a.randomize("head.weight", rng);
    IntraModel<float> b(cfg, a.named_parameters());
    EXPECT_EQ(a.parameters(), b.parameters());
    const auto d = a.cast<double>();
    std::vector<WindowRef> refs{{&grid, select_window(2, 5, grid.rows, grid.cols, cfg.window_side)}};
    const auto pf = a.predict(make_window_batch<float>(refs));
    const auto pd = d.predict(make_window_batch<double>(refs));
    for (std::size_t i = 0; i < pf.numel(); ++i) EXPECT_NEAR(pf[i], pd[i], 1e-5);
    auto named = a.named_parameters();
    named.erase("head.bias");
    EXPECT_THROW(IntraModel<float>(cfg, named), ValueError);
    named = a.named_parameters();
    named["head.bias"] = Tensor<float>({3});
    EXPECT_THROW(IntraModel<float>(cfg, named), ShapeError);
}

TEST(ModelGradient, TwoBlockToyMatchesFiniteDifferences) {
    const auto r = check_model_gradient(toy_gradcheck_config());
    EXPECT_LT(r.max_tensor_relative_error, 1e-4);
    EXPECT_GT(r.compared, 9000u);
}

TEST(ModelGradient, LongResidualAndPlainAttentionPaths) {
    for (bool mfsa : {true, false}) {
        auto cfg = toy_gradcheck_config();
        cfg.num_blocks = 4;
        cfg.latent_dim = 8;
        cfg.use_mfsa = mfsa;
        const auto r = check_model_gradient(cfg, {.seed = 3, .batch = 2});
        EXPECT_LT(r.max_tensor_relative_error, 1e-4) << "mfsa=" << mfsa;
    }
}
