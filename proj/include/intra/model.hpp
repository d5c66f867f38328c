#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "intra/autodiff.hpp"
#include "intra/errors.hpp"
#include "intra/patching.hpp"

namespace intra {

struct ModelConfig {
    std::size_t patch_size = 16;   // K
    std::size_t window_side = 7;   // L
    std::size_t latent_dim = 512;  // D
    std::size_t num_blocks = 13;
    std::size_t num_heads = 8;
    std::size_t image_size = 256;  // H == W
    std::size_t channels = 3;      // C
    bool use_mfsa = true;
    bool use_long_residuals = true;

    std::size_t grid_side() const { return image_size / patch_size; }
    std::size_t patch_dim() const { return patch_size * patch_size * channels; }
    std::size_t sequence_length() const { return window_side * window_side; }
    /// Query/key width: D/2 with feature attention, D with plain attention.
    std::size_t qk_dim() const { return use_mfsa ? latent_dim / 2 : latent_dim; }

    void validate() const {
        auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
        if (patch_size == 0 || window_side == 0 || latent_dim == 0 || num_heads == 0 || image_size == 0 || channels == 0) fail("all sizes must be positive");
        if (image_size % patch_size != 0) fail("patch_size " + std::to_string(patch_size) + " must divide image_size " + std::to_string(image_size));
        if (window_side > grid_side()) fail("window_side " + std::to_string(window_side) + " exceeds grid side " + std::to_string(grid_side()));
        if (window_side * window_side < 2) fail("window must contain at least two patches");
        if (latent_dim % num_heads != 0) fail("latent_dim must be divisible by num_heads");
        if ((latent_dim / 2) % num_heads != 0 || latent_dim % 2 != 0) fail("latent_dim/2 must be divisible by num_heads");
        if (num_blocks > 99) fail("at most 99 blocks");
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ParameterSpec {
    std::string name;
    Shape shape;
    std::size_t fan_in;  // 0: constant init (see init kind)
    enum class Init { uniform, zeros, ones } init;
};

/// Block index -> partner block whose output is added to its input by a long
/// residual connection (1-based, 0 means none). Block i in the first half
/// feeds block n+1-i; the innermost pair is skipped when the two blocks are
/// adjacent, since that connection would only duplicate the plain residual path.
inline std::vector<std::size_t> long_residual_sources(std::size_t n) {
    std::vector<std::size_t> src(n + 1, 0);
    for (std::size_t i = 1; i <= n / 2; ++i) {
        const std::size_t j = n + 1 - i;
        if (j > i + 1) src[j] = i;
    }
    return src;
}

inline std::string block_prefix(std::size_t b) {
    std::ostringstream os;
    os << "blocks." << std::setw(2) << std::setfill('0') << b << '.';
    return os.str();
}

/// Every learnable tensor of a configuration, in construction order.
inline std::vector<ParameterSpec> parameter_specs(const ModelConfig& cfg) {
    using I = ParameterSpec::Init;
    const std::size_t d = cfg.latent_dim, p = cfg.patch_dim(), t = cfg.grid_side() * cfg.grid_side();
    std::vector<ParameterSpec> s;
    auto linear = [&](const std::string& name, std::size_t in, std::size_t out) {
        s.push_back({name + ".weight", {in, out}, in, I::uniform});
        s.push_back({name + ".bias", {out}, 0, I::zeros});
    };
    s.push_back({"embed.patch.weight", {p, d}, p, I::uniform});
    s.push_back({"embed.position", {t, d}, d, I::uniform});
    s.push_back({"embed.inpaint_token", {d}, d, I::uniform});
    for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
        const std::string pre = block_prefix(b);
        s.push_back({pre + "norm1.scale", {d}, 0, I::ones});
        s.push_back({pre + "norm1.shift", {d}, 0, I::zeros});
        for (const char* qk : {"query", "key"}) {
            if (cfg.use_mfsa) {
                linear(pre + "attn." + qk + ".fc1", d, 2 * d);
                linear(pre + "attn." + qk + ".fc2", 2 * d, d / 2);
            } else {
                linear(pre + "attn." + qk, d, d);
            }
        }
        linear(pre + "attn.value", d, d);
        linear(pre + "attn.out", d, d);
        s.push_back({pre + "norm2.scale", {d}, 0, I::ones});
        s.push_back({pre + "norm2.shift", {d}, 0, I::zeros});
        linear(pre + "mlp.fc1", d, 4 * d);
        linear(pre + "mlp.fc2", 4 * d, d);
    }
    // Zero head: the residual stream is not normalised before pooling, so a
    // fan-in scaled head would start with saturated sigmoids.
    s.push_back({"head.weight", {d, p}, 0, I::zeros});
    s.push_back({"head.bias", {p}, 0, I::zeros});
    return s;
}

/// Exact learnable scalar count of a configuration (nothing is allocated).
inline std::size_t count_parameters(const ModelConfig& cfg) {
    cfg.validate();
    std::size_t n = 0;
    for (const auto& s : parameter_specs(cfg)) n += shape_numel(s.shape);
    return n;
}

/// A batch of inpainting problems: B windows of S = L*L patches each.
template <class Real>
struct WindowBatch {
    Tensor<Real> context;                  // [B, S, P], the target patch zeroed
    Tensor<Real> targets;                  // [B, P], the hidden patches
    std::vector<std::size_t> positions;    // B*S zero-based linear grid positions f(i,j) - 1
    std::vector<std::size_t> target_slot;  // B, index of the target inside its sequence

    std::size_t size() const { return target_slot.size(); }
};

struct WindowRef {
    const PatchGrid* grid;
    WindowSpec spec;
};

template <class Real>
WindowBatch<Real> make_window_batch(std::span<const WindowRef> refs) {
    if (refs.empty()) throw ValueError("make_window_batch: empty batch");
    const std::size_t l = refs.front().spec.side, s = l * l, p = refs.front().grid->patch_size();
    WindowBatch<Real> batch;
    std::vector<Real> ctx(refs.size() * s * p, Real(0)), tgt(refs.size() * p);
    batch.positions.reserve(refs.size() * s);
    for (std::size_t b = 0; b < refs.size(); ++b) {
        const auto& [grid, w] = refs[b];
        if (w.side != l || grid->patch_size() != p) throw ShapeError("make_window_batch: mixed window or patch sizes in batch");
        std::size_t slot = 0;
        for (std::size_t i = w.r; i < w.r + l; ++i) {
            for (std::size_t j = w.s; j < w.s + l; ++j, ++slot) {
                batch.positions.push_back(linear_position(i, j, grid->rows, grid->cols) - 1);
                auto patch = grid->patch(i, j);
                if (i == w.t && j == w.u) {
                    batch.target_slot.push_back(slot);
                    std::copy(patch.begin(), patch.end(), tgt.begin() + static_cast<std::ptrdiff_t>(b * p));
                } else {
                    std::copy(patch.begin(), patch.end(), ctx.begin() + static_cast<std::ptrdiff_t>((b * s + slot) * p));
                }
            }
        }
        if (batch.target_slot.size() != b + 1) throw ValueError("make_window_batch: target lies outside its window");
    }
    batch.context = Tensor<Real>({refs.size(), s, p}, std::move(ctx));
    batch.targets = Tensor<Real>({refs.size(), p}, std::move(tgt));
    return batch;
}

/// The inpainting transformer: patch/position/inpaint-token embeddings, a
/// stack of pre-norm blocks (feature or plain multi-head attention + MLP)
/// with optional long residual connections, then mean pooling over the
/// sequence, an affine map back to patch space and a sigmoid.
template <class Real>
class IntraModel {
   public:
    using Params = std::vector<Var<Real>>;

    IntraModel(const ModelConfig& cfg, std::uint64_t seed) : IntraModel(cfg) {
        std::mt19937_64 rng(seed);
        initialize(rng);
    }

    template <std::uniform_random_bit_generator Rng>
    IntraModel(const ModelConfig& cfg, Rng& rng) : IntraModel(cfg) {
        initialize(rng);
    }

    /// Adopts named tensors (e.g. from a checkpoint); names and shapes must
    /// match the configuration exactly.
    IntraModel(const ModelConfig& cfg, const std::map<std::string, Tensor<Real>>& named) : IntraModel(cfg) {
        if (named.size() != specs_.size()) throw ValueError("model: expected " + std::to_string(specs_.size()) + " parameter tensors, got " + std::to_string(named.size()));
        for (std::size_t i = 0; i < specs_.size(); ++i) {
            auto it = named.find(specs_[i].name);
            if (it == named.end()) throw ValueError("model: missing parameter '" + specs_[i].name + "'");
            if (it->second.shape() != specs_[i].shape) throw ShapeError("model parameter '" + specs_[i].name + "'", specs_[i].shape, it->second.shape());
            params_[i] = it->second;
        }
    }

    const ModelConfig& config() const { return cfg_; }
    const std::vector<ParameterSpec>& specs() const { return specs_; }
    std::vector<Tensor<Real>>& parameters() { return params_; }
    const std::vector<Tensor<Real>>& parameters() const { return params_; }

    std::size_t index_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ValueError("model: no parameter named '" + name + "'");
        return it->second;
    }
    Tensor<Real>& parameter(const std::string& name) { return params_[index_of(name)]; }
    const Tensor<Real>& parameter(const std::string& name) const { return params_[index_of(name)]; }

    std::map<std::string, Tensor<Real>> named_parameters() const {
        std::map<std::string, Tensor<Real>> out;
        for (std::size_t i = 0; i < specs_.size(); ++i) out.emplace(specs_[i].name, params_[i]);
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.numel();
        return n;
    }

    /// Graph leaves for the current weights.
    Params bind(bool trainable) const {
        Params p;
        p.reserve(params_.size());
        for (const auto& t : params_) p.push_back(trainable ? Var<Real>::parameter(t) : Var<Real>::constant(t));
        return p;
    }

    /// [B, S, D] input sequence: x_p E + posemb for context patches,
    /// inpaint token + posemb for the target, in row-major window order.
    Var<Real> embed(const Params& p, const WindowBatch<Real>& batch) const {
        const std::size_t b = batch.size(), s = cfg_.sequence_length(), d = cfg_.latent_dim;
        if (batch.context.shape() != Shape{b, s, cfg_.patch_dim()}) throw ShapeError("embed", Shape{b, s, cfg_.patch_dim()}, batch.context.shape());
        const std::size_t table = cfg_.grid_side() * cfg_.grid_side();
        for (std::size_t w = 0; w < b; ++w) {
            std::set<std::size_t> seen;
            for (std::size_t i = 0; i < s; ++i) {
                const std::size_t pos = batch.positions[w * s + i];
                if (pos >= table) throw ValueError("embed: position " + std::to_string(pos + 1) + " exceeds table of " + std::to_string(table));
                if (!seen.insert(pos).second) throw ValueError("embed: duplicate position " + std::to_string(pos + 1) + " in window");
            }
            if (batch.target_slot[w] >= s) throw ValueError("embed: target slot out of range");
        }
        std::vector<Real> mask(b * s, Real(0));
        for (std::size_t w = 0; w < b; ++w) mask[w * s + batch.target_slot[w]] = Real(1);
        const auto token_mask = Var<Real>::constant(Tensor<Real>({b, s, 1}, std::move(mask)));
        const auto x = Var<Real>::constant(batch.context);
        auto seq = matmul(x, p[idx_.patch_embed]);
        seq = add(seq, mul(token_mask, p[idx_.inpaint_token]));
        seq = add(seq, gather_rows(p[idx_.position], batch.positions, Shape{b, s}));
        (void)d;
        return seq;
    }

    /// Runs the block stack on an embedded [B, S, D] sequence.
    Var<Real> encode(const Params& p, const Var<Real>& seq) const {
        const std::size_t n = cfg_.num_blocks;
        const auto sources = long_residual_sources(n);
        std::vector<Var<Real>> outputs(n + 1);
        Var<Real> h = seq;
        for (std::size_t j = 1; j <= n; ++j) {
            if (cfg_.use_long_residuals && sources[j] != 0) h = add(h, outputs[sources[j]]);
            h = block(p, j - 1, h);
            outputs[j] = h;
        }
        return h;
    }

    /// Mean over the sequence, affine map to patch space, sigmoid: [B, P].
    Var<Real> head(const Params& p, const Var<Real>& seq) const {
        const auto pooled = mean_axis(seq, 1);
        return sigmoid(add(matmul(pooled, p[idx_.head_w]), p[idx_.head_b]));
    }

    Var<Real> forward(const Params& p, const WindowBatch<Real>& batch) const { return head(p, encode(p, embed(p, batch))); }

    /// Inference without recording gradients: [B, P].
    Tensor<Real> predict(const WindowBatch<Real>& batch) const { return forward(bind(false), batch).value(); }

    /// x + MFSA(LN(x)), then y + MLP(LN(y)).
    Var<Real> block(const Params& p, std::size_t b, const Var<Real>& x) const {
        const auto& ix = idx_.blocks.at(b);
        const auto y = add(x, attention(p, b, layer_norm(x, p[ix.norm1_scale], p[ix.norm1_shift])));
        const auto h = layer_norm(y, p[ix.norm2_scale], p[ix.norm2_shift]);
        const auto m = linear(gelu(linear(h, p[ix.mlp_w1], p[ix.mlp_b1])), p[ix.mlp_w2], p[ix.mlp_b2]);
        return add(y, m);
    }

    /// Multi-head (feature) self-attention on [B, S, D]. When `weights_out`
    /// is given it receives the [B, H, S, S] attention probabilities.
    Var<Real> attention(const Params& p, std::size_t b, const Var<Real>& x, Var<Real>* weights_out = nullptr) const {
        const auto& ix = idx_.blocks.at(b);
        if (x.shape().size() != 3 || x.shape()[2] != cfg_.latent_dim) throw ShapeError("attention", Shape{0, 0, cfg_.latent_dim}, x.shape());
        const std::size_t bs = x.shape()[0], s = x.shape()[1], d = cfg_.latent_dim, heads = cfg_.num_heads;
        const std::size_t dqk = cfg_.qk_dim() / heads, dv = d / heads;
        Var<Real> q, k;
        if (cfg_.use_mfsa) {
            q = linear(gelu(linear(x, p[ix.q_w1], p[ix.q_b1])), p[ix.q_w2], p[ix.q_b2]);
            k = linear(gelu(linear(x, p[ix.k_w1], p[ix.k_b1])), p[ix.k_w2], p[ix.k_b2]);
        } else {
            q = linear(x, p[ix.q_w1], p[ix.q_b1]);
            k = linear(x, p[ix.k_w1], p[ix.k_b1]);
        }
        const auto v = linear(x, p[ix.v_w], p[ix.v_b]);
        const auto qh = permute(reshape(q, {bs, s, heads, dqk}), {0, 2, 1, 3});
        const auto kt = permute(reshape(k, {bs, s, heads, dqk}), {0, 2, 3, 1});
        const auto vh = permute(reshape(v, {bs, s, heads, dv}), {0, 2, 1, 3});
        const auto att = softmax(mul_scalar(matmul(qh, kt), Real(1) / std::sqrt(static_cast<Real>(dqk))));
        if (weights_out) *weights_out = att;
        const auto ctx = reshape(permute(matmul(att, vh), {0, 2, 1, 3}), {bs, s, d});
        return linear(ctx, p[ix.out_w], p[ix.out_b]);
    }

    template <class To>
    IntraModel<To> cast() const {
        std::map<std::string, Tensor<To>> named;
        for (std::size_t i = 0; i < specs_.size(); ++i) named.emplace(specs_[i].name, params_[i].template cast<To>());
        return IntraModel<To>(cfg_, named);
    }

   private:
    struct BlockIndex {
        std::size_t norm1_scale, norm1_shift;
        std::size_t q_w1, q_b1, q_w2 = 0, q_b2 = 0;
        std::size_t k_w1, k_b1, k_w2 = 0, k_b2 = 0;
        std::size_t v_w, v_b, out_w, out_b;
        std::size_t norm2_scale, norm2_shift;
        std::size_t mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    };
    struct Index {
        std::size_t patch_embed, position, inpaint_token, head_w, head_b;
        std::vector<BlockIndex> blocks;
    };

    explicit IntraModel(const ModelConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        specs_ = parameter_specs(cfg_);
        params_.resize(specs_.size());
        for (std::size_t i = 0; i < specs_.size(); ++i) index_.emplace(specs_[i].name, i);
        idx_.patch_embed = index_of("embed.patch.weight");
        idx_.position = index_of("embed.position");
        idx_.inpaint_token = index_of("embed.inpaint_token");
        idx_.head_w = index_of("head.weight");
        idx_.head_b = index_of("head.bias");
        for (std::size_t b = 0; b < cfg_.num_blocks; ++b) {
            const std::string pre = block_prefix(b);
            BlockIndex bi{};
            bi.norm1_scale = index_of(pre + "norm1.scale");
            bi.norm1_shift = index_of(pre + "norm1.shift");
            if (cfg_.use_mfsa) {
                bi.q_w1 = index_of(pre + "attn.query.fc1.weight");
                bi.q_b1 = index_of(pre + "attn.query.fc1.bias");
                bi.q_w2 = index_of(pre + "attn.query.fc2.weight");
                bi.q_b2 = index_of(pre + "attn.query.fc2.bias");
                bi.k_w1 = index_of(pre + "attn.key.fc1.weight");
                bi.k_b1 = index_of(pre + "attn.key.fc1.bias");
                bi.k_w2 = index_of(pre + "attn.key.fc2.weight");
                bi.k_b2 = index_of(pre + "attn.key.fc2.bias");
            } else {
                bi.q_w1 = index_of(pre + "attn.query.weight");
                bi.q_b1 = index_of(pre + "attn.query.bias");
                bi.k_w1 = index_of(pre + "attn.key.weight");
                bi.k_b1 = index_of(pre + "attn.key.bias");
            }
            bi.v_w = index_of(pre + "attn.value.weight");
            bi.v_b = index_of(pre + "attn.value.bias");
            bi.out_w = index_of(pre + "attn.out.weight");
            bi.out_b = index_of(pre + "attn.out.bias");
            bi.norm2_scale = index_of(pre + "norm2.scale");
            bi.norm2_shift = index_of(pre + "norm2.shift");
            bi.mlp_w1 = index_of(pre + "mlp.fc1.weight");
            bi.mlp_b1 = index_of(pre + "mlp.fc1.bias");
            bi.mlp_w2 = index_of(pre + "mlp.fc2.weight");
            bi.mlp_b2 = index_of(pre + "mlp.fc2.bias");
            idx_.blocks.push_back(bi);
        }
    }

   public:
    /// Redraws one parameter from U(-sqrt(6 / fan_in), +sqrt(6 / fan_in)),
    /// fan_in being the tensor's leading extent.
    template <std::uniform_random_bit_generator Rng>
    void randomize(const std::string& name, Rng& rng) {
        auto& t = parameter(name);
        const double a = std::sqrt(6.0 / static_cast<double>(t.dim(0)));
        std::uniform_real_distribution<double> dist(-a, a);
        for (auto& v : t.data()) v = static_cast<Real>(dist(rng));
    }

   private:
    /// He-style uniform: U(-sqrt(6 / fan_in), +sqrt(6 / fan_in)).
    template <class Rng>
    void initialize(Rng& rng) {
        using I = ParameterSpec::Init;
        for (std::size_t i = 0; i < specs_.size(); ++i) {
            const auto& s = specs_[i];
            Tensor<Real> t(s.shape, s.init == I::ones ? Real(1) : Real(0));
            if (s.init == I::uniform) {
                const double a = std::sqrt(6.0 / static_cast<double>(s.fan_in));
                std::uniform_real_distribution<double> dist(-a, a);
                for (auto& v : t.data()) v = static_cast<Real>(dist(rng));
            }
            params_[i] = std::move(t);
        }
    }

    static Var<Real> linear(const Var<Real>& x, const Var<Real>& w, const Var<Real>& b) { return add(matmul(x, w), b); }

    ModelConfig cfg_;
    std::vector<ParameterSpec> specs_;
    std::vector<Tensor<Real>> params_;
    std::map<std::string, std::size_t> index_;
    Index idx_;
};

}  // namespace intra
