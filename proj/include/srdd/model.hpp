#pragma once

// Decoder-only transformer over the flattened multi-scale token layout.
//
// Conditioning follows the scale-wise design: the input embedding of block
// s >= 1 is the projected accumulated reconstruction through scale s-1
// (downsampled to side s), block 0 is the class start token, and a learned
// per-scale embedding plus per-scale 2-D positional embeddings inform the
// model which resolution is being restored. The attention mask is swappable
// between block_causal, markovian, and full without touching parameters.
//
// Positional and scale tables are keyed by side length, so schedule pruning
// can carry them over unchanged.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "srdd/common.hpp"
#include "srdd/grid.hpp"
#include "srdd/mask.hpp"
#include "srdd/optim.hpp"
#include "srdd/rng.hpp"
#include "srdd/schedule.hpp"
#include "srdd/tensor.hpp"
#include "srdd/tokenizer.hpp"

namespace srdd {

struct ModelConfig {
    int depth = 4;
    int heads = 4;
    int dim = 64;
    int vocab_size = 64;
    int num_classes = 4;  // null class is index num_classes
    int feature_dim = 8;
    ScaleSchedule schedule = ScaleSchedule({1, 2, 3, 4});
    float class_dropout_prob = 0.1f;

    void validate() const {
        if (depth < 1 || heads < 1 || dim < 1) throw ConfigError("model: bad dimensions");
        if (dim % heads != 0) throw ConfigError("model: dim must be divisible by heads");
        if (vocab_size < 2) throw ConfigError("model: vocab size must be >= 2");
        if (num_classes < 1) throw ConfigError("model: need at least one class");
        if (feature_dim < 1) throw ConfigError("model: feature dim must be >= 1");
        if (!(class_dropout_prob >= 0.0f && class_dropout_prob < 1.0f))
            throw ConfigError("model: class_dropout_prob must be in [0, 1)");
    }

    int mlp_hidden() const { return 4 * dim; }
    int head_dim() const { return dim / heads; }
};

// Per-scale conditioning maps for a teacher-forced pass. Entry k >= 1 holds
// the [side_k, side_k, d] map feeding block k; entry 0 is ignored (the class
// start token takes its place).
struct ModelInputs {
    std::vector<Tensor> block_features;
};

// Accumulated-reconstruction inputs for every block, from ground-truth
// tokens: f_k = sum_{j<=k} up(embed(tokens_j)), input[k+1] = down(f_k, side_{k+1}).
inline ModelInputs build_teacher_inputs(const TokenPyramid& p, const Codebook& cb) {
    p.validate(cb.vocab_size);
    const int N = p.schedule.max_side();
    ModelInputs in;
    in.block_features.resize(static_cast<size_t>(p.num_scales()));
    Tensor f = Tensor::zeros({N, N, cb.dim});
    for (int k = 0; k + 1 < p.num_scales(); ++k) {
        add_into(f, upsample(embed_tokens(p.tokens[static_cast<size_t>(k)], p.schedule.side(k), cb), N));
        in.block_features[static_cast<size_t>(k) + 1] = downsample(f, p.schedule.side(k + 1));
    }
    return in;
}

class Model {
public:
    Model(ModelConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)), init_seed_(init_seed) {
        cfg_.validate();
        StreamRng rng(init_seed);
        std::uint64_t slot = 0;
        auto gauss = [&](Shape shape, float std) {
            Tensor t = Tensor::zeros(std::move(shape));
            for (float& v : t.data())
                v = std * rng.gaussian(rng_domain::kParamInit, slot++);
            t.set_requires_grad(true);
            return t;
        };
        auto zeros = [&](Shape shape) {
            Tensor t = Tensor::zeros(std::move(shape));
            t.set_requires_grad(true);
            return t;
        };
        auto ones = [&](Shape shape) {
            Tensor t = Tensor::full(std::move(shape), 1.0f);
            t.set_requires_grad(true);
            return t;
        };
        const float w_std = 0.02f;

        add_param("in_proj.w", gauss({cfg_.feature_dim, cfg_.dim}, w_std));
        add_param("in_proj.b", zeros({cfg_.dim}));
        add_param("cls_embed", gauss({cfg_.num_classes + 1, cfg_.dim}, w_std));
        for (int s : cfg_.schedule.sides()) {
            add_param("scale_embed.s" + std::to_string(s), gauss({cfg_.dim}, w_std));
            add_param("pos_embed.s" + std::to_string(s), gauss({s * s, cfg_.dim}, w_std));
        }
        for (int l = 0; l < cfg_.depth; ++l) {
            const std::string p = "layers." + std::to_string(l) + ".";
            add_param(p + "ln1.g", ones({cfg_.dim}));
            add_param(p + "ln1.b", zeros({cfg_.dim}));
            add_param(p + "attn.wqkv", gauss({cfg_.dim, 3 * cfg_.dim}, w_std));
            add_param(p + "attn.bqkv", zeros({3 * cfg_.dim}));
            add_param(p + "attn.wo", gauss({cfg_.dim, cfg_.dim}, w_std));
            add_param(p + "attn.bo", zeros({cfg_.dim}));
            add_param(p + "ln2.g", ones({cfg_.dim}));
            add_param(p + "ln2.b", zeros({cfg_.dim}));
            add_param(p + "mlp.w1", gauss({cfg_.dim, cfg_.mlp_hidden()}, w_std));
            add_param(p + "mlp.b1", zeros({cfg_.mlp_hidden()}));
            add_param(p + "mlp.w2", gauss({cfg_.mlp_hidden(), cfg_.dim}, w_std));
            add_param(p + "mlp.b2", zeros({cfg_.dim}));
        }
        add_param("lnf.g", ones({cfg_.dim}));
        add_param("lnf.b", zeros({cfg_.dim}));
        // zero-init output head: a fresh model emits exactly uniform logits
        add_param("head.w", zeros({cfg_.dim, cfg_.vocab_size}));
        add_param("head.b", zeros({cfg_.vocab_size}));
    }

    const ModelConfig& config() const { return cfg_; }
    std::uint64_t init_seed() const { return init_seed_; }
    int null_class() const { return cfg_.num_classes; }

    const std::vector<std::pair<std::string, Tensor>>& named_params() const { return params_; }

    std::vector<Tensor> params() const {
        std::vector<Tensor> out;
        for (const auto& [n, t] : params_) out.push_back(t);
        return out;
    }

    Tensor param(const std::string& name) const {
        for (const auto& [n, t] : params_)
            if (n == name) return t;
        throw ConfigError("model: no parameter named " + name);
    }

    std::int64_t param_count() const {
        std::int64_t n = 0;
        for (const auto& [name, t] : params_) n += t.numel();
        return n;
    }

    // Closed-form parameter count; must agree with param_count().
    static std::int64_t expected_param_count(const ModelConfig& cfg) {
        const std::int64_t d = cfg.dim, h = cfg.mlp_hidden(), v = cfg.vocab_size;
        std::int64_t n = cfg.feature_dim * d + d;          // in_proj
        n += static_cast<std::int64_t>(cfg.num_classes + 1) * d;  // cls_embed
        for (int s : cfg.schedule.sides()) n += d + static_cast<std::int64_t>(s) * s * d;
        n += cfg.depth * (2 * d +                 // ln1
                          d * 3 * d + 3 * d +     // qkv
                          d * d + d +             // out proj
                          2 * d +                 // ln2
                          d * h + h + h * d + d); // mlp
        n += 2 * d;      // lnf
        n += d * v + v;  // head
        return n;
    }

    // Teacher-forced pass over the full layout under an explicit mask matrix.
    // Returns [L x V] logits.
    Tensor forward(const ModelInputs& in, int class_label, const MaskMatrix& mask) const {
        const int S = cfg_.schedule.num_scales();
        if (static_cast<int>(in.block_features.size()) != S)
            throw ShapeError("forward: expected one conditioning map per scale");
        std::vector<int> scales(static_cast<size_t>(S));
        for (int k = 0; k < S; ++k) scales[static_cast<size_t>(k)] = k;
        return forward_scales(in, class_label, scales, mask);
    }

    Tensor forward(const ModelInputs& in, int class_label, const AttentionMaskSpec& spec) const {
        if (!(spec.schedule == cfg_.schedule))
            throw ConfigError("forward: mask schedule does not match model schedule");
        return forward(in, class_label, build_mask(spec));
    }

    // Pass over scales 0..upto under the mask pattern restricted to that
    // prefix layout. Returns logits for the whole prefix; callers slice the
    // block of interest.
    Tensor forward_prefix(const ModelInputs& in, int class_label, int upto, MaskKind kind) const {
        if (upto < 0 || upto >= cfg_.schedule.num_scales())
            throw RangeError("forward_prefix: scale index out of range");
        std::vector<int> prefix_sides(cfg_.schedule.sides().begin(),
                                      cfg_.schedule.sides().begin() + upto + 1);
        const MaskMatrix mask = build_mask({kind, ScaleSchedule(std::move(prefix_sides))});
        std::vector<int> scales(static_cast<size_t>(upto) + 1);
        for (int i = 0; i <= upto; ++i) scales[static_cast<size_t>(i)] = i;
        return forward_scales(in, class_label, scales, mask);
    }

    // Single-block pass: the markovian view of scale k. feature may be null
    // only for k == 0 (start token). Returns [side_k^2 x V] logits,
    // bit-identical to the block-k rows of a full markovian-mask pass.
    Tensor forward_block(int k, const Tensor* feature, int class_label) const {
        if (k < 0 || k >= cfg_.schedule.num_scales())
            throw RangeError("forward_block: scale index out of range");
        ModelInputs in;
        in.block_features.resize(static_cast<size_t>(cfg_.schedule.num_scales()));
        if (k > 0) {
            if (feature == nullptr) throw ContractError("forward_block: missing conditioning map");
            in.block_features[static_cast<size_t>(k)] = *feature;
        }
        const int b = cfg_.schedule.tokens_at(k);
        MaskMatrix all;
        all.size = b;
        all.allowed.assign(static_cast<size_t>(b) * b, 1);
        return forward_scales(in, class_label, {k}, all);
    }

    // One optimization step on a batch of pyramids; returns the pre-step
    // loss (mean nats per token). The class label is replaced by the null
    // class with probability class_dropout_prob, keyed by (step, slot).
    float train_step(std::span<const TokenPyramid> batch, const Codebook& cb,
                     const AttentionMaskSpec& spec, AdamW& opt, const StreamRng& rng,
                     std::int64_t step_index) {
        if (batch.empty()) throw ContractError("train_step: empty batch");
        if (!(spec.schedule == cfg_.schedule))
            throw ConfigError("train_step: mask schedule does not match model schedule");
        const MaskMatrix mask = build_mask(spec);
        opt.zero_grad();
        Tensor total;
        for (size_t i = 0; i < batch.size(); ++i) {
            const TokenPyramid& p = batch[i];
            int label = p.class_label.value_or(null_class());
            if (cfg_.class_dropout_prob > 0.0f &&
                rng.uniform(rng_domain::kClassDropout, static_cast<std::uint64_t>(step_index),
                            static_cast<std::uint64_t>(i)) < cfg_.class_dropout_prob)
                label = null_class();
            ModelInputs in = build_teacher_inputs(p, cb);
            Tensor logits = forward(in, label, mask);
            std::vector<int> targets;
            targets.reserve(static_cast<size_t>(cfg_.schedule.total_tokens()));
            for (const auto& grid : p.tokens)
                for (std::int32_t t : grid) targets.push_back(static_cast<int>(t));
            Tensor loss = softmax_cross_entropy(logits, targets);
            total = total.defined() ? add(total, loss) : loss;
        }
        Tensor loss = scale(total, 1.0f / static_cast<float>(batch.size()));
        const float value = loss.item();
        if (!std::isfinite(value))
            throw NumericError("train_step: non-finite loss at step " +
                               std::to_string(step_index));
        backward(loss);
        opt.clip_gradients();
        opt.step();
        return value;
    }

private:
    void add_param(std::string name, Tensor t) { params_.emplace_back(std::move(name), std::move(t)); }

    // Shared core: a pass over an arbitrary subset of scales laid out in
    // order, under an explicit mask over that layout.
    Tensor forward_scales(const ModelInputs& in, int class_label, const std::vector<int>& scales,
                          const MaskMatrix& mask) const {
        if (class_label < 0 || class_label > cfg_.num_classes)
            throw IndexError("forward: class label " + std::to_string(class_label) +
                             " outside [0, " + std::to_string(cfg_.num_classes) + "]");
        int L = 0;
        for (int k : scales) L += cfg_.schedule.tokens_at(k);
        if (mask.size != L) throw ShapeError("forward: mask size does not match layout");

        const Tensor in_w = param("in_proj.w");
        const Tensor in_b = param("in_proj.b");

        std::vector<Tensor> blocks;
        for (int k : scales) {
            const int side = cfg_.schedule.side(k);
            Tensor x;
            if (k == 0) {
                // class start token, repeated if the coarsest side exceeds 1
                const std::vector<int> ids(static_cast<size_t>(side) * side, class_label);
                x = embedding_rows(param("cls_embed"), ids);
            } else {
                const Tensor& fm = in.block_features[static_cast<size_t>(k)];
                if (!fm.defined())
                    throw ContractError("forward: missing conditioning map for scale " +
                                        std::to_string(k));
                if (fm.rank() != 3 || fm.extent(0) != side || fm.extent(2) != cfg_.feature_dim)
                    throw ShapeError("forward: conditioning map for scale " + std::to_string(k) +
                                     " must be [" + std::to_string(side) + ", " +
                                     std::to_string(side) + ", " +
                                     std::to_string(cfg_.feature_dim) + "]");
                Tensor flat = Tensor::from_data({side * side, cfg_.feature_dim},
                                                std::vector<float>(fm.data().begin(), fm.data().end()));
                x = add_rowvec(matmul(flat, in_w), in_b);
            }
            x = add_rowvec(x, param("scale_embed.s" + std::to_string(side)));
            x = add(x, param("pos_embed.s" + std::to_string(side)));
            blocks.push_back(x);
        }
        Tensor x = blocks.size() == 1 ? blocks[0] : concat_rows(blocks);

        Tensor bias = mask_bias(mask);
        const float inv_sqrt_hd = 1.0f / std::sqrt(static_cast<float>(cfg_.head_dim()));
        for (int l = 0; l < cfg_.depth; ++l) {
            const std::string p = "layers." + std::to_string(l) + ".";
            Tensor h = layer_norm(x, param(p + "ln1.g"), param(p + "ln1.b"));
            Tensor qkv = add_rowvec(matmul(h, param(p + "attn.wqkv")), param(p + "attn.bqkv"));
            std::vector<Tensor> heads;
            for (int hd = 0; hd < cfg_.heads; ++hd) {
                const int off = hd * cfg_.head_dim();
                Tensor q = slice_cols(qkv, off, off + cfg_.head_dim());
                Tensor k = slice_cols(qkv, cfg_.dim + off, cfg_.dim + off + cfg_.head_dim());
                Tensor v = slice_cols(qkv, 2 * cfg_.dim + off, 2 * cfg_.dim + off + cfg_.head_dim());
                Tensor scores = add(scale(matmul_nt(q, k), inv_sqrt_hd), bias);
                heads.push_back(matmul(softmax_rows(scores), v));
            }
            Tensor att = cfg_.heads == 1 ? heads[0] : concat_cols(heads);
            att = add_rowvec(matmul(att, param(p + "attn.wo")), param(p + "attn.bo"));
            x = add(x, att);
            Tensor m = layer_norm(x, param(p + "ln2.g"), param(p + "ln2.b"));
            m = add_rowvec(matmul(m, param(p + "mlp.w1")), param(p + "mlp.b1"));
            m = gelu(m);
            m = add_rowvec(matmul(m, param(p + "mlp.w2")), param(p + "mlp.b2"));
            x = add(x, m);
        }
        x = layer_norm(x, param("lnf.g"), param("lnf.b"));
        return add_rowvec(matmul(x, param("head.w")), param("head.b"));
    }

    static Tensor mask_bias(const MaskMatrix& mask) {
        Tensor bias = Tensor::zeros({mask.size, mask.size});
        auto d = bias.data();
        for (size_t i = 0; i < mask.allowed.size(); ++i)
            if (!mask.allowed[i]) d[i] = -std::numeric_limits<float>::infinity();
        return bias;
    }

    ModelConfig cfg_;
    std::uint64_t init_seed_ = 0;
    std::vector<std::pair<std::string, Tensor>> params_;
};

}  // namespace srdd
