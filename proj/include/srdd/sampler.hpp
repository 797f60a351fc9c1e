#pragma once

// Scale-wise sampling: coarse-to-fine generation with classifier-free
// guidance, simple resampling (SR), masked resampling (MR) and zero-shot
// editing.
//
// The loop follows the accumulation scheme: at scale n the model predicts
// h_n from i_{n-1}, then f_n = f_{n-1} + up(embed(h_n), N) and
// i_n = down(f_n, side_{n+1}). Every random draw is keyed by
// (domain, scale, pass, position) on a counter-based stream, so SR/MR
// passes and editing overwrites never shift unrelated draws: sr_steps = 1
// is bit-identical to plain sampling, and an all-unknown edit mask
// reproduces plain sampling exactly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "srdd/common.hpp"
#include "srdd/grid.hpp"
#include "srdd/mask.hpp"
#include "srdd/model.hpp"
#include "srdd/rng.hpp"
#include "srdd/tensor.hpp"
#include "srdd/tokenizer.hpp"

namespace srdd {

struct SamplerConfig {
    float cfg_weight = 0.0f;     // guidance weight w >= 0
    float temperature = 1.0f;    // > 0
    int top_k = 0;               // 0 disables
    float mr_threshold = 0.01f;  // p_resample in (0, 1)
    int mr_steps = 0;            // refinement passes T >= 0
    int sr_steps = 1;            // whole-scale redraws >= 1
    std::uint64_t seed = 0;

    void validate() const {
        if (!(cfg_weight >= 0.0f)) throw ConfigError("sampler: cfg weight must be >= 0");
        if (!(temperature > 0.0f)) throw ConfigError("sampler: temperature must be > 0");
        if (top_k < 0) throw ConfigError("sampler: top_k must be >= 0 (0 disables)");
        if (!(mr_threshold > 0.0f && mr_threshold < 1.0f))
            throw ConfigError("sampler: mr threshold must be in (0, 1)");
        if (mr_steps < 0) throw ConfigError("sampler: mr steps must be >= 0");
        if (sr_steps < 1) throw ConfigError("sampler: sr steps must be >= 1");
    }
};

// Guidance in logit space: cond + w * (cond - uncond), the log of
// p_c^{1+w} / p_u^w up to the softmax normalizer. Written in residual form
// so both identity cases (w = 0, cond == uncond) are bit-exact.
inline Tensor guided_logits(const Tensor& cond, const Tensor& uncond, float w) {
    if (cond.shape() != uncond.shape())
        throw ShapeError("guided_logits: shape mismatch " + shape_str(cond.shape()) + " vs " +
                         shape_str(uncond.shape()));
    if (!(w >= 0.0f)) throw RangeError("guided_logits: weight must be >= 0");
    Tensor out = cond.clone();
    auto o = out.data();
    auto c = cond.data();
    auto u = uncond.data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = c[i] + w * (c[i] - u[i]);
    return out;
}

// The categorical a position is actually drawn from: temperature, then
// top-k filtering (ties at the cutoff keep lower indices), renormalized.
inline std::vector<float> sampling_distribution(std::span<const float> logits, float temperature,
                                                int top_k) {
    const int V = static_cast<int>(logits.size());
    if (V < 1) throw ShapeError("sampling_distribution: empty logits");
    std::vector<float> probs(static_cast<size_t>(V));
    float mx = logits[0];
    for (int j = 1; j < V; ++j) mx = std::max(mx, logits[static_cast<size_t>(j)]);
    double sum = 0.0;
    for (int j = 0; j < V; ++j) {
        const double e = std::exp((static_cast<double>(logits[static_cast<size_t>(j)]) - mx) /
                                  temperature);
        probs[static_cast<size_t>(j)] = static_cast<float>(e);
        sum += e;
    }
    if (top_k > 0 && top_k < V) {
        std::vector<int> order(static_cast<size_t>(V));
        for (int j = 0; j < V; ++j) order[static_cast<size_t>(j)] = j;
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return probs[static_cast<size_t>(a)] > probs[static_cast<size_t>(b)];
        });
        std::vector<float> kept(static_cast<size_t>(V), 0.0f);
        sum = 0.0;
        for (int r = 0; r < top_k; ++r) {
            const int j = order[static_cast<size_t>(r)];
            kept[static_cast<size_t>(j)] = probs[static_cast<size_t>(j)];
            sum += probs[static_cast<size_t>(j)];
        }
        probs = std::move(kept);
    }
    const float inv = static_cast<float>(1.0 / sum);
    for (float& p : probs) p *= inv;
    return probs;
}

// Refined-token fractions, one entry per MR pass, for one scale.
struct MrScaleStats {
    int scale = 0;
    std::vector<double> refined_fraction;
};

struct GenerateResult {
    TokenPyramid pyramid;
    std::vector<MrScaleStats> mr_stats;
};

// Full-resolution boolean grid of known pixels plus its conservative
// per-scale projections: a coarse cell is known only when every pixel it
// covers is known.
struct EditMask {
    int side = 0;
    std::vector<std::uint8_t> known;  // row-major side x side

    static EditMask uniform(int side, bool value) {
        EditMask m;
        m.side = side;
        m.known.assign(static_cast<size_t>(side) * side, value ? 1 : 0);
        return m;
    }

    static EditMask from_grid(int side, std::vector<std::uint8_t> grid) {
        if (static_cast<int>(grid.size()) != side * side)
            throw ShapeError("edit mask: grid size mismatch");
        EditMask m;
        m.side = side;
        m.known = std::move(grid);
        return m;
    }

    std::vector<std::uint8_t> project(int n) const {
        if (n < 1 || n > side) throw RangeError("edit mask: bad projection side");
        std::vector<std::uint8_t> out(static_cast<size_t>(n) * n, 1);
        const auto w = detail::area_weights(n, side);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                bool all_known = true;
                for (const auto& [r, wr] : w[static_cast<size_t>(i)]) {
                    for (const auto& [c, wc] : w[static_cast<size_t>(j)])
                        if (!known[static_cast<size_t>(r) * side + c]) {
                            all_known = false;
                            break;
                        }
                    if (!all_known) break;
                }
                out[static_cast<size_t>(i) * n + j] = all_known ? 1 : 0;
            }
        return out;
    }
};

enum class EditTask { inpaint, outpaint, super_res };

inline EditTask edit_task_from_name(const std::string& s) {
    if (s == "inpaint") return EditTask::inpaint;
    if (s == "outpaint") return EditTask::outpaint;
    if (s == "sr" || s == "super_res") return EditTask::super_res;
    throw ConfigError("unknown edit task: " + s);
}

namespace detail {

// Per-scale machinery shared by generate / resampling / edit.
class ScaleSampler {
public:
    ScaleSampler(const Model& model, const Codebook& cb, const SamplerConfig& cfg, MaskKind kind)
        : model_(model), cb_(cb), cfg_(cfg), kind_(kind), rng_(cfg.seed) {
        cfg_.validate();
        if (model.config().vocab_size != cb.vocab_size)
            throw ConfigError("sampler: model and codebook vocabulary sizes differ");
        const int N = model.config().schedule.max_side();
        f_ = Tensor::zeros({N, N, cb.dim});
        inputs_.block_features.resize(static_cast<size_t>(model.config().schedule.num_scales()));
    }

    // Per-position sampling distributions for scale k under the current
    // accumulated context (guidance applied when configured).
    std::vector<std::vector<float>> scale_distributions(int k, int label) {
        NoGradGuard ng;
        Tensor cond = scale_logits(k, label);
        Tensor g = cond;
        if (cfg_.cfg_weight > 0.0f) {
            Tensor uncond = scale_logits(k, model_.null_class());
            g = guided_logits(cond, uncond, cfg_.cfg_weight);
        }
        const int b = model_.config().schedule.tokens_at(k);
        const int V = model_.config().vocab_size;
        std::vector<std::vector<float>> out;
        out.reserve(static_cast<size_t>(b));
        for (int i = 0; i < b; ++i)
            out.push_back(sampling_distribution(
                std::span<const float>(g.data().data() + static_cast<size_t>(i) * V,
                                       static_cast<size_t>(V)),
                cfg_.temperature, cfg_.top_k));
        return out;
    }

    // Draw + SR + MR for one scale; returns the final tokens and MR stats.
    std::vector<std::int32_t> sample_scale(int k, int label, MrScaleStats& stats) {
        const auto dists = scale_distributions(k, label);
        const int b = static_cast<int>(dists.size());
        std::vector<std::int32_t> tokens(static_cast<size_t>(b));
        // base draw is SR pass 0; further SR passes redraw everything and the
        // last draw wins
        for (int pass = 0; pass < cfg_.sr_steps; ++pass)
            for (int i = 0; i < b; ++i)
                tokens[static_cast<size_t>(i)] = static_cast<std::int32_t>(rng_.categorical(
                    dists[static_cast<size_t>(i)], rng_domain::kTokenDraw,
                    static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(pass),
                    static_cast<std::uint64_t>(i)));
        stats.scale = k;
        for (int pass = 0; pass < cfg_.mr_steps; ++pass) {
            // re-evaluate under the current context each pass
            const auto cur = scale_distributions(k, label);
            int refined = 0;
            for (int i = 0; i < b; ++i) {
                const float p =
                    cur[static_cast<size_t>(i)][static_cast<size_t>(tokens[static_cast<size_t>(i)])];
                if (p < cfg_.mr_threshold) {
                    tokens[static_cast<size_t>(i)] = static_cast<std::int32_t>(rng_.categorical(
                        cur[static_cast<size_t>(i)], rng_domain::kResampleDraw,
                        static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(pass),
                        static_cast<std::uint64_t>(i)));
                    ++refined;
                }
            }
            stats.refined_fraction.push_back(static_cast<double>(refined) / b);
        }
        return tokens;
    }

    // Commit scale-k tokens into the accumulator and derive the next
    // conditioning map.
    void commit_scale(int k, const std::vector<std::int32_t>& tokens, TokenPyramid& p) {
        const auto& sched = model_.config().schedule;
        p.tokens.push_back(tokens);
        add_into(f_, upsample(embed_tokens(tokens, sched.side(k), cb_), sched.max_side()));
        if (k + 1 < sched.num_scales())
            inputs_.block_features[static_cast<size_t>(k) + 1] =
                downsample(f_, sched.side(k + 1));
    }

    const Tensor& accumulated() const { return f_; }

private:
    // Logits for block k under the configured mask kind. markovian reads the
    // single-block pass; block_causal/full replay the finalized prefix and
    // slice block k's rows.
    Tensor scale_logits(int k, int label) {
        NoGradGuard ng;
        if (kind_ == MaskKind::markovian) {
            const Tensor* cond =
                k == 0 ? nullptr : &inputs_.block_features[static_cast<size_t>(k)];
            return model_.forward_block(k, cond, label);
        }
        const auto& sched = model_.config().schedule;
        Tensor logits = model_.forward_prefix(inputs_, label, k, kind_);
        const int off = sched.block_offset(k);
        return slice_rows(logits, off, off + sched.tokens_at(k));
    }

    const Model& model_;
    const Codebook& cb_;
    SamplerConfig cfg_;
    MaskKind kind_;
    StreamRng rng_;
    Tensor f_;
    ModelInputs inputs_;
};

}  // namespace detail

inline GenerateResult generate(const Model& model, const Codebook& cb, int class_label,
                               const SamplerConfig& cfg, MaskKind kind = MaskKind::markovian) {
    NoGradGuard ng;
    detail::ScaleSampler s(model, cb, cfg, kind);
    GenerateResult out;
    out.pyramid.schedule = model.config().schedule;
    out.pyramid.class_label = class_label;
    for (int k = 0; k < model.config().schedule.num_scales(); ++k) {
        MrScaleStats stats;
        const auto tokens = s.sample_scale(k, class_label, stats);
        s.commit_scale(k, tokens, out.pyramid);
        out.mr_stats.push_back(std::move(stats));
    }
    return out;
}

// Standalone MR pass over scale k of an existing pyramid whose scales < k
// are final. Returns per-pass refined fractions; scale-k tokens are updated
// in place. Tokens at or above the threshold at the start of a pass are
// never altered in that pass.
inline MrScaleStats masked_resample(const Model& model, const Codebook& cb, TokenPyramid& p,
                                    int k, const SamplerConfig& cfg,
                                    MaskKind kind = MaskKind::markovian) {
    NoGradGuard ng;
    if (k < 0 || k >= p.num_scales()) throw RangeError("masked_resample: bad scale index");
    if (static_cast<int>(p.tokens.size()) <= k)
        throw ContractError("masked_resample: scales below k must be finalized");
    detail::ScaleSampler s(model, cb, cfg, kind);
    TokenPyramid rebuilt;
    rebuilt.schedule = p.schedule;
    rebuilt.class_label = p.class_label;
    for (int j = 0; j < k; ++j) s.commit_scale(j, p.tokens[static_cast<size_t>(j)], rebuilt);
    const int label = p.class_label.value_or(model.null_class());
    const int b = p.schedule.tokens_at(k);
    auto& tokens = p.tokens[static_cast<size_t>(k)];
    StreamRng rng(cfg.seed);
    MrScaleStats stats;
    stats.scale = k;
    for (int pass = 0; pass < cfg.mr_steps; ++pass) {
        const auto cur = s.scale_distributions(k, label);
        int refined = 0;
        for (int i = 0; i < b; ++i) {
            const float prob =
                cur[static_cast<size_t>(i)][static_cast<size_t>(tokens[static_cast<size_t>(i)])];
            if (prob < cfg.mr_threshold) {
                tokens[static_cast<size_t>(i)] = static_cast<std::int32_t>(rng.categorical(
                    cur[static_cast<size_t>(i)], rng_domain::kResampleDraw,
                    static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(pass),
                    static_cast<std::uint64_t>(i)));
                ++refined;
            }
        }
        stats.refined_fraction.push_back(static_cast<double>(refined) / b);
    }
    return stats;
}

// Redraw the whole of scale k sr_steps times, keeping the final draw;
// sr_steps = 1 reproduces the plain draw exactly.
inline void simple_resample(const Model& model, const Codebook& cb, TokenPyramid& p, int k,
                            const SamplerConfig& cfg, MaskKind kind = MaskKind::markovian) {
    NoGradGuard ng;
    if (k < 0 || k >= p.num_scales()) throw RangeError("simple_resample: bad scale index");
    detail::ScaleSampler s(model, cb, cfg, kind);
    TokenPyramid rebuilt;
    rebuilt.schedule = p.schedule;
    rebuilt.class_label = p.class_label;
    for (int j = 0; j < k; ++j) s.commit_scale(j, p.tokens[static_cast<size_t>(j)], rebuilt);
    const int label = p.class_label.value_or(model.null_class());
    const auto dists = s.scale_distributions(k, label);
    auto& tokens = p.tokens[static_cast<size_t>(k)];
    StreamRng rng(cfg.seed);
    for (int pass = 0; pass < cfg.sr_steps; ++pass)
        for (int i = 0; i < static_cast<int>(dists.size()); ++i)
            tokens[static_cast<size_t>(i)] = static_cast<std::int32_t>(
                rng.categorical(dists[static_cast<size_t>(i)], rng_domain::kTokenDraw,
                                static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(pass),
                                static_cast<std::uint64_t>(i)));
}

// Zero-shot editing. source_feature is the [N, N, d] feature map for
// inpaint/outpaint (with mask at side N) and the [m, m, d] source for
// super-resolution (m must be in the schedule; the mask argument is
// ignored). Known positions are overwritten with the encoded ground truth
// before each scale's accumulation, so they match the encoder exactly.
inline GenerateResult edit(const Model& model, const Codebook& cb, const Tensor& source_feature,
                           const EditMask* mask, EditTask task, int class_label,
                           const SamplerConfig& cfg, MaskKind kind = MaskKind::markovian) {
    NoGradGuard ng;
    const ScaleSchedule& sched = model.config().schedule;
    const int N = sched.max_side();
    check_feature_map(source_feature, "edit");

    Tensor full_feature;
    int sr_source_side = 0;
    if (task == EditTask::super_res) {
        sr_source_side = source_feature.extent(0);
        if (!sched.contains_side(sr_source_side))
            throw ValidationError("edit: super-resolution source side " +
                                  std::to_string(sr_source_side) + " not in schedule " +
                                  sched.str());
        full_feature = upsample(source_feature, N);
    } else {
        if (source_feature.extent(0) != N)
            throw ValidationError("edit: source must be at full resolution " + std::to_string(N));
        if (mask == nullptr) throw ValidationError("edit: inpaint/outpaint need a mask");
        if (mask->side != N)
            throw ValidationError("edit: mask side " + std::to_string(mask->side) +
                                  " does not match image side " + std::to_string(N));
        full_feature = source_feature.clone();
    }
    const TokenPyramid ground = encode(full_feature, sched, cb).pyramid;

    detail::ScaleSampler s(model, cb, cfg, kind);
    GenerateResult out;
    out.pyramid.schedule = sched;
    out.pyramid.class_label = class_label;
    for (int k = 0; k < sched.num_scales(); ++k) {
        const int side = sched.side(k);
        MrScaleStats stats;
        auto tokens = s.sample_scale(k, class_label, stats);
        if (task == EditTask::super_res) {
            if (side <= sr_source_side) tokens = ground.tokens[static_cast<size_t>(k)];
        } else {
            const auto keep = mask->project(side);
            for (size_t i = 0; i < keep.size(); ++i)
                if (keep[i]) tokens[i] = ground.tokens[static_cast<size_t>(k)][i];
        }
        s.commit_scale(k, tokens, out.pyramid);
        out.mr_stats.push_back(std::move(stats));
    }
    return out;
}

}  // namespace srdd
