#pragma once

// Discrete-diffusion machinery and the bridge to scale-wise generation.
//
// The first half is the categorical-process toolkit: row-stochastic
// transition matrices, the forward Markov step, cumulative products, and
// the token-masking process whose reverse transition reveals exactly one
// position per step. Its KL decomposition is the standard cross-entropy at
// the revealed position and exactly zero elsewhere; masked positions use
// the sentinel id mask_token(V) = V, which never leaves this module.
//
// The second half is the loss pair connecting the two views of the same
// model: var_loss is the teacher-forced multi-scale cross-entropy under an
// arbitrary attention mask, and sdd_loss evaluates one scale at a time
// conditioned on the previous scale only (scale 0 on the start token).
// Under the markovian mask these are the same computation, so the values
// agree to the last bit; both use mean-per-token reduction, which pins the
// scaling constant between the two formulations to 1. The ELBO's prior and
// reconstruction terms are constants under deterministic transitions and
// are dropped from both.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "srdd/common.hpp"
#include "srdd/mask.hpp"
#include "srdd/model.hpp"
#include "srdd/tensor.hpp"
#include "srdd/tokenizer.hpp"

namespace srdd {

inline constexpr int mask_token(int vocab_size) { return vocab_size; }

struct TransitionMatrix {
    int t = 0;      // step index
    Tensor matrix;  // [V x V], row-stochastic

    TransitionMatrix() = default;
    TransitionMatrix(int step, Tensor q) : t(step), matrix(std::move(q)) { validate(); }

    int vocab_size() const { return matrix.extent(0); }

    void validate(double tol = 1e-5) const {
        if (matrix.rank() != 2 || matrix.extent(0) != matrix.extent(1))
            throw ShapeError("transition matrix must be square");
        const int V = matrix.extent(0);
        for (int i = 0; i < V; ++i) {
            double sum = 0.0;
            for (int j = 0; j < V; ++j) {
                const float v = matrix.at(i, j);
                if (v < 0.0f) throw ValidationError("transition matrix: negative entry");
                sum += v;
            }
            if (std::abs(sum - 1.0) > tol)
                throw ValidationError("transition matrix: row " + std::to_string(i) +
                                      " sums to " + std::to_string(sum));
        }
    }
};

// One forward Markov step: dist . Q.
inline std::vector<float> forward_step(std::span<const float> dist, const TransitionMatrix& q) {
    q.validate();
    const int V = q.vocab_size();
    if (static_cast<int>(dist.size()) != V)
        throw ShapeError("forward_step: distribution size does not match matrix");
    double sum = 0.0;
    for (float v : dist) {
        if (v < 0.0f) throw ValidationError("forward_step: negative probability");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-5)
        throw ValidationError("forward_step: distribution sums to " + std::to_string(sum));
    std::vector<float> out(static_cast<size_t>(V), 0.0f);
    for (int j = 0; j < V; ++j) {
        double acc = 0.0;
        for (int i = 0; i < V; ++i)
            acc += static_cast<double>(dist[static_cast<size_t>(i)]) * q.matrix.at(i, j);
        out[static_cast<size_t>(j)] = static_cast<float>(acc);
    }
    return out;
}

// Ordered product Q_1 Q_2 ... Q_t, accumulated in double.
inline TransitionMatrix cumulative(std::span<const TransitionMatrix> qs) {
    if (qs.empty()) throw ValidationError("cumulative: empty list");
    const int V = qs[0].vocab_size();
    for (const auto& q : qs) {
        q.validate();
        if (q.vocab_size() != V) throw ValidationError("cumulative: inconsistent vocab sizes");
    }
    std::vector<double> acc(static_cast<size_t>(V) * V, 0.0);
    for (int i = 0; i < V; ++i)
        for (int j = 0; j < V; ++j)
            acc[static_cast<size_t>(i) * V + j] = qs[0].matrix.at(i, j);
    std::vector<double> next(static_cast<size_t>(V) * V);
    for (size_t m = 1; m < qs.size(); ++m) {
        std::fill(next.begin(), next.end(), 0.0);
        for (int i = 0; i < V; ++i)
            for (int k = 0; k < V; ++k) {
                const double a = acc[static_cast<size_t>(i) * V + k];
                if (a == 0.0) continue;
                for (int j = 0; j < V; ++j)
                    next[static_cast<size_t>(i) * V + j] +=
                        a * qs[m].matrix.at(k, j);
            }
        std::swap(acc, next);
    }
    std::vector<float> out(acc.size());
    for (size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i]);
    return TransitionMatrix(qs.back().t, Tensor::from_data({V, V}, std::move(out)));
}

// State of the token-masking forward process: the last t positions of the
// length-T sequence are masked.
struct MaskingState {
    std::vector<int> sequence;  // values in [0, V) or mask_token(V)
    int t = 0;

    int length() const { return static_cast<int>(sequence.size()); }
};

inline MaskingState masking_forward(std::span<const int> x0, int t, int vocab_size) {
    const int T = static_cast<int>(x0.size());
    if (t < 0 || t > T)
        throw RangeError("masking_forward: t = " + std::to_string(t) + " outside [0, " +
                         std::to_string(T) + "]");
    for (int v : x0)
        if (v < 0 || v >= vocab_size)
            throw IndexError("masking_forward: token outside vocabulary");
    MaskingState s;
    s.t = t;
    s.sequence.assign(x0.begin(), x0.end());
    for (int i = T - t; i < T; ++i) s.sequence[static_cast<size_t>(i)] = mask_token(vocab_size);
    return s;
}

// Per-position KL of the reverse-transition posterior q([x_{t-1}]_j | x_t, x_0)
// against the model p_theta([x_{t-1}]_j | x_t). The posterior is a delta at
// every position: already-revealed positions are copied, positions masked in
// x_{t-1} stay masked, and the single revealed position i = T - t carries
// -log p at the true token. model_probs[j] is the model's categorical over
// the vocabulary at position j; only position i is consulted.
inline std::vector<double> kl_decomposition(std::span<const int> x0, const MaskingState& xt,
                                            std::span<const std::vector<float>> model_probs,
                                            int vocab_size) {
    const int T = static_cast<int>(x0.size());
    if (xt.length() != T) throw ContractError("kl_decomposition: length mismatch");
    if (xt.t < 1 || xt.t > T)
        throw RangeError("kl_decomposition: need 1 <= t <= T for a reverse transition");
    if (static_cast<int>(model_probs.size()) != T)
        throw ContractError("kl_decomposition: need one categorical per position");
    for (int j = 0; j < T - xt.t; ++j)
        if (xt.sequence[static_cast<size_t>(j)] != x0[static_cast<size_t>(j)])
            throw ContractError("kl_decomposition: x_t disagrees with x_0 at revealed position " +
                                std::to_string(j));
    for (int j = T - xt.t; j < T; ++j)
        if (xt.sequence[static_cast<size_t>(j)] != mask_token(vocab_size))
            throw ContractError("kl_decomposition: position " + std::to_string(j) +
                                " should be masked");
    std::vector<double> kl(static_cast<size_t>(T), 0.0);
    const int i = T - xt.t;  // the position this transition reveals
    const auto& p = model_probs[static_cast<size_t>(i)];
    if (static_cast<int>(p.size()) != vocab_size)
        throw ContractError("kl_decomposition: categorical size mismatch");
    const double pi = p[static_cast<size_t>(x0[static_cast<size_t>(i)])];
    kl[static_cast<size_t>(i)] = -std::log(pi);
    return kl;
}

// ---------------------------------------------------------------------------
// the loss pair
// ---------------------------------------------------------------------------

namespace detail {

// -log softmax(row)[target], evaluated in double. Shared by both losses so
// the per-row arithmetic is identical.
inline double row_nll(const float* row, int vocab, int target) {
    float mx = row[0];
    for (int c = 1; c < vocab; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (int c = 0; c < vocab; ++c) sum += std::exp(static_cast<double>(row[c]) - mx);
    return -(static_cast<double>(row[target]) - mx - std::log(sum));
}

inline void accumulate_nll(const Tensor& logits, std::span<const std::int32_t> targets,
                           double& acc) {
    const int rows = logits.extent(0), vocab = logits.extent(1);
    if (static_cast<int>(targets.size()) != rows)
        throw ShapeError("accumulate_nll: target count mismatch");
    for (int r = 0; r < rows; ++r)
        acc += row_nll(logits.data().data() + static_cast<size_t>(r) * vocab, vocab,
                       static_cast<int>(targets[static_cast<size_t>(r)]));
}

}  // namespace detail

// Scale-by-scale loss: each scale's tokens are scored from a pass that sees
// only the previous scale's content (scale 0 sees the start token). Mean
// nats per token.
inline double sdd_loss(const Model& model, const TokenPyramid& p, const Codebook& cb) {
    NoGradGuard ng;
    p.validate(cb.vocab_size);
    if (!(p.schedule == model.config().schedule))
        throw ConfigError("sdd_loss: pyramid schedule does not match model");
    const int label = p.class_label.value_or(model.null_class());
    const int N = p.schedule.max_side();
    double acc = 0.0;
    Tensor f = Tensor::zeros({N, N, cb.dim});
    for (int k = 0; k < p.num_scales(); ++k) {
        Tensor logits;
        if (k == 0) {
            logits = model.forward_block(0, nullptr, label);
        } else {
            Tensor cond = downsample(f, p.schedule.side(k));
            logits = model.forward_block(k, &cond, label);
        }
        detail::accumulate_nll(logits, p.tokens[static_cast<size_t>(k)], acc);
        if (k + 1 < p.num_scales())
            add_into(f, upsample(embed_tokens(p.tokens[static_cast<size_t>(k)],
                                              p.schedule.side(k), cb),
                                 N));
    }
    return acc / p.schedule.total_tokens();
}

// Teacher-forced multi-scale cross-entropy under an arbitrary mask, from one
// forward pass over the full layout. Mean nats per token.
inline double var_loss(const Model& model, const TokenPyramid& p, const Codebook& cb,
                       const MaskMatrix& mask) {
    NoGradGuard ng;
    p.validate(cb.vocab_size);
    if (!(p.schedule == model.config().schedule))
        throw ConfigError("var_loss: pyramid schedule does not match model");
    const int label = p.class_label.value_or(model.null_class());
    ModelInputs in = build_teacher_inputs(p, cb);
    Tensor logits = model.forward(in, label, mask);
    double acc = 0.0;
    int row = 0;
    for (int k = 0; k < p.num_scales(); ++k) {
        Tensor block = slice_rows(logits, row, row + p.schedule.tokens_at(k));
        detail::accumulate_nll(block, p.tokens[static_cast<size_t>(k)], acc);
        row += p.schedule.tokens_at(k);
    }
    return acc / p.schedule.total_tokens();
}

inline double var_loss(const Model& model, const TokenPyramid& p, const Codebook& cb,
                       MaskKind kind) {
    return var_loss(model, p, cb, build_mask({kind, model.config().schedule}));
}

}  // namespace srdd
