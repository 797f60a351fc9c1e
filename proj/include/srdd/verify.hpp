#pragma once

// Equivalence and consistency oracle suite, runnable from the CLI. Each
// check is self-contained and seeded; the suite prints one line per check.
//
// Covered here:
//   - scale-wise loss vs teacher-forced loss under the markovian mask
//     (randomized models and pyramids),
//   - the masking process' KL decomposition against a brute-force
//     product-space posterior enumeration,
//   - mask locality by perturbation probes over all block pairs,
//   - uniform-model closed forms,
//   - block-causal mask with attention to scales < s-1 forced off versus
//     the markovian mask.

#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "srdd/diffusion.hpp"
#include "srdd/mask.hpp"
#include "srdd/model.hpp"
#include "srdd/rng.hpp"
#include "srdd/tokenizer.hpp"

namespace srdd {

struct VerifyCheck {
    std::string name;
    bool pass = false;
    std::string detail;
};

namespace verify_detail {

inline Codebook random_codebook(int vocab, int dim, std::uint64_t seed) {
    StreamRng rng(seed);
    std::vector<float> table(static_cast<size_t>(vocab) * dim);
    for (size_t i = 0; i < table.size(); ++i)
        table[i] = rng.gaussian(rng_domain::kTest, 11, i);
    return Codebook(vocab, dim, Tensor::from_data({vocab, dim}, std::move(table)));
}

inline TokenPyramid random_pyramid(const ScaleSchedule& sched, int vocab, int num_classes,
                                   std::uint64_t seed) {
    StreamRng rng(seed);
    TokenPyramid p;
    p.schedule = sched;
    for (int k = 0; k < sched.num_scales(); ++k) {
        std::vector<std::int32_t> grid(static_cast<size_t>(sched.tokens_at(k)));
        for (size_t i = 0; i < grid.size(); ++i)
            grid[i] = static_cast<std::int32_t>(
                rng.raw(rng_domain::kTest, 12, static_cast<std::uint64_t>(k), i) %
                static_cast<std::uint64_t>(vocab));
        p.tokens.push_back(std::move(grid));
    }
    p.class_label = static_cast<int>(seed % static_cast<std::uint64_t>(num_classes));
    return p;
}

// Randomize every parameter (including the zero-initialized head) so the
// losses under test are far from the uniform fixed point.
inline void randomize_params(Model& m, std::uint64_t seed, float std_dev = 0.3f) {
    StreamRng rng(seed);
    std::uint64_t slot = 0;
    for (const auto& [name, t] : m.named_params()) {
        Tensor h = t;
        for (float& v : h.data()) v = std_dev * rng.gaussian(rng_domain::kTest, 13, slot++);
    }
}

// Brute-force KL over the product space of full sequences. q(x_{t-1}|x_t,x_0)
// is a delta; p factorizes per position with copy-deltas at revealed
// positions, the model categorical at the revealed position, and mask-deltas
// at positions still masked. Returns per-position marginal KLs plus the
// total over the joint space.
struct ProductSpaceKl {
    std::vector<double> per_position;
    double total = 0.0;
};

inline ProductSpaceKl product_space_kl(std::span<const int> x0, const MaskingState& xt,
                                       std::span<const std::vector<float>> model_probs,
                                       int vocab) {
    const int T = static_cast<int>(x0.size());
    const int reveal = T - xt.t;
    const int mask_id = mask_token(vocab);
    // true x_{t-1}: x_t with position `reveal` unmasked to x0's value
    std::vector<int> truth(xt.sequence);
    truth[static_cast<size_t>(reveal)] = x0[static_cast<size_t>(reveal)];

    // per-position factor of p
    auto factor = [&](int j, int value) -> double {
        if (j < reveal) return value == xt.sequence[static_cast<size_t>(j)] ? 1.0 : 0.0;
        if (j == reveal)
            return value == mask_id ? 0.0
                                    : static_cast<double>(
                                          model_probs[static_cast<size_t>(j)][static_cast<size_t>(value)]);
        return value == mask_id ? 1.0 : 0.0;
    };

    // enumerate the joint space over (vocab + mask)^T
    const int states = vocab + 1;
    std::int64_t count = 1;
    for (int j = 0; j < T; ++j) count *= states;
    ProductSpaceKl out;
    out.per_position.assign(static_cast<size_t>(T), 0.0);
    for (std::int64_t idx = 0; idx < count; ++idx) {
        std::int64_t rest = idx;
        double p = 1.0;
        bool is_truth = true;
        for (int j = 0; j < T; ++j) {
            const int value = static_cast<int>(rest % states);
            rest /= states;
            p *= factor(j, value);
            if (value != truth[static_cast<size_t>(j)]) is_truth = false;
            if (p == 0.0 && !is_truth) break;
        }
        if (is_truth) out.total += -std::log(p);  // q is a delta at the true sequence
    }
    // marginal KLs: q_j is a delta at truth[j]
    for (int j = 0; j < T; ++j) {
        const double pj = factor(j, truth[static_cast<size_t>(j)]);
        out.per_position[static_cast<size_t>(j)] = -std::log(pj);
    }
    return out;
}

}  // namespace verify_detail

inline std::uint64_t derive_trial_seed(std::uint64_t base, int trial) {
    return StreamRng::mix64(base + 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(trial + 1));
}

// Randomized scale-wise vs teacher-forced loss agreement under the
// markovian mask.
inline VerifyCheck check_loss_equivalence(int trials = 100, std::uint64_t seed = 2024) {
    ModelConfig cfg;
    cfg.depth = 2;
    cfg.heads = 2;
    cfg.dim = 16;
    cfg.vocab_size = 16;
    cfg.num_classes = 3;
    cfg.feature_dim = 4;
    cfg.schedule = ScaleSchedule({1, 2, 4});
    cfg.class_dropout_prob = 0.0f;
    double worst = 0.0;
    for (int trial = 0; trial < trials; ++trial) {
        const std::uint64_t s = derive_trial_seed(seed, trial);
        Model model(cfg, s);
        verify_detail::randomize_params(model, s + 1);
        Codebook cb = verify_detail::random_codebook(cfg.vocab_size, cfg.feature_dim, s + 2);
        TokenPyramid p = verify_detail::random_pyramid(cfg.schedule, cfg.vocab_size,
                                                       cfg.num_classes, s + 3);
        const double a = sdd_loss(model, p, cb);
        const double b = var_loss(model, p, cb, MaskKind::markovian);
        worst = std::max(worst, std::abs(a - b));
    }
    VerifyCheck c;
    c.name = "loss equivalence (markovian, " + std::to_string(trials) + " trials)";
    c.pass = worst < 1e-5;
    std::ostringstream ss;
    ss << "max |scale-wise - teacher-forced| = " << std::scientific << std::setprecision(3)
       << worst;
    c.detail = ss.str();
    return c;
}

// Exhaustive masking-process KL decomposition against the product-space
// enumeration, V <= 4, T <= 4, all valid t.
inline VerifyCheck check_kl_decomposition(std::uint64_t seed = 7) {
    StreamRng rng(seed);
    double worst = 0.0;
    bool shape_ok = true;
    for (int vocab = 2; vocab <= 4; ++vocab)
        for (int T = 1; T <= 4; ++T) {
            std::int64_t combos = 1;
            for (int j = 0; j < T; ++j) combos *= vocab;
            for (std::int64_t x0_idx = 0; x0_idx < combos; ++x0_idx) {
                std::vector<int> x0(static_cast<size_t>(T));
                std::int64_t rest = x0_idx;
                for (int j = 0; j < T; ++j) {
                    x0[static_cast<size_t>(j)] = static_cast<int>(rest % vocab);
                    rest /= vocab;
                }
                for (int t = 1; t <= T; ++t) {
                    const MaskingState xt = masking_forward(x0, t, vocab);
                    // random strictly-positive model categoricals
                    std::vector<std::vector<float>> probs(static_cast<size_t>(T));
                    for (int j = 0; j < T; ++j) {
                        std::vector<float>& pj = probs[static_cast<size_t>(j)];
                        pj.resize(static_cast<size_t>(vocab));
                        double sum = 0.0;
                        for (int v = 0; v < vocab; ++v) {
                            pj[static_cast<size_t>(v)] =
                                0.05f + rng.uniform(rng_domain::kTest,
                                                    static_cast<std::uint64_t>(x0_idx),
                                                    static_cast<std::uint64_t>(t * 16 + j),
                                                    static_cast<std::uint64_t>(vocab * 64 + v));
                            sum += pj[static_cast<size_t>(v)];
                        }
                        for (auto& v : pj) v = static_cast<float>(v / sum);
                    }
                    const auto kl = kl_decomposition(x0, xt, probs, vocab);
                    const auto oracle = verify_detail::product_space_kl(x0, xt, probs, vocab);
                    double total = 0.0;
                    for (int j = 0; j < T; ++j) {
                        worst = std::max(worst, std::abs(kl[static_cast<size_t>(j)] -
                                                         oracle.per_position[static_cast<size_t>(j)]));
                        total += kl[static_cast<size_t>(j)];
                        if (j != T - t && kl[static_cast<size_t>(j)] != 0.0) shape_ok = false;
                    }
                    worst = std::max(worst, std::abs(total - oracle.total));
                }
            }
        }
    VerifyCheck c;
    c.name = "masking-process KL decomposition (exhaustive V<=4, T<=4)";
    c.pass = shape_ok && worst < 1e-6;
    std::ostringstream ss;
    ss << "max |KL - enumeration| = " << std::scientific << std::setprecision(3) << worst
       << (shape_ok ? "" : "; nonzero KL off the revealed position");
    c.detail = ss.str();
    return c;
}

// Perturbation probes over every block pair for block_causal and markovian.
inline VerifyCheck check_mask_locality(std::uint64_t seed = 99) {
    bool ok = true;
    std::string failure;
    for (const auto& sides :
         std::vector<std::vector<int>>{{1}, {1, 2}, {1, 2, 3}, {1, 2, 3, 4}}) {
        ModelConfig cfg;
        cfg.depth = 2;
        cfg.heads = 2;
        cfg.dim = 16;
        cfg.vocab_size = 8;
        cfg.num_classes = 2;
        cfg.feature_dim = 4;
        cfg.schedule = ScaleSchedule(sides);
        cfg.class_dropout_prob = 0.0f;
        Model model(cfg, seed);
        verify_detail::randomize_params(model, seed + sides.size());
        Codebook cb = verify_detail::random_codebook(cfg.vocab_size, cfg.feature_dim, seed + 50);
        TokenPyramid p = verify_detail::random_pyramid(cfg.schedule, cfg.vocab_size,
                                                       cfg.num_classes, seed + 60);
        const ModelInputs base = build_teacher_inputs(p, cb);
        const int S = cfg.schedule.num_scales();
        for (MaskKind kind : {MaskKind::block_causal, MaskKind::markovian}) {
            const MaskMatrix mask = build_mask({kind, cfg.schedule});
            NoGradGuard ng;
            const Tensor ref = model.forward(base, 0, mask);
            // feature-map perturbations for source blocks >= 1
            for (int src = 1; src < S; ++src) {
                ModelInputs mod = base;
                mod.block_features[static_cast<size_t>(src)] =
                    base.block_features[static_cast<size_t>(src)].clone();
                {
                    Tensor fm = mod.block_features[static_cast<size_t>(src)];
                    StreamRng rng(seed + 70);
                    for (size_t i = 0; i < fm.data().size(); ++i)
                        fm.data()[i] += 0.7f + 0.1f * rng.uniform(rng_domain::kTest, i);
                }
                const Tensor probe = model.forward(mod, 0, mask);
                for (int dst = 0; dst < S; ++dst) {
                    const bool expect_dependence =
                        kind == MaskKind::markovian ? dst == src : src <= dst;
                    const int off = cfg.schedule.block_offset(dst) * cfg.vocab_size;
                    const int len = cfg.schedule.tokens_at(dst) * cfg.vocab_size;
                    bool identical = true;
                    for (int i = 0; i < len; ++i)
                        if (ref.data()[static_cast<size_t>(off + i)] !=
                            probe.data()[static_cast<size_t>(off + i)]) {
                            identical = false;
                            break;
                        }
                    if (identical == expect_dependence) {
                        ok = false;
                        failure = "schedule " + cfg.schedule.str() + " kind " +
                                  mask_kind_name(kind) + " src " + std::to_string(src) +
                                  " dst " + std::to_string(dst) +
                                  (identical ? " unexpectedly identical" : " unexpectedly changed");
                    }
                }
            }
            // class-label perturbation feeds block 0
            {
                const Tensor probe = model.forward(base, 1, mask);
                for (int dst = 0; dst < S; ++dst) {
                    const bool expect_dependence = kind == MaskKind::markovian ? dst == 0 : true;
                    const int off = cfg.schedule.block_offset(dst) * cfg.vocab_size;
                    const int len = cfg.schedule.tokens_at(dst) * cfg.vocab_size;
                    bool identical = true;
                    for (int i = 0; i < len; ++i)
                        if (ref.data()[static_cast<size_t>(off + i)] !=
                            probe.data()[static_cast<size_t>(off + i)]) {
                            identical = false;
                            break;
                        }
                    if (identical == expect_dependence) {
                        ok = false;
                        failure = "schedule " + cfg.schedule.str() + " kind " +
                                  mask_kind_name(kind) + " label probe dst " + std::to_string(dst);
                    }
                }
            }
        }
    }
    VerifyCheck c;
    c.name = "mask locality perturbation probes (schedules up to {1,2,3,4})";
    c.pass = ok;
    c.detail = ok ? "dependency pattern exact for all block pairs" : failure;
    return c;
}

// Fresh model (zero head) must score exactly log V nats per token.
inline VerifyCheck check_uniform_closed_form() {
    ModelConfig cfg;
    cfg.depth = 1;
    cfg.heads = 2;
    cfg.dim = 16;
    cfg.vocab_size = 12;
    cfg.num_classes = 2;
    cfg.feature_dim = 4;
    cfg.schedule = ScaleSchedule({1, 2});
    cfg.class_dropout_prob = 0.0f;
    Model model(cfg, 5);
    Codebook cb = verify_detail::random_codebook(cfg.vocab_size, cfg.feature_dim, 6);
    TokenPyramid p = verify_detail::random_pyramid(cfg.schedule, cfg.vocab_size, cfg.num_classes, 7);
    const double expected = std::log(static_cast<double>(cfg.vocab_size));
    const double a = sdd_loss(model, p, cb);
    const double b = var_loss(model, p, cb, MaskKind::markovian);
    VerifyCheck c;
    c.name = "uniform-logit closed form (zero head -> log V)";
    c.pass = std::abs(a - expected) < 1e-6 && std::abs(b - expected) < 1e-6;
    std::ostringstream ss;
    ss << "losses " << a << ", " << b << " vs log V = " << expected;
    c.detail = ss.str();
    return c;
}

// Block-causal mask with the attention entries reaching scales < s (other
// than s itself) forced off must reproduce the markovian loss exactly.
inline VerifyCheck check_forced_attention(std::uint64_t seed = 31) {
    ModelConfig cfg;
    cfg.depth = 2;
    cfg.heads = 2;
    cfg.dim = 16;
    cfg.vocab_size = 10;
    cfg.num_classes = 2;
    cfg.feature_dim = 4;
    cfg.schedule = ScaleSchedule({1, 2, 3});
    cfg.class_dropout_prob = 0.0f;
    Model model(cfg, seed);
    verify_detail::randomize_params(model, seed + 1);
    Codebook cb = verify_detail::random_codebook(cfg.vocab_size, cfg.feature_dim, seed + 2);
    TokenPyramid p = verify_detail::random_pyramid(cfg.schedule, cfg.vocab_size, cfg.num_classes,
                                                   seed + 3);
    // start from the block-causal matrix and zero out every entry whose key
    // scale differs from the query scale
    MaskMatrix doctored = build_mask({MaskKind::block_causal, cfg.schedule});
    const int L = doctored.size;
    for (int q = 0; q < L; ++q)
        for (int k = 0; k < L; ++k)
            if (cfg.schedule.scale_of_position(q) != cfg.schedule.scale_of_position(k))
                doctored.allowed[static_cast<size_t>(q) * L + k] = 0;
    const double forced = var_loss(model, p, cb, doctored);
    const double markov = var_loss(model, p, cb, MaskKind::markovian);
    VerifyCheck c;
    c.name = "block-causal with cross-scale attention forced off == markovian";
    c.pass = std::abs(forced - markov) < 1e-5;
    std::ostringstream ss;
    ss << "|delta| = " << std::scientific << std::setprecision(3) << std::abs(forced - markov);
    c.detail = ss.str();
    return c;
}

inline std::vector<VerifyCheck> run_equivalence_suite() {
    return {
        check_loss_equivalence(),
        check_kl_decomposition(),
        check_mask_locality(),
        check_uniform_closed_form(),
        check_forced_attention(),
    };
}

inline bool print_verify_table(const std::vector<VerifyCheck>& checks, std::ostream& out) {
    bool all = true;
    for (const auto& c : checks) {
        out << (c.pass ? "[PASS] " : "[FAIL] ") << c.name << ": " << c.detail << "\n";
        all = all && c.pass;
    }
    out << (all ? "all checks passed\n" : "CHECKS FAILED\n");
    return all;
}

}  // namespace srdd
