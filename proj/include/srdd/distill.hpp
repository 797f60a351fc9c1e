#pragma once

// Scale-schedule pruning and student fine-tuning. A student keeps a subset
// of the teacher's sides (the top two are mandatory unless explicitly
// overridden), inherits every shared parameter bit-exactly, and is
// fine-tuned with the same cross-entropy objective on pyramids re-encoded
// under the pruned schedule. Skipped scales are bridged implicitly: the
// sampler's downsample to the next side simply jumps further.

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "srdd/common.hpp"
#include "srdd/mask.hpp"
#include "srdd/model.hpp"
#include "srdd/optim.hpp"
#include "srdd/schedule.hpp"
#include "srdd/tokenizer.hpp"

namespace srdd {

struct PruneSpec {
    ScaleSchedule teacher;
    ScaleSchedule student;

    bool is_identity() const { return teacher == student; }
};

// Validates keep against the teacher schedule. The two largest teacher
// sides must be retained; pass allow_top_two_violation for the deliberately
// degraded ablation schedules.
inline PruneSpec prune_schedule(const ScaleSchedule& teacher, const std::vector<int>& keep,
                                bool allow_top_two_violation = false) {
    if (keep.empty()) throw ValidationError("prune_schedule: empty keep list");
    for (int s : keep)
        if (!teacher.contains_side(s))
            throw ValidationError("prune_schedule: side " + std::to_string(s) +
                                  " not in teacher schedule " + teacher.str());
    ScaleSchedule student(std::vector<int>(keep.begin(), keep.end()));
    if (student.max_side() != teacher.max_side())
        throw ValidationError("prune_schedule: student must end at the teacher's top side");
    const int S = teacher.num_scales();
    if (S >= 2 && !allow_top_two_violation) {
        const int second = teacher.side(S - 2);
        if (!student.contains_side(second))
            throw ValidationError(
                "prune_schedule: the two largest teacher sides must be retained (missing " +
                std::to_string(second) + "); pass the override flag to build it anyway");
    }
    return PruneSpec{teacher, student};
}

// Teacher weights carried onto the pruned schedule: per-side tables for the
// retained sides plus all shared parameters, copied bit-exactly. With zero
// fine-tune steps the student is the teacher under pruned-schedule metadata.
inline Model build_student_model(const Model& teacher, const PruneSpec& spec) {
    if (!(teacher.config().schedule == spec.teacher))
        throw ValidationError("build_student_model: teacher schedule mismatch");
    ModelConfig cfg = teacher.config();
    cfg.schedule = spec.student;
    Model student(cfg, teacher.init_seed());
    for (const auto& [name, t] : student.named_params()) {
        Tensor src = teacher.param(name);
        if (src.shape() != t.shape())
            throw ContractError("build_student_model: shape mismatch for " + name);
        Tensor dst = t;
        std::copy(src.data().begin(), src.data().end(), dst.data().begin());
    }
    return student;
}

// Plain fine-tuning on re-encoded pyramids under the markovian mask.
// Returns the student; `losses` (when non-null) receives the per-step
// pre-update losses.
inline Model finetune_student(const Model& teacher, const Codebook& cb, const PruneSpec& spec,
                              std::span<const Tensor> corpus_features,
                              std::span<const int> corpus_labels, int steps, int batch_size,
                              AdamWConfig optim_cfg, std::uint64_t seed,
                              std::vector<float>* losses = nullptr) {
    if (steps < 0) throw ValidationError("finetune_student: negative step count");
    if (corpus_features.size() != corpus_labels.size())
        throw ValidationError("finetune_student: features/labels size mismatch");
    Model student = build_student_model(teacher, spec);
    if (steps == 0) return student;
    if (corpus_features.empty()) throw ValidationError("finetune_student: empty corpus");
    if (batch_size < 1) throw ValidationError("finetune_student: batch size must be >= 1");

    std::vector<TokenPyramid> pyramids;
    pyramids.reserve(corpus_features.size());
    for (size_t i = 0; i < corpus_features.size(); ++i) {
        TokenPyramid p = encode(corpus_features[i], spec.student, cb).pyramid;
        p.class_label = corpus_labels[i];
        pyramids.push_back(std::move(p));
    }

    AdamW opt(student.params(), optim_cfg);
    StreamRng rng(seed);
    const AttentionMaskSpec mask{MaskKind::markovian, spec.student};
    for (int step = 0; step < steps; ++step) {
        std::vector<TokenPyramid> batch;
        for (int b = 0; b < batch_size; ++b) {
            const size_t pick = static_cast<size_t>(
                rng.raw(rng_domain::kBatch, static_cast<std::uint64_t>(step),
                        static_cast<std::uint64_t>(b)) %
                pyramids.size());
            batch.push_back(pyramids[pick]);
        }
        const float loss = student.train_step(batch, cb, mask, opt, rng, step);
        if (losses) losses->push_back(loss);
    }
    return student;
}

// Exact analytic cost ratios between student and teacher; every field is a
// pure integer-arithmetic function of the two schedules (and the mask kind
// for attention pairs).
struct CostReport {
    std::int64_t teacher_tokens = 0;
    std::int64_t student_tokens = 0;
    double token_count_ratio = 0.0;
    std::int64_t teacher_attention_pairs = 0;
    std::int64_t student_attention_pairs = 0;
    double attention_pair_ratio = 0.0;
    int teacher_passes = 0;
    int student_passes = 0;
    double pass_count_ratio = 0.0;
    std::int64_t teacher_peak_kv = 0;
    std::int64_t student_peak_kv = 0;
    double kv_retention_ratio = 0.0;  // student peak / teacher peak, same mask
};

inline CostReport cost_report(const PruneSpec& spec, MaskKind kind = MaskKind::markovian) {
    CostReport r;
    r.teacher_tokens = spec.teacher.total_tokens();
    r.student_tokens = spec.student.total_tokens();
    r.token_count_ratio = static_cast<double>(r.student_tokens) / r.teacher_tokens;
    r.teacher_attention_pairs = allowed_pair_count(kind, spec.teacher);
    r.student_attention_pairs = allowed_pair_count(kind, spec.student);
    r.attention_pair_ratio =
        static_cast<double>(r.student_attention_pairs) / r.teacher_attention_pairs;
    r.teacher_passes = spec.teacher.num_scales();
    r.student_passes = spec.student.num_scales();
    r.pass_count_ratio = static_cast<double>(r.student_passes) / r.teacher_passes;
    r.teacher_peak_kv = peak_kv_entries(kind, spec.teacher);
    r.student_peak_kv = peak_kv_entries(kind, spec.student);
    r.kv_retention_ratio = static_cast<double>(r.student_peak_kv) / r.teacher_peak_kv;
    return r;
}

}  // namespace srdd
