#pragma once

// Attention masks over the flattened multi-scale token layout.
//
// block_causal: a query at scale s may read keys at any scale s' <= s
//               (block lower-triangular; the original next-scale layout).
// markovian:    a query at scale s may read keys at scale s only. Block-s
//               inputs are derived from scale s-1 content, so within-block
//               attention is attention over the previous scale's
//               information; the mask is block-diagonal.
// full:         no restriction.
//
// The mask is a property of the layout alone: identical across heads and
// layers.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "srdd/common.hpp"
#include "srdd/schedule.hpp"

namespace srdd {

enum class MaskKind { block_causal, markovian, full };

inline std::string mask_kind_name(MaskKind k) {
    switch (k) {
        case MaskKind::block_causal: return "block_causal";
        case MaskKind::markovian: return "markovian";
        case MaskKind::full: return "full";
    }
    throw ContractError("mask_kind_name: bad enum");
}

inline MaskKind mask_kind_from_name(const std::string& s) {
    if (s == "block_causal") return MaskKind::block_causal;
    if (s == "markovian") return MaskKind::markovian;
    if (s == "full") return MaskKind::full;
    throw ConfigError("unknown mask kind: " + s);
}

struct AttentionMaskSpec {
    MaskKind kind = MaskKind::markovian;
    ScaleSchedule schedule;
};

// Row-major L x L boolean matrix; true = attention allowed.
struct MaskMatrix {
    int size = 0;
    std::vector<std::uint8_t> allowed;

    bool at(int q, int k) const {
        return allowed[static_cast<size_t>(q) * size + k] != 0;
    }
};

inline MaskMatrix build_mask(const AttentionMaskSpec& spec) {
    if (spec.schedule.num_scales() == 0) throw ConfigError("build_mask: empty schedule");
    const int L = spec.schedule.total_tokens();
    MaskMatrix m;
    m.size = L;
    m.allowed.assign(static_cast<size_t>(L) * L, 0);
    std::vector<int> scale_of(static_cast<size_t>(L));
    for (int p = 0, k = 0; k < spec.schedule.num_scales(); ++k)
        for (int i = 0; i < spec.schedule.tokens_at(k); ++i) scale_of[static_cast<size_t>(p++)] = k;
    for (int q = 0; q < L; ++q)
        for (int k = 0; k < L; ++k) {
            bool ok = false;
            switch (spec.kind) {
                case MaskKind::block_causal: ok = scale_of[static_cast<size_t>(k)] <= scale_of[static_cast<size_t>(q)]; break;
                case MaskKind::markovian: ok = scale_of[static_cast<size_t>(k)] == scale_of[static_cast<size_t>(q)]; break;
                case MaskKind::full: ok = true; break;
            }
            if (ok) m.allowed[static_cast<size_t>(q) * L + k] = 1;
        }
    return m;
}

// Closed-form allowed-pair counts; the enumeration equivalent is counting
// true entries of build_mask.
inline std::int64_t allowed_pair_count(MaskKind kind, const ScaleSchedule& schedule) {
    const int S = schedule.num_scales();
    std::int64_t total = 0;
    for (int s = 0; s < S; ++s) {
        const std::int64_t bs = schedule.tokens_at(s);
        switch (kind) {
            case MaskKind::block_causal: {
                std::int64_t below = 0;
                for (int t = 0; t <= s; ++t) below += schedule.tokens_at(t);
                total += bs * below;
                break;
            }
            case MaskKind::markovian: total += bs * bs; break;
            case MaskKind::full: total += bs * static_cast<std::int64_t>(schedule.total_tokens()); break;
        }
    }
    return total;
}

// Peak number of KV entries a scale-wise decoder must retain: block_causal
// keeps every previous block, markovian only the active one.
inline std::int64_t peak_kv_entries(MaskKind kind, const ScaleSchedule& schedule) {
    switch (kind) {
        case MaskKind::block_causal:
        case MaskKind::full: return schedule.total_tokens();
        case MaskKind::markovian: {
            std::int64_t mx = 0;
            for (int s = 0; s < schedule.num_scales(); ++s)
                mx = std::max<std::int64_t>(mx, schedule.tokens_at(s));
            return mx;
        }
    }
    throw ContractError("peak_kv_entries: bad enum");
}

}  // namespace srdd
