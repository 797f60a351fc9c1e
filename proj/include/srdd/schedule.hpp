#pragma once

#include <string>
#include <vector>

#include "srdd/common.hpp"

namespace srdd {

// Ordered list of side lengths driving the tokenizer, the attention layout,
// the sampler loop and schedule pruning. Strictly increasing; the last entry
// is the full-resolution side.
class ScaleSchedule {
public:
    ScaleSchedule() = default;

    explicit ScaleSchedule(std::vector<int> sides) : sides_(std::move(sides)) {
        if (sides_.empty()) throw ConfigError("schedule: empty");
        int prev = 0;
        for (int s : sides_) {
            if (s <= prev)
                throw ConfigError("schedule: sides must be strictly increasing positives, got " +
                                  str());
            prev = s;
        }
    }

    const std::vector<int>& sides() const { return sides_; }
    int num_scales() const { return static_cast<int>(sides_.size()); }
    int side(int k) const { return sides_.at(static_cast<size_t>(k)); }
    int max_side() const { return sides_.back(); }

    int tokens_at(int k) const { return side(k) * side(k); }

    int total_tokens() const {
        int n = 0;
        for (int s : sides_) n += s * s;
        return n;
    }

    // First sequence position of scale k in the flattened multi-scale layout.
    int block_offset(int k) const {
        int off = 0;
        for (int i = 0; i < k; ++i) off += tokens_at(i);
        return off;
    }

    // Scale index owning flattened position p.
    int scale_of_position(int p) const {
        int off = 0;
        for (int k = 0; k < num_scales(); ++k) {
            off += tokens_at(k);
            if (p < off) return k;
        }
        throw RangeError("scale_of_position: position " + std::to_string(p) + " beyond layout");
    }

    bool contains_side(int s) const {
        for (int x : sides_)
            if (x == s) return true;
        return false;
    }

    int index_of_side(int s) const {
        for (int k = 0; k < num_scales(); ++k)
            if (sides_[static_cast<size_t>(k)] == s) return k;
        throw RangeError("index_of_side: side " + std::to_string(s) + " not in schedule");
    }

    std::string str() const {
        std::string out = "{";
        for (size_t i = 0; i < sides_.size(); ++i) {
            if (i) out += ",";
            out += std::to_string(sides_[i]);
        }
        return out + "}";
    }

    bool operator==(const ScaleSchedule& o) const { return sides_ == o.sides_; }

private:
    std::vector<int> sides_;
};

}  // namespace srdd
