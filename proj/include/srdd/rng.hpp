#pragma once

#include <cmath>
#include <cstdint>
#include <span>

#include "srdd/common.hpp"

namespace srdd {

// Counter-based deterministic RNG. Every draw is a pure function of
// (seed, domain, a, b, c), so consumers can be keyed by logical coordinates
// (e.g. scale, refinement pass, position) instead of draw order. Draws in
// one stream never perturb draws in another, which is what makes the
// resampling passes and the editing paths reproduce the plain sampling
// stream exactly.
//
// Mixer: splitmix64 finalizer applied to each key word in sequence.
class StreamRng {
public:
    explicit StreamRng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    static std::uint64_t mix64(std::uint64_t x) {
        x += 0x9E3779B97F4A7C15ull;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
        return x ^ (x >> 31);
    }

    std::uint64_t raw(std::uint64_t domain, std::uint64_t a = 0, std::uint64_t b = 0,
                      std::uint64_t c = 0) const {
        std::uint64_t h = mix64(seed_ ^ 0xA0761D6478BD642Full);
        h = mix64(h ^ domain);
        h = mix64(h ^ a);
        h = mix64(h ^ b);
        h = mix64(h ^ c);
        return h;
    }

    // Uniform in [0, 1); 24 mantissa bits, exactly representable in f32.
    float uniform(std::uint64_t domain, std::uint64_t a = 0, std::uint64_t b = 0,
                  std::uint64_t c = 0) const {
        return static_cast<float>(raw(domain, a, b, c) >> 40) * 0x1.0p-24f;
    }

    // Standard normal via Box-Muller on two sub-draws of the same counter.
    float gaussian(std::uint64_t domain, std::uint64_t a = 0, std::uint64_t b = 0,
                   std::uint64_t c = 0) const {
        const std::uint64_t r = raw(domain, a, b, c);
        const double u1 = 1.0 - static_cast<double>(r >> 38) * 0x1.0p-26;  // (0, 1]
        const double u2 = static_cast<double>(r & 0x3FFFFFFFFull) * 0x1.0p-34;
        const double g = std::sqrt(-2.0 * std::log(u1)) *
                         std::cos(6.283185307179586 * u2);
        return static_cast<float>(g);
    }

    // Inverse-CDF draw from an unnormalized weight vector. Ties and rounding
    // resolve toward lower indices; the last strictly positive weight is the
    // fallback when u lands past the accumulated mass.
    int categorical(std::span<const float> weights, std::uint64_t domain,
                    std::uint64_t a = 0, std::uint64_t b = 0, std::uint64_t c = 0) const {
        double total = 0.0;
        for (float w : weights) {
            if (w < 0.0f) throw RangeError("categorical: negative weight");
            total += w;
        }
        if (!(total > 0.0)) throw NumericError("categorical: zero total weight");
        const double u = static_cast<double>(uniform(domain, a, b, c)) * total;
        double cum = 0.0;
        int last_positive = 0;
        for (size_t i = 0; i < weights.size(); ++i) {
            if (weights[i] > 0.0f) last_positive = static_cast<int>(i);
            cum += weights[i];
            if (u < cum) return static_cast<int>(i);
        }
        return last_positive;
    }

private:
    std::uint64_t seed_;
};

// Stream domains used across the project. Grouping them here keeps the
// coordinate spaces of independent consumers from colliding.
namespace rng_domain {
inline constexpr std::uint64_t kParamInit = 1;
inline constexpr std::uint64_t kTokenDraw = 2;      // (scale, pass, position)
inline constexpr std::uint64_t kResampleDraw = 3;   // (scale, pass, position)
inline constexpr std::uint64_t kClassDropout = 4;   // (step, sample)
inline constexpr std::uint64_t kDataset = 5;        // (class, sample, field)
inline constexpr std::uint64_t kCodebook = 6;
inline constexpr std::uint64_t kBatch = 7;          // (step, slot)
inline constexpr std::uint64_t kLift = 8;
inline constexpr std::uint64_t kTest = 99;
}  // namespace rng_domain

}  // namespace srdd
