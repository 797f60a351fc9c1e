#pragma once

// Multi-scale residual vector quantization over pixel-space features.
//
// encode() runs the coarse-to-fine residual cascade: at each scale the
// residual is area-downsampled, quantized against the shared codebook, and
// the bilinear-upsampled embedding is subtracted at full resolution.
// decode() is the plain accumulation of upsampled embeddings, so the two
// are exact inverses of the scheme (not of the input: quantization loses
// information).

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "srdd/common.hpp"
#include "srdd/grid.hpp"
#include "srdd/rng.hpp"
#include "srdd/schedule.hpp"
#include "srdd/tensor.hpp"

namespace srdd {

// Shared embedding table used by every scale.
struct Codebook {
    int vocab_size = 0;
    int dim = 0;
    Tensor table;  // [V x d]

    Codebook() = default;
    Codebook(int V, int d, Tensor t) : vocab_size(V), dim(d), table(std::move(t)) {
        validate();
    }

    void validate() const {
        if (vocab_size < 2) throw ConfigError("codebook: vocab size must be >= 2");
        if (dim < 1) throw ConfigError("codebook: dim must be >= 1");
        if (table.rank() != 2 || table.extent(0) != vocab_size || table.extent(1) != dim)
            throw ShapeError("codebook: table must be [V x d]");
        for (float v : table.data())
            if (!std::isfinite(v)) throw NumericError("codebook: non-finite entry");
    }
};

struct TokenPyramid {
    ScaleSchedule schedule;
    std::vector<std::vector<std::int32_t>> tokens;  // tokens[k] has sides[k]^2 entries
    std::optional<int> class_label;

    int num_scales() const { return schedule.num_scales(); }

    void validate(int vocab_size) const {
        if (static_cast<int>(tokens.size()) != schedule.num_scales())
            throw ShapeError("pyramid: scale count mismatch");
        for (int k = 0; k < schedule.num_scales(); ++k) {
            if (static_cast<int>(tokens[static_cast<size_t>(k)].size()) != schedule.tokens_at(k))
                throw ShapeError("pyramid: grid " + std::to_string(k) + " has wrong size");
            for (std::int32_t t : tokens[static_cast<size_t>(k)])
                if (t < 0 || t >= vocab_size)
                    throw IndexError("pyramid: token " + std::to_string(t) +
                                     " outside vocabulary");
        }
    }
};

struct QuantizeResult {
    std::vector<std::int32_t> tokens;  // row-major, side^2 entries
    Tensor embedded;                   // [side, side, d]
};

// Nearest codebook row per cell; ties break toward the lowest index.
inline QuantizeResult quantize(const Tensor& feature, const Codebook& cb) {
    check_feature_map(feature, "quantize");
    cb.validate();
    if (feature.extent(2) != cb.dim)
        throw ShapeError("quantize: feature dim " + std::to_string(feature.extent(2)) +
                         " != codebook dim " + std::to_string(cb.dim));
    const int side = feature.extent(0);
    const int d = cb.dim;
    QuantizeResult out;
    out.tokens.resize(static_cast<size_t>(side) * side);
    out.embedded = Tensor::zeros({side, side, d});
    const float* f = feature.data().data();
    const float* tab = cb.table.data().data();
    float* e = out.embedded.data().data();
    for (int cell = 0; cell < side * side; ++cell) {
        const float* fc = f + static_cast<size_t>(cell) * d;
        double best = std::numeric_limits<double>::infinity();
        int best_j = 0;
        for (int j = 0; j < cb.vocab_size; ++j) {
            const float* row = tab + static_cast<size_t>(j) * d;
            double dist = 0.0;
            for (int c = 0; c < d; ++c) {
                const double diff = static_cast<double>(fc[c]) - row[c];
                dist += diff * diff;
            }
            if (dist < best) {
                best = dist;
                best_j = j;
            }
        }
        out.tokens[static_cast<size_t>(cell)] = best_j;
        const float* row = tab + static_cast<size_t>(best_j) * d;
        for (int c = 0; c < d; ++c) e[static_cast<size_t>(cell) * d + c] = row[c];
    }
    return out;
}

// Codebook lookup of a token grid into a [side, side, d] map.
inline Tensor embed_tokens(std::span<const std::int32_t> tokens, int side, const Codebook& cb) {
    if (static_cast<int>(tokens.size()) != side * side)
        throw ShapeError("embed_tokens: grid size mismatch");
    Tensor out = Tensor::zeros({side, side, cb.dim});
    float* e = out.data().data();
    const float* tab = cb.table.data().data();
    for (size_t cell = 0; cell < tokens.size(); ++cell) {
        const std::int32_t t = tokens[cell];
        if (t < 0 || t >= cb.vocab_size)
            throw IndexError("embed_tokens: token " + std::to_string(t) + " outside vocabulary");
        for (int c = 0; c < cb.dim; ++c)
            e[cell * static_cast<size_t>(cb.dim) + c] = tab[static_cast<size_t>(t) * cb.dim + c];
    }
    return out;
}

struct EncodeResult {
    TokenPyramid pyramid;
    // L2 norm of the full-resolution residual after each scale, preceded by
    // the input norm; length num_scales + 1.
    std::vector<double> residual_norms;
};

inline EncodeResult encode(const Tensor& feature, const ScaleSchedule& schedule,
                           const Codebook& cb) {
    check_feature_map(feature, "encode");
    if (feature.extent(0) != schedule.max_side())
        throw ConfigError("encode: feature side " + std::to_string(feature.extent(0)) +
                          " != schedule max side " + std::to_string(schedule.max_side()));
    const int N = schedule.max_side();
    EncodeResult out;
    out.pyramid.schedule = schedule;
    Tensor residual = feature.clone();
    out.residual_norms.push_back(std::sqrt(squared_norm(residual)));
    for (int k = 0; k < schedule.num_scales(); ++k) {
        const int side = schedule.side(k);
        QuantizeResult q = quantize(downsample(residual, side), cb);
        sub_into(residual, upsample(q.embedded, N));
        out.pyramid.tokens.push_back(std::move(q.tokens));
        out.residual_norms.push_back(std::sqrt(squared_norm(residual)));
    }
    return out;
}

inline Tensor decode(const TokenPyramid& p, const Codebook& cb) {
    p.validate(cb.vocab_size);
    const int N = p.schedule.max_side();
    Tensor out = Tensor::zeros({N, N, cb.dim});
    for (int k = 0; k < p.schedule.num_scales(); ++k) {
        const int side = p.schedule.side(k);
        add_into(out, upsample(embed_tokens(p.tokens[static_cast<size_t>(k)], side, cb), N));
    }
    return out;
}

// SNR of the reconstruction reachable from scale n's information:
// 10 log10(|I|^2 / |I - up(down(I, n))|^2). Exact reconstruction yields the
// +inf sentinel; a zero-norm input has no defined SNR.
inline std::vector<double> snr_per_scale(const Tensor& feature, const ScaleSchedule& schedule) {
    check_feature_map(feature, "snr_per_scale");
    if (feature.extent(0) != schedule.max_side())
        throw ConfigError("snr_per_scale: feature side does not match schedule");
    const double signal = squared_norm(feature);
    if (signal == 0.0) throw NumericError("snr_per_scale: zero-norm signal");
    const int N = schedule.max_side();
    std::vector<double> out;
    for (int k = 0; k < schedule.num_scales(); ++k) {
        Tensor rec = upsample(downsample(feature, schedule.side(k)), N);
        sub_into(rec, feature);
        const double noise = squared_norm(rec);
        out.push_back(noise == 0.0 ? std::numeric_limits<double>::infinity()
                                   : 10.0 * std::log10(signal / noise));
    }
    return out;
}

// ---------------------------------------------------------------------------
// pixel-space feature lift
// ---------------------------------------------------------------------------

// Fixed random orthonormal map R^3 -> R^d taking raw RGB into the feature
// space the quantizer works in. Frozen once built; the transpose maps
// features back to RGB.
struct FeatureLift {
    int dim = 0;
    Tensor matrix;  // [d x 3], orthonormal columns

    static FeatureLift make(int d, std::uint64_t seed) {
        if (d < 3) throw ConfigError("feature lift: dim must be >= 3");
        StreamRng rng(seed);
        std::vector<float> m(static_cast<size_t>(d) * 3);
        for (int c = 0; c < 3; ++c) {
            std::vector<double> col(static_cast<size_t>(d));
            for (int r = 0; r < d; ++r)
                col[static_cast<size_t>(r)] = rng.gaussian(rng_domain::kLift,
                                                           static_cast<std::uint64_t>(c),
                                                           static_cast<std::uint64_t>(r));
            // Gram-Schmidt against previous columns
            for (int pc = 0; pc < c; ++pc) {
                double dot = 0.0;
                for (int r = 0; r < d; ++r)
                    dot += col[static_cast<size_t>(r)] * m[static_cast<size_t>(r) * 3 + pc];
                for (int r = 0; r < d; ++r)
                    col[static_cast<size_t>(r)] -= dot * m[static_cast<size_t>(r) * 3 + pc];
            }
            double norm = 0.0;
            for (double v : col) norm += v * v;
            norm = std::sqrt(norm);
            if (norm < 1e-8) throw NumericError("feature lift: degenerate column");
            for (int r = 0; r < d; ++r)
                m[static_cast<size_t>(r) * 3 + c] = static_cast<float>(col[static_cast<size_t>(r)] / norm);
        }
        FeatureLift lift;
        lift.dim = d;
        lift.matrix = Tensor::from_data({d, 3}, std::move(m));
        return lift;
    }

    // [N, N, 3] pixels in [0,1] -> [N, N, d] features.
    Tensor lift(const Tensor& rgb) const {
        check_feature_map(rgb, "lift");
        if (rgb.extent(2) != 3) throw ShapeError("lift: expected 3 channels");
        const int N = rgb.extent(0);
        Tensor out = Tensor::zeros({N, N, dim});
        const float* src = rgb.data().data();
        const float* m = matrix.data().data();
        float* dst = out.data().data();
        for (int cell = 0; cell < N * N; ++cell)
            for (int r = 0; r < dim; ++r) {
                const float* mr = m + static_cast<size_t>(r) * 3;
                const float* px = src + static_cast<size_t>(cell) * 3;
                dst[static_cast<size_t>(cell) * dim + r] =
                    mr[0] * px[0] + mr[1] * px[1] + mr[2] * px[2];
            }
        return out;
    }

    // [N, N, d] features -> [N, N, 3] pixels, clamped to [0,1].
    Tensor unlift(const Tensor& feature, bool clamp = true) const {
        check_feature_map(feature, "unlift");
        if (feature.extent(2) != dim) throw ShapeError("unlift: feature dim mismatch");
        const int N = feature.extent(0);
        Tensor out = Tensor::zeros({N, N, 3});
        const float* src = feature.data().data();
        const float* m = matrix.data().data();
        float* dst = out.data().data();
        for (int cell = 0; cell < N * N; ++cell)
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int r = 0; r < dim; ++r)
                    acc += static_cast<double>(m[static_cast<size_t>(r) * 3 + c]) *
                           src[static_cast<size_t>(cell) * dim + r];
                float v = static_cast<float>(acc);
                if (clamp) v = std::min(1.0f, std::max(0.0f, v));
                dst[static_cast<size_t>(cell) * 3 + c] = v;
            }
        return out;
    }
};

// Codebook rows sampled from the feature distribution the cascade actually
// sees: cells of the quantization-free residual pyramid of the corpus.
inline Codebook build_codebook(std::span<const Tensor> features, const ScaleSchedule& schedule,
                               int vocab_size, std::uint64_t seed) {
    if (features.empty()) throw ConfigError("build_codebook: empty corpus");
    const int d = features[0].extent(2);
    const int N = schedule.max_side();
    std::vector<float> candidates;
    for (const Tensor& f : features) {
        check_feature_map(f, "build_codebook");
        if (f.extent(0) != N || f.extent(2) != d)
            throw ShapeError("build_codebook: inconsistent corpus shapes");
        Tensor residual = f.clone();
        for (int k = 0; k < schedule.num_scales(); ++k) {
            Tensor h = downsample(residual, schedule.side(k));
            candidates.insert(candidates.end(), h.data().begin(), h.data().end());
            sub_into(residual, upsample(h, N));
        }
    }
    const size_t num_cells = candidates.size() / static_cast<size_t>(d);
    StreamRng rng(seed);
    std::vector<float> table(static_cast<size_t>(vocab_size) * d);
    for (int j = 0; j < vocab_size; ++j) {
        const size_t pick =
            static_cast<size_t>(rng.raw(rng_domain::kCodebook, static_cast<std::uint64_t>(j)) %
                                num_cells);
        for (int c = 0; c < d; ++c)
            table[static_cast<size_t>(j) * d + c] = candidates[pick * static_cast<size_t>(d) + c];
    }
    return Codebook(vocab_size, d, Tensor::from_data({vocab_size, d}, std::move(table)));
}

}  // namespace srdd
