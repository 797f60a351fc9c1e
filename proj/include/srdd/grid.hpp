#pragma once

// Deterministic grid resampling over channel-last feature maps [side, side, d].
// Downsampling is exact area averaging; upsampling is bilinear interpolation
// with endpoint alignment. Both preserve constants and are the identity when
// the sides match.

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "srdd/common.hpp"
#include "srdd/tensor.hpp"

namespace srdd {

inline void check_feature_map(const Tensor& f, const char* op) {
    if (f.rank() != 3 || f.extent(0) != f.extent(1))
        throw ShapeError(std::string(op) + ": expected [side, side, d] map, got " +
                         shape_str(f.shape()));
}

namespace detail {

// Row coefficients for area averaging from in_side to out_side (out <= in).
inline std::vector<std::vector<std::pair<int, double>>> area_weights(int out_side, int in_side) {
    std::vector<std::vector<std::pair<int, double>>> rows(static_cast<size_t>(out_side));
    const double ratio = static_cast<double>(in_side) / out_side;
    for (int i = 0; i < out_side; ++i) {
        const double lo = i * ratio;
        const double hi = (i + 1) * ratio;
        double total = 0.0;
        auto& row = rows[static_cast<size_t>(i)];
        for (int r = static_cast<int>(std::floor(lo)); r < in_side; ++r) {
            const double w = std::min(hi, static_cast<double>(r + 1)) -
                             std::max(lo, static_cast<double>(r));
            if (w <= 0.0) {
                if (r >= static_cast<int>(lo)) break;
                continue;
            }
            row.emplace_back(r, w);
            total += w;
        }
        for (auto& [r, w] : row) w /= total;
    }
    return rows;
}

// Row coefficients for bilinear upsampling from in_side to out_side (out >= in),
// endpoints aligned.
inline std::vector<std::vector<std::pair<int, double>>> bilinear_weights(int out_side,
                                                                         int in_side) {
    std::vector<std::vector<std::pair<int, double>>> rows(static_cast<size_t>(out_side));
    for (int j = 0; j < out_side; ++j) {
        auto& row = rows[static_cast<size_t>(j)];
        if (in_side == 1) {
            row.emplace_back(0, 1.0);
            continue;
        }
        const double pos = (out_side == 1)
                               ? 0.0
                               : static_cast<double>(j) * (in_side - 1) / (out_side - 1);
        const int lo = std::min(static_cast<int>(std::floor(pos)), in_side - 2);
        const double f = pos - lo;
        if (f == 0.0) {
            row.emplace_back(lo, 1.0);
        } else {
            row.emplace_back(lo, 1.0 - f);
            row.emplace_back(lo + 1, f);
        }
    }
    return rows;
}

// Separable application: rows first, then columns, accumulating in double.
inline Tensor apply_separable(const Tensor& f,
                              const std::vector<std::vector<std::pair<int, double>>>& w,
                              int out_side) {
    const int in_side = f.extent(0);
    const int d = f.extent(2);
    std::vector<double> tmp(static_cast<size_t>(out_side) * in_side * d, 0.0);
    const float* src = f.data().data();
    for (int i = 0; i < out_side; ++i)
        for (const auto& [r, wv] : w[static_cast<size_t>(i)]) {
            const float* srow = src + (static_cast<size_t>(r) * in_side) * d;
            double* trow = tmp.data() + (static_cast<size_t>(i) * in_side) * d;
            for (int x = 0; x < in_side * d; ++x) trow[x] += wv * srow[x];
        }
    Tensor out = Tensor::zeros({out_side, out_side, d});
    float* dst = out.data().data();
    std::vector<double> acc(static_cast<size_t>(d), 0.0);
    for (int i = 0; i < out_side; ++i)
        for (int j = 0; j < out_side; ++j) {
            float* drow = dst + (static_cast<size_t>(i) * out_side + j) * d;
            std::fill(acc.begin(), acc.end(), 0.0);
            for (const auto& [c, wv] : w[static_cast<size_t>(j)]) {
                const double* trow = tmp.data() + (static_cast<size_t>(i) * in_side + c) * d;
                for (int ch = 0; ch < d; ++ch) acc[static_cast<size_t>(ch)] += wv * trow[ch];
            }
            for (int ch = 0; ch < d; ++ch)
                drow[ch] = static_cast<float>(acc[static_cast<size_t>(ch)]);
        }
    return out;
}

}  // namespace detail

// Area-average pooling to side n; n == side is the exact identity.
inline Tensor downsample(const Tensor& feature, int n) {
    check_feature_map(feature, "downsample");
    const int N = feature.extent(0);
    if (n < 1 || n > N)
        throw RangeError("downsample: target side " + std::to_string(n) + " outside [1, " +
                         std::to_string(N) + "]");
    if (n == N) return feature.clone();
    return detail::apply_separable(feature, detail::area_weights(n, N), n);
}

// Bilinear upsampling to side m; m == side is the exact identity.
inline Tensor upsample(const Tensor& feature, int m) {
    check_feature_map(feature, "upsample");
    const int n = feature.extent(0);
    if (m < n)
        throw RangeError("upsample: target side " + std::to_string(m) + " below source side " +
                         std::to_string(n));
    if (m == n) return feature.clone();
    return detail::apply_separable(feature, detail::bilinear_weights(m, n), m);
}

inline double squared_norm(const Tensor& t) {
    double acc = 0.0;
    for (float v : t.data()) acc += static_cast<double>(v) * v;
    return acc;
}

inline void add_into(Tensor& dst, const Tensor& src) {
    if (dst.shape() != src.shape()) throw ShapeError("add_into: shape mismatch");
    auto d = dst.data();
    auto s = src.data();
    for (size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

inline void sub_into(Tensor& dst, const Tensor& src) {
    if (dst.shape() != src.shape()) throw ShapeError("sub_into: shape mismatch");
    auto d = dst.data();
    auto s = src.data();
    for (size_t i = 0; i < d.size(); ++i) d[i] -= s[i];
}

}  // namespace srdd
