#pragma once

// Image-quality metrics: PSNR, SSIM (8x8 windows, standard stabilizers) and
// a small-sample Frechet distance between Gaussian fits of downsampled
// pixel features. Pixel range is documented as [0,1] throughout.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "srdd/common.hpp"
#include "srdd/grid.hpp"
#include "srdd/tensor.hpp"

namespace srdd {

// 10 log10(1 / MSE) for [0,1] images; identical inputs give the +inf sentinel.
inline double psnr(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw ShapeError("psnr: shape mismatch");
    if (a.numel() == 0) throw ValidationError("psnr: empty input");
    double mse = 0.0;
    for (size_t i = 0; i < a.data().size(); ++i) {
        const double d = static_cast<double>(a.data()[i]) - b.data()[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

// Mean SSIM over non-overlapping 8x8 windows (shorter edges allowed at the
// border), luminance taken as the channel mean. C1 = (0.01)^2, C2 = (0.03)^2.
inline double ssim(const Tensor& a, const Tensor& b, int window = 8) {
    if (a.shape() != b.shape()) throw ShapeError("ssim: shape mismatch");
    if (a.rank() != 3) throw ShapeError("ssim: expected [h, w, c] images");
    if (window < 1) throw ValidationError("ssim: bad window");
    const int h = a.extent(0), w = a.extent(1), c = a.extent(2);
    if (h == 0 || w == 0) throw ValidationError("ssim: empty input");
    constexpr double kC1 = 0.01 * 0.01;
    constexpr double kC2 = 0.03 * 0.03;
    auto lum = [c](const Tensor& t, int y, int x) {
        const float* p = t.data().data() + (static_cast<size_t>(y) * t.extent(1) + x) * c;
        double s = 0.0;
        for (int ch = 0; ch < c; ++ch) s += p[ch];
        return s / c;
    };
    double total = 0.0;
    int windows = 0;
    for (int y0 = 0; y0 < h; y0 += window)
        for (int x0 = 0; x0 < w; x0 += window) {
            const int y1 = std::min(h, y0 + window), x1 = std::min(w, x0 + window);
            const int n = (y1 - y0) * (x1 - x0);
            double ma = 0.0, mb = 0.0;
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) {
                    ma += lum(a, y, x);
                    mb += lum(b, y, x);
                }
            ma /= n;
            mb /= n;
            double va = 0.0, vb = 0.0, cov = 0.0;
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) {
                    const double da = lum(a, y, x) - ma;
                    const double db = lum(b, y, x) - mb;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            va /= n;
            vb /= n;
            cov /= n;
            total += ((2 * ma * mb + kC1) * (2 * cov + kC2)) /
                     ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
            ++windows;
        }
    return total / windows;
}

namespace detail {

// Cyclic Jacobi eigendecomposition of a symmetric matrix (column-major
// irrelevant: symmetric). Good enough for the small feature covariances
// used here.
inline void jacobi_eigensymmetric(std::vector<double>& A, int n, std::vector<double>& eigvals,
                                  std::vector<double>& V) {
    V.assign(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) V[static_cast<size_t>(i) * n + i] = 1.0;
    auto at = [&](std::vector<double>& M, int r, int c) -> double& {
        return M[static_cast<size_t>(r) * n + c];
    };
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += at(A, p, q) * at(A, p, q);
        if (off < 1e-22) break;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) {
                const double apq = at(A, p, q);
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (at(A, q, q) - at(A, p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double cs = 1.0 / std::sqrt(t * t + 1.0);
                const double sn = t * cs;
                for (int k = 0; k < n; ++k) {
                    const double akp = at(A, k, p), akq = at(A, k, q);
                    at(A, k, p) = cs * akp - sn * akq;
                    at(A, k, q) = sn * akp + cs * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = at(A, p, k), aqk = at(A, q, k);
                    at(A, p, k) = cs * apk - sn * aqk;
                    at(A, q, k) = sn * apk + cs * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double vkp = at(V, k, p), vkq = at(V, k, q);
                    at(V, k, p) = cs * vkp - sn * vkq;
                    at(V, k, q) = sn * vkp + cs * vkq;
                }
            }
    }
    eigvals.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) eigvals[static_cast<size_t>(i)] = at(A, i, i);
}

// Principal square root of a symmetric PSD matrix; tiny negative
// eigenvalues from roundoff are clamped to zero.
inline std::vector<double> sqrtm_psd(std::vector<double> A, int n) {
    std::vector<double> eig, V;
    jacobi_eigensymmetric(A, n, eig, V);
    std::vector<double> out(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int k = 0; k < n; ++k) {
                const double ev = eig[static_cast<size_t>(k)];
                if (ev <= 0.0) continue;
                acc += V[static_cast<size_t>(i) * n + k] * std::sqrt(ev) *
                       V[static_cast<size_t>(j) * n + k];
            }
            out[static_cast<size_t>(i) * n + j] = acc;
        }
    return out;
}

}  // namespace detail

// Frechet distance between Gaussian fits of two sample sets:
// |mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sb^{1/2} Sa Sb^{1/2})^{1/2}).
// Covariances are regularized with eps on the diagonal.
inline double frechet_distance(std::span<const std::vector<float>> set_a,
                               std::span<const std::vector<float>> set_b, double eps = 1e-6) {
    if (set_a.size() < 2 || set_b.size() < 2)
        throw ValidationError("frechet_distance: need at least 2 samples per set");
    const int d = static_cast<int>(set_a[0].size());
    for (const auto& v : set_a)
        if (static_cast<int>(v.size()) != d) throw ShapeError("frechet_distance: ragged set");
    for (const auto& v : set_b)
        if (static_cast<int>(v.size()) != d) throw ShapeError("frechet_distance: ragged set");

    auto fit = [d, eps](std::span<const std::vector<float>> set, std::vector<double>& mu,
                        std::vector<double>& cov) {
        const double n = static_cast<double>(set.size());
        mu.assign(static_cast<size_t>(d), 0.0);
        for (const auto& v : set)
            for (int i = 0; i < d; ++i) mu[static_cast<size_t>(i)] += v[static_cast<size_t>(i)];
        for (double& m : mu) m /= n;
        cov.assign(static_cast<size_t>(d) * d, 0.0);
        for (const auto& v : set)
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j)
                    cov[static_cast<size_t>(i) * d + j] +=
                        (v[static_cast<size_t>(i)] - mu[static_cast<size_t>(i)]) *
                        (v[static_cast<size_t>(j)] - mu[static_cast<size_t>(j)]);
        for (auto& c : cov) c /= (n - 1.0);
        for (int i = 0; i < d; ++i) cov[static_cast<size_t>(i) * d + i] += eps;
    };
    std::vector<double> mu_a, mu_b, cov_a, cov_b;
    fit(set_a, mu_a, cov_a);
    fit(set_b, mu_b, cov_b);

    double mean_term = 0.0;
    for (int i = 0; i < d; ++i) {
        const double diff = mu_a[static_cast<size_t>(i)] - mu_b[static_cast<size_t>(i)];
        mean_term += diff * diff;
    }

    // tr((Sb^{1/2} Sa Sb^{1/2})^{1/2}) via the symmetric similarity form
    const std::vector<double> sb_half = detail::sqrtm_psd(cov_b, d);
    std::vector<double> tmp(static_cast<size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            double acc = 0.0;
            for (int k = 0; k < d; ++k)
                acc += sb_half[static_cast<size_t>(i) * d + k] * cov_a[static_cast<size_t>(k) * d + j];
            tmp[static_cast<size_t>(i) * d + j] = acc;
        }
    std::vector<double> inner(static_cast<size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            double acc = 0.0;
            for (int k = 0; k < d; ++k)
                acc += tmp[static_cast<size_t>(i) * d + k] * sb_half[static_cast<size_t>(k) * d + j];
            inner[static_cast<size_t>(i) * d + j] = acc;
        }
    // symmetrize against roundoff before the final square root
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) {
            const double s = 0.5 * (inner[static_cast<size_t>(i) * d + j] +
                                    inner[static_cast<size_t>(j) * d + i]);
            inner[static_cast<size_t>(i) * d + j] = s;
            inner[static_cast<size_t>(j) * d + i] = s;
        }
    const std::vector<double> root = detail::sqrtm_psd(std::move(inner), d);
    double trace_root = 0.0, trace_a = 0.0, trace_b = 0.0;
    for (int i = 0; i < d; ++i) {
        trace_root += root[static_cast<size_t>(i) * d + i];
        trace_a += cov_a[static_cast<size_t>(i) * d + i];
        trace_b += cov_b[static_cast<size_t>(i) * d + i];
    }
    const double fd = mean_term + trace_a + trace_b - 2.0 * trace_root;
    return fd < 0.0 ? 0.0 : fd;
}

// Downsampled-pixel feature vector for the Frechet proxy: the image is
// area-averaged to feat_side x feat_side and flattened.
inline std::vector<float> pixel_feature(const Tensor& image, int feat_side = 4) {
    Tensor small = downsample(image, feat_side);
    return std::vector<float>(small.data().begin(), small.data().end());
}

inline double toy_frechet(std::span<const Tensor> images_a, std::span<const Tensor> images_b,
                          int feat_side = 4, double eps = 1e-6) {
    std::vector<std::vector<float>> fa, fb;
    for (const Tensor& t : images_a) fa.push_back(pixel_feature(t, feat_side));
    for (const Tensor& t : images_b) fb.push_back(pixel_feature(t, feat_side));
    return frechet_distance(fa, fb, eps);
}

}  // namespace srdd
