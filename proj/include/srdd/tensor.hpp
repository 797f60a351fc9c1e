#pragma once

// Dense f32 tensors with tape-based reverse-mode autodiff.
//
// A Tensor is a cheap handle to a shared node. Ops build a graph while
// GradMode is enabled; backward(loss) walks it once in reverse topological
// order. Non-leaf gradients are scratch, reset on every backward() call;
// leaf gradients accumulate until zero_grad(), so repeated backward calls
// without a reset sum their contributions.
//
// Everything is single-threaded and deterministic: identical inputs produce
// bit-identical outputs.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <unordered_set>
#include <vector>

#include "srdd/common.hpp"

namespace srdd {

namespace detail {

struct Node {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until first needed
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    bool is_leaf() const { return !backward; }

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0f);
    }
};

inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

// Disables tape recording in scope (evaluation / sampling paths).
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

inline bool grad_mode_enabled() { return detail::grad_mode_flag(); }

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape) {
        Tensor t;
        t.n_ = std::make_shared<detail::Node>();
        t.n_->shape = std::move(shape);
        t.n_->data.assign(static_cast<size_t>(shape_numel(t.n_->shape)), 0.0f);
        return t;
    }

    static Tensor full(Shape shape, float value) {
        Tensor t = zeros(std::move(shape));
        std::fill(t.n_->data.begin(), t.n_->data.end(), value);
        return t;
    }

    static Tensor from_data(Shape shape, std::vector<float> values) {
        if (static_cast<std::int64_t>(values.size()) != shape_numel(shape))
            throw ShapeError("from_data: " + shape_str(shape) + " needs " +
                             std::to_string(shape_numel(shape)) + " values, got " +
                             std::to_string(values.size()));
        Tensor t;
        t.n_ = std::make_shared<detail::Node>();
        t.n_->shape = std::move(shape);
        t.n_->data = std::move(values);
        return t;
    }

    static Tensor scalar(float v) { return from_data({1}, {v}); }

    bool defined() const { return n_ != nullptr; }

    const Shape& shape() const { return node().shape; }
    int rank() const { return static_cast<int>(node().shape.size()); }
    int extent(int i) const { return node().shape.at(static_cast<size_t>(i)); }
    std::int64_t numel() const { return static_cast<std::int64_t>(node().data.size()); }

    std::span<float> data() { return node().data; }
    std::span<const float> data() const { return node().data; }

    float item() const {
        if (numel() != 1) throw ContractError("item: tensor is not scalar");
        return node().data[0];
    }

    // 2-D accessors (row-major).
    float at(int r, int c) const {
        return node().data[static_cast<size_t>(r) * extent(1) + static_cast<size_t>(c)];
    }
    float& at(int r, int c) {
        return node().data[static_cast<size_t>(r) * extent(1) + static_cast<size_t>(c)];
    }

    bool requires_grad() const { return node().requires_grad; }

    Tensor& set_requires_grad(bool value) {
        if (!node().is_leaf())
            throw ContractError("set_requires_grad: only valid on leaf tensors");
        node().requires_grad = value;
        return *this;
    }

    std::span<const float> grad() const {
        if (node().grad.empty())
            throw ContractError("grad: no gradient populated; call backward first");
        return node().grad;
    }
    std::span<float> grad_mut() {
        node().ensure_grad();
        return node().grad;
    }
    bool has_grad() const { return !node().grad.empty(); }

    void zero_grad() {
        if (!node().grad.empty()) std::fill(node().grad.begin(), node().grad.end(), 0.0f);
    }

    // Deep copy; the copy is a grad-less leaf.
    Tensor clone() const {
        Tensor t;
        t.n_ = std::make_shared<detail::Node>();
        t.n_->shape = node().shape;
        t.n_->data = node().data;
        t.n_->requires_grad = node().requires_grad;
        return t;
    }

    detail::Node& node() const {
        if (!n_) throw ContractError("use of undefined tensor");
        return *n_;
    }
    const std::shared_ptr<detail::Node>& node_ptr() const { return n_; }

    static Tensor wrap(std::shared_ptr<detail::Node> n) {
        Tensor t;
        t.n_ = std::move(n);
        return t;
    }

private:
    std::shared_ptr<detail::Node> n_;
};

namespace detail {

inline std::shared_ptr<Node> make_op_node(Shape shape,
                                          std::vector<std::shared_ptr<Node>> parents,
                                          std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data.assign(static_cast<size_t>(shape_numel(n->shape)), 0.0f);
    if (grad_mode_flag()) {
        bool needs = false;
        for (const auto& p : parents) needs = needs || p->requires_grad;
        if (needs) {
            n->requires_grad = true;
            n->parents = std::move(parents);
            n->backward = std::move(backward);
        }
    }
    return n;
}

inline void check_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " +
                                        shape_str(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

// [m x k] . [k x n] -> [m x n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::check_rank2(a, "matmul");
    detail::check_rank2(b, "matmul");
    const int m = a.extent(0), k = a.extent(1), k2 = b.extent(0), n = b.extent(1);
    if (k != k2)
        throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    auto an = a.node_ptr();
    auto bn = b.node_ptr();
    auto out = detail::make_op_node(
        {m, n}, {an, bn}, [an, bn, m, k, n](detail::Node& o) {
            const float* A = an->data.data();
            const float* B = bn->data.data();
            const float* dC = o.grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                float* dA = an->grad.data();
                for (int i = 0; i < m; ++i)
                    for (int kk = 0; kk < k; ++kk) {
                        float acc = 0.0f;
                        const float* dCrow = dC + static_cast<size_t>(i) * n;
                        const float* Brow = B + static_cast<size_t>(kk) * n;
                        for (int j = 0; j < n; ++j) acc += dCrow[j] * Brow[j];
                        dA[static_cast<size_t>(i) * k + kk] += acc;
                    }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                float* dB = bn->grad.data();
                for (int kk = 0; kk < k; ++kk)
                    for (int i = 0; i < m; ++i) {
                        const float aik = A[static_cast<size_t>(i) * k + kk];
                        if (aik == 0.0f) continue;
                        const float* dCrow = dC + static_cast<size_t>(i) * n;
                        float* dBrow = dB + static_cast<size_t>(kk) * n;
                        for (int j = 0; j < n; ++j) dBrow[j] += aik * dCrow[j];
                    }
            }
        });
    {
        const float* A = a.data().data();
        const float* B = b.data().data();
        float* C = out->data.data();
        for (int i = 0; i < m; ++i) {
            float* Crow = C + static_cast<size_t>(i) * n;
            for (int kk = 0; kk < k; ++kk) {
                const float aik = A[static_cast<size_t>(i) * k + kk];
                const float* Brow = B + static_cast<size_t>(kk) * n;
                for (int j = 0; j < n; ++j) Crow[j] += aik * Brow[j];
            }
        }
    }
    return Tensor::wrap(out);
}

// a . b^T with a [m x k], b [n x k] -> [m x n]; attention scores layout.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    detail::check_rank2(a, "matmul_nt");
    detail::check_rank2(b, "matmul_nt");
    const int m = a.extent(0), k = a.extent(1), n = b.extent(0);
    if (k != b.extent(1))
        throw ShapeError("matmul_nt: inner extents differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    auto an = a.node_ptr();
    auto bn = b.node_ptr();
    auto out = detail::make_op_node(
        {m, n}, {an, bn}, [an, bn, m, k, n](detail::Node& o) {
            const float* A = an->data.data();
            const float* B = bn->data.data();
            const float* dC = o.grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                float* dA = an->grad.data();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) {
                        const float g = dC[static_cast<size_t>(i) * n + j];
                        if (g == 0.0f) continue;
                        const float* Brow = B + static_cast<size_t>(j) * k;
                        float* dArow = dA + static_cast<size_t>(i) * k;
                        for (int kk = 0; kk < k; ++kk) dArow[kk] += g * Brow[kk];
                    }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                float* dB = bn->grad.data();
                for (int j = 0; j < n; ++j)
                    for (int i = 0; i < m; ++i) {
                        const float g = dC[static_cast<size_t>(i) * n + j];
                        if (g == 0.0f) continue;
                        const float* Arow = A + static_cast<size_t>(i) * k;
                        float* dBrow = dB + static_cast<size_t>(j) * k;
                        for (int kk = 0; kk < k; ++kk) dBrow[kk] += g * Arow[kk];
                    }
            }
        });
    {
        const float* A = a.data().data();
        const float* B = b.data().data();
        float* C = out->data.data();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                const float* Arow = A + static_cast<size_t>(i) * k;
                const float* Brow = B + static_cast<size_t>(j) * k;
                float acc = 0.0f;
                for (int kk = 0; kk < k; ++kk) acc += Arow[kk] * Brow[kk];
                C[static_cast<size_t>(i) * n + j] = acc;
            }
    }
    return Tensor::wrap(out);
}

namespace detail {

inline Tensor elementwise_binary(const Tensor& a, const Tensor& b, const char* name,
                                 float (*fwd)(float, float),
                                 void (*bwd)(float, float, float, float&, float&)) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(name) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    auto an = a.node_ptr();
    auto bn = b.node_ptr();
    auto out = make_op_node(a.shape(), {an, bn}, [an, bn, bwd](Node& o) {
        const size_t n = o.data.size();
        if (an->requires_grad) an->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        for (size_t i = 0; i < n; ++i) {
            float da = 0.0f, db = 0.0f;
            bwd(an->data[i], bn->data[i], o.grad[i], da, db);
            if (an->requires_grad) an->grad[i] += da;
            if (bn->requires_grad) bn->grad[i] += db;
        }
    });
    for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = fwd(a.data()[i], b.data()[i]);
    return Tensor::wrap(out);
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::elementwise_binary(
        a, b, "add", [](float x, float y) { return x + y; },
        [](float, float, float g, float& da, float& db) {
            da = g;
            db = g;
        });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::elementwise_binary(
        a, b, "sub", [](float x, float y) { return x - y; },
        [](float, float, float g, float& da, float& db) {
            da = g;
            db = -g;
        });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::elementwise_binary(
        a, b, "mul", [](float x, float y) { return x * y; },
        [](float x, float y, float g, float& da, float& db) {
            da = g * y;
            db = g * x;
        });
}

inline Tensor scale(const Tensor& a, float s) {
    auto an = a.node_ptr();
    auto out = detail::make_op_node(a.shape(), {an}, [an, s](detail::Node& o) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += s * o.grad[i];
    });
    for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = s * a.data()[i];
    return Tensor::wrap(out);
}

// [n x c] + [c], row-broadcast (bias add).
inline Tensor add_rowvec(const Tensor& m, const Tensor& v) {
    detail::check_rank2(m, "add_rowvec");
    if (v.rank() != 1 || v.extent(0) != m.extent(1))
        throw ShapeError("add_rowvec: vector " + shape_str(v.shape()) +
                         " does not match columns of " + shape_str(m.shape()));
    const int rows = m.extent(0), cols = m.extent(1);
    auto mn = m.node_ptr();
    auto vn = v.node_ptr();
    auto out = detail::make_op_node(m.shape(), {mn, vn}, [mn, vn, rows, cols](detail::Node& o) {
        if (mn->requires_grad) {
            mn->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) mn->grad[i] += o.grad[i];
        }
        if (vn->requires_grad) {
            vn->ensure_grad();
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c)
                    vn->grad[static_cast<size_t>(c)] +=
                        o.grad[static_cast<size_t>(r) * cols + c];
        }
    });
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            out->data[static_cast<size_t>(r) * cols + c] =
                m.data()[static_cast<size_t>(r) * cols + c] + v.data()[static_cast<size_t>(c)];
    return Tensor::wrap(out);
}

inline Tensor gelu(const Tensor& a) {
    // tanh approximation
    constexpr float kC = 0.7978845608028654f;  // sqrt(2/pi)
    constexpr float kCube = 0.044715f;
    auto an = a.node_ptr();
    auto out = detail::make_op_node(a.shape(), {an}, [an](detail::Node& o) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) {
            const float x = an->data[i];
            const float u = kC * (x + kCube * x * x * x);
            const float t = std::tanh(u);
            const float du = kC * (1.0f + 3.0f * kCube * x * x);
            const float d = 0.5f * (1.0f + t) + 0.5f * x * (1.0f - t * t) * du;
            an->grad[i] += o.grad[i] * d;
        }
    });
    for (size_t i = 0; i < out->data.size(); ++i) {
        const float x = a.data()[i];
        out->data[i] = 0.5f * x * (1.0f + std::tanh(kC * (x + kCube * x * x * x)));
    }
    return Tensor::wrap(out);
}

// Row-wise layer norm with learned gain/bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         float eps = 1e-5f) {
    detail::check_rank2(x, "layer_norm");
    const int rows = x.extent(0), cols = x.extent(1);
    if (gamma.rank() != 1 || gamma.extent(0) != cols || beta.rank() != 1 ||
        beta.extent(0) != cols)
        throw ShapeError("layer_norm: gain/bias must be [cols]");
    auto xn = x.node_ptr();
    auto gn = gamma.node_ptr();
    auto bn = beta.node_ptr();
    // cache normalized activations and inverse stds for backward
    auto xhat = std::make_shared<std::vector<float>>(static_cast<size_t>(rows) * cols);
    auto rstd = std::make_shared<std::vector<float>>(static_cast<size_t>(rows));
    auto out = detail::make_op_node(
        x.shape(), {xn, gn, bn}, [xn, gn, bn, xhat, rstd, rows, cols](detail::Node& o) {
            if (gn->requires_grad) gn->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            if (xn->requires_grad) xn->ensure_grad();
            for (int r = 0; r < rows; ++r) {
                const float* go = o.grad.data() + static_cast<size_t>(r) * cols;
                const float* xh = xhat->data() + static_cast<size_t>(r) * cols;
                if (gn->requires_grad || bn->requires_grad) {
                    for (int c = 0; c < cols; ++c) {
                        if (gn->requires_grad) gn->grad[static_cast<size_t>(c)] += go[c] * xh[c];
                        if (bn->requires_grad) bn->grad[static_cast<size_t>(c)] += go[c];
                    }
                }
                if (xn->requires_grad) {
                    double sum_g = 0.0, sum_gx = 0.0;
                    for (int c = 0; c < cols; ++c) {
                        const float gi = go[c] * gn->data[static_cast<size_t>(c)];
                        sum_g += gi;
                        sum_gx += static_cast<double>(gi) * xh[c];
                    }
                    const float mg = static_cast<float>(sum_g / cols);
                    const float mgx = static_cast<float>(sum_gx / cols);
                    float* dx = xn->grad.data() + static_cast<size_t>(r) * cols;
                    const float rs = (*rstd)[static_cast<size_t>(r)];
                    for (int c = 0; c < cols; ++c) {
                        const float gi = go[c] * gn->data[static_cast<size_t>(c)];
                        dx[c] += rs * (gi - mg - xh[c] * mgx);
                    }
                }
            }
        });
    for (int r = 0; r < rows; ++r) {
        const float* xr = x.data().data() + static_cast<size_t>(r) * cols;
        double mean = 0.0;
        for (int c = 0; c < cols; ++c) mean += xr[c];
        mean /= cols;
        double var = 0.0;
        for (int c = 0; c < cols; ++c) {
            const double d = xr[c] - mean;
            var += d * d;
        }
        var /= cols;
        const float rs = static_cast<float>(1.0 / std::sqrt(var + eps));
        (*rstd)[static_cast<size_t>(r)] = rs;
        float* xh = xhat->data() + static_cast<size_t>(r) * cols;
        float* o = out->data.data() + static_cast<size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) {
            xh[c] = (xr[c] - static_cast<float>(mean)) * rs;
            o[c] = xh[c] * gamma.data()[static_cast<size_t>(c)] +
                   beta.data()[static_cast<size_t>(c)];
        }
    }
    return Tensor::wrap(out);
}

// Row-wise softmax. Rows may contain -inf entries (masked positions); those
// produce exact zeros. A row of all -inf is a contract violation.
inline Tensor softmax_rows(const Tensor& x) {
    detail::check_rank2(x, "softmax_rows");
    const int rows = x.extent(0), cols = x.extent(1);
    auto xn = x.node_ptr();
    auto out = detail::make_op_node(x.shape(), {xn}, [xn, rows, cols](detail::Node& o) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int r = 0; r < rows; ++r) {
            const float* p = o.data.data() + static_cast<size_t>(r) * cols;
            const float* gp = o.grad.data() + static_cast<size_t>(r) * cols;
            double dot = 0.0;
            for (int c = 0; c < cols; ++c) dot += static_cast<double>(gp[c]) * p[c];
            float* dx = xn->grad.data() + static_cast<size_t>(r) * cols;
            for (int c = 0; c < cols; ++c)
                dx[c] += p[c] * (gp[c] - static_cast<float>(dot));
        }
    });
    for (int r = 0; r < rows; ++r) {
        const float* xr = x.data().data() + static_cast<size_t>(r) * cols;
        float* o = out->data.data() + static_cast<size_t>(r) * cols;
        float mx = -std::numeric_limits<float>::infinity();
        for (int c = 0; c < cols; ++c) mx = std::max(mx, xr[c]);
        if (!(mx > -std::numeric_limits<float>::infinity()))
            throw NumericError("softmax_rows: fully masked row");
        double sum = 0.0;
        for (int c = 0; c < cols; ++c) {
            o[c] = std::exp(xr[c] - mx);
            sum += o[c];
        }
        const float inv = static_cast<float>(1.0 / sum);
        for (int c = 0; c < cols; ++c) o[c] *= inv;
    }
    return Tensor::wrap(out);
}

// Mean over rows of -log softmax(logits)[row, target]; gradient is
// (softmax - onehot) / rows.
inline Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets) {
    detail::check_rank2(logits, "softmax_cross_entropy");
    const int rows = logits.extent(0), cols = logits.extent(1);
    if (static_cast<int>(targets.size()) != rows)
        throw ShapeError("softmax_cross_entropy: need one target per row");
    for (int t : targets)
        if (t < 0 || t >= cols)
            throw IndexError("softmax_cross_entropy: target " + std::to_string(t) +
                             " outside [0, " + std::to_string(cols) + ")");
    auto ln = logits.node_ptr();
    auto probs = std::make_shared<std::vector<float>>(static_cast<size_t>(rows) * cols);
    auto tgts = std::make_shared<std::vector<int>>(targets.begin(), targets.end());
    auto out = detail::make_op_node({1}, {ln}, [ln, probs, tgts, rows, cols](detail::Node& o) {
        if (!ln->requires_grad) return;
        ln->ensure_grad();
        const float g = o.grad[0] / static_cast<float>(rows);
        for (int r = 0; r < rows; ++r) {
            const float* p = probs->data() + static_cast<size_t>(r) * cols;
            float* dl = ln->grad.data() + static_cast<size_t>(r) * cols;
            const int t = (*tgts)[static_cast<size_t>(r)];
            for (int c = 0; c < cols; ++c) dl[c] += g * (p[c] - (c == t ? 1.0f : 0.0f));
        }
    });
    double total = 0.0;
    for (int r = 0; r < rows; ++r) {
        const float* xr = logits.data().data() + static_cast<size_t>(r) * cols;
        float mx = xr[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
        double sum = 0.0;
        float* p = probs->data() + static_cast<size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) {
            p[c] = std::exp(xr[c] - mx);
            sum += p[c];
        }
        const float inv = static_cast<float>(1.0 / sum);
        for (int c = 0; c < cols; ++c) p[c] *= inv;
        const int t = targets[static_cast<size_t>(r)];
        total += -(static_cast<double>(xr[t]) - mx - std::log(sum));
    }
    out->data[0] = static_cast<float>(total / rows);
    return Tensor::wrap(out);
}

inline Tensor sum(const Tensor& a) {
    auto an = a.node_ptr();
    auto out = detail::make_op_node({1}, {an}, [an](detail::Node& o) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += o.grad[0];
    });
    double acc = 0.0;
    for (float v : a.data()) acc += v;
    out->data[0] = static_cast<float>(acc);
    return Tensor::wrap(out);
}

inline Tensor mean(const Tensor& a) {
    const float inv = 1.0f / static_cast<float>(a.numel());
    auto an = a.node_ptr();
    auto out = detail::make_op_node({1}, {an}, [an, inv](detail::Node& o) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += o.grad[0] * inv;
    });
    double acc = 0.0;
    for (float v : a.data()) acc += v;
    out->data[0] = static_cast<float>(acc / static_cast<double>(a.numel()));
    return Tensor::wrap(out);
}

inline Tensor slice_rows(const Tensor& a, int r0, int r1) {
    detail::check_rank2(a, "slice_rows");
    const int rows = a.extent(0), cols = a.extent(1);
    if (r0 < 0 || r1 > rows || r0 >= r1)
        throw RangeError("slice_rows: bad range [" + std::to_string(r0) + ", " +
                         std::to_string(r1) + ") of " + std::to_string(rows));
    auto an = a.node_ptr();
    auto out = detail::make_op_node({r1 - r0, cols}, {an}, [an, r0, cols](detail::Node& o) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        const size_t off = static_cast<size_t>(r0) * cols;
        for (size_t i = 0; i < o.grad.size(); ++i) an->grad[off + i] += o.grad[i];
    });
    std::memcpy(out->data.data(), a.data().data() + static_cast<size_t>(r0) * cols,
                out->data.size() * sizeof(float));
    return Tensor::wrap(out);
}

inline Tensor slice_cols(const Tensor& a, int c0, int c1) {
    detail::check_rank2(a, "slice_cols");
    const int rows = a.extent(0), cols = a.extent(1);
    if (c0 < 0 || c1 > cols || c0 >= c1)
        throw RangeError("slice_cols: bad range [" + std::to_string(c0) + ", " +
                         std::to_string(c1) + ") of " + std::to_string(cols));
    const int w = c1 - c0;
    auto an = a.node_ptr();
    auto out = detail::make_op_node({rows, w}, {an}, [an, rows, cols, c0, w](detail::Node& o) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < w; ++c)
                an->grad[static_cast<size_t>(r) * cols + c0 + c] +=
                    o.grad[static_cast<size_t>(r) * w + c];
    });
    for (int r = 0; r < rows; ++r)
        std::memcpy(out->data.data() + static_cast<size_t>(r) * w,
                    a.data().data() + static_cast<size_t>(r) * cols + c0,
                    static_cast<size_t>(w) * sizeof(float));
    return Tensor::wrap(out);
}

inline Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: empty list");
    const int cols = parts[0].extent(1);
    int rows = 0;
    std::vector<std::shared_ptr<detail::Node>> parents;
    for (const Tensor& p : parts) {
        detail::check_rank2(p, "concat_rows");
        if (p.extent(1) != cols) throw ShapeError("concat_rows: column mismatch");
        rows += p.extent(0);
        parents.push_back(p.node_ptr());
    }
    auto offsets = std::make_shared<std::vector<size_t>>();
    {
        size_t off = 0;
        for (const Tensor& p : parts) {
            offsets->push_back(off);
            off += p.data().size();
        }
    }
    auto parents_copy = parents;
    auto out = detail::make_op_node({rows, cols}, std::move(parents),
                                    [parents_copy, offsets](detail::Node& o) {
                                        for (size_t pi = 0; pi < parents_copy.size(); ++pi) {
                                            auto& p = parents_copy[pi];
                                            if (!p->requires_grad) continue;
                                            p->ensure_grad();
                                            const size_t off = (*offsets)[pi];
                                            for (size_t i = 0; i < p->grad.size(); ++i)
                                                p->grad[i] += o.grad[off + i];
                                        }
                                    });
    {
        size_t off = 0;
        for (const Tensor& p : parts) {
            std::memcpy(out->data.data() + off, p.data().data(), p.data().size() * sizeof(float));
            off += p.data().size();
        }
    }
    return Tensor::wrap(out);
}

inline Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: empty list");
    const int rows = parts[0].extent(0);
    int cols = 0;
    std::vector<std::shared_ptr<detail::Node>> parents;
    std::vector<int> widths;
    for (const Tensor& p : parts) {
        detail::check_rank2(p, "concat_cols");
        if (p.extent(0) != rows) throw ShapeError("concat_cols: row mismatch");
        cols += p.extent(1);
        widths.push_back(p.extent(1));
        parents.push_back(p.node_ptr());
    }
    auto parents_copy = parents;
    auto widths_p = std::make_shared<std::vector<int>>(widths);
    auto out = detail::make_op_node(
        {rows, cols}, std::move(parents), [parents_copy, widths_p, rows, cols](detail::Node& o) {
            int c0 = 0;
            for (size_t pi = 0; pi < parents_copy.size(); ++pi) {
                auto& p = parents_copy[pi];
                const int w = (*widths_p)[pi];
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (int r = 0; r < rows; ++r)
                        for (int c = 0; c < w; ++c)
                            p->grad[static_cast<size_t>(r) * w + c] +=
                                o.grad[static_cast<size_t>(r) * cols + c0 + c];
                }
                c0 += w;
            }
        });
    {
        int c0 = 0;
        for (const Tensor& p : parts) {
            const int w = p.extent(1);
            for (int r = 0; r < rows; ++r)
                std::memcpy(out->data.data() + static_cast<size_t>(r) * cols + c0,
                            p.data().data() + static_cast<size_t>(r) * w,
                            static_cast<size_t>(w) * sizeof(float));
            c0 += w;
        }
    }
    return Tensor::wrap(out);
}

// Gather rows of an embedding table; backward scatter-adds.
inline Tensor embedding_rows(const Tensor& table, std::span<const int> ids) {
    detail::check_rank2(table, "embedding_rows");
    const int vocab = table.extent(0), dim = table.extent(1);
    for (int id : ids)
        if (id < 0 || id >= vocab)
            throw IndexError("embedding_rows: id " + std::to_string(id) + " outside [0, " +
                             std::to_string(vocab) + ")");
    auto tn = table.node_ptr();
    auto idv = std::make_shared<std::vector<int>>(ids.begin(), ids.end());
    const int rows = static_cast<int>(ids.size());
    auto out = detail::make_op_node({rows, dim}, {tn}, [tn, idv, dim](detail::Node& o) {
        if (!tn->requires_grad) return;
        tn->ensure_grad();
        for (size_t r = 0; r < idv->size(); ++r) {
            const size_t src = r * static_cast<size_t>(dim);
            const size_t dst = static_cast<size_t>((*idv)[r]) * dim;
            for (int c = 0; c < dim; ++c) tn->grad[dst + c] += o.grad[src + c];
        }
    });
    for (size_t r = 0; r < ids.size(); ++r)
        std::memcpy(out->data.data() + r * static_cast<size_t>(dim),
                    table.data().data() + static_cast<size_t>(ids[r]) * dim,
                    static_cast<size_t>(dim) * sizeof(float));
    return Tensor::wrap(out);
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

// Reverse-mode sweep from a scalar loss. Non-leaf grads are reset first;
// leaf grads accumulate across calls until explicitly zeroed.
inline void backward(const Tensor& loss) {
    if (loss.numel() != 1) throw ContractError("backward: loss must be scalar");
    auto root = loss.node_ptr();
    if (!root->requires_grad)
        throw ContractError("backward: loss does not depend on any tracked tensor");

    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            detail::Node* p = node->parents[idx].get();
            ++idx;
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (detail::Node* n : order) {
        if (!n->is_leaf()) {
            n->grad.assign(n->data.size(), 0.0f);
        } else {
            n->ensure_grad();
        }
    }
    if (root->is_leaf())
        root->grad[0] += 1.0f;
    else
        root->grad[0] = 1.0f;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backward) n->backward(*n);
    }
}

}  // namespace srdd
