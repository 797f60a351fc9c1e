#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "srdd/optim.hpp"
#include "srdd/rng.hpp"
#include "srdd/tensor.hpp"

using namespace srdd;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, float scale = 1.0f,
                     bool requires_grad = false) {
    StreamRng rng(seed);
    Tensor t = Tensor::zeros(std::move(shape));
    for (size_t i = 0; i < t.data().size(); ++i)
        t.data()[i] = scale * rng.gaussian(rng_domain::kTest, i);
    if (requires_grad) t.set_requires_grad(true);
    return t;
}

// Central finite differences against the analytic gradient. The f32 forward
// puts an absolute noise floor of roughly (loss rounding ~1e-6) / (2e-3) on
// the FD estimate, so the check is relative 1e-2 with an absolute floor of
// 1e-3.
void check_gradients(Tensor& param, const std::function<Tensor()>& loss_fn, int max_checked = 64) {
    Tensor loss = loss_fn();
    param.zero_grad();
    backward(loss);
    std::vector<float> analytic(param.grad().begin(), param.grad().end());
    const float eps = 1e-3f;
    const int n = static_cast<int>(param.data().size());
    const int stride = std::max(1, n / max_checked);
    for (int i = 0; i < n; i += stride) {
        const float orig = param.data()[i];
        param.data()[i] = orig + eps;
        const double lp = loss_fn().item();
        param.data()[i] = orig - eps;
        const double lm = loss_fn().item();
        param.data()[i] = orig;
        const double fd = (lp - lm) / (2.0 * eps);
        const double a = analytic[static_cast<size_t>(i)];
        const double diff = std::abs(fd - a);
        const double tol = std::max(1e-2 * std::max(std::abs(fd), std::abs(a)), 1e-3);
        INFO("component " << i << " analytic " << analytic[static_cast<size_t>(i)] << " fd "
                          << fd);
        REQUIRE(diff < tol);
    }
}

}  // namespace

TEST_CASE("matmul identity") {
    Tensor eye = Tensor::zeros({3, 3});
    for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0f;
    Tensor x = random_tensor({3, 4}, 1);
    Tensor y = matmul(eye, x);
    for (size_t i = 0; i < x.data().size(); ++i) REQUIRE(y.data()[i] == x.data()[i]);
}

TEST_CASE("matmul hand expansion") {
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from_data({2, 1}, {1, 1});
    Tensor c = matmul(a, b);
    REQUIRE(c.at(0, 0) == 3.0f);
    REQUIRE(c.at(1, 0) == 7.0f);
}

TEST_CASE("matmul vs triple-loop") {
    Tensor a = random_tensor({4, 5}, 2);
    Tensor b = random_tensor({5, 2}, 3);
    Tensor c = matmul(a, b);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 2; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 5; ++k)
                acc += static_cast<double>(a.at(i, k)) * b.at(k, j);
            REQUIRE(std::abs(c.at(i, j) - acc) < 1e-6);
        }
}

TEST_CASE("matmul shape mismatch") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({2, 3});
    REQUIRE_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("cross entropy uniform logits") {
    const int V = 7;
    Tensor logits = Tensor::zeros({3, V});
    std::vector<int> targets = {0, 3, 6};
    Tensor loss = softmax_cross_entropy(logits, targets);
    REQUIRE(std::abs(loss.item() - std::log(static_cast<double>(V))) < 1e-6);
}

TEST_CASE("cross entropy saturated correct class") {
    Tensor logits = Tensor::zeros({1, 4});
    logits.at(0, 2) = 1e6f;
    std::vector<int> targets = {2};
    REQUIRE(softmax_cross_entropy(logits, targets).item() < 1e-5f);
}

TEST_CASE("cross entropy vs direct enumeration") {
    Tensor logits = random_tensor({2, 4}, 4);
    std::vector<int> targets = {1, 3};
    const float got = softmax_cross_entropy(logits, targets).item();
    double expect = 0.0;
    for (int r = 0; r < 2; ++r) {
        double denom = 0.0;
        for (int c = 0; c < 4; ++c) denom += std::exp(static_cast<double>(logits.at(r, c)));
        expect += -std::log(std::exp(static_cast<double>(logits.at(r, targets[r]))) / denom);
    }
    expect /= 2.0;
    REQUIRE(std::abs(got - expect) < 1e-6);
}

TEST_CASE("cross entropy target out of range") {
    Tensor logits = Tensor::zeros({1, 4});
    std::vector<int> targets = {4};
    REQUIRE_THROWS_AS(softmax_cross_entropy(logits, targets), IndexError);
}

TEST_CASE("cross entropy gradient is softmax minus one-hot") {
    Tensor logits = random_tensor({3, 5}, 5, 1.0f, true);
    std::vector<int> targets = {0, 2, 4};
    Tensor loss = softmax_cross_entropy(logits, targets);
    backward(loss);
    for (int r = 0; r < 3; ++r) {
        double denom = 0.0;
        float mx = logits.at(r, 0);
        for (int c = 1; c < 5; ++c) mx = std::max(mx, logits.at(r, c));
        for (int c = 0; c < 5; ++c) denom += std::exp(static_cast<double>(logits.at(r, c)) - mx);
        for (int c = 0; c < 5; ++c) {
            const double p = std::exp(static_cast<double>(logits.at(r, c)) - mx) / denom;
            const double expect = (p - (c == targets[r] ? 1.0 : 0.0)) / 3.0;
            REQUIRE(std::abs(logits.grad()[static_cast<size_t>(r) * 5 + c] - expect) < 1e-6);
        }
    }
}

TEST_CASE("backward of sum gives ones") {
    Tensor x = random_tensor({2, 3}, 6, 1.0f, true);
    backward(sum(x));
    for (float g : x.grad()) REQUIRE(g == 1.0f);
}

TEST_CASE("backward of sum of squares gives 2x") {
    Tensor x = random_tensor({2, 3}, 7, 1.0f, true);
    backward(sum(mul(x, x)));
    for (size_t i = 0; i < x.data().size(); ++i)
        REQUIRE(std::abs(x.grad()[i] - 2.0f * x.data()[i]) < 1e-6f);
}

TEST_CASE("backward requires scalar") {
    Tensor x = random_tensor({2, 2}, 8, 1.0f, true);
    Tensor y = mul(x, x);
    REQUIRE_THROWS_AS(backward(y), ContractError);
}

TEST_CASE("repeated backward accumulates into leaves") {
    Tensor x = random_tensor({4}, 9, 1.0f, true);
    Tensor loss = sum(mul(x, x));
    backward(loss);
    std::vector<float> once(x.grad().begin(), x.grad().end());
    backward(loss);
    for (size_t i = 0; i < once.size(); ++i)
        REQUIRE(std::abs(x.grad()[i] - 2.0f * once[i]) < 1e-6f);
    x.zero_grad();
    backward(loss);
    for (size_t i = 0; i < once.size(); ++i) REQUIRE(x.grad()[i] == once[i]);
}

TEST_CASE("softmax rows sum to one and shift invariance") {
    Tensor x = random_tensor({5, 9}, 10, 2.0f);
    Tensor p = softmax_rows(x);
    for (int r = 0; r < 5; ++r) {
        double sum = 0.0;
        for (int c = 0; c < 9; ++c) sum += p.at(r, c);
        REQUIRE(std::abs(sum - 1.0) < 1e-6);
    }
    Tensor shifted = x.clone();
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 9; ++c) shifted.at(r, c) += 3.25f;
    Tensor p2 = softmax_rows(shifted);
    for (size_t i = 0; i < p.data().size(); ++i)
        REQUIRE(std::abs(p.data()[i] - p2.data()[i]) < 1e-6f);
}

TEST_CASE("gradient check: elementwise and norm ops") {
    Tensor x = random_tensor({4, 6}, 11, 0.8f, true);
    Tensor w = random_tensor({6, 3}, 12, 0.5f, true);
    Tensor g = random_tensor({6}, 13, 0.3f, true);
    Tensor b = random_tensor({6}, 14, 0.3f, true);
    std::vector<int> targets = {0, 1, 2, 0};

    SECTION("matmul + cross entropy wrt weight") {
        auto loss = [&] { return softmax_cross_entropy(matmul(x, w), targets); };
        check_gradients(w, loss);
    }
    SECTION("gelu") {
        auto loss = [&] { return mean(gelu(x)); };
        check_gradients(x, loss);
    }
    SECTION("layer norm wrt input and gain") {
        auto loss = [&] { return mean(mul(layer_norm(x, g, b), layer_norm(x, g, b))); };
        check_gradients(x, loss);
        check_gradients(g, loss);
    }
    SECTION("softmax rows") {
        Tensor tgt = random_tensor({4, 6}, 15, 0.2f);
        auto loss = [&] { return mean(mul(softmax_rows(x), tgt)); };
        check_gradients(x, loss);
    }
    SECTION("slices and concats") {
        auto loss = [&] {
            std::vector<Tensor> parts = {slice_rows(x, 0, 2), slice_rows(x, 2, 4)};
            Tensor cat = concat_rows(parts);
            std::vector<Tensor> cols = {slice_cols(cat, 0, 3), slice_cols(cat, 3, 6)};
            return mean(mul(concat_cols(cols), concat_cols(cols)));
        };
        check_gradients(x, loss);
    }
    SECTION("embedding gather") {
        std::vector<int> ids = {2, 0, 2, 1};
        auto loss = [&] { return mean(mul(embedding_rows(w, ids), embedding_rows(w, ids))); };
        check_gradients(w, loss);
    }
}

TEST_CASE("adamw zero grad and zero decay leaves params unchanged") {
    Tensor p = Tensor::from_data({3}, {1.0f, -2.0f, 0.5f});
    p.set_requires_grad(true);
    AdamWConfig cfg;
    cfg.lr = 0.1f;
    cfg.weight_decay = 0.0f;
    cfg.clip_norm = 0.0f;
    AdamW opt({p}, cfg);
    p.grad_mut();  // zero gradient buffer
    opt.step();
    REQUIRE(p.data()[0] == 1.0f);
    REQUIRE(p.data()[1] == -2.0f);
    REQUIRE(p.data()[2] == 0.5f);
}

TEST_CASE("adamw single hand-computed step") {
    Tensor p = Tensor::from_data({1}, {1.0f});
    p.set_requires_grad(true);
    AdamWConfig cfg;
    cfg.lr = 0.1f;
    cfg.beta1 = 0.9f;
    cfg.beta2 = 0.999f;
    cfg.weight_decay = 0.0f;
    cfg.clip_norm = 0.0f;
    AdamW opt({p}, cfg);
    p.grad_mut()[0] = 1.0f;
    opt.step();
    // bias-corrected mhat = 1, vhat = 1 -> update = lr * 1 / (1 + eps)
    REQUIRE(std::abs(p.data()[0] - 0.9f) < 1e-6f);
    REQUIRE(opt.step_count() == 1);
}

TEST_CASE("adamw decay-only step") {
    Tensor p = Tensor::from_data({1}, {2.0f});
    p.set_requires_grad(true);
    AdamWConfig cfg;
    cfg.lr = 0.1f;
    cfg.weight_decay = 0.05f;
    cfg.clip_norm = 0.0f;
    AdamW opt({p}, cfg);
    p.grad_mut()[0] = 0.0f;
    opt.step();
    REQUIRE(std::abs(p.data()[0] - 2.0f * (1.0f - 0.005f)) < 1e-7f);
}

TEST_CASE("adamw missing gradient is a contract error") {
    Tensor p = Tensor::from_data({1}, {1.0f});
    p.set_requires_grad(true);
    AdamW opt({p}, {});
    REQUIRE_THROWS_AS(opt.step(), ContractError);
}

TEST_CASE("gradient clipping at global norm") {
    Tensor a = Tensor::from_data({2}, {0.0f, 0.0f});
    a.set_requires_grad(true);
    AdamWConfig cfg;
    cfg.clip_norm = 1.0f;
    AdamW opt({a}, cfg);
    a.grad_mut()[0] = 3.0f;
    a.grad_mut()[1] = 4.0f;
    const float norm = opt.clip_gradients();
    REQUIRE(std::abs(norm - 5.0f) < 1e-6f);
    REQUIRE(std::abs(a.grad()[0] - 0.6f) < 1e-6f);
    REQUIRE(std::abs(a.grad()[1] - 0.8f) < 1e-6f);
}

TEST_CASE("determinism: same seed gives bit-identical draws") {
    StreamRng a(42), b(42), c(43);
    bool any_diff = false;
    for (int i = 0; i < 100; ++i) {
        REQUIRE(a.raw(1, i) == b.raw(1, i));
        REQUIRE(a.uniform(2, i) == b.uniform(2, i));
        REQUIRE(a.gaussian(3, i) == b.gaussian(3, i));
        any_diff = any_diff || (a.raw(1, i) != c.raw(1, i));
    }
    REQUIRE(any_diff);
}

TEST_CASE("categorical draw respects weights") {
    StreamRng rng(7);
    std::vector<float> delta = {0.0f, 0.0f, 1.0f, 0.0f};
    for (int i = 0; i < 20; ++i) REQUIRE(rng.categorical(delta, 1, i) == 2);
    std::vector<float> skew = {0.9f, 0.1f};
    int zeros = 0;
    for (int i = 0; i < 1000; ++i) zeros += rng.categorical(skew, 2, i) == 0;
    REQUIRE(zeros > 820);
    REQUIRE(zeros < 980);
}
