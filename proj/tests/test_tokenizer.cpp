#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include "srdd/grid.hpp"
#include "srdd/rng.hpp"
#include "srdd/tokenizer.hpp"

using namespace srdd;

namespace {

Tensor random_feature(int side, int dim, std::uint64_t seed, float scale = 1.0f) {
    StreamRng rng(seed);
    Tensor t = Tensor::zeros({side, side, dim});
    for (size_t i = 0; i < t.data().size(); ++i)
        t.data()[i] = scale * rng.gaussian(rng_domain::kTest, i);
    return t;
}

Codebook codebook_from_rows(std::vector<std::vector<float>> rows) {
    const int V = static_cast<int>(rows.size());
    const int d = static_cast<int>(rows[0].size());
    std::vector<float> flat;
    for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    return Codebook(V, d, Tensor::from_data({V, d}, std::move(flat)));
}

}  // namespace

TEST_CASE("downsample at full side is the identity") {
    Tensor f = random_feature(5, 3, 1);
    Tensor d = downsample(f, 5);
    for (size_t i = 0; i < f.data().size(); ++i) REQUIRE(d.data()[i] == f.data()[i]);
}

TEST_CASE("downsample preserves constants") {
    for (int n : {1, 2, 3, 5, 7}) {
        Tensor f = Tensor::full({7, 7, 2}, 0.37f);
        Tensor d = downsample(f, n);
        for (float v : d.data()) REQUIRE(v == 0.37f);
    }
}

TEST_CASE("downsample of checkerboard averages to zero") {
    Tensor f = Tensor::zeros({4, 4, 1});
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            f.data()[static_cast<size_t>(y) * 4 + x] = ((x + y) % 2 == 0) ? 1.0f : -1.0f;
    Tensor d = downsample(f, 2);
    for (float v : d.data()) REQUIRE(std::abs(v) < 1e-7f);
}

TEST_CASE("downsample range errors") {
    Tensor f = random_feature(4, 1, 2);
    REQUIRE_THROWS_AS(downsample(f, 0), RangeError);
    REQUIRE_THROWS_AS(downsample(f, 5), RangeError);
}

TEST_CASE("upsample identity and constants") {
    Tensor f = random_feature(3, 2, 3);
    Tensor u = upsample(f, 3);
    for (size_t i = 0; i < f.data().size(); ++i) REQUIRE(u.data()[i] == f.data()[i]);
    Tensor c = Tensor::full({2, 2, 3}, -1.25f);
    for (int m : {2, 3, 4, 9}) {
        Tensor uc = upsample(c, m);
        for (float v : uc.data()) REQUIRE(v == -1.25f);
    }
    REQUIRE_THROWS_AS(upsample(f, 2), RangeError);
}

TEST_CASE("upsample matches closed-form bilinear weights") {
    // columns [0, 1] interpolate linearly with aligned endpoints, rows constant
    Tensor f = Tensor::from_data({2, 2, 1}, {0, 1, 0, 1});
    Tensor u = upsample(f, 4);
    const float expected_cols[4] = {0.0f, 1.0f / 3.0f, 2.0f / 3.0f, 1.0f};
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            REQUIRE(std::abs(u.data()[static_cast<size_t>(y) * 4 + x] - expected_cols[x]) <
                    1e-6f);
}

TEST_CASE("upsample from a single cell broadcasts") {
    Tensor f = Tensor::from_data({1, 1, 2}, {0.5f, -0.5f});
    Tensor u = upsample(f, 3);
    for (int cell = 0; cell < 9; ++cell) {
        REQUIRE(u.data()[static_cast<size_t>(cell) * 2] == 0.5f);
        REQUIRE(u.data()[static_cast<size_t>(cell) * 2 + 1] == -0.5f);
    }
}

TEST_CASE("quantize picks exact rows") {
    Codebook cb = codebook_from_rows({{0, 0}, {1, 2}, {-1, 3}, {4, 4}});
    Tensor f = Tensor::from_data({2, 2, 2}, {1, 2, -1, 3, 0, 0, 4, 4});
    auto q = quantize(f, cb);
    REQUIRE(q.tokens == std::vector<std::int32_t>{1, 2, 0, 3});
    for (size_t i = 0; i < f.data().size(); ++i) REQUIRE(q.embedded.data()[i] == f.data()[i]);
}

TEST_CASE("quantize tie breaks toward the lowest index") {
    // cell at 0 is equidistant to rows 2 (-1) and 5 (+1)
    Codebook cb = codebook_from_rows({{9}, {8}, {-1}, {7}, {6}, {1}});
    Tensor f = Tensor::from_data({1, 1, 1}, {0.0f});
    auto q = quantize(f, cb);
    REQUIRE(q.tokens[0] == 2);
}

TEST_CASE("quantize agrees with exhaustive scan") {
    Tensor table_src = random_feature(4, 2, 5);
    Codebook cb(16, 2,
                Tensor::from_data({16, 2}, std::vector<float>(table_src.data().begin(),
                                                              table_src.data().end())));
    Tensor f = random_feature(3, 2, 6);
    auto q = quantize(f, cb);
    for (int cell = 0; cell < 9; ++cell) {
        double best = std::numeric_limits<double>::infinity();
        int best_j = 0;
        for (int j = 0; j < 16; ++j) {
            double dist = 0.0;
            for (int c = 0; c < 2; ++c) {
                const double diff =
                    static_cast<double>(f.data()[static_cast<size_t>(cell) * 2 + c]) -
                    cb.table.at(j, c);
                dist += diff * diff;
            }
            if (dist < best) {
                best = dist;
                best_j = j;
            }
        }
        REQUIRE(q.tokens[static_cast<size_t>(cell)] == best_j);
    }
}

TEST_CASE("single-scale encode degenerates to quantize") {
    Codebook cb = codebook_from_rows({{0, 0}, {1, 0}, {0, 1}, {1, 1}});
    Tensor f = random_feature(3, 2, 7, 0.8f);
    const ScaleSchedule sched({3});
    auto enc = encode(f, sched, cb);
    auto q = quantize(f, cb);
    REQUIRE(enc.pyramid.tokens[0] == q.tokens);
    Tensor dec = decode(enc.pyramid, cb);
    for (size_t i = 0; i < dec.data().size(); ++i)
        REQUIRE(dec.data()[i] == q.embedded.data()[i]);
}

TEST_CASE("representable feature encodes to zero residual") {
    Codebook cb = codebook_from_rows({{0.0f, 0.0f}, {0.7f, -0.2f}});
    Tensor f = Tensor::zeros({4, 4, 2});
    for (int cell = 0; cell < 16; ++cell) {
        f.data()[static_cast<size_t>(cell) * 2] = 0.7f;
        f.data()[static_cast<size_t>(cell) * 2 + 1] = -0.2f;
    }
    const ScaleSchedule sched({1, 2, 4});
    auto enc = encode(f, sched, cb);
    REQUIRE(enc.residual_norms.back() < 1e-6);
    Tensor dec = decode(enc.pyramid, cb);
    for (size_t i = 0; i < f.data().size(); ++i)
        REQUIRE(std::abs(dec.data()[i] - f.data()[i]) < 1e-6f);
}

TEST_CASE("encode matches an independent scheme replay and residuals are monotone") {
    const ScaleSchedule sched({1, 2, 4, 8});
    Tensor f = random_feature(8, 4, 8, 0.6f);
    std::vector<Tensor> corpus = {f};
    Codebook cb = build_codebook(corpus, sched, 16, 99);
    auto enc = encode(f, sched, cb);

    // independent replay of the residual cascade
    Tensor r = f.clone();
    std::vector<double> norms = {std::sqrt(squared_norm(r))};
    for (int k = 0; k < sched.num_scales(); ++k) {
        auto q = quantize(downsample(r, sched.side(k)), cb);
        REQUIRE(q.tokens == enc.pyramid.tokens[static_cast<size_t>(k)]);
        sub_into(r, upsample(q.embedded, 8));
        norms.push_back(std::sqrt(squared_norm(r)));
    }
    REQUIRE(enc.residual_norms.size() == norms.size());
    for (size_t i = 0; i < norms.size(); ++i)
        REQUIRE(std::abs(enc.residual_norms[i] - norms[i]) < 1e-9);
    for (size_t k = 2; k < enc.residual_norms.size(); ++k)
        REQUIRE(enc.residual_norms[k] <= enc.residual_norms[k - 1] + 1e-9);
}

TEST_CASE("encode rejects schedule mismatch") {
    Codebook cb = codebook_from_rows({{0.0f}, {1.0f}});
    Tensor f = random_feature(4, 1, 9);
    REQUIRE_THROWS_AS(encode(f, ScaleSchedule({1, 2}), cb), ConfigError);
}

TEST_CASE("decode of the zero codebook row is the zero image") {
    Codebook cb = codebook_from_rows({{0.0f, 0.0f}, {1.0f, 1.0f}});
    TokenPyramid p;
    p.schedule = ScaleSchedule({1, 2});
    p.tokens = {{0}, {0, 0, 0, 0}};
    Tensor dec = decode(p, cb);
    for (float v : dec.data()) REQUIRE(v == 0.0f);
}

TEST_CASE("decode rejects out-of-vocabulary tokens") {
    Codebook cb = codebook_from_rows({{0.0f}, {1.0f}});
    TokenPyramid p;
    p.schedule = ScaleSchedule({1});
    p.tokens = {{2}};
    REQUIRE_THROWS_AS(decode(p, cb), IndexError);
}

TEST_CASE("multi-scale round trip beats single-scale quantization over seeded trials") {
    const ScaleSchedule sched({1, 2, 4, 8});
    int no_worse = 0;
    const int trials = 100;
    for (int t = 0; t < trials; ++t) {
        Tensor f = random_feature(8, 4, 1000 + static_cast<std::uint64_t>(t), 0.7f);
        std::vector<Tensor> corpus = {f};
        Codebook cb = build_codebook(corpus, sched, 16, 500 + static_cast<std::uint64_t>(t));
        auto enc = encode(f, sched, cb);
        Tensor rec = decode(enc.pyramid, cb);
        double mse_multi = 0.0;
        for (size_t i = 0; i < f.data().size(); ++i) {
            const double d = static_cast<double>(rec.data()[i]) - f.data()[i];
            mse_multi += d * d;
        }
        auto q = quantize(f, cb);
        double mse_single = 0.0;
        for (size_t i = 0; i < f.data().size(); ++i) {
            const double d = static_cast<double>(q.embedded.data()[i]) - f.data()[i];
            mse_single += d * d;
        }
        if (mse_multi <= mse_single + 1e-9) ++no_worse;
    }
    REQUIRE(no_worse == trials);
}

TEST_CASE("snr sentinel and error cases") {
    const ScaleSchedule sched({1, 2, 4});
    Tensor zero = Tensor::zeros({4, 4, 1});
    REQUIRE_THROWS_AS(snr_per_scale(zero, sched), NumericError);

    Tensor c = Tensor::full({4, 4, 1}, 0.5f);
    auto snr = snr_per_scale(c, sched);
    for (double v : snr) REQUIRE(std::isinf(v));

    Tensor f = random_feature(4, 1, 11);
    auto s = snr_per_scale(f, sched);
    REQUIRE(std::isinf(s.back()));  // top scale reconstructs exactly
}

TEST_CASE("snr increases on a smooth ramp and matches the direct formula") {
    const ScaleSchedule sched({1, 2, 4, 8, 16});
    Tensor f = Tensor::zeros({16, 16, 1});
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
            f.data()[static_cast<size_t>(y) * 16 + x] =
                0.3f + 0.4f * (x / 15.0f) + 0.2f * (y / 15.0f);
    auto snr = snr_per_scale(f, sched);
    const double signal = squared_norm(f);
    for (int k = 0; k < sched.num_scales(); ++k) {
        Tensor rec = upsample(downsample(f, sched.side(k)), 16);
        sub_into(rec, f);
        const double noise = squared_norm(rec);
        if (noise > 0.0)
            REQUIRE(std::abs(snr[static_cast<size_t>(k)] -
                             10.0 * std::log10(signal / noise)) < 1e-9);
    }
    for (size_t k = 1; k < snr.size(); ++k) REQUIRE(snr[k] > snr[k - 1]);
}

TEST_CASE("feature lift is orthonormal and invertible on its range") {
    FeatureLift lift = FeatureLift::make(8, 77);
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) {
            double dot = 0.0;
            for (int r = 0; r < 8; ++r)
                dot += static_cast<double>(lift.matrix.at(r, a)) * lift.matrix.at(r, b);
            REQUIRE(std::abs(dot - (a == b ? 1.0 : 0.0)) < 1e-6);
        }
    StreamRng rng(5);
    Tensor img = Tensor::zeros({4, 4, 3});
    for (size_t i = 0; i < img.data().size(); ++i)
        img.data()[i] = rng.uniform(rng_domain::kTest, i);
    Tensor rec = lift.unlift(lift.lift(img));
    for (size_t i = 0; i < img.data().size(); ++i)
        REQUIRE(std::abs(rec.data()[i] - img.data()[i]) < 1e-5f);
}

TEST_CASE("codebook build is deterministic in the seed") {
    const ScaleSchedule sched({1, 2, 4});
    std::vector<Tensor> corpus;
    for (int i = 0; i < 3; ++i)
        corpus.push_back(random_feature(4, 2, 200 + static_cast<std::uint64_t>(i)));
    Codebook a = build_codebook(corpus, sched, 8, 42);
    Codebook b = build_codebook(corpus, sched, 8, 42);
    for (size_t i = 0; i < a.table.data().size(); ++i)
        REQUIRE(a.table.data()[i] == b.table.data()[i]);
    Codebook c = build_codebook(corpus, sched, 8, 43);
    bool differs = false;
    for (size_t i = 0; i < a.table.data().size(); ++i)
        differs = differs || a.table.data()[i] != c.table.data()[i];
    REQUIRE(differs);
}
