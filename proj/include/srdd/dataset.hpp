#pragma once

// Procedural toy corpus and optional real-image ingestion.
//
// Each class is a distinct parametric generator family (smooth gradients,
// rings, stripes, Gaussian blobs) with a class-specific palette and
// geometry, plus per-sample jitter. All randomness is drawn from
// counter-based streams keyed by (class, sample, field), so a dataset is a
// pure function of (num_classes, per_class, side, seed). Images are smooth
// by construction.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "srdd/common.hpp"
#include "srdd/grid.hpp"
#include "srdd/image_io.hpp"
#include "srdd/rng.hpp"
#include "srdd/tensor.hpp"

namespace srdd {

struct ToySample {
    Tensor image;  // [side, side, 3] in [0,1]
    int class_label = 0;
};

struct ToyDataset {
    int side = 0;
    int num_classes = 0;
    std::uint64_t seed = 0;
    std::vector<ToySample> samples;
};

namespace detail {

inline float clamp01(float v) { return v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v); }

// Class palette: a base color and a contrast direction, well separated
// across classes.
inline void class_palette(int cls, float base[3], float delta[3]) {
    const float hue = 2.0f * 3.14159265f * (0.13f + 0.61803399f * cls);  // golden-ratio spacing
    base[0] = 0.5f + 0.28f * std::cos(hue);
    base[1] = 0.5f + 0.28f * std::cos(hue + 2.094f);
    base[2] = 0.5f + 0.28f * std::cos(hue + 4.189f);
    delta[0] = 0.32f * std::cos(hue + 1.0f);
    delta[1] = 0.32f * std::cos(hue + 3.1f);
    delta[2] = 0.32f * std::cos(hue + 5.2f);
}

}  // namespace detail

inline Tensor make_toy_image(int cls, int sample_index, int side, std::uint64_t seed) {
    StreamRng rng(seed);
    auto u = [&](int field) {
        return rng.uniform(rng_domain::kDataset, static_cast<std::uint64_t>(cls),
                           static_cast<std::uint64_t>(sample_index),
                           static_cast<std::uint64_t>(field));
    };
    const int family = cls % 4;
    float base[3], delta[3];
    detail::class_palette(cls, base, delta);

    Tensor img = Tensor::zeros({side, side, 3});
    float* px = img.data().data();
    const float inv = 1.0f / static_cast<float>(side);

    // class geometry plus bounded per-sample jitter
    const float angle = 2.0f * 3.14159265f * (0.17f * cls + 0.08f * u(0));
    const float freq = 1.0f + 0.5f * (cls % 3) + 0.6f * u(1);
    const float phase = 2.0f * 3.14159265f * u(2);
    const float cx = 0.3f + 0.4f * u(3);
    const float cy = 0.3f + 0.4f * u(4);
    const float cx2 = 0.3f + 0.4f * u(5);
    const float cy2 = 0.3f + 0.4f * u(6);
    const float width = 0.12f + 0.1f * u(7);

    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            const float fx = (x + 0.5f) * inv;
            const float fy = (y + 0.5f) * inv;
            float v = 0.0f;
            switch (family) {
                case 0: {  // smooth directional gradient
                    const float t = fx * std::cos(angle) + fy * std::sin(angle);
                    v = 2.0f * t - 1.0f;
                    break;
                }
                case 1: {  // concentric rings
                    const float dx = fx - cx, dy = fy - cy;
                    const float r = std::sqrt(dx * dx + dy * dy);
                    v = std::sin(2.0f * 3.14159265f * freq * r + phase);
                    break;
                }
                case 2: {  // smooth stripes
                    const float t = fx * std::cos(angle) + fy * std::sin(angle);
                    v = std::sin(2.0f * 3.14159265f * freq * t + phase);
                    break;
                }
                case 3: {  // two Gaussian blobs
                    const float d1x = fx - cx, d1y = fy - cy;
                    const float d2x = fx - cx2, d2y = fy - cy2;
                    v = std::exp(-(d1x * d1x + d1y * d1y) / (2.0f * width * width)) -
                        std::exp(-(d2x * d2x + d2y * d2y) / (2.0f * width * width));
                    break;
                }
            }
            float* p = px + (static_cast<size_t>(y) * side + x) * 3;
            for (int c = 0; c < 3; ++c) p[c] = detail::clamp01(base[c] + v * delta[c]);
        }
    return img;
}

inline ToyDataset make_toy_dataset(int num_classes, int per_class, int side,
                                   std::uint64_t seed) {
    if (num_classes < 1) throw ConfigError("make_toy_dataset: need at least one class");
    if (per_class < 0) throw ConfigError("make_toy_dataset: negative per-class count");
    if (side < 1) throw ConfigError("make_toy_dataset: bad side");
    ToyDataset ds;
    ds.side = side;
    ds.num_classes = num_classes;
    ds.seed = seed;
    for (int c = 0; c < num_classes; ++c)
        for (int i = 0; i < per_class; ++i)
            ds.samples.push_back({make_toy_image(c, i, side, seed), c});
    return ds;
}

// Optional real corpus: a directory of P6 pixmaps plus an index file of
// "<filename><TAB><class>" lines; images are area-averaged down to `side`.
inline ToyDataset read_image_folder(const std::string& dir, const std::string& index_file,
                                    int side, int num_classes) {
    ToyDataset ds;
    ds.side = side;
    ds.num_classes = num_classes;
    std::ifstream in(index_file);
    if (!in) throw IoError("read_image_folder: cannot open index " + index_file);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw ValidationError("read_image_folder: malformed index line: " + line);
        const std::string name = line.substr(0, tab);
        const int label = std::stoi(line.substr(tab + 1));
        if (label < 0 || label >= num_classes)
            throw ValidationError("read_image_folder: label " + std::to_string(label) +
                                  " outside [0, " + std::to_string(num_classes) + ")");
        Tensor img = read_ppm((std::filesystem::path(dir) / name).string());
        if (img.extent(0) != img.extent(1))
            throw ValidationError("read_image_folder: " + name + " is not square");
        if (img.extent(0) < side)
            throw ValidationError("read_image_folder: " + name + " smaller than target side");
        ds.samples.push_back({downsample(img, side), label});
    }
    if (ds.samples.empty()) throw ValidationError("read_image_folder: empty corpus");
    return ds;
}

}  // namespace srdd
