#pragma once

// Binary PPM (P6) images and PGM (P5) masks. Pixels map to [0,1] floats;
// masks are boolean grids where 255 marks known cells and 0 unknown.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "srdd/common.hpp"
#include "srdd/tensor.hpp"

namespace srdd {

namespace detail {

inline std::string read_pnm_token(std::istream& in) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) throw IoError("pnm: truncated header");
    return tok;
}

}  // namespace detail

// Reads a P6 pixmap into a [h, w, 3] tensor scaled to [0,1].
inline Tensor read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("read_ppm: cannot open " + path);
    if (detail::read_pnm_token(in) != "P6") throw IoError("read_ppm: not a P6 file: " + path);
    const int w = std::stoi(detail::read_pnm_token(in));
    const int h = std::stoi(detail::read_pnm_token(in));
    const int maxval = std::stoi(detail::read_pnm_token(in));
    if (w <= 0 || h <= 0 || maxval != 255) throw IoError("read_ppm: unsupported header");
    std::vector<std::uint8_t> raw(static_cast<size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!in) throw IoError("read_ppm: truncated pixel data");
    std::vector<float> px(raw.size());
    for (size_t i = 0; i < raw.size(); ++i) px[i] = static_cast<float>(raw[i]) / 255.0f;
    return Tensor::from_data({h, w, 3}, std::move(px));
}

// Writes a [h, w, 3] tensor in [0,1] as a P6 pixmap; values are clamped
// then rounded to nearest.
inline void write_ppm(const std::string& path, const Tensor& image) {
    if (image.rank() != 3 || image.extent(2) != 3)
        throw ShapeError("write_ppm: expected [h, w, 3] image");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_ppm: cannot open " + path);
    out << "P6\n" << image.extent(1) << " " << image.extent(0) << "\n255\n";
    std::vector<std::uint8_t> raw(image.data().size());
    for (size_t i = 0; i < raw.size(); ++i) {
        float v = image.data()[i];
        v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
        raw[i] = static_cast<std::uint8_t>(v * 255.0f + 0.5f);
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw IoError("write_ppm: write failed");
}

// Reads a P5 graymap as a boolean grid: 255 -> true (known), 0 -> false.
// Any other value is rejected.
inline std::vector<std::uint8_t> read_pgm_mask(const std::string& path, int& h, int& w) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("read_pgm_mask: cannot open " + path);
    if (detail::read_pnm_token(in) != "P5") throw IoError("read_pgm_mask: not a P5 file");
    w = std::stoi(detail::read_pnm_token(in));
    h = std::stoi(detail::read_pnm_token(in));
    const int maxval = std::stoi(detail::read_pnm_token(in));
    if (w <= 0 || h <= 0 || maxval != 255) throw IoError("read_pgm_mask: unsupported header");
    std::vector<std::uint8_t> raw(static_cast<size_t>(w) * h);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!in) throw IoError("read_pgm_mask: truncated data");
    for (auto& v : raw) {
        if (v != 0 && v != 255) throw ValidationError("read_pgm_mask: mask must be 0/255");
        v = v == 255 ? 1 : 0;
    }
    return raw;
}

inline void write_pgm_mask(const std::string& path, std::span<const std::uint8_t> known, int h,
                           int w) {
    if (static_cast<size_t>(h) * w != known.size())
        throw ShapeError("write_pgm_mask: size mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_pgm_mask: cannot open " + path);
    out << "P5\n" << w << " " << h << "\n255\n";
    std::vector<std::uint8_t> raw(known.size());
    for (size_t i = 0; i < known.size(); ++i) raw[i] = known[i] ? 255 : 0;
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw IoError("write_pgm_mask: write failed");
}

}  // namespace srdd
