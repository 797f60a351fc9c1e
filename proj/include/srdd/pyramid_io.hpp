#pragma once

// Token pyramid file format:
//   magic "SRDP", version u16, schedule length u16, sides (u16 each),
//   vocab size u32, then per-scale token grids as little-endian u32,
//   row-major, coarse to fine.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "srdd/common.hpp"
#include "srdd/tokenizer.hpp"

namespace srdd {

namespace detail {

template <typename T>
void write_le(std::ostream& out, T v) {
    for (size_t i = 0; i < sizeof(T); ++i)
        out.put(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
}

template <typename T>
T read_le(std::istream& in) {
    std::uint64_t v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) {
        const int c = in.get();
        if (c == EOF) throw IoError("unexpected end of file");
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return static_cast<T>(v);
}

}  // namespace detail

inline constexpr std::uint16_t kPyramidFormatVersion = 1;

inline void write_pyramid(const std::string& path, const TokenPyramid& p, int vocab_size) {
    p.validate(vocab_size);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_pyramid: cannot open " + path);
    out.write("SRDP", 4);
    detail::write_le<std::uint16_t>(out, kPyramidFormatVersion);
    detail::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(p.schedule.num_scales()));
    for (int s : p.schedule.sides()) detail::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(s));
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(vocab_size));
    for (const auto& grid : p.tokens)
        for (std::int32_t t : grid) detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t));
    if (!out) throw IoError("write_pyramid: write failed");
}

struct PyramidFile {
    TokenPyramid pyramid;
    int vocab_size = 0;
};

inline PyramidFile read_pyramid(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("read_pyramid: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "SRDP") throw IoError("read_pyramid: bad magic");
    const auto version = detail::read_le<std::uint16_t>(in);
    if (version != kPyramidFormatVersion)
        throw IoError("read_pyramid: unsupported version " + std::to_string(version));
    const auto num_scales = detail::read_le<std::uint16_t>(in);
    std::vector<int> sides;
    for (int k = 0; k < num_scales; ++k) sides.push_back(detail::read_le<std::uint16_t>(in));
    PyramidFile out;
    out.pyramid.schedule = ScaleSchedule(std::move(sides));
    out.vocab_size = static_cast<int>(detail::read_le<std::uint32_t>(in));
    for (int k = 0; k < num_scales; ++k) {
        const int n = out.pyramid.schedule.tokens_at(k);
        std::vector<std::int32_t> grid(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i)
            grid[static_cast<size_t>(i)] = static_cast<std::int32_t>(detail::read_le<std::uint32_t>(in));
        out.pyramid.tokens.push_back(std::move(grid));
    }
    out.pyramid.validate(out.vocab_size);
    return out;
}

}  // namespace srdd
