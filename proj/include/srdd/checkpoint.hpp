#pragma once

// Checkpoint container:
//   magic "SRDDCKPT", version u16,
//   config block: u32 byte length + UTF-8 key=value lines,
//   tensor table: u32 count, then per tensor
//     u16 name length, name bytes, u8 dtype (0 = f32), u8 rank,
//     u32 extents, payload as little-endian f32,
//   trailing CRC32 (reflected, poly 0xEDB88320) over all preceding bytes.
//
// Reloading a train state reproduces forward outputs bit-exactly on the
// same platform: parameters, moments, codebook and lift round-trip as raw
// f32 bit patterns.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "srdd/common.hpp"
#include "srdd/mask.hpp"
#include "srdd/model.hpp"
#include "srdd/optim.hpp"
#include "srdd/tensor.hpp"
#include "srdd/tokenizer.hpp"

namespace srdd {

inline std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t crc = 0xFFFFFFFFu;
    for (std::uint8_t b : bytes) crc = table[(crc ^ b) & 0xFF] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

struct Checkpoint {
    std::vector<std::pair<std::string, std::string>> config;  // key=value, ordered
    std::vector<std::pair<std::string, Tensor>> tensors;

    const std::string& get(const std::string& key) const {
        for (const auto& [k, v] : config)
            if (k == key) return v;
        throw ConfigError("checkpoint: missing config key " + key);
    }
    int get_int(const std::string& key) const { return std::stoi(get(key)); }
    std::int64_t get_i64(const std::string& key) const { return std::stoll(get(key)); }
    std::uint64_t get_u64(const std::string& key) const { return std::stoull(get(key)); }
    float get_float(const std::string& key) const { return std::stof(get(key)); }

    Tensor tensor(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return t;
        throw ConfigError("checkpoint: missing tensor " + name);
    }
    bool has_tensor(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return true;
        return false;
    }
};

inline constexpr std::uint16_t kCheckpointFormatVersion = 1;

namespace detail {

inline void put_bytes(std::vector<std::uint8_t>& out, const void* p, size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
}

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
    for (size_t i = 0; i < sizeof(T); ++i)
        out.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
}

struct ByteReader {
    std::span<const std::uint8_t> bytes;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > bytes.size()) throw IoError("checkpoint: truncated file");
    }
    template <typename T>
    T le() {
        need(sizeof(T));
        std::uint64_t v = 0;
        for (size_t i = 0; i < sizeof(T); ++i)
            v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
        pos += sizeof(T);
        return static_cast<T>(v);
    }
    std::string str(size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
        pos += n;
        return s;
    }
};

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::vector<std::uint8_t> buf;
    detail::put_bytes(buf, "SRDDCKPT", 8);
    detail::put_le<std::uint16_t>(buf, kCheckpointFormatVersion);

    std::string cfg;
    for (const auto& [k, v] : ckpt.config) cfg += k + "=" + v + "\n";
    detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(cfg.size()));
    detail::put_bytes(buf, cfg.data(), cfg.size());

    detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        detail::put_le<std::uint16_t>(buf, static_cast<std::uint16_t>(name.size()));
        detail::put_bytes(buf, name.data(), name.size());
        buf.push_back(0);  // dtype f32
        buf.push_back(static_cast<std::uint8_t>(t.rank()));
        for (int e : t.shape()) detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(e));
        for (float v : t.data()) detail::put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(v));
    }

    detail::put_le<std::uint32_t>(buf, crc32(buf));

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("save_checkpoint: cannot open " + path);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("save_checkpoint: write failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_checkpoint: cannot open " + path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
    if (buf.size() < 14) throw IoError("load_checkpoint: file too small");

    const std::uint32_t stored =
        static_cast<std::uint32_t>(buf[buf.size() - 4]) |
        (static_cast<std::uint32_t>(buf[buf.size() - 3]) << 8) |
        (static_cast<std::uint32_t>(buf[buf.size() - 2]) << 16) |
        (static_cast<std::uint32_t>(buf[buf.size() - 1]) << 24);
    if (crc32({buf.data(), buf.size() - 4}) != stored)
        throw IoError("load_checkpoint: CRC mismatch (corrupt file)");

    detail::ByteReader r{{buf.data(), buf.size() - 4}};
    if (r.str(8) != "SRDDCKPT") throw IoError("load_checkpoint: bad magic");
    const auto version = r.le<std::uint16_t>();
    if (version != kCheckpointFormatVersion)
        throw IoError("load_checkpoint: unsupported version " + std::to_string(version));

    Checkpoint ckpt;
    const auto cfg_len = r.le<std::uint32_t>();
    std::istringstream cfg(r.str(cfg_len));
    std::string line;
    while (std::getline(cfg, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw IoError("load_checkpoint: malformed config line");
        ckpt.config.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }

    const auto count = r.le<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = r.le<std::uint16_t>();
        std::string name = r.str(name_len);
        const auto dtype = r.le<std::uint8_t>();
        if (dtype != 0) throw IoError("load_checkpoint: unsupported dtype");
        const auto rank = r.le<std::uint8_t>();
        Shape shape;
        for (int d = 0; d < rank; ++d) shape.push_back(static_cast<int>(r.le<std::uint32_t>()));
        std::vector<float> data(static_cast<size_t>(shape_numel(shape)));
        for (float& v : data) v = std::bit_cast<float>(r.le<std::uint32_t>());
        ckpt.tensors.emplace_back(std::move(name), Tensor::from_data(std::move(shape), std::move(data)));
    }
    return ckpt;
}

// ---------------------------------------------------------------------------
// train-state bundle
// ---------------------------------------------------------------------------

// Everything needed to resume training or sample: model, frozen codebook
// and feature lift, optimizer state, the training PRNG seed and the mask
// the model was trained with.
struct TrainState {
    Model model;
    Codebook codebook;
    FeatureLift lift;
    AdamW optimizer;
    std::uint64_t train_seed = 0;
    MaskKind mask_kind = MaskKind::markovian;
    // free-form annotations (e.g. distillation provenance); persisted verbatim
    std::vector<std::pair<std::string, std::string>> extra_config;

    TrainState(Model m, Codebook cb, FeatureLift fl, AdamWConfig oc, std::uint64_t seed,
               MaskKind kind)
        : model(std::move(m)),
          codebook(std::move(cb)),
          lift(std::move(fl)),
          optimizer(model.params(), oc),
          train_seed(seed),
          mask_kind(kind) {}
};

inline std::string schedule_to_string(const ScaleSchedule& s) {
    std::string out;
    for (size_t i = 0; i < s.sides().size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s.sides()[i]);
    }
    return out;
}

inline ScaleSchedule schedule_from_string(const std::string& s) {
    std::vector<int> sides;
    std::istringstream in(s);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        if (tok.empty()) continue;
        sides.push_back(std::stoi(tok));
    }
    return ScaleSchedule(std::move(sides));
}

inline void save_train_state(const std::string& path, const TrainState& st) {
    Checkpoint ckpt;
    auto& cfg = ckpt.config;
    const ModelConfig& mc = st.model.config();
    cfg.emplace_back("model.depth", std::to_string(mc.depth));
    cfg.emplace_back("model.heads", std::to_string(mc.heads));
    cfg.emplace_back("model.dim", std::to_string(mc.dim));
    cfg.emplace_back("model.vocab_size", std::to_string(mc.vocab_size));
    cfg.emplace_back("model.num_classes", std::to_string(mc.num_classes));
    cfg.emplace_back("model.feature_dim", std::to_string(mc.feature_dim));
    cfg.emplace_back("model.schedule", schedule_to_string(mc.schedule));
    cfg.emplace_back("model.class_dropout_prob", std::to_string(mc.class_dropout_prob));
    cfg.emplace_back("model.init_seed", std::to_string(st.model.init_seed()));
    const AdamWConfig& oc = st.optimizer.config();
    cfg.emplace_back("optim.lr", std::to_string(oc.lr));
    cfg.emplace_back("optim.beta1", std::to_string(oc.beta1));
    cfg.emplace_back("optim.beta2", std::to_string(oc.beta2));
    cfg.emplace_back("optim.eps", std::to_string(oc.eps));
    cfg.emplace_back("optim.weight_decay", std::to_string(oc.weight_decay));
    cfg.emplace_back("optim.clip_norm", std::to_string(oc.clip_norm));
    cfg.emplace_back("optim.step_count", std::to_string(st.optimizer.step_count()));
    cfg.emplace_back("train.seed", std::to_string(st.train_seed));
    cfg.emplace_back("train.mask_kind", mask_kind_name(st.mask_kind));
    for (const auto& [k, v] : st.extra_config) cfg.emplace_back(k, v);

    for (const auto& [name, t] : st.model.named_params()) ckpt.tensors.emplace_back(name, t);
    ckpt.tensors.emplace_back("codebook.table", st.codebook.table);
    ckpt.tensors.emplace_back("lift.matrix", st.lift.matrix);
    const auto& named = st.model.named_params();
    for (size_t i = 0; i < named.size(); ++i) {
        auto m = st.optimizer.first_moment(i);
        auto v = st.optimizer.second_moment(i);
        ckpt.tensors.emplace_back("optim.m." + named[i].first,
                                  Tensor::from_data(named[i].second.shape(),
                                                    std::vector<float>(m.begin(), m.end())));
        ckpt.tensors.emplace_back("optim.v." + named[i].first,
                                  Tensor::from_data(named[i].second.shape(),
                                                    std::vector<float>(v.begin(), v.end())));
    }
    save_checkpoint(path, ckpt);
}

inline TrainState load_train_state(const std::string& path) {
    const Checkpoint ckpt = load_checkpoint(path);
    ModelConfig mc;
    mc.depth = ckpt.get_int("model.depth");
    mc.heads = ckpt.get_int("model.heads");
    mc.dim = ckpt.get_int("model.dim");
    mc.vocab_size = ckpt.get_int("model.vocab_size");
    mc.num_classes = ckpt.get_int("model.num_classes");
    mc.feature_dim = ckpt.get_int("model.feature_dim");
    mc.schedule = schedule_from_string(ckpt.get("model.schedule"));
    mc.class_dropout_prob = ckpt.get_float("model.class_dropout_prob");

    Model model(mc, ckpt.get_u64("model.init_seed"));
    for (const auto& [name, t] : model.named_params()) {
        Tensor stored = ckpt.tensor(name);
        if (stored.shape() != t.shape())
            throw IoError("load_train_state: shape mismatch for " + name);
        Tensor dst = t;  // handle copy; shares storage
        std::memcpy(dst.data().data(), stored.data().data(), dst.data().size() * sizeof(float));
    }

    Tensor table = ckpt.tensor("codebook.table");
    Codebook cb(table.extent(0), table.extent(1), table.clone());
    FeatureLift lift;
    lift.matrix = ckpt.tensor("lift.matrix").clone();
    lift.dim = lift.matrix.extent(0);

    AdamWConfig oc;
    oc.lr = ckpt.get_float("optim.lr");
    oc.beta1 = ckpt.get_float("optim.beta1");
    oc.beta2 = ckpt.get_float("optim.beta2");
    oc.eps = ckpt.get_float("optim.eps");
    oc.weight_decay = ckpt.get_float("optim.weight_decay");
    oc.clip_norm = ckpt.get_float("optim.clip_norm");

    TrainState st(std::move(model), std::move(cb), std::move(lift), oc,
                  ckpt.get_u64("train.seed"), mask_kind_from_name(ckpt.get("train.mask_kind")));
    st.optimizer.set_step_count(ckpt.get_i64("optim.step_count"));
    const auto& named = st.model.named_params();
    for (size_t i = 0; i < named.size(); ++i) {
        Tensor m = ckpt.tensor("optim.m." + named[i].first);
        Tensor v = ckpt.tensor("optim.v." + named[i].first);
        auto md = st.optimizer.first_moment_mut(i);
        auto vd = st.optimizer.second_moment_mut(i);
        std::memcpy(md.data(), m.data().data(), md.size() * sizeof(float));
        std::memcpy(vd.data(), v.data().data(), vd.size() * sizeof(float));
    }
    return st;
}

}  // namespace srdd
