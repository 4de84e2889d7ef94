#pragma once

// Checkpoint layout (all integers little-endian):
//   "CDC1"
//   int32 scale, base_channels, hg_modules, hg_depth
//   uint32 array count
//   per array: uint32 name length, name bytes, uint32 ndim, int32 dims[ndim], float32 values[prod(dims)]

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>

#include "cdc/model.hpp"

namespace cdc {

struct Checkpoint {
    ModelConfig config;
    ModelParams params;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class ByteReader {
public:
    explicit ByteReader(const std::string& bytes) : b_(bytes) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    std::string str(std::size_t n) {
        need(n);
        std::string s = b_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == b_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > b_.size()) throw std::runtime_error("checkpoint truncated");
    }
    const std::string& b_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const ModelConfig& cfg, const ModelParams& params) {
    std::string out = "CDC1";
    for (int v : {cfg.scale, cfg.base_channels, cfg.hg_modules, cfg.hg_depth}) detail::put_u32(out, static_cast<std::uint32_t>(v));
    detail::put_u32(out, static_cast<std::uint32_t>(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& name = params.name(i);
        detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        detail::put_u32(out, static_cast<std::uint32_t>(params[i].shape.size()));
        for (int d : params[i].shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
        for (float v : params[i].values) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
    return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
    detail::ByteReader in(bytes);
    if (in.str(4) != "CDC1") throw std::runtime_error("not a CDC checkpoint (bad magic)");
    Checkpoint ck;
    ck.config.scale = in.i32();
    ck.config.base_channels = in.i32();
    ck.config.hg_modules = in.i32();
    ck.config.hg_depth = in.i32();
    ck.config.validate();
    const std::uint32_t count = in.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = in.str(in.u32());
        const std::uint32_t ndim = in.u32();
        std::vector<int> shape(ndim);
        for (auto& d : shape) d = in.i32();
        const std::size_t idx = ck.params.add(name, shape);
        for (float& v : ck.params[idx].values) v = std::bit_cast<float>(in.u32());
    }
    if (!in.done()) throw std::runtime_error("trailing bytes after checkpoint payload");
    CdcNetwork(ck.config).check_params(ck.params);
    return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg, const ModelParams& params) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::string bytes = serialize_checkpoint(cfg, params);
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot open '" + tmp.string() + "' for writing");
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw std::runtime_error("write failed for '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint '" + path.string() + "'");
    const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    try {
        return deserialize_checkpoint(bytes);
    } catch (const std::exception& e) {
        throw std::runtime_error("'" + path.string() + "': " + e.what());
    }
}

}  // namespace cdc
