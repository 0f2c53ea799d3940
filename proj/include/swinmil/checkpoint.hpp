#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "swinmil/tensor.hpp"
#include "swinmil/tensor_io.hpp"

namespace swinmil {

/// SMC1 checkpoint: magic "SMC1", u32 version, length-prefixed UTF-8
/// key=value config block, u32 tensor count, then per tensor a u16-length
/// name and an SMT1 payload, and finally u64 step counter and u64 RNG
/// state. Optimizer moments ride along as "<param>.m" / "<param>.v".
/// Tensor order is fixed by the writer, so save -> load -> save is
/// byte-identical.
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    std::uint32_t version = kVersion;
    std::string config_text;
    std::vector<std::pair<std::string, Tensor<float>>> tensors;
    std::uint64_t step = 0;
    std::uint64_t rng_state = 0;

    const Tensor<float>* find(const std::string& name) const {
        for (const auto& [n, t] : tensors) {
            if (n == name) return &t;
        }
        return nullptr;
    }
};

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path.string());
    os.write("SMC1", 4);
    detail::put_u32(os, ckpt.version);
    detail::put_u32(os, static_cast<std::uint32_t>(ckpt.config_text.size()));
    os.write(ckpt.config_text.data(), static_cast<std::streamsize>(ckpt.config_text.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, tensor] : ckpt.tensors) {
        if (name.size() > 0xffff) {
            throw std::invalid_argument("save_checkpoint: tensor name too long: " + name);
        }
        detail::put_u16(os, static_cast<std::uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_smt1(os, tensor);
    }
    detail::put_u64(os, ckpt.step);
    detail::put_u64(os, ckpt.rng_state);
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
    detail::ByteReader r(is, "load_checkpoint(" + path.string() + ")");

    char magic[4];
    r.read(magic, 4);
    if (std::memcmp(magic, "SMC1", 4) != 0) r.fail("bad SMC1 magic", 0);

    Checkpoint ckpt;
    ckpt.version = r.u32();
    if (ckpt.version != Checkpoint::kVersion) {
        r.fail("unsupported checkpoint version " + std::to_string(ckpt.version) + " (expected " +
                   std::to_string(Checkpoint::kVersion) + ")",
               4);
    }
    const std::uint32_t cfg_len = r.u32();
    ckpt.config_text.resize(cfg_len);
    if (cfg_len > 0) r.read(ckpt.config_text.data(), cfg_len);

    const std::uint32_t count = r.u32();
    ckpt.tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t name_len = r.u16();
        std::string name(name_len, '\0');
        if (name_len > 0) r.read(name.data(), name_len);
        ckpt.tensors.emplace_back(std::move(name), read_smt1<float>(r));
    }
    ckpt.step = r.u64();
    ckpt.rng_state = r.u64();
    return ckpt;
}

}  // namespace swinmil
