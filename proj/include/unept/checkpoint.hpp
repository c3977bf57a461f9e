#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "tensor.hpp"

// Checkpoint container: magic "EPT1", u32 version, u64 step, u32 tensor
// count, then per tensor: u32 name length + UTF-8 name, u32 rank,
// u64 extents, little-endian f64 payload. Round-trips bitwise.

namespace unept {

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace detail {

template <typename T>
void write_pod(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

}  // namespace detail

struct Checkpoint {
    std::uint64_t step = 0;
    NamedParams tensors;  // in file order

    const Tensor* find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }
};

inline void save_checkpoint(const std::string& path, std::uint64_t step,
                            const NamedParams& tensors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out.write("EPT1", 4);
    detail::write_pod<std::uint32_t>(out, 1);  // version
    detail::write_pod<std::uint64_t>(out, step);
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (int i = 0; i < t.rank(); ++i)
            detail::write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(t.dim(i)));
        out.write(reinterpret_cast<const char*>(t.value().data()),
                  static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "EPT1", 4) != 0)
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    auto version = detail::read_pod<std::uint32_t>(in);
    if (version != 1) throw std::runtime_error("load_checkpoint: unsupported version");
    Checkpoint ckpt;
    ckpt.step = detail::read_pod<std::uint64_t>(in);
    auto count = detail::read_pod<std::uint32_t>(in);
    std::map<std::string, bool> seen;
    for (std::uint32_t i = 0; i < count; ++i) {
        auto name_len = detail::read_pod<std::uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) throw std::runtime_error("load_checkpoint: truncated name");
        if (seen[name]) throw std::runtime_error("load_checkpoint: duplicate tensor " + name);
        seen[name] = true;
        auto rank = detail::read_pod<std::uint32_t>(in);
        if (rank > 8) throw std::runtime_error("load_checkpoint: implausible rank");
        std::vector<int> shape(rank);
        std::size_t numel = 1;
        for (auto& d : shape) {
            auto e = detail::read_pod<std::uint64_t>(in);
            d = static_cast<int>(e);
            numel *= e;
        }
        std::vector<double> data(numel);
        in.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(numel * sizeof(double)));
        if (in.gcount() != static_cast<std::streamsize>(numel * sizeof(double)))
            throw std::runtime_error("load_checkpoint: truncated payload for " + name);
        ckpt.tensors.emplace_back(name, Tensor::from_data(std::move(data), std::move(shape)));
    }
    return ckpt;
}

}  // namespace unept
