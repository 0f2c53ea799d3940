#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include "swinmil/tensor.hpp"

namespace swinmil {

namespace detail {

// Little-endian primitives, written byte by byte so the on-disk layout does
// not depend on host endianness.

inline void put_u16(std::ostream& os, std::uint16_t v) {
    char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
    os.write(b, 2);
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 8);
}

inline void put_f32(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(os, bits);
}

/// Stream reader that tracks its byte offset for error reporting.
class ByteReader {
public:
    ByteReader(std::istream& is, std::string what) : is_(is), what_(std::move(what)) {}

    std::uint64_t offset() const { return offset_; }

    void read(char* dst, std::size_t n) {
        is_.read(dst, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(is_.gcount()) != n) {
            throw std::runtime_error(what_ + ": unexpected end of file at offset " +
                                     std::to_string(offset_ + static_cast<std::uint64_t>(is_.gcount())));
        }
        offset_ += n;
    }

    std::uint16_t u16() {
        unsigned char b[2];
        read(reinterpret_cast<char*>(b), 2);
        return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
    }

    std::uint32_t u32() {
        unsigned char b[4];
        read(reinterpret_cast<char*>(b), 4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
        return v;
    }

    std::uint64_t u64() {
        unsigned char b[8];
        read(reinterpret_cast<char*>(b), 8);
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
        return v;
    }

    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

    [[noreturn]] void fail(const std::string& why, std::uint64_t at) const {
        throw std::runtime_error(what_ + ": " + why + " at offset " + std::to_string(at));
    }

private:
    std::istream& is_;
    std::string what_;
    std::uint64_t offset_ = 0;
};

}  // namespace detail

// SMT1: magic "SMT1", u32 LE rank, rank x u64 LE dims, row-major f32 LE data.

template <typename S>
void write_smt1(std::ostream& os, const Tensor<S>& t) {
    os.write("SMT1", 4);
    detail::put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) detail::put_u64(os, static_cast<std::uint64_t>(d));
    for (Index i = 0, n = t.size(); i < n; ++i) {
        detail::put_f32(os, static_cast<float>(t.data()[i]));
    }
}

template <typename S = float>
Tensor<S> read_smt1(detail::ByteReader& r) {
    const std::uint64_t start = r.offset();
    char magic[4];
    r.read(magic, 4);
    if (std::memcmp(magic, "SMT1", 4) != 0) r.fail("bad SMT1 magic", start);
    const std::uint32_t rank = r.u32();
    if (rank > 8) r.fail("implausible tensor rank " + std::to_string(rank), start + 4);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<Index>(r.u64());
    Tensor<S> t(shape);
    for (Index i = 0, n = t.size(); i < n; ++i) t.data()[i] = static_cast<S>(r.f32());
    return t;
}

template <typename S>
void save_smt1(const std::filesystem::path& path, const Tensor<S>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_smt1: cannot open " + path.string());
    write_smt1(os, t);
    if (!os) throw std::runtime_error("save_smt1: write failed for " + path.string());
}

template <typename S = float>
Tensor<S> load_smt1(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_smt1: cannot open " + path.string());
    detail::ByteReader r(is, "load_smt1(" + path.string() + ")");
    return read_smt1<S>(r);
}

}  // namespace swinmil
