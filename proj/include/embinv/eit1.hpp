#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "embinv/tensor.hpp"

// EIT1 tensor container: magic "EIT1", u8 rank, rank x u32 little-endian dims,
// then f64 little-endian data. A file may hold several records back to back.
namespace embinv::eit1 {

namespace detail {

inline void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void put_f64(std::ostream& os, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline double get_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace detail

inline void write_tensor(std::ostream& os, const Tensor& t) {
    os.write("EIT1", 4);
    const unsigned char rank = static_cast<unsigned char>(t.rank());
    os.write(reinterpret_cast<const char*>(&rank), 1);
    for (int i = 0; i < t.rank(); ++i) detail::put_u32(os, static_cast<uint32_t>(t.dim(i)));
    for (size_t i = 0; i < t.size(); ++i) detail::put_f64(os, t[i]);
    if (!os) throw ValidationError("EIT1 write failed");
}

inline Tensor read_tensor(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "EIT1", 4) != 0) {
        throw ValidationError("EIT1: bad magic bytes");
    }
    unsigned char rank = 0;
    is.read(reinterpret_cast<char*>(&rank), 1);
    if (!is || rank < 1 || rank > 4) throw ValidationError("EIT1: bad rank");
    std::vector<int> dims(rank);
    for (auto& d : dims) {
        const uint32_t v = detail::get_u32(is);
        if (!is || v == 0) throw ValidationError("EIT1: bad dim");
        d = static_cast<int>(v);
    }
    Tensor t(dims);
    for (size_t i = 0; i < t.size(); ++i) t[i] = detail::get_f64(is);
    if (!is) throw ValidationError("EIT1: truncated data");
    return t;
}

inline void save(const std::string& path, const std::vector<Tensor>& tensors) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ValidationError("cannot open for writing: " + path);
    for (const auto& t : tensors) write_tensor(os, t);
}

inline void save_one(const std::string& path, const Tensor& t) { save(path, {t}); }

inline std::vector<Tensor> load_all(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open: " + path);
    std::vector<Tensor> out;
    while (is.peek() != std::char_traits<char>::eof()) {
        out.push_back(read_tensor(is));
    }
    return out;
}

inline Tensor load_one(const std::string& path) {
    auto all = load_all(path);
    if (all.size() != 1) {
        throw ValidationError(path + ": expected exactly one EIT1 record, found " +
                              std::to_string(all.size()));
    }
    return all[0];
}

}  // namespace embinv::eit1
