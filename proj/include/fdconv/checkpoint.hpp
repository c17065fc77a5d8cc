#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fdconv/tensor.hpp"

namespace fdconv {

// Deterministic binary checkpoint.
//
// Layout (all integers little endian):
//   magic   "FDCV"
//   u16     format version (1)
//   u32     manifest length, then manifest bytes (plain text)
//   u32     tensor count
//   per tensor:
//     u32   name length, then name bytes
//     u8    rank
//     u64   extent per axis
//     f64   payload, row major
//   u64     CRC-64/XZ of every preceding byte
//
// Identical inputs produce identical bytes; load rejects bad magic, an
// unsupported version, truncation, and checksum mismatch.

inline std::uint64_t crc64_xz(const unsigned char* data, std::size_t len) {
    static const std::array<std::uint64_t, 256> table = [] {
        std::array<std::uint64_t, 256> t{};
        for (std::uint64_t i = 0; i < 256; ++i) {
            std::uint64_t c = i;
            for (int j = 0; j < 8; ++j) c = (c & 1) ? (c >> 1) ^ 0xC96C5795D7870F42ull : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint64_t crc = ~0ull;
    for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
    return ~crc;
}

struct Checkpoint {
    std::uint16_t version = 1;
    std::string manifest;
    std::vector<std::pair<std::string, RealTensor>> tensors;  // name -> tensor, ordered

    const RealTensor* find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }
    const RealTensor& require(const std::string& name) const {
        const RealTensor* t = find(name);
        if (!t) throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
        return *t;
    }
};

namespace detail {

inline void append_u16(std::string& b, std::uint16_t v) {
    b.push_back(static_cast<char>(v & 0xFF));
    b.push_back(static_cast<char>((v >> 8) & 0xFF));
}

inline void append_u32(std::string& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void append_u64(std::string& b, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void append_f64(std::string& b, double v) { append_u64(b, std::bit_cast<std::uint64_t>(v)); }

class Reader {
  public:
    Reader(const std::string& buf, std::string path) : buf_(buf), path_(std::move(path)) {}

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return buf_.size() - pos_; }

    const unsigned char* take(std::size_t n, const char* what) {
        if (remaining() < n)
            throw std::runtime_error("checkpoint " + path_ + ": truncated while reading " + what +
                                     " at byte " + std::to_string(pos_));
        const unsigned char* p = reinterpret_cast<const unsigned char*>(buf_.data()) + pos_;
        pos_ += n;
        return p;
    }

    std::uint16_t u16(const char* what) {
        const unsigned char* p = take(2, what);
        return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
    }

    std::uint32_t u32(const char* what) {
        const unsigned char* p = take(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
        return v;
    }

    std::uint64_t u64(const char* what) {
        const unsigned char* p = take(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
        return v;
    }

    double f64(const char* what) { return std::bit_cast<double>(u64(what)); }

  private:
    const std::string& buf_;
    std::string path_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
    std::string b;
    b += "FDCV";
    detail::append_u16(b, ck.version);
    detail::append_u32(b, static_cast<std::uint32_t>(ck.manifest.size()));
    b += ck.manifest;
    detail::append_u32(b, static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& [name, t] : ck.tensors) {
        detail::append_u32(b, static_cast<std::uint32_t>(name.size()));
        b += name;
        b.push_back(static_cast<char>(t.rank()));
        for (std::size_t e : t.shape) detail::append_u64(b, e);
        for (double v : t.data) detail::append_f64(b, v);
    }
    detail::append_u64(b, crc64_xz(reinterpret_cast<const unsigned char*>(b.data()), b.size()));
    return b;
}

inline Checkpoint decode_checkpoint(const std::string& buf, const std::string& path) {
    if (buf.size() < 12)
        throw std::runtime_error("checkpoint " + path + ": file too short (" + std::to_string(buf.size()) +
                                 " bytes)");
    const std::uint64_t stored_crc =
        [&] {
            std::uint64_t v = 0;
            for (int i = 0; i < 8; ++i)
                v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[buf.size() - 8 + i])) << (8 * i);
            return v;
        }();
    const std::uint64_t actual_crc =
        crc64_xz(reinterpret_cast<const unsigned char*>(buf.data()), buf.size() - 8);
    if (stored_crc != actual_crc)
        throw std::runtime_error("checkpoint " + path + ": checksum mismatch (file corrupt)");

    detail::Reader r(buf, path);
    const unsigned char* magic = r.take(4, "magic");
    if (!(magic[0] == 'F' && magic[1] == 'D' && magic[2] == 'C' && magic[3] == 'V'))
        throw std::runtime_error("checkpoint " + path + ": bad magic, not a checkpoint file");
    Checkpoint ck;
    ck.version = r.u16("version");
    if (ck.version != 1)
        throw std::runtime_error("checkpoint " + path + ": unsupported format version " +
                                 std::to_string(ck.version));
    const std::uint32_t mlen = r.u32("manifest length");
    const unsigned char* m = r.take(mlen, "manifest");
    ck.manifest.assign(reinterpret_cast<const char*>(m), mlen);
    const std::uint32_t count = r.u32("tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t nlen = r.u32("tensor name length");
        const unsigned char* np = r.take(nlen, "tensor name");
        std::string name(reinterpret_cast<const char*>(np), nlen);
        const std::uint8_t rank = *r.take(1, "tensor rank");
        std::vector<std::size_t> shape(rank);
        for (std::uint8_t d = 0; d < rank; ++d)
            shape[d] = static_cast<std::size_t>(r.u64("tensor extent"));
        RealTensor t(shape);
        for (std::size_t e = 0; e < t.numel(); ++e) t.data[e] = r.f64("tensor payload");
        ck.tensors.emplace_back(std::move(name), std::move(t));
    }
    if (r.remaining() != 8)
        throw std::runtime_error("checkpoint " + path + ": " + std::to_string(r.remaining() - 8) +
                                 " unexpected trailing bytes at byte " + std::to_string(r.offset()));
    return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    const std::string bytes = encode_checkpoint(ck);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(buf, path);
}

}  // namespace fdconv
