#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "cla/errors.hpp"

namespace cla::binio {

std::uint32_t crc32(const std::uint8_t* data, std::size_t len);

/// Little-endian append-only byte buffer.
class Writer {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
    void f64(double v);
    void str(const std::string& s);
    void f64_vec(const std::vector<double>& v);
    void u64_vec(const std::vector<std::uint64_t>& v);
    void raw(const void* p, std::size_t n);

    const std::vector<std::uint8_t>& bytes() const { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
};

/// Bounds-checked little-endian reader; any overrun raises IntegrityError.
class Reader {
public:
    Reader(const std::uint8_t* data, std::size_t len) : p_(data), n_(len) {}
    explicit Reader(const std::vector<std::uint8_t>& b) : Reader(b.data(), b.size()) {}

    std::uint8_t u8();
    std::uint32_t u32();
    std::uint64_t u64();
    std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
    double f64();
    std::string str();
    std::vector<double> f64_vec();
    std::vector<std::uint64_t> u64_vec();
    bool done() const { return off_ == n_; }
    std::size_t remaining() const { return n_ - off_; }

private:
    void need(std::size_t k);
    const std::uint8_t* p_;
    std::size_t n_;
    std::size_t off_ = 0;
};

/// Writes [magic(8) | version(u32) | payload_len(u64) | payload | crc32]
/// where the checksum covers every preceding byte.
void write_file(const std::string& path, const char magic[8], std::uint32_t version,
                const Writer& payload);

/// Verifies magic, version, length, and trailing checksum; returns the payload.
std::vector<std::uint8_t> read_file(const std::string& path, const char magic[8],
                                    std::uint32_t expect_version);

}  // namespace cla::binio
