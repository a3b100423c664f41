#include "cla/binio.hpp"

#include <array>
#include <fstream>

namespace cla::binio {

namespace {

std::array<std::uint32_t, 256> make_crc_table() {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
        std::uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
        t[i] = c;
    }
    return t;
}

}  // namespace

std::uint32_t crc32(const std::uint8_t* data, std::size_t len) {
    static const std::array<std::uint32_t, 256> table = make_crc_table();
    std::uint32_t c = 0xffffffffu;
    for (std::size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xffu] ^ (c >> 8);
    return c ^ 0xffffffffu;
}

void Writer::u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xffu));
}

void Writer::u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xffu));
}

void Writer::f64(double v) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &v, sizeof bits);
    u64(bits);
}

void Writer::str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
}

void Writer::f64_vec(const std::vector<double>& v) {
    u64(v.size());
    for (double d : v) f64(d);
}

void Writer::u64_vec(const std::vector<std::uint64_t>& v) {
    u64(v.size());
    for (std::uint64_t d : v) u64(d);
}

void Writer::raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
}

void Reader::need(std::size_t k) {
    if (off_ + k > n_) throw IntegrityError("binary payload truncated");
}

std::uint8_t Reader::u8() {
    need(1);
    return p_[off_++];
}

std::uint32_t Reader::u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p_[off_ + static_cast<std::size_t>(i)]) << (8 * i);
    off_ += 4;
    return v;
}

std::uint64_t Reader::u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p_[off_ + static_cast<std::size_t>(i)]) << (8 * i);
    off_ += 8;
    return v;
}

double Reader::f64() {
    const std::uint64_t bits = u64();
    double v = 0.0;
    std::memcpy(&v, &bits, sizeof v);
    return v;
}

std::string Reader::str() {
    const std::uint64_t len = u64();
    need(len);
    std::string s(reinterpret_cast<const char*>(p_ + off_), len);
    off_ += len;
    return s;
}

std::vector<double> Reader::f64_vec() {
    const std::uint64_t len = u64();
    need(len * 8);
    std::vector<double> v(len);
    for (std::uint64_t i = 0; i < len; ++i) v[i] = f64();
    return v;
}

std::vector<std::uint64_t> Reader::u64_vec() {
    const std::uint64_t len = u64();
    need(len * 8);
    std::vector<std::uint64_t> v(len);
    for (std::uint64_t i = 0; i < len; ++i) v[i] = u64();
    return v;
}

void write_file(const std::string& path, const char magic[8], std::uint32_t version,
                const Writer& payload) {
    Writer head;
    head.raw(magic, 8);
    head.u32(version);
    head.u64(payload.bytes().size());

    std::vector<std::uint8_t> all = head.bytes();
    all.insert(all.end(), payload.bytes().begin(), payload.bytes().end());
    const std::uint32_t crc = crc32(all.data(), all.size());

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IntegrityError("cannot open for writing: " + path);
    os.write(reinterpret_cast<const char*>(all.data()), static_cast<std::streamsize>(all.size()));
    Writer tail;
    tail.u32(crc);
    os.write(reinterpret_cast<const char*>(tail.bytes().data()), 4);
    if (!os) throw IntegrityError("write failed: " + path);
}

std::vector<std::uint8_t> read_file(const std::string& path, const char magic[8],
                                    std::uint32_t expect_version) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IntegrityError("cannot open: " + path);
    std::vector<std::uint8_t> all((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (all.size() < 8 + 4 + 8 + 4) throw IntegrityError("file too short: " + path);

    const std::size_t body = all.size() - 4;
    std::uint32_t stored = 0;
    for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(all[body + static_cast<std::size_t>(i)]) << (8 * i);
    if (crc32(all.data(), body) != stored) throw IntegrityError("checksum mismatch: " + path);

    Reader r(all.data(), body);
    char m[8];
    for (auto& ch : m) ch = static_cast<char>(r.u8());
    if (std::memcmp(m, magic, 8) != 0) throw IntegrityError("bad magic: " + path);
    const std::uint32_t version = r.u32();
    if (version != expect_version) throw IntegrityError("unsupported version in " + path);
    const std::uint64_t len = r.u64();
    if (len != r.remaining()) throw IntegrityError("payload length mismatch: " + path);

    return std::vector<std::uint8_t>(all.begin() + static_cast<std::ptrdiff_t>(body - len),
                                     all.begin() + static_cast<std::ptrdiff_t>(body));
}

}  // namespace cla::binio
