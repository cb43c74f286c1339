#pragma once

// ".pcsw" weight container:
//   "PCSW" | u32 version=1 | u32 count | count x record
//   record = u8 name_len | name | u8 ndim | ndim x u32 dim | prod(dim) x f32
// All integers and floats little-endian, no padding.

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pcs/error.hpp"
#include "pcs/tensor.hpp"

namespace pcs {

inline constexpr std::uint32_t kPcswVersion = 1;

struct PcswRecord {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> values;

    std::size_t count() const {
        std::size_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }

    bool operator==(const PcswRecord&) const = default;
};

/// Records in file order with name lookup.
class PcswFile {
public:
    std::vector<PcswRecord> records;

    const PcswRecord* find(std::string_view name) const {
        for (const auto& r : records) {
            if (r.name == name) return &r;
        }
        return nullptr;
    }

    void add(PcswRecord r) { records.push_back(std::move(r)); }
};

namespace detail {

class ByteWriter {
public:
    void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void raw(std::string_view s) { bytes_.append(s); }
    const std::string& bytes() const { return bytes_; }

private:
    std::string bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::string bytes) : bytes_(std::move(bytes)) {}

    std::size_t offset() const { return pos_; }
    bool at_end() const { return pos_ == bytes_.size(); }

    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) {
            throw FormatError(std::string("truncated file while reading ") + what, pos_);
        }
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<std::uint8_t>(bytes_[pos_++]);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
    std::string raw(std::size_t n, const char* what) {
        need(n, what);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

private:
    std::string bytes_;
    std::size_t pos_ = 0;
};

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path + "' for reading", 0);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot open '" + path + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ConfigError("write to '" + path + "' failed");
}

}  // namespace detail

inline std::string encode_pcsw(const PcswFile& file) {
    detail::ByteWriter w;
    w.raw("PCSW");
    w.u32(kPcswVersion);
    w.u32(static_cast<std::uint32_t>(file.records.size()));
    for (const auto& r : file.records) {
        if (r.name.empty() || r.name.size() > 255) throw ConfigError("pcsw: record name length must be 1..255");
        if (r.dims.size() > 255) throw ConfigError("pcsw: too many dims in '" + r.name + "'");
        if (r.values.size() != r.count()) {
            throw ShapeError("pcsw: record '" + r.name + "' has " + std::to_string(r.values.size()) +
                             " values for its dims");
        }
        w.u8(static_cast<std::uint8_t>(r.name.size()));
        w.raw(r.name);
        w.u8(static_cast<std::uint8_t>(r.dims.size()));
        for (auto d : r.dims) w.u32(d);
        for (float v : r.values) w.f32(v);
    }
    return w.bytes();
}

inline PcswFile decode_pcsw(std::string bytes) {
    detail::ByteReader r(std::move(bytes));
    if (r.raw(4, "magic") != "PCSW") throw FormatError("bad magic, expected \"PCSW\"", 0);
    const std::size_t version_at = r.offset();
    if (const auto version = r.u32("version"); version != kPcswVersion) {
        throw FormatError("unsupported version " + std::to_string(version), version_at);
    }
    const std::uint32_t count = r.u32("record count");
    PcswFile file;
    for (std::uint32_t k = 0; k < count; ++k) {
        PcswRecord rec;
        const auto name_len = r.u8("name length");
        if (name_len == 0) throw FormatError("empty record name", r.offset() - 1);
        rec.name = r.raw(name_len, "name");
        const auto ndim = r.u8("ndim");
        std::uint64_t total = 1;
        for (std::uint8_t d = 0; d < ndim; ++d) {
            rec.dims.push_back(r.u32("dims"));
            total *= rec.dims.back();
        }
        r.need(total * 4, "values");
        rec.values.resize(total);
        for (auto& v : rec.values) v = r.f32("values");
        file.records.push_back(std::move(rec));
    }
    if (!r.at_end()) throw FormatError("trailing bytes after last record", r.offset());
    return file;
}

inline void write_pcsw(const std::string& path, const PcswFile& file) {
    detail::write_file_bytes(path, encode_pcsw(file));
}

inline PcswFile read_pcsw(const std::string& path) { return decode_pcsw(detail::read_file_bytes(path)); }

/// Tensor record. ndim 1 for biases, 4 otherwise.
template <typename T>
PcswRecord to_record(std::string name, const Tensor<T>& t, bool as_vector = false) {
    PcswRecord r;
    r.name = std::move(name);
    const Shape& s = t.shape();
    if (as_vector) {
        r.dims = {static_cast<std::uint32_t>(t.size())};
    } else {
        r.dims = {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c), static_cast<std::uint32_t>(s.h),
                  static_cast<std::uint32_t>(s.w)};
    }
    r.values.reserve(t.size());
    for (T v : t.data()) r.values.push_back(static_cast<float>(v));
    return r;
}

/// Loads `rec` into a tensor of the expected shape; ShapeError names the record.
template <typename T>
Tensor<T> from_record(const PcswRecord& rec, const Shape& expected) {
    const bool vector_ok = rec.dims.size() == 1 && expected.c == 1 && expected.h == 1 && expected.w == 1 &&
                           rec.dims[0] == expected.n;
    const bool full_ok = rec.dims.size() == 4 && rec.dims[0] == expected.n && rec.dims[1] == expected.c &&
                         rec.dims[2] == expected.h && rec.dims[3] == expected.w;
    if (!vector_ok && !full_ok) {
        std::string got = "(";
        for (std::size_t i = 0; i < rec.dims.size(); ++i) got += (i ? "," : "") + std::to_string(rec.dims[i]);
        throw ShapeError("tensor '" + rec.name + "' has dims " + got + "), expected " + expected.str());
    }
    std::vector<T> data(rec.values.size());
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<T>(rec.values[i]);
    return Tensor<T>(expected, std::move(data));
}

/// Record holding opaque bytes; length must be a multiple of 4.
inline PcswRecord bytes_record(std::string name, const std::vector<std::uint8_t>& bytes) {
    PcswRecord r;
    r.name = std::move(name);
    r.dims = {static_cast<std::uint32_t>(bytes.size() / 4)};
    r.values.resize(bytes.size() / 4);
    for (std::size_t i = 0; i < r.values.size(); ++i) {
        std::uint32_t word = 0;
        for (int b = 0; b < 4; ++b) word |= std::uint32_t(bytes[4 * i + b]) << (8 * b);
        r.values[i] = std::bit_cast<float>(word);
    }
    return r;
}

inline std::vector<std::uint8_t> record_bytes(const PcswRecord& r) {
    std::vector<std::uint8_t> bytes;
    bytes.reserve(r.values.size() * 4);
    for (float v : r.values) {
        const auto word = std::bit_cast<std::uint32_t>(v);
        for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<std::uint8_t>(word >> (8 * b)));
    }
    return bytes;
}

}  // namespace pcs
