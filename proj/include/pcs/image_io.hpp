#pragma once

// Binary netpbm: P5 (gray) and P6 (RGB), maxval 255 only.

#include <cctype>
#include <cmath>
#include <cstdint>
#include <string>

#include "pcs/pcsw.hpp"
#include "pcs/tensor.hpp"

namespace pcs {

/// 8-bit value for a [0,1] sample: round(v * 255), clamped.
inline std::uint8_t quantize(double v) {
    const double q = std::round(v * 255.0);
    return static_cast<std::uint8_t>(q < 0.0 ? 0.0 : (q > 255.0 ? 255.0 : q));
}

namespace detail {

class HeaderParser {
public:
    HeaderParser(const std::string& bytes, const std::string& path) : b_(bytes), path_(path) {}

    std::size_t pos() const { return pos_; }
    std::size_t last_start() const { return last_start_; }

    /// Skips whitespace and '#' comments, then reads an unsigned decimal.
    std::size_t number(const char* what) {
        skip_space_and_comments();
        const std::size_t start = last_start_ = pos_;
        std::size_t v = 0;
        while (pos_ < b_.size() && std::isdigit(static_cast<unsigned char>(b_[pos_]))) {
            v = v * 10 + std::size_t(b_[pos_] - '0');
            if (v > (1u << 24)) throw FormatError(path_ + ": " + what + " out of range", start);
            ++pos_;
        }
        if (pos_ == start) throw FormatError(path_ + ": expected " + what, start);
        return v;
    }

    /// Exactly one whitespace byte separates the header from the raster.
    void end_of_header() {
        if (pos_ >= b_.size() || !std::isspace(static_cast<unsigned char>(b_[pos_]))) {
            throw FormatError(path_ + ": expected whitespace after maxval", pos_);
        }
        ++pos_;
    }

private:
    void skip_space_and_comments() {
        while (pos_ < b_.size()) {
            const char ch = b_[pos_];
            if (ch == '#') {
                while (pos_ < b_.size() && b_[pos_] != '\n' && b_[pos_] != '\r') ++pos_;
            } else if (std::isspace(static_cast<unsigned char>(ch))) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    const std::string& b_;
    const std::string& path_;
    std::size_t pos_ = 2;
    std::size_t last_start_ = 2;
};

}  // namespace detail

/// Decodes a P5/P6 file into a (1, 1|3, h, w) tensor with values in [0,1].
template <typename T = float>
Tensor<T> decode_image(const std::string& bytes, const std::string& path = "<memory>") {
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
        throw FormatError(path + ": not a binary PGM (P5) or PPM (P6) file", 0);
    }
    const std::size_t channels = bytes[1] == '5' ? 1 : 3;
    detail::HeaderParser hp(bytes, path);
    const std::size_t w = hp.number("width");
    const std::size_t h = hp.number("height");
    const std::size_t maxval = hp.number("maxval");
    if (maxval != 255) {
        throw FormatError(path + ": maxval " + std::to_string(maxval) + " unsupported (only 255)", hp.last_start());
    }
    hp.end_of_header();
    if (w == 0 || h == 0) throw FormatError(path + ": zero image size", hp.pos());
    const std::size_t need = w * h * channels;
    if (bytes.size() - hp.pos() < need) {
        throw FormatError(path + ": truncated raster, expected " + std::to_string(need) + " bytes", bytes.size());
    }
    Tensor<T> img(Shape{1, channels, h, w});
    const auto* raster = reinterpret_cast<const unsigned char*>(bytes.data() + hp.pos());
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < channels; ++c) {
                img.at(0, c, y, x) = T(raster[(y * w + x) * channels + c]) / T(255);
            }
        }
    }
    return img;
}

template <typename T = float>
Tensor<T> read_image(const std::string& path) {
    return decode_image<T>(detail::read_file_bytes(path), path);
}

/// Canonical encoding "P5\n<w> <h>\n255\n" + raster. Uses sample 0 of a
/// 1- or 3-channel tensor.
template <typename T>
std::string encode_image(const Tensor<T>& img) {
    const Shape& s = img.shape();
    if (s.c != 1 && s.c != 3) throw ShapeError("write_image: need 1 or 3 channels, got " + s.str());
    std::string out = (s.c == 1 ? "P5\n" : "P6\n") + std::to_string(s.w) + " " + std::to_string(s.h) + "\n255\n";
    out.reserve(out.size() + s.c * s.plane());
    for (std::size_t y = 0; y < s.h; ++y) {
        for (std::size_t x = 0; x < s.w; ++x) {
            for (std::size_t c = 0; c < s.c; ++c) out.push_back(static_cast<char>(quantize(double(img.at(0, c, y, x)))));
        }
    }
    return out;
}

template <typename T>
void write_image(const Tensor<T>& img, const std::string& path) {
    detail::write_file_bytes(path, encode_image(img));
}

/// BT.601 luma of a 3-channel image; single-channel input is returned as is.
template <typename T>
Tensor<T> to_luma(const Tensor<T>& img) {
    const Shape& s = img.shape();
    if (s.c == 1) return img;
    if (s.c != 3) throw ShapeError("to_luma: need 1 or 3 channels, got " + s.str());
    Tensor<T> out(Shape{s.n, 1, s.h, s.w});
    for (std::size_t b = 0; b < s.n; ++b) {
        auto r = img.plane(b, 0), g = img.plane(b, 1), bl = img.plane(b, 2);
        auto dst = out.plane(b, 0);
        for (std::size_t i = 0; i < dst.size(); ++i) {
            dst[i] = T(0.299 * double(r[i]) + 0.587 * double(g[i]) + 0.114 * double(bl[i]));
        }
    }
    return out;
}

}  // namespace pcs
