#pragma once

// Whole-image recovery for arbitrary sizes and channel counts.

#include <algorithm>
#include <string>
#include <string_view>

#include "pcs/model.hpp"

namespace pcs {

enum class PadPolicy { ReflectPadThenCrop, Error };

inline PadPolicy parse_pad_policy(std::string_view s) {
    if (s == "reflect" || s == "reflect-pad-then-crop") return PadPolicy::ReflectPadThenCrop;
    if (s == "error") return PadPolicy::Error;
    throw ConfigError("unknown pad policy '" + std::string(s) + "' (expected reflect-pad-then-crop or error)");
}

/// Mirror index without repeating the edge sample (…2 1 | 0 1 2 … n-1 | n-2…).
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
    if (n == 1) return 0;
    const std::ptrdiff_t period = 2 * std::ptrdiff_t(n) - 2;
    i %= period;
    if (i < 0) i += period;
    return std::size_t(i < std::ptrdiff_t(n) ? i : period - i);
}

template <typename T>
Tensor<T> reflect_pad(const Tensor<T>& img, std::size_t top, std::size_t bottom, std::size_t left, std::size_t right) {
    const Shape& s = img.shape();
    Tensor<T> out(Shape{s.n, s.c, s.h + top + bottom, s.w + left + right});
    for (std::size_t b = 0; b < s.n; ++b) {
        for (std::size_t c = 0; c < s.c; ++c) {
            for (std::size_t y = 0; y < out.shape().h; ++y) {
                const std::size_t sy = reflect_index(std::ptrdiff_t(y) - std::ptrdiff_t(top), s.h);
                for (std::size_t x = 0; x < out.shape().w; ++x) {
                    const std::size_t sx = reflect_index(std::ptrdiff_t(x) - std::ptrdiff_t(left), s.w);
                    out.at(b, c, y, x) = img.at(b, c, sy, sx);
                }
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> crop(const Tensor<T>& img, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
    const Shape& s = img.shape();
    if (top + h > s.h || left + w > s.w) throw GeometryError("crop window exceeds image " + s.str());
    Tensor<T> out(Shape{s.n, s.c, h, w});
    for (std::size_t b = 0; b < s.n; ++b) {
        for (std::size_t c = 0; c < s.c; ++c) {
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t x = 0; x < w; ++x) out.at(b, c, y, x) = img.at(b, c, top + y, left + x);
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> clamp01(Tensor<T> img) {
    for (auto& v : img.data()) v = std::clamp(v, T(0), T(1));
    return img;
}

/// Channel `c` of sample 0 as a (1, 1, h, w) tensor.
template <typename T>
Tensor<T> channel(const Tensor<T>& img, std::size_t c) {
    const Shape& s = img.shape();
    auto p = img.plane(0, c);
    return Tensor<T>(Shape{1, 1, s.h, s.w}, std::vector<T>(p.begin(), p.end()));
}

/// Measures and recovers a (1, c, h, w) image channel by channel. Sizes not
/// divisible by the stride are reflect-padded to the next multiple (split
/// evenly, remainder bottom/right) and the result center-cropped back, or
/// rejected under PadPolicy::Error. Output is clamped to [0,1].
template <typename T>
Tensor<T> recover_image(const ModelParams<T>& p, const Tensor<T>& img,
                        PadPolicy policy = PadPolicy::ReflectPadThenCrop) {
    const Shape& s = img.shape();
    const std::size_t stride = p.config.measurement_stride;
    const std::size_t ph = (stride - s.h % stride) % stride;
    const std::size_t pw = (stride - s.w % stride) % stride;
    if ((ph || pw) && policy == PadPolicy::Error) {
        throw GeometryError("image " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                            " is not divisible by stride " + std::to_string(stride));
    }
    Tensor<T> out(Shape{1, s.c, s.h, s.w});
    for (std::size_t c = 0; c < s.c; ++c) {
        Tensor<T> plane = channel(img, c);
        if (ph || pw) plane = reflect_pad(plane, ph / 2, ph - ph / 2, pw / 2, pw - pw / 2);
        Tensor<T> rec = reconstruct(p, plane);
        if (ph || pw) rec = crop(rec, ph / 2, pw / 2, s.h, s.w);
        auto src = rec.plane(0, 0);
        std::copy(src.begin(), src.end(), out.plane(0, c).begin());
    }
    return clamp01(std::move(out));
}

}  // namespace pcs
