#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <new>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pcs/error.hpp"

namespace pcs {

/// (batch, channels, height, width). Every extent is at least 1.
struct Shape {
    std::size_t n = 1;
    std::size_t c = 1;
    std::size_t h = 1;
    std::size_t w = 1;

    constexpr std::size_t size() const noexcept { return n * c * h * w; }
    constexpr std::size_t plane() const noexcept { return h * w; }
    constexpr bool operator==(const Shape&) const = default;

    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
               std::to_string(w) + ")";
    }
};

inline constexpr Shape kScalarShape{1, 1, 1, 1};

/// 64-byte aligned storage. Vectorized kernels peel loops by address, so a
/// fixed base alignment keeps their summation order, and thus results,
/// independent of where the heap happens to place a buffer.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept {
        return true;
    }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

/// Dense row-major (b, c, h, w) array. Plain value type; see Var for the
/// differentiable handle.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.size(), fill) {
        check_extents();
    }

    Tensor(Shape shape, const std::vector<T>& data) : shape_(shape), data_(data.begin(), data.end()) {
        check_extents();
        if (data_.size() != shape_.size()) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_.str());
        }
    }

    static Tensor scalar(T v) { return Tensor(kScalarShape, v); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    T* ptr() noexcept { return data_.data(); }
    const T* ptr() const noexcept { return data_.data(); }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    std::size_t offset(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const noexcept {
        return ((b * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }
    T& at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) noexcept {
        return data_[offset(b, c, y, x)];
    }
    const T& at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const noexcept {
        return data_[offset(b, c, y, x)];
    }

    /// Contiguous (h, w) plane of sample b, channel c.
    std::span<T> plane(std::size_t b, std::size_t c) noexcept {
        return std::span<T>(data_).subspan(offset(b, c, 0, 0), shape_.plane());
    }
    std::span<const T> plane(std::size_t b, std::size_t c) const noexcept {
        return std::span<const T>(data_).subspan(offset(b, c, 0, 0), shape_.plane());
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
        return Tensor<U>(shape_, std::move(out));
    }

    bool operator==(const Tensor&) const = default;

private:
    void check_extents() const {
        if (shape_.n == 0 || shape_.c == 0 || shape_.h == 0 || shape_.w == 0) {
            throw ShapeError("tensor extents must be >= 1, got " + shape_.str());
        }
    }

    Shape shape_{};
    Buffer<T> data_ = Buffer<T>(1, T(0));
};

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
    if (!(a == b)) {
        throw ShapeError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
    }
}

/// Same shape and same bytes (distinguishes -0/+0 and NaN payloads).
template <typename T>
bool bit_identical(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape() == b.shape() && std::memcmp(a.ptr(), b.ptr(), a.size() * sizeof(T)) == 0;
}

template <typename T>
Tensor<T>& operator+=(Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "add");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    return a;
}

template <typename T>
Tensor<T> operator+(Tensor<T> a, const Tensor<T>& b) {
    a += b;
    return a;
}

template <typename T>
Tensor<T> operator-(Tensor<T> a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "subtract");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] -= b[i];
    return a;
}

template <typename T>
Tensor<T> operator*(Tensor<T> a, T s) {
    for (auto& v : a.data()) v *= s;
    return a;
}

/// Sequential row-major inner product, accumulated in double.
template <typename T>
double dot(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "dot");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += double(a[i]) * double(b[i]);
    return acc;
}

template <typename T>
double sum(const Tensor<T>& a) {
    double acc = 0.0;
    for (T v : a.data()) acc += double(v);
    return acc;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    return m;
}

}  // namespace pcs
