#pragma once

// Raw (non-differentiable) convolution kernels. Both directions go through
// im2col / col2im and a single matrix product per sample, so the reduction
// order is fixed for a given shape.

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pcs/error.hpp"
#include "pcs/tensor.hpp"

namespace pcs {

struct ConvSpec {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t kernel_h = 1;
    std::size_t kernel_w = 1;
    std::size_t stride_h = 1;
    std::size_t stride_w = 1;
    std::size_t pad_h = 0;
    std::size_t pad_w = 0;
    bool transposed = false;

    static ConvSpec square(std::size_t in_c, std::size_t out_c, std::size_t kernel, std::size_t stride,
                           std::size_t pad, bool transposed = false) {
        return {in_c, out_c, kernel, kernel, stride, stride, pad, pad, transposed};
    }

    /// Weight layout: (out, in, kh, kw) for convolution, (in, out, kh, kw) for
    /// the transposed operator.
    Shape weight_shape() const {
        return transposed ? Shape{in_channels, out_channels, kernel_h, kernel_w}
                          : Shape{out_channels, in_channels, kernel_h, kernel_w};
    }
    Shape bias_shape() const { return {out_channels, 1, 1, 1}; }

    bool operator==(const ConvSpec&) const = default;
};

namespace detail {

inline std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad,
                                   const char* axis) {
    if (stride == 0 || kernel == 0) throw ConfigError("conv2d: kernel and stride must be >= 1");
    const std::size_t padded = in + 2 * pad;
    if (padded < kernel) {
        throw GeometryError(std::string("conv2d: ") + axis + " extent " + std::to_string(in) + " + 2*pad " +
                            std::to_string(pad) + " is smaller than kernel " + std::to_string(kernel));
    }
    if ((padded - kernel) % stride != 0) {
        throw GeometryError(std::string("conv2d: ") + axis + " extent " + std::to_string(in) + " with pad " +
                            std::to_string(pad) + ", kernel " + std::to_string(kernel) +
                            " is not divisible by stride " + std::to_string(stride));
    }
    return (padded - kernel) / stride + 1;
}

inline std::size_t deconv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad,
                                     const char* axis) {
    if (stride == 0 || kernel == 0) throw ConfigError("conv2d_transposed: kernel and stride must be >= 1");
    const std::size_t full = (in - 1) * stride + kernel;
    if (full <= 2 * pad) {
        throw GeometryError(std::string("conv2d_transposed: ") + axis + " output would be empty");
    }
    return full - 2 * pad;
}

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

/// Geometry of a strided window sweep over an (h, w) image producing (oh, ow).
struct Window {
    std::size_t channels, h, w, oh, ow, kh, kw, sh, sw, ph, pw;
    std::size_t rows() const { return channels * kh * kw; }
    std::size_t cols() const { return oh * ow; }
};

/// cols[(c*kh + ky)*kw + kx][oy*ow + ox] = img[c][oy*sh - ph + ky][ox*sw - pw + kx] (0 outside).
template <typename T>
void im2col(const T* img, const Window& g, T* cols) {
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                T* row = cols + ((c * g.kh + ky) * g.kw + kx) * g.cols();
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const std::ptrdiff_t y = std::ptrdiff_t(oy * g.sh + ky) - std::ptrdiff_t(g.ph);
                    T* out = row + oy * g.ow;
                    if (y < 0 || y >= std::ptrdiff_t(g.h)) {
                        std::fill(out, out + g.ow, T(0));
                        continue;
                    }
                    const T* src = img + (c * g.h + std::size_t(y)) * g.w;
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const std::ptrdiff_t x = std::ptrdiff_t(ox * g.sw + kx) - std::ptrdiff_t(g.pw);
                        out[ox] = (x < 0 || x >= std::ptrdiff_t(g.w)) ? T(0) : src[x];
                    }
                }
            }
        }
    }
}

/// Adjoint of im2col: scatter-add columns back into the image.
template <typename T>
void col2im(const T* cols, const Window& g, T* img) {
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const T* row = cols + ((c * g.kh + ky) * g.kw + kx) * g.cols();
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const std::ptrdiff_t y = std::ptrdiff_t(oy * g.sh + ky) - std::ptrdiff_t(g.ph);
                    if (y < 0 || y >= std::ptrdiff_t(g.h)) continue;
                    T* dst = img + (c * g.h + std::size_t(y)) * g.w;
                    const T* in = row + oy * g.ow;
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const std::ptrdiff_t x = std::ptrdiff_t(ox * g.sw + kx) - std::ptrdiff_t(g.pw);
                        if (x >= 0 && x < std::ptrdiff_t(g.w)) dst[x] += in[ox];
                    }
                }
            }
        }
    }
}

inline void check_conv_args(const Shape& in, const Shape& weights, const Shape& bias, const ConvSpec& spec,
                            bool transposed, const char* op) {
    if (spec.transposed != transposed) {
        throw ContractError(std::string(op) + ": ConvSpec.transposed must be " + (transposed ? "true" : "false"));
    }
    if (!(weights == spec.weight_shape())) {
        throw ShapeError(std::string(op) + ": weights " + weights.str() + " do not match spec " +
                         spec.weight_shape().str());
    }
    if (!(bias == spec.bias_shape())) {
        throw ShapeError(std::string(op) + ": bias " + bias.str() + " does not match " + spec.bias_shape().str());
    }
    if (in.c != spec.in_channels) {
        throw ShapeError(std::string(op) + ": input has " + std::to_string(in.c) + " channels, spec expects " +
                         std::to_string(spec.in_channels));
    }
}

/// Window for the forward convolution on `in`.
inline Window conv_window(const Shape& in, const ConvSpec& spec) {
    const std::size_t oh = conv_out_extent(in.h, spec.kernel_h, spec.stride_h, spec.pad_h, "height");
    const std::size_t ow = conv_out_extent(in.w, spec.kernel_w, spec.stride_w, spec.pad_w, "width");
    return {spec.in_channels, in.h, in.w, oh, ow, spec.kernel_h, spec.kernel_w,
            spec.stride_h,    spec.stride_w, spec.pad_h, spec.pad_w};
}

/// Window for the transposed operator: the sweep runs over its *output*.
inline Window deconv_window(const Shape& in, const ConvSpec& spec) {
    const std::size_t oh = deconv_out_extent(in.h, spec.kernel_h, spec.stride_h, spec.pad_h, "height");
    const std::size_t ow = deconv_out_extent(in.w, spec.kernel_w, spec.stride_w, spec.pad_w, "width");
    return {spec.out_channels, oh,  ow,           in.h,       in.w,      spec.kernel_h,
            spec.kernel_w,     spec.stride_h, spec.stride_w, spec.pad_h, spec.pad_w};
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias, const ConvSpec& spec) {
    using namespace detail;
    check_conv_args(input.shape(), weights.shape(), bias.shape(), spec, false, "conv2d");
    const Window g = conv_window(input.shape(), spec);
    const Shape& s = input.shape();
    Tensor<T> out(Shape{s.n, spec.out_channels, g.oh, g.ow});
    Buffer<T> cols(g.rows() * g.cols());
    ConstMatMap<T> wmat(weights.ptr(), spec.out_channels, g.rows());
    ConstMatMap<T> cmat(cols.data(), g.rows(), g.cols());
    for (std::size_t b = 0; b < s.n; ++b) {
        im2col(input.ptr() + input.offset(b, 0, 0, 0), g, cols.data());
        MatMap<T> omat(out.ptr() + out.offset(b, 0, 0, 0), spec.out_channels, g.cols());
        omat.noalias() = wmat * cmat;
        for (std::size_t o = 0; o < spec.out_channels; ++o) omat.row(o).array() += bias[o];
    }
    return out;
}

/// Gradient of conv2d w.r.t. its input (equivalently the transposed operator without bias).
template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& grad_out, const Tensor<T>& weights, const Shape& input_shape,
                                const ConvSpec& spec) {
    using namespace detail;
    const Window g = conv_window(input_shape, spec);
    Tensor<T> grad_in(input_shape);
    Buffer<T> cols(g.rows() * g.cols());
    ConstMatMap<T> wmat(weights.ptr(), spec.out_channels, g.rows());
    MatMap<T> cmat(cols.data(), g.rows(), g.cols());
    for (std::size_t b = 0; b < input_shape.n; ++b) {
        ConstMatMap<T> gmat(grad_out.ptr() + grad_out.offset(b, 0, 0, 0), spec.out_channels, g.cols());
        cmat.noalias() = wmat.transpose() * gmat;
        col2im(cols.data(), g, grad_in.ptr() + grad_in.offset(b, 0, 0, 0));
    }
    return grad_in;
}

/// Accumulates dL/dW and dL/db of conv2d into grad_w / grad_b.
template <typename T>
void conv2d_backward_params(const Tensor<T>& input, const Tensor<T>& grad_out, const ConvSpec& spec,
                            Tensor<T>* grad_w, Tensor<T>* grad_b) {
    using namespace detail;
    const Window g = conv_window(input.shape(), spec);
    Buffer<T> cols(g.rows() * g.cols());
    ConstMatMap<T> cmat(cols.data(), g.rows(), g.cols());
    for (std::size_t b = 0; b < input.shape().n; ++b) {
        ConstMatMap<T> gmat(grad_out.ptr() + grad_out.offset(b, 0, 0, 0), spec.out_channels, g.cols());
        if (grad_w) {
            im2col(input.ptr() + input.offset(b, 0, 0, 0), g, cols.data());
            MatMap<T> wg(grad_w->ptr(), spec.out_channels, g.rows());
            wg.noalias() += gmat * cmat.transpose();
        }
        if (grad_b) {
            for (std::size_t o = 0; o < spec.out_channels; ++o) (*grad_b)[o] += gmat.row(o).sum();
        }
    }
}

template <typename T>
Tensor<T> conv2d_transposed(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias,
                            const ConvSpec& spec) {
    using namespace detail;
    check_conv_args(input.shape(), weights.shape(), bias.shape(), spec, true, "conv2d_transposed");
    const Window g = deconv_window(input.shape(), spec);
    const Shape& s = input.shape();
    Tensor<T> out(Shape{s.n, spec.out_channels, g.h, g.w});
    Buffer<T> cols(g.rows() * g.cols());
    ConstMatMap<T> wmat(weights.ptr(), spec.in_channels, g.rows());
    MatMap<T> cmat(cols.data(), g.rows(), g.cols());
    for (std::size_t b = 0; b < s.n; ++b) {
        ConstMatMap<T> xmat(input.ptr() + input.offset(b, 0, 0, 0), spec.in_channels, g.cols());
        cmat.noalias() = wmat.transpose() * xmat;
        T* dst = out.ptr() + out.offset(b, 0, 0, 0);
        col2im(cols.data(), g, dst);
        for (std::size_t o = 0; o < spec.out_channels; ++o) {
            T* p = dst + o * g.h * g.w;
            for (std::size_t i = 0; i < g.h * g.w; ++i) p[i] += bias[o];
        }
    }
    return out;
}

template <typename T>
Tensor<T> conv2d_transposed_backward_input(const Tensor<T>& grad_out, const Tensor<T>& weights,
                                           const Shape& input_shape, const ConvSpec& spec) {
    using namespace detail;
    const Window g = deconv_window(input_shape, spec);
    Tensor<T> grad_in(input_shape);
    Buffer<T> cols(g.rows() * g.cols());
    ConstMatMap<T> wmat(weights.ptr(), spec.in_channels, g.rows());
    ConstMatMap<T> cmat(cols.data(), g.rows(), g.cols());
    for (std::size_t b = 0; b < input_shape.n; ++b) {
        im2col(grad_out.ptr() + grad_out.offset(b, 0, 0, 0), g, cols.data());
        MatMap<T> gi(grad_in.ptr() + grad_in.offset(b, 0, 0, 0), spec.in_channels, g.cols());
        gi.noalias() = wmat * cmat;
    }
    return grad_in;
}

template <typename T>
void conv2d_transposed_backward_params(const Tensor<T>& input, const Tensor<T>& grad_out, const ConvSpec& spec,
                                       Tensor<T>* grad_w, Tensor<T>* grad_b) {
    using namespace detail;
    const Window g = deconv_window(input.shape(), spec);
    Buffer<T> cols(g.rows() * g.cols());
    ConstMatMap<T> cmat(cols.data(), g.rows(), g.cols());
    for (std::size_t b = 0; b < input.shape().n; ++b) {
        if (grad_w) {
            im2col(grad_out.ptr() + grad_out.offset(b, 0, 0, 0), g, cols.data());
            ConstMatMap<T> xmat(input.ptr() + input.offset(b, 0, 0, 0), spec.in_channels, g.cols());
            MatMap<T> wg(grad_w->ptr(), spec.in_channels, g.rows());
            wg.noalias() += xmat * cmat.transpose();
        }
        if (grad_b) {
            for (std::size_t o = 0; o < spec.out_channels; ++o) {
                T acc = 0;
                for (T v : grad_out.plane(b, o)) acc += v;
                (*grad_b)[o] += acc;
            }
        }
    }
}

}  // namespace pcs
