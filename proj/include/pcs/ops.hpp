#pragma once

// Differentiable operations over Var. Op names double as fault-injection
// targets for the gradient checker.

#include <cstddef>
#include <limits>
#include <memory>
#include <vector>

#include "pcs/autodiff.hpp"
#include "pcs/conv.hpp"

namespace pcs {

namespace detail {

template <typename T>
void push_grad(detail::Node<T>& parent, Tensor<T>&& g, const char* op) {
    if (!parent.requires_grad) return;
    apply_fault(op, g);
    parent.accumulate(std::move(g));
}

}  // namespace detail

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weights, const Var<T>& bias, const ConvSpec& spec) {
    Tensor<T> out = conv2d(x.value(), weights.value(), bias.value(), spec);
    return Var<T>::make(std::move(out), "conv2d", {x, weights, bias}, [spec](detail::Node<T>& self) {
        auto& xin = *self.parents[0];
        auto& w = *self.parents[1];
        auto& b = *self.parents[2];
        if (xin.requires_grad) {
            detail::push_grad(xin, conv2d_backward_input(*self.grad, w.value, xin.value.shape(), spec), "conv2d");
        }
        if (w.requires_grad || b.requires_grad) {
            Tensor<T> gw(w.value.shape());
            Tensor<T> gb(b.value.shape());
            conv2d_backward_params(xin.value, *self.grad, spec, w.requires_grad ? &gw : nullptr,
                                   b.requires_grad ? &gb : nullptr);
            detail::push_grad(w, std::move(gw), "conv2d");
            detail::push_grad(b, std::move(gb), "conv2d");
        }
    });
}

template <typename T>
Var<T> conv2d_transposed(const Var<T>& x, const Var<T>& weights, const Var<T>& bias, const ConvSpec& spec) {
    Tensor<T> out = conv2d_transposed(x.value(), weights.value(), bias.value(), spec);
    return Var<T>::make(std::move(out), "conv2d_transposed", {x, weights, bias}, [spec](detail::Node<T>& self) {
        auto& xin = *self.parents[0];
        auto& w = *self.parents[1];
        auto& b = *self.parents[2];
        if (xin.requires_grad) {
            detail::push_grad(xin, conv2d_transposed_backward_input(*self.grad, w.value, xin.value.shape(), spec),
                              "conv2d_transposed");
        }
        if (w.requires_grad || b.requires_grad) {
            Tensor<T> gw(w.value.shape());
            Tensor<T> gb(b.value.shape());
            conv2d_transposed_backward_params(xin.value, *self.grad, spec, w.requires_grad ? &gw : nullptr,
                                              b.requires_grad ? &gb : nullptr);
            detail::push_grad(w, std::move(gw), "conv2d_transposed");
            detail::push_grad(b, std::move(gb), "conv2d_transposed");
        }
    });
}

template <typename T>
Tensor<T> relu(Tensor<T> x) {
    for (auto& v : x.data()) v = v > T(0) ? v : T(0);
    return x;
}

/// Subgradient at exactly 0 is 0.
template <typename T>
Var<T> relu(const Var<T>& x) {
    return Var<T>::make(relu(x.value()), "relu", {x}, [](detail::Node<T>& self) {
        auto& in = *self.parents[0];
        Tensor<T> g = *self.grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!(in.value[i] > T(0))) g[i] = T(0);
        }
        detail::push_grad(in, std::move(g), "relu");
    });
}

namespace detail {

inline void check_poolable(const Shape& s) {
    if (s.h % 2 != 0 || s.w % 2 != 0) {
        throw GeometryError("maxpool2: spatial size " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                            " is not even");
    }
}

/// 2x2/stride-2 max; `argmax` receives the flat input index per output
/// element, first occurrence in row-major order on ties.
template <typename T>
Tensor<T> maxpool2_forward(const Tensor<T>& x, std::vector<std::size_t>* argmax) {
    const Shape& s = x.shape();
    check_poolable(s);
    Tensor<T> out(Shape{s.n, s.c, s.h / 2, s.w / 2});
    if (argmax) argmax->resize(out.size());
    std::size_t o = 0;
    for (std::size_t b = 0; b < s.n; ++b) {
        for (std::size_t c = 0; c < s.c; ++c) {
            for (std::size_t y = 0; y < s.h / 2; ++y) {
                for (std::size_t xx = 0; xx < s.w / 2; ++xx, ++o) {
                    std::size_t best = x.offset(b, c, 2 * y, 2 * xx);
                    for (std::size_t dy = 0; dy < 2; ++dy) {
                        for (std::size_t dx = 0; dx < 2; ++dx) {
                            const std::size_t i = x.offset(b, c, 2 * y + dy, 2 * xx + dx);
                            if (x[i] > x[best]) best = i;
                        }
                    }
                    out[o] = x[best];
                    if (argmax) (*argmax)[o] = best;
                }
            }
        }
    }
    return out;
}

}  // namespace detail

template <typename T>
Tensor<T> maxpool2(const Tensor<T>& x) {
    return detail::maxpool2_forward(x, nullptr);
}

template <typename T>
Var<T> maxpool2(const Var<T>& x) {
    auto argmax = std::make_shared<std::vector<std::size_t>>();
    Tensor<T> out = detail::maxpool2_forward(x.value(), argmax.get());
    return Var<T>::make(std::move(out), "maxpool2", {x}, [argmax](detail::Node<T>& self) {
        auto& in = *self.parents[0];
        Tensor<T> g(in.value.shape());
        for (std::size_t o = 0; o < argmax->size(); ++o) g[(*argmax)[o]] += (*self.grad)[o];
        detail::push_grad(in, std::move(g), "maxpool2");
    });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a.shape(), b.shape(), "add");
    return Var<T>::make(a.value() + b.value(), "add", {a, b}, [](detail::Node<T>& self) {
        detail::push_grad(*self.parents[0], Tensor<T>(*self.grad), "add");
        detail::push_grad(*self.parents[1], Tensor<T>(*self.grad), "add");
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
    return Var<T>::make(a.value() * factor, "scale", {a}, [factor](detail::Node<T>& self) {
        detail::push_grad(*self.parents[0], (*self.grad) * factor, "scale");
    });
}

/// Scalar sum of all elements.
template <typename T>
Var<T> sum(const Var<T>& a) {
    return Var<T>::make(Tensor<T>::scalar(T(pcs::sum(a.value()))), "sum", {a}, [](detail::Node<T>& self) {
        auto& in = *self.parents[0];
        detail::push_grad(in, Tensor<T>(in.value.shape(), (*self.grad)[0]), "sum");
    });
}

/// Scalar sum of squares.
template <typename T>
Var<T> sum_squares(const Var<T>& a) {
    return Var<T>::make(Tensor<T>::scalar(T(dot(a.value(), a.value()))), "sum_squares", {a},
                        [](detail::Node<T>& self) {
                            auto& in = *self.parents[0];
                            detail::push_grad(in, in.value * T(2 * (*self.grad)[0]), "sum_squares");
                        });
}

/// (1/n_b) * sum ||a - b||^2 over the batch. Gradient flows to both operands;
/// detach one to make it a label.
template <typename T>
Var<T> squared_distance(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a.shape(), b.shape(), "squared_distance");
    Tensor<T> diff = a.value() - b.value();
    const double batch = double(a.shape().n);
    const T value = T(dot(diff, diff) / batch);
    auto shared_diff = std::make_shared<Tensor<T>>(std::move(diff));
    return Var<T>::make(Tensor<T>::scalar(value), "squared_distance", {a, b},
                        [shared_diff, batch](detail::Node<T>& self) {
                            const T k = T(2.0 * double((*self.grad)[0]) / batch);
                            if (self.parents[0]->requires_grad) {
                                detail::push_grad(*self.parents[0], (*shared_diff) * k, "squared_distance");
                            }
                            if (self.parents[1]->requires_grad) {
                                detail::push_grad(*self.parents[1], (*shared_diff) * T(-k), "squared_distance");
                            }
                        });
}

/// Tiles a single-channel tensor into `channels` identical channels.
template <typename T>
Var<T> replicate_channels(const Var<T>& a, std::size_t channels) {
    const Shape& s = a.shape();
    if (s.c != 1) throw ShapeError("replicate_channels: input must have 1 channel, got " + s.str());
    Tensor<T> out(Shape{s.n, channels, s.h, s.w});
    for (std::size_t b = 0; b < s.n; ++b) {
        auto src = a.value().plane(b, 0);
        for (std::size_t c = 0; c < channels; ++c) std::copy(src.begin(), src.end(), out.plane(b, c).begin());
    }
    return Var<T>::make(std::move(out), "replicate_channels", {a}, [channels](detail::Node<T>& self) {
        auto& in = *self.parents[0];
        Tensor<T> g(in.value.shape());
        for (std::size_t b = 0; b < g.shape().n; ++b) {
            auto dst = g.plane(b, 0);
            for (std::size_t c = 0; c < channels; ++c) {
                auto src = self.grad->plane(b, c);
                for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
            }
        }
        detail::push_grad(in, std::move(g), "replicate_channels");
    });
}

}  // namespace pcs
