#pragma once

// Finite-difference verification suite: every differentiable op plus both
// end-to-end losses through the full model, at 16x16, in double precision.

#include <functional>
#include <string>
#include <vector>

#include "pcs/gradcheck.hpp"
#include "pcs/losses.hpp"

namespace pcs {

struct GradCheckOutcome {
    std::string name;
    /// Op whose backward is the subject of the check.
    std::string op;
    GradCheckResult result;
    double tolerance = 0.0;
    bool passed() const { return result.max_relative_error <= tolerance; }
};

struct GradSuiteOptions {
    double tolerance = 1e-3;
    double eps = 1e-6;
    std::uint64_t seed = 2024;
    std::size_t size = 16;
};

namespace detail {

/// Uniform in [-1,1] with every |x| >= margin (away from the ReLU kink).
inline Tensor<double> away_from_zero(Shape s, Rng& rng, double margin = 0.05) {
    Tensor<double> t(s);
    for (auto& v : t.data()) {
        do {
            v = rng.uniform(-1.0, 1.0);
        } while (std::abs(v) < margin);
    }
    return t;
}

/// Redraws each 2x2 pooling window until its largest value leads the
/// runner-up by at least `margin`, so +-eps never changes the argmax.
inline Tensor<double> pool_safe(Shape s, Rng& rng, double margin = 0.05) {
    Tensor<double> t(s);
    for (std::size_t b = 0; b < s.n; ++b)
        for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t y = 0; y < s.h; y += 2)
                for (std::size_t x = 0; x < s.w; x += 2) {
                    double v[4], top, second;
                    do {
                        for (auto& e : v) e = rng.uniform(-1.0, 1.0);
                        top = std::max({v[0], v[1], v[2], v[3]});
                        second = -2.0;
                        bool skipped = false;
                        for (double e : v) {
                            if (e == top && !skipped) {
                                skipped = true;
                                continue;
                            }
                            second = std::max(second, e);
                        }
                    } while (top - second < margin);
                    t.at(b, c, y, x) = v[0], t.at(b, c, y, x + 1) = v[1];
                    t.at(b, c, y + 1, x) = v[2], t.at(b, c, y + 1, x + 1) = v[3];
                }
    return t;
}

inline Tensor<double> uniform(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(s);
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

/// Rebinds every weight/bias of a model copy to the given variables, in
/// named() order.
inline ModelParams<double> bind_params(const ModelParams<double>& p, const std::vector<Var<double>>& w) {
    ModelParams<double> q = p;
    std::size_t k = 0;
    auto bind = [&](ConvLayer<double>& l) {
        l.weight = w.at(k++);
        l.bias = w.at(k++);
    };
    bind(q.measurement);
    bind(q.deconv);
    for (auto& b : q.res_blocks) {
        bind(b.conv1);
        bind(b.conv2);
    }
    bind(q.output);
    return q;
}

}  // namespace detail

/// Runs all checks; a FaultInjection active in the caller shows up as the
/// failure of the checks exercising that op.
inline std::vector<GradCheckOutcome> gradient_suite(const GradSuiteOptions& opt = {}) {
    using V = Var<double>;
    using Inputs = std::vector<V>;
    const std::size_t n = opt.size;
    Rng rng(opt.seed);
    std::vector<GradCheckOutcome> out;
    auto run = [&](const std::string& name, const std::string& op, const std::function<V(const Inputs&)>& f,
                   const std::vector<Tensor<double>>& inputs) {
        out.push_back({name, op, grad_check_many(f, inputs, opt.eps), opt.tolerance});
    };

    const auto conv = ConvSpec::square(2, 3, 4, 2, 1);
    run("conv2d", "conv2d", [&](const Inputs& v) { return sum_squares(conv2d(v[0], v[1], v[2], conv)); },
        {detail::uniform(Shape{2, 2, n, n}, rng), detail::uniform(conv.weight_shape(), rng),
         detail::uniform(conv.bias_shape(), rng)});

    const auto deconv = ConvSpec::square(3, 2, 4, 2, 1, true);
    run("conv2d_transposed", "conv2d_transposed",
        [&](const Inputs& v) { return sum_squares(conv2d_transposed(v[0], v[1], v[2], deconv)); },
        {detail::uniform(Shape{2, 3, n / 2, n / 2}, rng), detail::uniform(deconv.weight_shape(), rng),
         detail::uniform(deconv.bias_shape(), rng)});

    run("relu", "relu", [](const Inputs& v) { return sum_squares(relu(v[0])); },
        {detail::away_from_zero(Shape{2, 2, n, n}, rng)});
    run("maxpool2", "maxpool2", [](const Inputs& v) { return sum_squares(maxpool2(v[0])); },
        {detail::pool_safe(Shape{2, 2, n, n}, rng)});
    run("add", "add", [](const Inputs& v) { return sum_squares(add(v[0], v[1])); },
        {detail::uniform(Shape{1, 2, n, n}, rng), detail::uniform(Shape{1, 2, n, n}, rng)});
    run("scale", "scale", [](const Inputs& v) { return sum_squares(scale(v[0], 0.37)); },
        {detail::uniform(Shape{1, 2, n, n}, rng)});
    // sum is linear; squaring the output makes its gradient input-dependent.
    run("sum", "sum",
        [](const Inputs& v) {
            const V s = sum(v[0]);
            return sum_squares(s);
        },
        {detail::uniform(Shape{1, 2, n, n}, rng)});
    run("sum_squares", "sum_squares", [](const Inputs& v) { return sum_squares(v[0]); },
        {detail::uniform(Shape{1, 2, n, n}, rng)});
    run("squared_distance", "squared_distance", [](const Inputs& v) { return squared_distance(v[0], v[1]); },
        {detail::uniform(Shape{2, 1, n, n}, rng), detail::uniform(Shape{2, 1, n, n}, rng)});
    run("replicate_channels", "replicate_channels",
        [](const Inputs& v) { return sum_squares(replicate_channels(v[0], 3)); },
        {detail::uniform(Shape{2, 1, n, n}, rng)});

    // End to end: loss(reconstruct(x), x) with respect to every model weight.
    ModelConfig mc;
    mc.measurement_stride = 4;
    mc.measurement_channels = 2;
    mc.target_mr = 0.125;
    mc.recovery_channels = 3;
    const auto model = build_model<double>(mc, opt.seed + 1);
    const auto image = detail::uniform(Shape{1, 1, n, n}, rng, 0.0, 1.0);
    const auto extractor = random_extractor<double>(opt.seed + 2, 4, 4);
    std::vector<Tensor<double>> weights;
    for (const auto& [name, v] : model.named()) weights.push_back(v.value());
    const V label = V::constant(image);
    run("pixel_loss(model)", "pixel_loss",
        [&](const Inputs& w) { return pixel_loss(reconstruct(detail::bind_params(model, w), label), label); },
        weights);
    run("perceptual_loss(model, pool2)", "perceptual_loss",
        [&](const Inputs& w) {
            return perceptual_loss(extractor, "pool2", reconstruct(detail::bind_params(model, w), label), label);
        },
        weights);
    return out;
}

/// Names accepted by FaultInjection that the suite exercises.
inline std::vector<std::string> fault_injectable_ops() {
    return {"conv2d", "conv2d_transposed", "relu", "maxpool2", "add", "scale",
            "sum", "sum_squares", "squared_distance", "replicate_channels"};
}

}  // namespace pcs
