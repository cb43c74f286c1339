#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "pcs/autodiff.hpp"

namespace pcs {

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t worst_input = 0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

/// Compares backward() against central differences for every coordinate of
/// every input. Error per coordinate is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
inline GradCheckResult grad_check_many(
    const std::function<Var<double>(const std::vector<Var<double>>&)>& f,
    const std::vector<Tensor<double>>& inputs, double eps = 1e-6) {
    std::vector<Var<double>> vars;
    vars.reserve(inputs.size());
    for (const auto& t : inputs) vars.push_back(Var<double>::parameter(t));
    backward(f(vars));

    std::vector<Tensor<double>> analytic;
    for (const auto& v : vars) analytic.push_back(v.has_grad() ? v.grad() : Tensor<double>(v.shape()));

    auto evaluate = [&](const std::vector<Tensor<double>>& point) {
        std::vector<Var<double>> c;
        c.reserve(point.size());
        for (const auto& t : point) c.push_back(Var<double>::constant(t));
        return f(c).value()[0];
    };

    GradCheckResult result;
    std::vector<Tensor<double>> point = inputs;
    for (std::size_t k = 0; k < point.size(); ++k) {
        for (std::size_t i = 0; i < point[k].size(); ++i) {
            const double orig = point[k][i];
            point[k][i] = orig + eps;
            const double up = evaluate(point);
            point[k][i] = orig - eps;
            const double down = evaluate(point);
            point[k][i] = orig;
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic[k][i];
            const double err =
                std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            if (err > result.max_relative_error) {
                result = {err, k, i, a, numeric};
            }
        }
    }
    return result;
}

/// Single-input form; returns the maximum relative error.
inline double grad_check(const std::function<Var<double>(const Var<double>&)>& f, const Tensor<double>& x,
                         double eps = 1e-6) {
    return grad_check_many([&](const std::vector<Var<double>>& v) { return f(v[0]); }, {x}, eps)
        .max_relative_error;
}

}  // namespace pcs
