#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pcs/gradcheck.hpp"
#include "pcs/ops.hpp"

namespace pcs {
namespace {

using VarD = Var<double>;

Tensor<double> away_from_zero(Shape s, Rng& rng, double margin = 0.05) {
    Tensor<double> t(s);
    for (auto& v : t.data()) {
        do {
            v = rng.uniform(-1.0, 1.0);
        } while (std::abs(v) < margin);
    }
    return t;
}

TEST(Backward, SumGivesOnes) {
    auto x = VarD::parameter(Tensor<double>(Shape{2, 3, 4, 5}, 0.3));
    backward(sum(x));
    for (double g : x.grad().data()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, RejectsNonScalar) {
    auto x = VarD::parameter(Tensor<double>(Shape{1, 1, 2, 2}));
    EXPECT_THROW(backward(relu(x)), ContractError);
}

TEST(Backward, ReluGradient) {
    auto x = VarD::parameter(Tensor<double>(Shape{1, 1, 1, 3}, {-1, 2, 0}));
    backward(sum(relu(x)));
    EXPECT_EQ(x.grad()[0], 0.0);
    EXPECT_EQ(x.grad()[1], 1.0);
    EXPECT_EQ(x.grad()[2], 0.0);  // exactly at the kink
}

TEST(Backward, MaxPoolRoutesToArgmax) {
    auto x = VarD::parameter(Tensor<double>(Shape{1, 1, 2, 2}, {1, 2, 3, 4}));
    backward(sum(maxpool2(x)));
    EXPECT_EQ(x.grad(), (Tensor<double>(Shape{1, 1, 2, 2}, {0, 0, 0, 1})));
}

TEST(Backward, MaxPoolTieTakesFirst) {
    auto x = VarD::parameter(Tensor<double>(Shape{1, 1, 2, 2}, 5.0));
    backward(sum(maxpool2(x)));
    EXPECT_EQ(x.grad(), (Tensor<double>(Shape{1, 1, 2, 2}, {1, 0, 0, 0})));
}

TEST(Add, Identities) {
    Rng rng(1);
    const auto x = oracle::random_tensor<double>(Shape{1, 2, 3, 3}, rng);
    EXPECT_EQ(add(VarD::constant(x), VarD::constant(Tensor<double>(x.shape()))).value(), x);
    const auto cancelled = add(VarD::constant(x), VarD::constant(x * -1.0));
    for (double v : cancelled.value().data()) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(add(VarD::constant(x), VarD::constant(Tensor<double>(Shape{1, 1, 3, 3}))), ShapeError);
}

TEST(Add, FanOutMatchesFiniteDifferences) {
    Rng rng(2);
    const auto a = oracle::random_tensor<double>(Shape{1, 1, 3, 3}, rng);
    const auto b = oracle::random_tensor<double>(Shape{1, 1, 3, 3}, rng);
    const auto r = grad_check_many(
        [](const std::vector<VarD>& v) { return sum_squares(add(v[0], v[1])); }, {a, b});
    EXPECT_LE(r.max_relative_error, 1e-3);
}

TEST(Backward, ConvWeightGradient) {
    Rng rng(3);
    const auto spec = ConvSpec::square(2, 3, 3, 2, 1);
    const auto x = oracle::random_tensor<double>(Shape{2, 2, 7, 7}, rng);
    const auto w = oracle::random_tensor<double>(spec.weight_shape(), rng);
    const auto bias = VarD::constant(Tensor<double>(spec.bias_shape()));
    const double err = grad_check(
        [&](const VarD& wv) { return scale(sum_squares(conv2d(VarD::constant(x), wv, bias, spec)), 0.5); }, w);
    EXPECT_LE(err, 1e-3);
}

TEST(Backward, ParameterUsedTwiceAccumulates) {
    Rng rng(4);
    const auto spec = ConvSpec::square(1, 1, 3, 1, 1);
    const auto x = oracle::random_tensor<double>(Shape{1, 1, 5, 5}, rng);
    const auto w = oracle::random_tensor<double>(spec.weight_shape(), rng);
    const auto bias = VarD::constant(Tensor<double>(spec.bias_shape()));
    auto f = [&](const VarD& wv) {
        const VarD once = conv2d(VarD::constant(x), wv, bias, spec);
        return sum_squares(conv2d(once, wv, bias, spec));
    };
    EXPECT_LE(grad_check(f, w), 1e-3);

    // Direct check that both paths contribute: the two-use gradient differs
    // from either single-path gradient.
    auto wv = VarD::parameter(w);
    backward(f(wv));
    const auto both = wv.grad();
    auto w2 = VarD::parameter(w);
    const VarD once = conv2d(VarD::constant(x), w2, bias, spec);
    backward(sum_squares(conv2d(once.detach(), w2, bias, spec)));
    EXPECT_GT(max_abs_diff(both, w2.grad()), 1e-6);
}

TEST(Backward, LeafGradientsAccumulateAcrossCalls) {
    auto x = VarD::parameter(Tensor<double>(Shape{1, 1, 1, 2}, 1.0));
    backward(sum(x));
    backward(sum(x));
    EXPECT_EQ(x.grad()[0], 2.0);
    x.zero_grad();
    EXPECT_FALSE(x.has_grad());
}

TEST(GradCheck, LinearFunctionIsExact) {
    Rng rng(5);
    const auto x = oracle::random_tensor<double>(Shape{1, 2, 4, 4}, rng);
    const auto spec = ConvSpec::square(2, 1, 3, 1, 1);
    const auto w = VarD::constant(oracle::random_tensor<double>(spec.weight_shape(), rng));
    const auto b = VarD::constant(Tensor<double>(spec.bias_shape(), 0.1));
    EXPECT_LE(grad_check([&](const VarD& v) { return sum(conv2d(v, w, b, spec)); }, x, 1e-3), 1e-9);
}

TEST(GradCheck, ReluNetAwayFromKinks) {
    Rng rng(6);
    const auto x = away_from_zero(Shape{1, 1, 4, 4}, rng);
    EXPECT_LE(grad_check([](const VarD& v) { return sum_squares(relu(v)); }, x), 1e-4);
}

TEST(GradCheck, DetectsCorruptedGradient) {
    Rng rng(7);
    const auto x = away_from_zero(Shape{1, 1, 4, 4}, rng);
    FaultInjection fault("relu");
    EXPECT_GT(grad_check([](const VarD& v) { return sum_squares(relu(v)); }, x), 1e-2);
}

TEST(GradCheck, EveryOpPasses) {
    Rng rng(8);
    const auto conv = ConvSpec::square(2, 3, 4, 2, 1);
    const auto deconv = ConvSpec::square(3, 2, 4, 2, 1, true);
    const auto x = away_from_zero(Shape{2, 2, 8, 8}, rng);
    const auto y = away_from_zero(Shape{2, 3, 4, 4}, rng);
    const auto wc = oracle::random_tensor<double>(conv.weight_shape(), rng);
    const auto bc = oracle::random_tensor<double>(conv.bias_shape(), rng);
    const auto wd = oracle::random_tensor<double>(deconv.weight_shape(), rng);
    const auto bd = oracle::random_tensor<double>(deconv.bias_shape(), rng);

    EXPECT_LE(grad_check_many([&](const std::vector<VarD>& v) { return sum_squares(conv2d(v[0], v[1], v[2], conv)); },
                              {x, wc, bc})
                  .max_relative_error,
              1e-3);
    EXPECT_LE(grad_check_many(
                  [&](const std::vector<VarD>& v) { return sum_squares(conv2d_transposed(v[0], v[1], v[2], deconv)); },
                  {y, wd, bd})
                  .max_relative_error,
              1e-3);
    // Distinct values keep the pool away from ties.
    Tensor<double> pool_in(Shape{1, 2, 4, 4});
    for (std::size_t i = 0; i < pool_in.size(); ++i) pool_in[i] = std::sin(double(i) * 1.7) + 0.01 * double(i);
    EXPECT_LE(grad_check([](const VarD& v) { return sum_squares(maxpool2(v)); }, pool_in), 1e-3);
    EXPECT_LE(grad_check([](const VarD& v) { return sum_squares(relu(v)); }, x), 1e-3);
    const auto label = oracle::random_tensor<double>(x.shape(), rng);
    EXPECT_LE(grad_check([&](const VarD& v) { return squared_distance(v, VarD::constant(label)); }, x), 1e-3);
    EXPECT_LE(grad_check([](const VarD& v) { return sum_squares(replicate_channels(v, 3)); },
                         oracle::random_tensor<double>(Shape{2, 1, 3, 3}, rng)),
              1e-3);
}

TEST(SquaredDistance, BatchMean) {
    const Tensor<double> a(Shape{1, 1, 2, 2}, 3.0), b(Shape{1, 1, 2, 2}, 0.0);
    EXPECT_DOUBLE_EQ(squared_distance(VarD::constant(a), VarD::constant(b)).value()[0], 36.0);
}

}  // namespace
}  // namespace pcs
