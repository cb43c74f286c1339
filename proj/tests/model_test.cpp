#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "pcs/gradcheck.hpp"
#include "pcs/losses.hpp"
#include "pcs/model.hpp"

namespace pcs {
namespace {

std::string temp_path(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "pcs_model_test";
    std::filesystem::create_directories(dir);
    return (dir / name).string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

ModelConfig small_config() {
    ModelConfig c;
    c.measurement_stride = 4;
    c.measurement_channels = 2;
    c.recovery_channels = 4;
    c.target_mr = 0.125;
    return c;
}

TEST(ModelConfig, NominalRates) {
    ModelConfig mr1;
    mr1.measurement_stride = 16;
    mr1.target_mr = 0.01;
    const auto r1 = mr1.resolved();
    EXPECT_EQ(r1.measurement_kernel, 32u);
    EXPECT_EQ(r1.measurement_channels, 3u);
    EXPECT_DOUBLE_EQ(r1.achieved_mr(), 3.0 / 256.0);

    ModelConfig mr4 = mr1;
    mr4.target_mr = 0.04;
    const auto r4 = mr4.resolved();
    EXPECT_EQ(r4.measurement_channels, 10u);
    EXPECT_DOUBLE_EQ(r4.achieved_mr(), 10.0 / 256.0);
    EXPECT_NE(r4.describe().find("achieved_mr=0.0390625"), std::string::npos);
}

TEST(ModelConfig, Validation) {
    ModelConfig c;
    c.measurement_stride = 4;
    c.target_mr = 0.25;
    c.measurement_kernel = 7;
    EXPECT_THROW(c.resolved(), ConfigError);  // odd k - s
    c.measurement_kernel = 4;
    EXPECT_THROW(c.resolved(), ConfigError);  // no overlap
    c.measurement_kernel = 6;
    EXPECT_EQ(c.resolved().pad(), 1u);
    c.measurement_stride = 1;
    EXPECT_THROW(c.resolved(), ConfigError);
    ModelConfig tiny;
    tiny.measurement_stride = 2;
    tiny.target_mr = 0.01;
    EXPECT_THROW(tiny.resolved(), ConfigError);  // rounds to zero channels
}

TEST(BuildModel, SeedDeterminesParams) {
    const auto a = build_model<float>(small_config(), 7);
    const auto b = build_model<float>(small_config(), 7);
    const auto c = build_model<float>(small_config(), 8);
    EXPECT_TRUE(params_identical(a, b));
    EXPECT_FALSE(params_identical(a, c));
    for (const auto& [name, v] : a.named()) {
        if (name.ends_with(".bias")) {
            for (float x : v.value().data()) EXPECT_EQ(x, 0.0f) << name;
        }
    }
}

TEST(BuildModel, HeInitScale) {
    ModelConfig c;
    c.measurement_stride = 4;
    c.measurement_channels = 4;
    c.recovery_channels = 32;
    const auto p = build_model<double>(c, 3);
    const auto& w = p.res_blocks[0].conv1.weight.value();
    double s2 = 0;
    for (double v : w.data()) s2 += v * v;
    EXPECT_NEAR(std::sqrt(s2 / double(w.size())), std::sqrt(2.0 / (32.0 * 9.0)), 0.01);
}

TEST(Measure, ShapeAndRate) {
    ModelConfig c;
    c.measurement_stride = 16;
    c.measurement_channels = 3;
    c.recovery_channels = 4;
    const auto p = build_model<float>(c, 1);
    const auto y = measure(p, Var<float>::constant(Tensor<float>(Shape{1, 1, 64, 64}, 0.5f)));
    EXPECT_EQ(y.shape(), (Shape{1, 3, 4, 4}));
    EXPECT_EQ(double(y.value().size()) / 4096.0, p.config.achieved_mr());
    EXPECT_THROW(measure(p, Var<float>::constant(Tensor<float>(Shape{1, 1, 70, 64}))), GeometryError);
    EXPECT_THROW(measure(p, Var<float>::constant(Tensor<float>(Shape{1, 3, 64, 64}))), ShapeError);
}

TEST(Measure, ZeroImageGivesBias) {
    auto p = build_model<float>(small_config(), 1);
    p.measurement.bias.mutable_value() = Tensor<float>(Shape{2, 1, 1, 1}, {0.25f, -1.5f});
    const auto y = measure(p, Var<float>::constant(Tensor<float>(Shape{1, 1, 16, 16}))).value();
    for (std::size_t i = 0; i < y.shape().plane(); ++i) {
        EXPECT_EQ(y.plane(0, 0)[i], 0.25f);
        EXPECT_EQ(y.plane(0, 1)[i], -1.5f);
    }
}

TEST(Measure, LinearWithZeroBias) {
    const auto p = build_model<double>(small_config(), 2);
    Rng rng(4);
    const auto x = oracle::random_tensor<double>(Shape{1, 1, 16, 16}, rng);
    const auto y = oracle::random_tensor<double>(Shape{1, 1, 16, 16}, rng);
    const double a = 0.7, b = -1.3;
    const auto mix = measure(p, Var<double>::constant(x * a + y * b)).value();
    const auto sep = measure(p, Var<double>::constant(x)).value() * a + measure(p, Var<double>::constant(y)).value() * b;
    EXPECT_LE(oracle::max_rel_diff(mix, sep), 1e-5);
}

TEST(Measure, ShiftEquivariance) {
    const auto p = build_model<double>(small_config(), 5);
    const std::size_t s = 4;
    Tensor<double> img(Shape{1, 1, 32, 32});
    Rng rng(6);
    for (std::size_t y = 12; y < 20; ++y)
        for (std::size_t x = 8; x < 14; ++x) img.at(0, 0, y, x) = rng.uniform();
    Tensor<double> shifted(img.shape());
    for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t x = 0; x + s < 32; ++x) shifted.at(0, 0, y, x + s) = img.at(0, 0, y, x);
    const auto m0 = measure(p, Var<double>::constant(img)).value();
    const auto m1 = measure(p, Var<double>::constant(shifted)).value();
    for (std::size_t c = 0; c < m0.shape().c; ++c)
        for (std::size_t y = 0; y < 8; ++y)
            for (std::size_t x = 1; x + 1 < 7; ++x) EXPECT_NEAR(m1.at(0, c, y, x + 1), m0.at(0, c, y, x), 1e-12);
}

TEST(Recover, RestoresImageShape) {
    ModelConfig c;
    c.measurement_stride = 16;
    c.measurement_channels = 3;
    c.recovery_channels = 8;
    const auto p = build_model<float>(c, 1);
    Rng rng(2);
    for (std::size_t n : {64u, 96u}) {
        const auto x = oracle::random_tensor<float>(Shape{1, 1, n, n}, rng, 0.0, 1.0);
        const auto r = reconstruct(p, x);
        EXPECT_EQ(r.shape(), x.shape());
        EXPECT_TRUE(r.all_finite());
    }
    EXPECT_THROW(recover(p, Var<float>::constant(Tensor<float>(Shape{1, 2, 4, 4}))), ShapeError);
}

TEST(Recover, MoreResidualBlocks) {
    auto c = small_config();
    c.res_blocks = 3;
    const auto p = build_model<float>(c, 1);
    EXPECT_EQ(p.res_blocks.size(), 3u);
    EXPECT_EQ(p.named().size(), 2u * (2 + 2 * 3 + 1));
    EXPECT_EQ(reconstruct(p, Tensor<float>(Shape{2, 1, 16, 16}, 0.5f)).shape(), (Shape{2, 1, 16, 16}));
}

TEST(Pipeline, GradientCheckBothLosses) {
    ModelConfig c;
    c.measurement_stride = 4;
    c.measurement_channels = 2;
    c.recovery_channels = 3;
    c.target_mr = 0.125;
    const auto p = build_model<double>(c, 11);
    Rng rng(12);
    const auto image = oracle::random_tensor<double>(Shape{1, 1, 16, 16}, rng, 0.0, 1.0);
    const auto ex = random_extractor<double>(13, 2, 4);

    std::vector<Tensor<double>> params;
    for (const auto& [name, v] : p.named()) params.push_back(v.value());

    for (const bool perceptual : {false, true}) {
        auto f = [&](const std::vector<Var<double>>& w) {
            ModelParams<double> q = p.clone();
            // Rebind each layer's weight/bias to the checked variables.
            std::size_t k = 0;
            auto bind = [&](ConvLayer<double>& l) {
                l.weight = w[k++];
                l.bias = w[k++];
            };
            bind(q.measurement);
            bind(q.deconv);
            for (auto& b : q.res_blocks) {
                bind(b.conv1);
                bind(b.conv2);
            }
            bind(q.output);
            const auto label = Var<double>::constant(image);
            const auto recon = reconstruct(q, label);
            return perceptual ? perceptual_loss(ex, "conv1_2", recon, label) : pixel_loss(recon, label);
        };
        const auto r = grad_check_many(f, params);
        EXPECT_LE(r.max_relative_error, 1e-3) << (perceptual ? "perceptual" : "pixel") << " input " << r.worst_input
                                              << " index " << r.worst_index;
    }
}

TEST(Params, SaveLoadSaveIsByteIdentical) {
    const auto p = build_model<float>(small_config(), 21);
    const auto a = temp_path("a.pcsw"), b = temp_path("b.pcsw");
    save_params(p, a);
    const auto q = load_params(a);
    EXPECT_TRUE(params_identical(p, q));
    save_params(q, b);
    EXPECT_EQ(slurp(a), slurp(b));
}

TEST(Params, FileLayout) {
    const auto p = build_model<float>(small_config(), 21);
    const auto bytes = encode_pcsw(params_to_pcsw(p));
    ASSERT_GE(bytes.size(), 12u);
    EXPECT_EQ(bytes.substr(0, 4), "PCSW");
    EXPECT_EQ(bytes[4], 1);
    EXPECT_EQ(bytes[8], 1 + 2 * 5);  // __config + 5 layers x (weight, bias)
    // First record: u8 len 8, "__config", ndim 1, dim 6.
    EXPECT_EQ(bytes[12], 8);
    EXPECT_EQ(bytes.substr(13, 8), "__config");
    EXPECT_EQ(bytes[21], 1);
    EXPECT_EQ(bytes[22], 6);
}

TEST(Params, CorruptMagic) {
    const auto p = build_model<float>(small_config(), 21);
    auto bytes = encode_pcsw(params_to_pcsw(p));
    bytes[0] = 'X';
    try {
        decode_pcsw(bytes);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), 0u);
    }
}

TEST(Params, TruncationReportsOffset) {
    const auto p = build_model<float>(small_config(), 21);
    auto bytes = encode_pcsw(params_to_pcsw(p));
    bytes.resize(bytes.size() - 3);
    try {
        decode_pcsw(bytes);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_GT(e.offset(), 12u);
        EXPECT_LE(e.offset(), bytes.size());
    }
    auto bad_version = encode_pcsw(params_to_pcsw(p));
    bad_version[4] = 2;
    EXPECT_THROW(decode_pcsw(bad_version), FormatError);
}

TEST(Params, MismatchedConfigNamesTensor) {
    const auto p = build_model<float>(small_config(), 21);
    const auto path = temp_path("mismatch.pcsw");
    save_params(p, path);
    auto other = small_config();
    other.recovery_channels = 5;
    try {
        load_params(path, other);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("deconv.weight"), std::string::npos) << e.what();
    }
}

}  // namespace
}  // namespace pcs
