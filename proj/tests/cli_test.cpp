#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>

#include "pcs/image_io.hpp"
#include "pcs/model.hpp"
#include "pcs/pipeline.hpp"
#include "synthetic.hpp"

#ifndef PCS_CLI_PATH
#error "PCS_CLI_PATH must point at the pcs executable"
#endif

namespace pcs {
namespace {

namespace fs = std::filesystem;

struct Result {
    int code = -1;
    std::string out, err;
};

class CliTest : public ::testing::Test {
protected:
    fs::path root = fs::temp_directory_path() / "pcs_cli_test";

    void SetUp() override {
        fs::remove_all(root);
        fs::create_directories(root / "data");
        for (std::uint64_t i = 0; i < 2; ++i) {
            write_image(synthetic::scene<float>(24, 24, i + 1), p("data/img" + std::to_string(i) + ".pgm"));
        }
    }
    void TearDown() override { fs::remove_all(root); }

    std::string p(const std::string& rel) const { return (root / rel).string(); }

    Result run(const std::string& args) const {
        const std::string out = p("stdout.txt"), err = p("stderr.txt");
        const std::string cmd = std::string(PCS_CLI_PATH) + " " + args + " >" + out + " 2>" + err;
        const int status = std::system(cmd.c_str());
        Result r;
        r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        r.out = detail::read_file_bytes(out);
        r.err = detail::read_file_bytes(err);
        return r;
    }

    std::string model(std::size_t stride, std::size_t channels, double mr) const {
        ModelConfig c;
        c.measurement_stride = stride;
        c.measurement_channels = channels;
        c.target_mr = mr;
        c.recovery_channels = 4;
        const std::string path = p("model_s" + std::to_string(stride) + ".pcsw");
        save_params(build_model<float>(c, 3), path);
        return path;
    }

    std::string train_args(const std::string& out, const std::string& lr = "1e-6", int iterations = 4) const {
        return "train --dataset " + p("data") + " --output " + p(out) +
               " --set measurement_stride=4 --set target_mr=0.25 --set recovery_channels=4 --set crop_size=16"
               " --set batch_size=2 --set checkpoint_every=2 --set log_wallclock=false --learning-rate " +
               lr + " --iterations " + std::to_string(iterations) + " -q";
    }
};

TEST_F(CliTest, NoSubcommandIsConfigError) {
    EXPECT_EQ(run("").code, 1);
    EXPECT_EQ(run("bogus").code, 1);
    EXPECT_EQ(run("--help").code, 0);
}

TEST_F(CliTest, GradcheckCleanPasses) {
    const auto r = run("gradcheck");
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("worst: "), std::string::npos);
    EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}

TEST_F(CliTest, GradcheckInjectedFaultNamesOp) {
    const auto r = run("gradcheck --inject-fault relu");
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.err.find("FAILED: relu"), std::string::npos) << r.err;
    EXPECT_NE(r.out.find("FAIL relu"), std::string::npos);
    EXPECT_EQ(run("gradcheck --inject-fault nosuchop").code, 1);
}

TEST_F(CliTest, GradcheckJsonl) {
    const auto r = run("gradcheck --format jsonl");
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("{\"check\":\"conv2d\",\"op\":\"conv2d\""), std::string::npos) << r.out;
}

TEST_F(CliTest, TrainWritesRunAndEchoesOverrides) {
    detail::write_file_bytes(p("run.cfg"), "iterations = 50\nseed = 3\n");
    const auto r = run(train_args("run") + " --config " + p("run.cfg"));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.err.find("config: iterations = 4\n"), std::string::npos) << r.err;
    EXPECT_NE(r.err.find("config: seed = 3\n"), std::string::npos);
    EXPECT_TRUE(fs::exists(root / "run" / "final.pcsw"));
    EXPECT_TRUE(fs::exists(root / "run" / "loss.tsv"));
    EXPECT_TRUE(fs::exists(root / "run" / "run.cfg"));
    EXPECT_NE(r.out.find("\"iterations\":4"), std::string::npos) << r.out;
}

TEST_F(CliTest, TrainIsDeterministic) {
    ASSERT_EQ(run(train_args("a")).code, 0);
    ASSERT_EQ(run(train_args("b")).code, 0);
    EXPECT_EQ(detail::read_file_bytes(p("a/loss.tsv")), detail::read_file_bytes(p("b/loss.tsv")));
    EXPECT_EQ(detail::read_file_bytes(p("a/final.pcsw")), detail::read_file_bytes(p("b/final.pcsw")));
}

TEST_F(CliTest, TrainPresetIsEchoed) {
    const auto r = run("train --preset paper-mr1-vgg22 --dataset " + p("missing") + " --output " + p("x"));
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("config: learning_rate = 1e-08\n"), std::string::npos) << r.err;
    EXPECT_NE(r.err.find("config: batch_size = 5\n"), std::string::npos);
    EXPECT_NE(r.err.find("pool2"), std::string::npos);
}

TEST_F(CliTest, TrainMissingDatasetIsDataError) {
    const auto r = run("train --dataset " + p("nope") + " --output " + p("x") +
                       " --set measurement_stride=4 --set target_mr=0.25 --set crop_size=16");
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("error: "), std::string::npos);
}

TEST_F(CliTest, TrainBadKeyIsConfigError) {
    EXPECT_EQ(run("train --set learningrate=1").code, 1);
}

TEST_F(CliTest, TrainDivergenceExitCode) {
    const auto r = run(train_args("div", "1e6", 40));
    EXPECT_EQ(r.code, 2) << r.err;
    EXPECT_NE(r.err.find("diverged"), std::string::npos);
}

TEST_F(CliTest, RecoverDivisibleAndPadded) {
    const std::string m = model(16, 10, 0.04);
    write_image(synthetic::scene<float>(64, 64, 5), p("a.pgm"));
    write_image(synthetic::scene<float>(70, 70, 6), p("b.pgm"));

    auto r = run("recover -m " + m + " -i " + p("a.pgm") + " -o " + p("a_rec.pgm") + " --pad-policy error");
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(read_image<float>(p("a_rec.pgm")).shape(), (Shape{1, 1, 64, 64}));

    r = run("recover -m " + m + " -i " + p("b.pgm") + " -o " + p("b_rec.pgm") + " --pad-policy error");
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("not divisible"), std::string::npos);

    r = run("recover -m " + m + " -i " + p("b.pgm") + " -o " + p("b_rec.pgm"));
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(read_image<float>(p("b_rec.pgm")).shape(), (Shape{1, 1, 70, 70}));
    const std::string first = detail::read_file_bytes(p("b_rec.pgm"));
    ASSERT_EQ(run("recover -m " + m + " -i " + p("b.pgm") + " -o " + p("b_rec2.pgm")).code, 0);
    EXPECT_EQ(detail::read_file_bytes(p("b_rec2.pgm")), first);
}

TEST_F(CliTest, RecoverColorPerChannel) {
    const std::string m = model(4, 4, 0.25);
    Tensor<float> rgb(Shape{1, 3, 16, 16});
    for (std::size_t c = 0; c < 3; ++c) {
        const auto s = synthetic::scene<float>(16, 16, 10 + c);
        std::copy(s.data().begin(), s.data().end(), rgb.plane(0, c).begin());
    }
    write_image(rgb, p("c.ppm"));
    ASSERT_EQ(run("recover -m " + m + " -i " + p("c.ppm") + " -o " + p("c_rec.ppm")).code, 0);
    const auto rec = read_image<float>(p("c_rec.ppm"));
    EXPECT_EQ(rec.shape(), rgb.shape());
    const auto params = load_params(m);
    const auto direct = recover_image(params, read_image<float>(p("c.ppm")));
    EXPECT_EQ(encode_image(direct), encode_image(rec));
}

TEST_F(CliTest, RecoverMissingModel) {
    write_image(synthetic::scene<float>(16, 16, 5), p("a.pgm"));
    EXPECT_EQ(run("recover -m " + p("none.pcsw") + " -i " + p("a.pgm") + " -o " + p("o.pgm")).code, 1);
}

TEST_F(CliTest, EvalTsvAndJsonl) {
    const std::string m = model(4, 4, 0.25);
    auto r = run("eval -m " + m + " -d " + p("data"));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "image\tpsnr_db\tssim\tblockiness");
    EXPECT_NE(r.out.find("\nimg0.pgm\t"), std::string::npos);
    EXPECT_NE(r.out.find("\nmean\t"), std::string::npos);
    EXPECT_EQ(run("eval -m " + m + " -d " + p("data")).out, r.out);

    r = run("eval -m " + m + " -d " + p("data") + " --metrics psnr");
    EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "image\tpsnr_db");

    r = run("eval -m " + m + " -d " + p("data") + " --format jsonl --metrics psnr,ssim");
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("{\"image\":\"img1.pgm\",\"psnr_db\":"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("{\"image\":\"mean\""), std::string::npos);

    EXPECT_EQ(run("eval -m " + m + " -d " + p("data") + " --metrics mos").code, 1);
    fs::create_directories(root / "empty");
    EXPECT_EQ(run("eval -m " + m + " -d " + p("empty")).code, 1);
}

TEST_F(CliTest, EvalCompareSideBySide) {
    const std::string a = model(4, 4, 0.25);
    ModelConfig c;
    c.measurement_stride = 4;
    c.measurement_channels = 2;
    c.target_mr = 0.125;
    c.recovery_channels = 4;
    save_params(build_model<float>(c, 9), p("other.pcsw"));
    const auto r = run("eval -m " + a + " --compare " + p("other.pcsw") + " -d " + p("data") + " --metrics psnr");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "image\tmodel_s4:psnr_db\tother:psnr_db");
}

TEST_F(CliTest, FeaturesDump) {
    write_image(synthetic::scene<float>(32, 32, 5), p("f.pgm"));
    auto r = run("features --extractor-seed 7 --extractor-width 4 --tap vgg2_2 -i " + p("f.pgm") + " -o " +
                 p("f.pcsw") + " --save-extractor " + p("vgg.pcsw"));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("\"tap\":\"pool2\""), std::string::npos);
    EXPECT_NE(r.out.find("\"shape\":[1,8,8,8]"), std::string::npos) << r.out;
    const auto f = read_pcsw(p("f.pcsw"));
    ASSERT_EQ(f.records.size(), 1u);
    EXPECT_EQ(f.records[0].name, "pool2");

    const auto again = run("features --extractor " + p("vgg.pcsw") + " --tap pool2 -i " + p("f.pgm") + " -o " +
                           p("g.pcsw"));
    ASSERT_EQ(again.code, 0) << again.err;
    EXPECT_EQ(detail::read_file_bytes(p("f.pcsw")), detail::read_file_bytes(p("g.pcsw")));
    EXPECT_EQ(run("features --extractor " + p("vgg.pcsw") + " --tap pool3 -i " + p("f.pgm")).code, 1);
}

}  // namespace
}  // namespace pcs
