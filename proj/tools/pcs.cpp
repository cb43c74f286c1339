// pcs: train, recover, eval, gradcheck, features.
// Exit codes: 0 ok, 1 config/data/format, 2 divergence, 3 verification failed.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pcs/config.hpp"
#include "pcs/image_io.hpp"
#include "pcs/metrics.hpp"
#include "pcs/trainer.hpp"
#include "pcs/verify.hpp"

namespace {

using json = nlohmann::ordered_json;

enum Exit { kOk = 0, kConfig = 1, kDivergence = 2, kVerification = 3 };

/// Numbers for JSON output; non-finite values become "inf"/"-inf"/"nan".
json number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

std::string fixed(double v, int digits = 6) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

void echo_config(const std::string& text) {
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) std::cerr << "config: " << line << "\n";
}

// train ---------------------------------------------------------------------

struct TrainArgs {
    std::string config_file;
    std::string preset;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> iterations, seed, checkpoint_every;
    std::optional<double> learning_rate;
    std::optional<std::string> dataset, output, resume, loss, tap;
    bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
    pcs::ConfigMap m;
    if (!a.config_file.empty()) m = pcs::read_config_file(a.config_file);
    if (!a.preset.empty()) m["preset"] = a.preset;
    for (const auto& s : a.sets) pcs::apply_override(s, m);
    auto put = [&](const char* key, const auto& v) {
        if (!v) return;
        std::ostringstream os;
        os.precision(17);
        os << *v;
        m[key] = os.str();
    };
    put("iterations", a.iterations);
    put("seed", a.seed);
    put("checkpoint_every", a.checkpoint_every);
    put("learning_rate", a.learning_rate);
    put("dataset_dir", a.dataset);
    put("output_dir", a.output);
    put("resume", a.resume);
    put("loss", a.loss);
    put("tap", a.tap);

    const pcs::TrainConfig config = pcs::train_config_from_map(m).validated();
    const std::string effective = pcs::describe(config);
    echo_config(effective);
    std::filesystem::create_directories(config.output_dir);
    pcs::detail::write_file_bytes((std::filesystem::path(config.output_dir) / "run.cfg").string(), effective);

    pcs::TrainHooks<float> hooks;
    hooks.log = [](const std::string& msg) { std::cerr << msg << "\n"; };
    double last_loss = std::nan("");
    hooks.on_step = [&](const pcs::TrainState<float>& s, double loss) {
        last_loss = loss;
        if (!a.quiet && (s.iteration % config.checkpoint_every == 0 || s.iteration == config.iterations)) {
            std::cerr << "iter " << s.iteration << " loss " << loss << "\n";
        }
        return true;
    };
    const auto state = pcs::train<float>(config, hooks);
    json out{{"command", "train"},
             {"iterations", state.iteration},
             {"last_loss", number(last_loss)},
             {"final", (std::filesystem::path(config.output_dir) / "final.pcsw").string()},
             {"loss_log", (std::filesystem::path(config.output_dir) / "loss.tsv").string()}};
    std::cout << out.dump() << "\n";
    return kOk;
}

// recover -------------------------------------------------------------------

int cmd_recover(const std::string& model_path, const std::string& input, const std::string& output,
                const std::string& policy_name) {
    const auto policy = pcs::parse_pad_policy(policy_name);
    const auto params = pcs::load_params<float>(model_path);
    std::cerr << "config: model = " << params.config.describe() << "\n"
              << "config: pad_policy = " << policy_name << "\n";
    const auto img = pcs::read_image<float>(input);
    const auto rec = pcs::recover_image(params, img, policy);
    pcs::write_image(rec, output);
    const auto& s = rec.shape();
    json out{{"command", "recover"}, {"input", input},     {"output", output},
             {"height", s.h},        {"width", s.w},        {"channels", s.c},
             {"psnr_db", number(pcs::psnr(rec, img))}};
    std::cout << out.dump() << "\n";
    return kOk;
}

// eval ----------------------------------------------------------------------

struct EvalArgs {
    std::string model;
    std::string compare;
    std::string dataset;
    std::string metrics = "psnr,ssim,blockiness";
    std::string format = "tsv";
    std::string pad_policy = "reflect-pad-then-crop";
    double peak = 1.0;
    std::size_t block = 0;
};

int cmd_eval(const EvalArgs& a) {
    std::vector<std::string> metrics;
    {
        std::istringstream in(a.metrics);
        for (std::string m; std::getline(in, m, ',');) {
            if (m != "psnr" && m != "ssim" && m != "blockiness") {
                throw pcs::ConfigError("unknown metric '" + m + "' (expected psnr, ssim, blockiness)");
            }
            metrics.push_back(m);
        }
        if (metrics.empty()) throw pcs::ConfigError("--metrics is empty");
    }
    if (a.format != "tsv" && a.format != "jsonl") throw pcs::ConfigError("--format must be tsv or jsonl");

    pcs::EvalOptions opt;
    opt.peak = a.peak;
    opt.block = a.block;
    opt.pad_policy = pcs::parse_pad_policy(a.pad_policy);

    std::vector<std::pair<std::string, pcs::MetricReport>> reports;
    for (const auto& path : {a.model, a.compare}) {
        if (path.empty()) continue;
        const auto params = pcs::load_params<float>(path);
        std::cerr << "config: model " << path << " = " << params.config.describe() << "\n";
        reports.emplace_back(std::filesystem::path(path).stem().string(), pcs::evaluate(params, a.dataset, opt));
    }
    std::cerr << "config: dataset = " << a.dataset << "\nconfig: metrics = " << a.metrics
              << "\nconfig: ssim = " << pcs::kSsimVariant << "\n";
    const bool compare = reports.size() > 1;
    auto value = [](const pcs::MetricRow& r, const std::string& m) {
        return m == "psnr" ? r.psnr_db : (m == "ssim" ? r.ssim : r.blockiness);
    };
    auto mean = [](const pcs::MetricReport& r, const std::string& m) {
        return m == "psnr" ? r.mean_psnr_db : (m == "ssim" ? r.mean_ssim : r.mean_blockiness);
    };
    auto column = [&](const std::string& label, const std::string& m) {
        const std::string name = m == "psnr" ? "psnr_db" : m;
        return compare ? label + ":" + name : name;
    };

    const auto& rows = reports.front().second.rows;
    if (a.format == "tsv") {
        std::cout << "image";
        for (const auto& [label, r] : reports)
            for (const auto& m : metrics) std::cout << "\t" << column(label, m);
        std::cout << "\n";
        for (std::size_t i = 0; i < rows.size(); ++i) {
            std::cout << rows[i].name;
            for (const auto& [label, r] : reports)
                for (const auto& m : metrics) std::cout << "\t" << fixed(value(r.rows[i], m));
            std::cout << "\n";
        }
        std::cout << "mean";
        for (const auto& [label, r] : reports)
            for (const auto& m : metrics) std::cout << "\t" << fixed(mean(r, m));
        std::cout << "\n";
    } else {
        for (std::size_t i = 0; i <= rows.size(); ++i) {
            json rec{{"image", i < rows.size() ? rows[i].name : "mean"}};
            for (const auto& [label, r] : reports)
                for (const auto& m : metrics)
                    rec[column(label, m)] = number(i < rows.size() ? value(r.rows[i], m) : mean(r, m));
            std::cout << rec.dump() << "\n";
        }
    }
    return kOk;
}

// gradcheck -----------------------------------------------------------------

int cmd_gradcheck(const std::string& fault_op, double fault_scale, const pcs::GradSuiteOptions& opt,
                  const std::string& format) {
    if (format != "text" && format != "jsonl") throw pcs::ConfigError("--format must be text or jsonl");
    std::optional<pcs::FaultInjection> fault;
    if (!fault_op.empty()) {
        const auto ops = pcs::fault_injectable_ops();
        if (std::find(ops.begin(), ops.end(), fault_op) == ops.end()) {
            throw pcs::ConfigError("cannot inject a fault into unknown op '" + fault_op + "'");
        }
        fault.emplace(fault_op, fault_scale);
        std::cerr << "config: inject_fault = " << fault_op << " (gradient scaled by " << 1.0 + fault_scale << ")\n";
    }
    std::cerr << "config: precision = double\nconfig: tolerance = " << opt.tolerance << "\nconfig: eps = " << opt.eps
              << "\nconfig: size = " << opt.size << "\nconfig: seed = " << opt.seed << "\n";
    const auto outcomes = pcs::gradient_suite(opt);
    const pcs::GradCheckOutcome* worst = nullptr;
    bool ok = true;
    for (const auto& o : outcomes) {
        ok = ok && o.passed();
        if (!worst || o.result.max_relative_error > worst->result.max_relative_error) worst = &o;
        if (format == "jsonl") {
            std::cout << json{{"check", o.name},
                              {"op", o.op},
                              {"max_relative_error", number(o.result.max_relative_error)},
                              {"tolerance", o.tolerance},
                              {"passed", o.passed()}}
                             .dump()
                      << "\n";
        } else {
            char line[160];
            std::snprintf(line, sizeof line, "%-4s %-32s %.3e\n", o.passed() ? "ok" : "FAIL", o.name.c_str(),
                          o.result.max_relative_error);
            std::cout << line;
        }
    }
    if (worst) {
        const auto& r = worst->result;
        std::ostringstream msg;
        msg << "worst: " << worst->name << " (op " << worst->op << ") relative error " << r.max_relative_error
            << " at input " << r.worst_input << " index " << r.worst_index << ": analytic " << r.analytic
            << " numeric " << r.numeric;
        (ok ? std::cout : std::cerr) << msg.str() << "\n";
    }
    if (!ok) {
        std::string failed;
        for (const auto& o : outcomes)
            if (!o.passed()) failed += (failed.empty() ? "" : ", ") + o.op;
        std::cerr << "gradient check FAILED: " << failed << "\n";
        return kVerification;
    }
    return kOk;
}

// features ------------------------------------------------------------------

int cmd_features(const pcs::ExtractorSource& src, const std::string& tap_name, const std::string& input,
                 const std::string& output, const std::string& save_extractor) {
    const std::string tap = pcs::vgg::resolve_tap(tap_name);
    const auto ex = pcs::load_extractor<float>(src, tap);
    std::cerr << "config: extractor = " << src.describe() << "\nconfig: tap = " << tap << "\n";
    if (!save_extractor.empty()) pcs::write_pcsw(save_extractor, ex.to_pcsw());
    json out{{"command", "features"}, {"extractor", src.describe()}, {"tap", tap}};
    if (!input.empty()) {
        const auto img = pcs::to_luma(pcs::read_image<float>(input));
        const auto f = ex.extract(img, tap);
        double total = 0.0, peak = 0.0;
        for (float v : f.data()) total += v, peak = std::max(peak, double(v));
        const auto& s = f.shape();
        out["shape"] = {s.n, s.c, s.h, s.w};
        out["mean"] = number(total / double(f.size()));
        out["max"] = number(peak);
        if (!output.empty()) {
            pcs::PcswFile file;
            file.add(pcs::to_record(tap, f));
            pcs::write_pcsw(output, file);
            out["output"] = output;
        }
    } else if (!output.empty()) {
        throw pcs::ConfigError("--output needs --input");
    }
    if (!save_extractor.empty()) out["saved_extractor"] = save_extractor;
    std::cout << out.dump() << "\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Full-image compressive sensing: measurement/recovery network training and evaluation"};
    app.require_subcommand(1);

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "Train a model (SGD with momentum)");
    train->add_option("-c,--config", ta.config_file, "key = value config file");
    train->add_option("--preset", ta.preset, "Named preset expanded underneath other settings");
    train->add_option("--set", ta.sets, "Override, key=value (repeatable)");
    train->add_option("--iterations", ta.iterations);
    train->add_option("--learning-rate", ta.learning_rate);
    train->add_option("--seed", ta.seed);
    train->add_option("--checkpoint-every", ta.checkpoint_every);
    train->add_option("--dataset", ta.dataset, "Directory of PGM/PPM training images");
    train->add_option("--output", ta.output, "Run directory (checkpoints, loss.tsv)");
    train->add_option("--resume", ta.resume, "Checkpoint to continue from");
    train->add_option("--loss", ta.loss, "pixel or perceptual");
    train->add_option("--tap", ta.tap, "Feature tap for the perceptual loss");
    train->add_flag("-q,--quiet", ta.quiet, "No per-interval progress");

    std::string model, input, output, pad_policy = "reflect-pad-then-crop";
    auto* recover = app.add_subcommand("recover", "Measure and recover one image");
    recover->add_option("-m,--model", model, "Weights (.pcsw)")->required();
    recover->add_option("-i,--input", input, "PGM/PPM input")->required();
    recover->add_option("-o,--output", output, "PGM/PPM output")->required();
    recover->add_option("--pad-policy", pad_policy, "reflect-pad-then-crop or error");

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "Score recoveries of a dataset: PSNR, SSIM, blockiness");
    eval->add_option("-m,--model", ea.model, "Weights (.pcsw)")->required();
    eval->add_option("--compare", ea.compare, "Second model reported side by side");
    eval->add_option("-d,--dataset", ea.dataset, "Directory of PGM/PPM images")->required();
    eval->add_option("--metrics", ea.metrics, "Comma-separated subset of psnr,ssim,blockiness");
    eval->add_option("--format", ea.format, "tsv or jsonl");
    eval->add_option("--pad-policy", ea.pad_policy, "reflect-pad-then-crop or error");
    eval->add_option("--peak", ea.peak, "Peak signal value (images are in [0,1])");
    eval->add_option("--block", ea.block, "Blockiness grid (default: measurement stride)");

    pcs::GradSuiteOptions go;
    std::string fault_op, gc_format = "text";
    double fault_scale = 0.1;
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every op and both losses");
    gradcheck->add_option("--inject-fault", fault_op, "Corrupt the backward pass of this op");
    gradcheck->add_option("--fault-scale", fault_scale, "Relative gradient corruption");
    gradcheck->add_option("--tolerance", go.tolerance);
    gradcheck->add_option("--eps", go.eps);
    gradcheck->add_option("--seed", go.seed);
    gradcheck->add_option("--size", go.size, "Spatial size of the test inputs (multiple of 4)");
    gradcheck->add_option("--format", gc_format, "text or jsonl");

    pcs::ExtractorSource src;
    std::string tap = "pool2", save_extractor;
    auto* features = app.add_subcommand("features", "Dump extractor features at a tap");
    features->add_option("--extractor", src.path, "Extractor weights (.pcsw); default is seeded random");
    features->add_option("--extractor-seed", src.seed);
    features->add_option("--extractor-depth", src.depth, "Conv layers of a random extractor");
    features->add_option("--extractor-width", src.width, "Base channel width of a random extractor");
    features->add_option("--tap", tap);
    features->add_option("-i,--input", input, "PGM/PPM image");
    features->add_option("-o,--output", output, "Write features as .pcsw");
    features->add_option("--save-extractor", save_extractor, "Write the extractor weights as .pcsw");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try {
        if (*train) return cmd_train(ta);
        if (*recover) return cmd_recover(model, input, output, pad_policy);
        if (*eval) return cmd_eval(ea);
        if (*gradcheck) return cmd_gradcheck(fault_op, fault_scale, go, gc_format);
        if (*features) return cmd_features(src, tap, input, output, save_extractor);
    } catch (const pcs::DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDivergence;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfig;
    }
    return kConfig;
}
