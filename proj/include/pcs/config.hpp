#pragma once

// Line-based run configuration: `key = value`, '#' starts a comment, no
// nesting. Later assignments (including command-line overrides) win.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pcs/trainer.hpp"

namespace pcs {

using ConfigMap = std::map<std::string, std::string>;

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

}  // namespace detail

/// Parses `key = value` lines into `into`. `origin` names the source in errors.
inline void parse_config_text(std::string_view text, ConfigMap& into, const std::string& origin = "<config>") {
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
        }
        const std::string key(detail::trim(line.substr(0, eq)));
        if (key.empty()) throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
        into[key] = std::string(detail::trim(line.substr(eq + 1)));
    }
}

inline ConfigMap read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    ConfigMap m;
    parse_config_text(ss.str(), m, path);
    return m;
}

/// "key=value" override from the command line.
inline void apply_override(std::string_view assignment, ConfigMap& into) {
    if (assignment.find('=') == std::string_view::npos) {
        throw ConfigError("override '" + std::string(assignment) + "' is not of the form key=value");
    }
    parse_config_text(assignment, into, "--set");
}

// Presets -------------------------------------------------------------------

/// Published experiment settings. The learning rates assume the original
/// framework's loss scaling; with the unnormalized sums used here they
/// usually need retuning.
inline const std::map<std::string, ConfigMap>& presets() {
    static const std::map<std::string, ConfigMap> table = [] {
        auto paper = [](const char* target_mr, const char* channels, const char* tap, const char* lr) {
            return ConfigMap{{"learning_rate", lr},          {"batch_size", "5"},
                             {"iterations", "1000000"},      {"crop_size", "256"},
                             {"loss", "perceptual"},         {"tap", tap},
                             {"extractor_depth", "8"},       {"measurement_stride", "16"},
                             {"measurement_channels", channels}, {"target_mr", target_mr},
                             {"recovery_channels", "64"},    {"res_blocks", "1"}};
        };
        std::map<std::string, ConfigMap> t;
        t["paper-mr1-vgg22"] = paper("0.01", "3", "pool2", "1e-8");
        t["paper-mr1-vgg34"] = paper("0.01", "3", "pool3", "1e-9");
        t["paper-mr4-vgg22"] = paper("0.04", "10", "pool2", "1e-8");
        t["paper-mr4-vgg34"] = paper("0.04", "10", "pool3", "1e-9");
        t["desk-overfit"] = ConfigMap{{"learning_rate", "5.5e-6"}, {"batch_size", "1"},
                                      {"crop_size", "32"},          {"loss", "pixel"},
                                      {"measurement_stride", "4"},  {"measurement_channels", "4"},
                                      {"target_mr", "0.25"},        {"iterations", "5000"}};
        return t;
    }();
    return table;
}

/// Expands `preset = name` (if present) underneath the explicit values.
inline ConfigMap expand_preset(const ConfigMap& m) {
    const auto it = m.find("preset");
    if (it == m.end() || it->second.empty()) return m;
    const auto p = presets().find(it->second);
    if (p == presets().end()) throw ConfigError("unknown preset '" + it->second + "'");
    ConfigMap out = p->second;
    for (const auto& [k, v] : m) out[k] = v;
    return out;
}

namespace detail {

template <typename N>
N parse_number(const std::string& key, const std::string& value) {
    N out{};
    const char* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end) {
        throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as a number");
    }
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + value + "'");
}

}  // namespace detail

/// Keys understood by train_config_from_map (plus "preset").
inline const std::vector<std::string>& train_config_keys() {
    static const std::vector<std::string> keys{
        "preset",          "learning_rate",      "momentum",          "batch_size",
        "iterations",      "seed",               "loss",              "tap",
        "extractor",       "extractor_seed",     "extractor_depth",   "extractor_width",
        "measurement_stride", "measurement_kernel", "measurement_channels", "recovery_channels",
        "res_blocks",      "target_mr",          "dataset_dir",       "crop_size",
        "checkpoint_every", "output_dir",        "resume",            "log_wallclock"};
    return keys;
}

inline TrainConfig train_config_from_map(const ConfigMap& raw) {
    const ConfigMap m = expand_preset(raw);
    const auto& known = train_config_keys();
    for (const auto& [k, v] : m) {
        if (std::find(known.begin(), known.end(), k) == known.end()) {
            throw ConfigError("unknown config key '" + k + "'");
        }
    }
    TrainConfig c;
    auto get = [&](const char* key) -> const std::string* {
        const auto it = m.find(key);
        return it == m.end() ? nullptr : &it->second;
    };
    using detail::parse_number;
    if (auto v = get("learning_rate")) c.learning_rate = parse_number<double>("learning_rate", *v);
    if (auto v = get("momentum")) c.momentum = parse_number<double>("momentum", *v);
    if (auto v = get("batch_size")) c.batch_size = parse_number<std::size_t>("batch_size", *v);
    if (auto v = get("iterations")) c.iterations = parse_number<std::uint64_t>("iterations", *v);
    if (auto v = get("seed")) c.seed = parse_number<std::uint64_t>("seed", *v);
    if (auto v = get("dataset_dir")) c.dataset_dir = *v;
    if (auto v = get("crop_size")) c.crop_size = parse_number<std::size_t>("crop_size", *v);
    if (auto v = get("checkpoint_every")) c.checkpoint_every = parse_number<std::uint64_t>("checkpoint_every", *v);
    if (auto v = get("output_dir")) c.output_dir = *v;
    if (auto v = get("resume")) c.resume_from = *v;
    if (auto v = get("log_wallclock")) c.log_wallclock = detail::parse_bool("log_wallclock", *v);

    if (auto v = get("measurement_stride")) c.model.measurement_stride = parse_number<std::size_t>("measurement_stride", *v);
    if (auto v = get("measurement_kernel")) c.model.measurement_kernel = parse_number<std::size_t>("measurement_kernel", *v);
    if (auto v = get("measurement_channels")) {
        c.model.measurement_channels = parse_number<std::size_t>("measurement_channels", *v);
    }
    if (auto v = get("recovery_channels")) c.model.recovery_channels = parse_number<std::size_t>("recovery_channels", *v);
    if (auto v = get("res_blocks")) c.model.res_blocks = parse_number<std::size_t>("res_blocks", *v);
    if (auto v = get("target_mr")) c.model.target_mr = parse_number<double>("target_mr", *v);

    const std::string loss = get("loss") ? *get("loss") : "pixel";
    if (loss == "pixel" || loss == "mse") {
        c.loss = LossSpec::pixel();
        if (auto v = get("tap"); v && !v->empty()) throw ConfigError("config key 'tap' is only valid with loss = perceptual");
    } else if (loss == "perceptual") {
        c.loss.kind = LossKind::Perceptual;
        c.loss.tap = get("tap") ? *get("tap") : "pool2";
        if (auto v = get("extractor"); v && *v != "random") c.loss.extractor.path = *v;
        if (auto v = get("extractor_seed")) c.loss.extractor.seed = parse_number<std::uint64_t>("extractor_seed", *v);
        if (auto v = get("extractor_depth")) c.loss.extractor.depth = parse_number<std::size_t>("extractor_depth", *v);
        if (auto v = get("extractor_width")) c.loss.extractor.width = parse_number<std::size_t>("extractor_width", *v);
    } else {
        throw ConfigError("config key 'loss': expected pixel or perceptual, got '" + loss + "'");
    }
    return c;
}

/// Effective settings, one `key = value` per line, for echoing before a run.
inline std::string describe(const TrainConfig& c) {
    std::ostringstream os;
    os.precision(10);
    os << "learning_rate = " << c.learning_rate << "\n"
       << "momentum = " << c.momentum << "\n"
       << "batch_size = " << c.batch_size << "\n"
       << "iterations = " << c.iterations << "\n"
       << "seed = " << c.seed << "\n"
       << "loss = " << c.loss.describe() << "\n"
       << "model = " << c.model.describe() << "\n"
       << "dataset_dir = " << c.dataset_dir << "\n"
       << "crop_size = " << c.crop_size << "\n"
       << "checkpoint_every = " << c.checkpoint_every << "\n"
       << "output_dir = " << c.output_dir << "\n"
       << "resume = " << c.resume_from << "\n"
       << "log_wallclock = " << (c.log_wallclock ? "true" : "false") << "\n";
    return os.str();
}

}  // namespace pcs
