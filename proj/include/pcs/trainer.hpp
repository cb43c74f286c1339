#pragma once

// SGD-with-momentum training of ModelParams under a LossSpec, with
// bit-exact checkpoints:
//   <params as in save_params> | vel.<name> per parameter | __trainstate
// where __trainstate is 24 raw bytes: u64 LE iteration, 2 x u64 LE rng state.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "pcs/dataset.hpp"
#include "pcs/losses.hpp"

namespace pcs {

struct TrainConfig {
    double learning_rate = 1e-4;
    double momentum = 0.9;
    std::size_t batch_size = 5;
    std::uint64_t iterations = 1000;
    std::uint64_t seed = 1;
    LossSpec loss;
    ModelConfig model;
    std::string dataset_dir;
    std::size_t crop_size = 64;
    std::uint64_t checkpoint_every = 100;
    std::string output_dir = "run";
    /// Checkpoint to continue from; empty starts fresh.
    std::string resume_from;
    /// When false the loss log's wallclock column is written as 0.
    bool log_wallclock = true;

    TrainConfig validated() const {
        TrainConfig c = *this;
        c.model = c.model.resolved();
        c.loss = c.loss.validated();
        if (c.batch_size == 0) throw ConfigError("batch_size must be >= 1");
        if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
        if (!(c.learning_rate >= 0.0) || !std::isfinite(c.learning_rate)) {
            throw ConfigError("learning_rate must be a finite non-negative number");
        }
        if (c.checkpoint_every == 0) throw ConfigError("checkpoint_every must be >= 1");
        if (c.crop_size == 0 || c.crop_size % c.model.measurement_stride != 0) {
            throw ConfigError("crop_size " + std::to_string(c.crop_size) + " must be a multiple of measurement_stride " +
                              std::to_string(c.model.measurement_stride));
        }
        if (c.crop_size % c.loss.pool_factor() != 0) {
            throw ConfigError("crop_size " + std::to_string(c.crop_size) + " must be a multiple of the tap's pool factor " +
                              std::to_string(c.loss.pool_factor()));
        }
        return c;
    }
};

template <typename T>
struct TrainState {
    ModelParams<T> params;
    /// One buffer per entry of params.named().
    std::vector<Tensor<T>> velocity;
    std::uint64_t iteration = 0;
    Rng rng;
    double running_loss = 0.0;
    std::size_t running_count = 0;
};

inline constexpr const char* kTrainStateRecord = "__trainstate";
inline constexpr const char* kVelocityPrefix = "vel.";

template <typename T>
TrainState<T> init_state(const ModelConfig& model, std::uint64_t seed) {
    TrainState<T> s{build_model<T>(model, seed), {}, 0, Rng(seed ^ 0xDA7A5EEDULL), 0.0, 0};
    for (const auto& [name, v] : s.params.named()) s.velocity.emplace_back(v.shape());
    return s;
}

/// One forward/backward/update on `batch` (n, 1, crop, crop):
///   v <- mu v - eta grad;  w <- w + v.
/// Returns the loss before the update.
template <typename T>
double train_step(TrainState<T>& state, const Tensor<T>& batch, const LossSpec& loss_spec,
                  const std::type_identity_t<FeatureExtractor<T>>* extractor, double learning_rate, double momentum) {
    state.params.zero_grad();
    const Var<T> label = Var<T>::constant(batch);
    const Var<T> loss = compute_loss(loss_spec, extractor, reconstruct(state.params, label), label);
    const double value = double(loss.value()[0]);
    if (!std::isfinite(value)) throw DivergenceError(state.iteration);
    backward(loss);

    const T mu = T(momentum), eta = T(learning_rate);
    auto named = state.params.named();
    for (std::size_t k = 0; k < named.size(); ++k) {
        Var<T>& param = named[k].second;
        Tensor<T>& vel = state.velocity[k];
        Tensor<T>& w = param.mutable_value();
        if (!param.has_grad()) continue;
        const Tensor<T>& g = param.grad();
        for (std::size_t i = 0; i < w.size(); ++i) {
            vel[i] = mu * vel[i] - eta * g[i];
            w[i] += vel[i];
        }
    }
    ++state.iteration;
    return value;
}

// Checkpoints ---------------------------------------------------------------

template <typename T>
PcswFile state_to_pcsw(const TrainState<T>& s) {
    PcswFile f = params_to_pcsw(s.params);
    const auto named = s.params.named();
    for (std::size_t k = 0; k < named.size(); ++k) {
        f.add(to_record(kVelocityPrefix + named[k].first, s.velocity[k], named[k].first.ends_with(".bias")));
    }
    std::vector<std::uint8_t> bytes;
    auto put64 = [&](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    };
    put64(s.iteration);
    put64(s.rng.state()[0]);
    put64(s.rng.state()[1]);
    f.add(bytes_record(kTrainStateRecord, bytes));
    return f;
}

template <typename T>
TrainState<T> state_from_pcsw(const PcswFile& f, const std::optional<ModelConfig>& expected = std::nullopt) {
    TrainState<T> s;
    s.params = params_from_pcsw<T>(f, expected);
    for (const auto& [name, v] : s.params.named()) {
        const PcswRecord* rec = f.find(kVelocityPrefix + name);
        if (!rec) throw FormatError("checkpoint is missing '" + std::string(kVelocityPrefix) + name + "'", 0);
        s.velocity.push_back(from_record<T>(*rec, v.shape()));
    }
    const PcswRecord* ts = f.find(kTrainStateRecord);
    if (!ts || ts->values.size() != 6) throw FormatError("checkpoint has no valid '__trainstate' record", 0);
    const auto bytes = record_bytes(*ts);
    auto get64 = [&](std::size_t at) {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(bytes[at + i]) << (8 * i);
        return v;
    };
    s.iteration = get64(0);
    s.rng.set_state({get64(8), get64(16)});
    return s;
}

template <typename T>
void save_checkpoint(const TrainState<T>& s, const std::string& path) {
    write_pcsw(path, state_to_pcsw(s));
}

template <typename T = float>
TrainState<T> load_checkpoint(const std::string& path, const std::optional<ModelConfig>& expected = std::nullopt) {
    return state_from_pcsw<T>(read_pcsw(path), expected);
}

inline std::string checkpoint_name(std::uint64_t iteration) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "checkpoint_%08llu.pcsw", static_cast<unsigned long long>(iteration));
    return buf;
}

// Training loop -------------------------------------------------------------

template <typename T>
struct TrainHooks {
    /// Informational messages (warnings, progress).
    std::function<void(const std::string&)> log;
    /// Called after every step; returning false stops training early.
    std::function<bool(const TrainState<T>&, double loss)> on_step;
};

/// Runs until state.iteration == config.iterations. Every checkpoint_every
/// steps appends `iter<TAB>mean loss<TAB>wallclock_ms` to output_dir/loss.tsv
/// and writes output_dir/checkpoint_<iter>.pcsw; the end state goes to
/// output_dir/final.pcsw.
template <typename T = float>
TrainState<T> train(const TrainConfig& raw_config, const TrainHooks<T>& hooks = {}) {
    const TrainConfig config = raw_config.validated();
    auto log = [&](const std::string& m) {
        if (hooks.log) hooks.log(m);
    };
    const Dataset<T> data = load_dataset<T>(config.dataset_dir, config.crop_size);
    for (const auto& w : data.warnings) log("warning: " + w);

    std::optional<FeatureExtractor<T>> extractor;
    if (config.loss.kind == LossKind::Perceptual) {
        extractor = load_extractor<T>(config.loss.extractor, config.loss.tap);
    }

    TrainState<T> state = config.resume_from.empty() ? init_state<T>(config.model, config.seed)
                                                     : load_checkpoint<T>(config.resume_from, config.model);
    if (!config.resume_from.empty()) {
        log("resumed from " + config.resume_from + " at iteration " + std::to_string(state.iteration));
    }

    namespace fs = std::filesystem;
    fs::create_directories(config.output_dir);
    const fs::path out_dir(config.output_dir);
    std::ofstream loss_log(out_dir / "loss.tsv",
                           config.resume_from.empty() ? std::ios::trunc : std::ios::app);
    if (!loss_log) throw ConfigError("cannot write loss log in '" + config.output_dir + "'");

    const auto start = std::chrono::steady_clock::now();
    auto flush_interval = [&] {
        const auto ms = config.log_wallclock ? std::chrono::duration_cast<std::chrono::milliseconds>(
                                                   std::chrono::steady_clock::now() - start)
                                                   .count()
                                             : 0;
        char line[96];
        std::snprintf(line, sizeof line, "%llu\t%.9g\t%lld\n", static_cast<unsigned long long>(state.iteration),
                      state.running_loss / double(state.running_count), static_cast<long long>(ms));
        loss_log << line << std::flush;
        state.running_loss = 0.0;
        state.running_count = 0;
    };

    SampleStream<T> stream(data, config.crop_size, state.rng);
    const FeatureExtractor<T>* ex = extractor ? &*extractor : nullptr;
    while (state.iteration < config.iterations) {
        const Tensor<T> batch = stream.next_batch(config.batch_size);
        state.rng = stream.rng();
        const double loss = train_step(state, batch, config.loss, ex, config.learning_rate, config.momentum);
        state.running_loss += loss;
        ++state.running_count;
        const bool boundary = state.iteration % config.checkpoint_every == 0;
        if (boundary) {
            flush_interval();
            save_checkpoint(state, (out_dir / checkpoint_name(state.iteration)).string());
        }
        if (hooks.on_step && !hooks.on_step(state, loss)) break;
    }
    if (state.running_count > 0) flush_interval();
    save_checkpoint(state, (out_dir / "final.pcsw").string());
    return state;
}

}  // namespace pcs
