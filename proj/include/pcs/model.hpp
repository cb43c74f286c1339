#pragma once

// The sensing/recovery network:
//   measure : conv(1 -> m, k x k, stride s, pad (k-s)/2)
//   recover : deconv(m -> r, k x k, stride s, pad (k-s)/2)
//             -> res_blocks x [conv3x3 -> relu -> conv3x3, + skip]
//             -> conv3x3(r -> 1)

#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pcs/ops.hpp"
#include "pcs/pcsw.hpp"
#include "pcs/rng.hpp"

namespace pcs {

struct ModelConfig {
    std::size_t measurement_stride = 16;
    /// 0 selects the default 2 * stride.
    std::size_t measurement_kernel = 0;
    /// 0 derives round(target_mr * stride^2).
    std::size_t measurement_channels = 0;
    std::size_t recovery_channels = 64;
    std::size_t res_blocks = 1;
    double target_mr = 0.01;

    /// Copy with defaults filled in; throws ConfigError on invalid values.
    ModelConfig resolved() const {
        ModelConfig c = *this;
        if (c.measurement_stride < 2) throw ConfigError("measurement_stride must be >= 2");
        if (!(c.target_mr > 0.0 && c.target_mr <= 1.0)) throw ConfigError("target_mr must lie in (0, 1]");
        if (c.measurement_kernel == 0) c.measurement_kernel = 2 * c.measurement_stride;
        if (c.measurement_kernel <= c.measurement_stride) {
            throw ConfigError("measurement_kernel " + std::to_string(c.measurement_kernel) +
                              " must exceed measurement_stride " + std::to_string(c.measurement_stride) +
                              " (overlapped measurement)");
        }
        if ((c.measurement_kernel - c.measurement_stride) % 2 != 0) {
            throw ConfigError("measurement_kernel - measurement_stride must be even (symmetric padding)");
        }
        if (c.measurement_channels == 0) {
            const double s2 = double(c.measurement_stride * c.measurement_stride);
            c.measurement_channels = static_cast<std::size_t>(std::lround(c.target_mr * s2));
            if (c.measurement_channels == 0) {
                throw ConfigError("target_mr " + std::to_string(c.target_mr) + " rounds to zero channels at stride " +
                                  std::to_string(c.measurement_stride));
            }
        }
        if (c.recovery_channels == 0) throw ConfigError("recovery_channels must be >= 1");
        return c;
    }

    std::size_t pad() const { return (measurement_kernel - measurement_stride) / 2; }

    /// Measurements per pixel: m / s^2.
    double achieved_mr() const {
        return double(measurement_channels) / double(measurement_stride * measurement_stride);
    }

    std::string describe() const {
        std::ostringstream os;
        os << "stride=" << measurement_stride << " kernel=" << measurement_kernel
           << " channels=" << measurement_channels << " recovery_channels=" << recovery_channels
           << " res_blocks=" << res_blocks << " target_mr=" << target_mr << " achieved_mr=" << achieved_mr()
           << " (|diff|=" << std::abs(achieved_mr() - target_mr) << ")";
        return os.str();
    }

    bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct ConvLayer {
    ConvSpec spec;
    Var<T> weight;
    Var<T> bias;

    Var<T> operator()(const Var<T>& x) const {
        return spec.transposed ? conv2d_transposed(x, weight, bias, spec) : conv2d(x, weight, bias, spec);
    }
};

template <typename T>
struct ResBlock {
    ConvLayer<T> conv1;
    ConvLayer<T> conv2;
};

template <typename T>
struct ModelParams {
    ModelConfig config;
    ConvLayer<T> measurement;
    ConvLayer<T> deconv;
    std::vector<ResBlock<T>> res_blocks;
    ConvLayer<T> output;

    /// Every learnable tensor, in serialization order. Vars alias the model.
    std::vector<std::pair<std::string, Var<T>>> named() const {
        std::vector<std::pair<std::string, Var<T>>> out;
        auto push = [&](const std::string& prefix, const ConvLayer<T>& l) {
            out.emplace_back(prefix + ".weight", l.weight);
            out.emplace_back(prefix + ".bias", l.bias);
        };
        push("measure", measurement);
        push("deconv", deconv);
        for (std::size_t i = 0; i < res_blocks.size(); ++i) {
            push("res" + std::to_string(i) + ".conv1", res_blocks[i].conv1);
            push("res" + std::to_string(i) + ".conv2", res_blocks[i].conv2);
        }
        push("output", output);
        return out;
    }

    std::vector<const ConvLayer<T>*> layers() const {
        std::vector<const ConvLayer<T>*> out{&measurement, &deconv};
        for (const auto& b : res_blocks) {
            out.push_back(&b.conv1);
            out.push_back(&b.conv2);
        }
        out.push_back(&output);
        return out;
    }

    /// Deep copy with fresh leaf nodes.
    ModelParams clone() const {
        ModelParams c = *this;
        auto copy = [](ConvLayer<T>& l) {
            l.weight = Var<T>::parameter(l.weight.value());
            l.bias = Var<T>::parameter(l.bias.value());
        };
        copy(c.measurement);
        copy(c.deconv);
        for (auto& b : c.res_blocks) {
            copy(b.conv1);
            copy(b.conv2);
        }
        copy(c.output);
        return c;
    }

    void zero_grad() const {
        for (auto& [name, v] : named()) {
            Var<T> h = v;
            h.zero_grad();
        }
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& [name, v] : named()) n += v.value().size();
        return n;
    }
};

/// Architecture skeleton (zero weights) for a resolved config.
template <typename T>
ModelParams<T> model_skeleton(const ModelConfig& config) {
    const ModelConfig c = config.resolved();
    const std::size_t s = c.measurement_stride, k = c.measurement_kernel, m = c.measurement_channels,
                      r = c.recovery_channels;
    auto layer = [](const ConvSpec& spec) {
        return ConvLayer<T>{spec, Var<T>::parameter(Tensor<T>(spec.weight_shape())),
                            Var<T>::parameter(Tensor<T>(spec.bias_shape()))};
    };
    ModelParams<T> p;
    p.config = c;
    p.measurement = layer(ConvSpec::square(1, m, k, s, c.pad()));
    p.deconv = layer(ConvSpec::square(m, r, k, s, c.pad(), true));
    for (std::size_t i = 0; i < c.res_blocks; ++i) {
        p.res_blocks.push_back({layer(ConvSpec::square(r, r, 3, 1, 1)), layer(ConvSpec::square(r, r, 3, 1, 1))});
    }
    p.output = layer(ConvSpec::square(r, 1, 3, 1, 1));
    return p;
}

/// Inputs feeding each output element: in*kh*kw for a convolution,
/// in*(kh/sh)*(kw/sw) for the transposed operator.
inline double fan_in(const ConvSpec& spec) {
    const double taps = double(spec.kernel_h * spec.kernel_w);
    if (!spec.transposed) return double(spec.in_channels) * taps;
    return double(spec.in_channels) * taps / double(spec.stride_h * spec.stride_w);
}

/// He-normal weights, zero biases, drawn in serialization order.
template <typename T>
void he_init(ConvLayer<T>& layer, Rng& rng) {
    const double std_dev = std::sqrt(2.0 / fan_in(layer.spec));
    for (auto& v : layer.weight.mutable_value().data()) v = static_cast<T>(rng.normal() * std_dev);
    layer.bias.mutable_value().fill(T(0));
}

template <typename T>
ModelParams<T> build_model(const ModelConfig& config, std::uint64_t seed) {
    ModelParams<T> p = model_skeleton<T>(config);
    Rng rng(seed);
    he_init(p.measurement, rng);
    he_init(p.deconv, rng);
    for (auto& b : p.res_blocks) {
        he_init(b.conv1, rng);
        he_init(b.conv2, rng);
    }
    he_init(p.output, rng);
    return p;
}

template <typename T>
Var<T> measure(const ModelParams<T>& p, const Var<T>& image) {
    const Shape& s = image.shape();
    const std::size_t stride = p.config.measurement_stride;
    if (s.c != 1) throw ShapeError("measure: image must be single-channel, got " + s.str());
    if (s.h % stride != 0 || s.w % stride != 0) {
        throw GeometryError("measure: image " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                            " is not divisible by stride " + std::to_string(stride));
    }
    return p.measurement(image);
}

template <typename T>
Var<T> recover(const ModelParams<T>& p, const Var<T>& measurements) {
    if (measurements.shape().c != p.config.measurement_channels) {
        throw ShapeError("recover: measurements have " + std::to_string(measurements.shape().c) +
                         " channels, model expects " + std::to_string(p.config.measurement_channels));
    }
    Var<T> x = p.deconv(measurements);
    for (const auto& block : p.res_blocks) {
        x = add(x, block.conv2(relu(block.conv1(x))));
    }
    return p.output(x);
}

/// f{x, w}: recover(measure(x)).
template <typename T>
Var<T> reconstruct(const ModelParams<T>& p, const Var<T>& image) {
    return recover(p, measure(p, image));
}

template <typename T>
Tensor<T> reconstruct(const ModelParams<T>& p, const Tensor<T>& image) {
    return reconstruct(p, Var<T>::constant(image)).value();
}

// Serialization -------------------------------------------------------------

inline constexpr const char* kConfigRecord = "__config";

inline PcswRecord config_record(const ModelConfig& c) {
    return PcswRecord{kConfigRecord,
                      {6},
                      {float(c.measurement_stride), float(c.measurement_kernel), float(c.measurement_channels),
                       float(c.recovery_channels), float(c.res_blocks), float(c.target_mr)}};
}

inline ModelConfig config_from_record(const PcswRecord& r) {
    if (r.dims != std::vector<std::uint32_t>{6}) throw FormatError("'__config' record must hold 6 values", 0);
    ModelConfig c;
    c.measurement_stride = std::size_t(r.values[0]);
    c.measurement_kernel = std::size_t(r.values[1]);
    c.measurement_channels = std::size_t(r.values[2]);
    c.recovery_channels = std::size_t(r.values[3]);
    c.res_blocks = std::size_t(r.values[4]);
    c.target_mr = double(r.values[5]);
    return c.resolved();
}

template <typename T>
PcswFile params_to_pcsw(const ModelParams<T>& p) {
    PcswFile f;
    f.add(config_record(p.config));
    for (const auto& [name, v] : p.named()) {
        const bool is_bias = name.ends_with(".bias");
        f.add(to_record(name, v.value(), is_bias));
    }
    return f;
}

/// Rebuilds parameters from a container. With `expected`, the file must
/// match that architecture; mismatches raise ShapeError naming the tensor.
template <typename T>
ModelParams<T> params_from_pcsw(const PcswFile& f, const std::optional<ModelConfig>& expected = std::nullopt) {
    ModelConfig config;
    if (expected) {
        config = expected->resolved();
    } else {
        const PcswRecord* rec = f.find(kConfigRecord);
        if (!rec) throw ConfigError("weight file has no '__config' record; pass the model config explicitly");
        config = config_from_record(*rec);
    }
    ModelParams<T> p = model_skeleton<T>(config);
    for (auto& [name, v] : p.named()) {
        const PcswRecord* rec = f.find(name);
        if (!rec) throw ShapeError("weight file is missing tensor '" + name + "'");
        v.mutable_value() = from_record<T>(*rec, v.shape());
    }
    return p;
}

template <typename T>
void save_params(const ModelParams<T>& p, const std::string& path) {
    write_pcsw(path, params_to_pcsw(p));
}

template <typename T = float>
ModelParams<T> load_params(const std::string& path, const std::optional<ModelConfig>& expected = std::nullopt) {
    return params_from_pcsw<T>(read_pcsw(path), expected);
}

template <typename T>
bool params_identical(const ModelParams<T>& a, const ModelParams<T>& b) {
    const auto na = a.named(), nb = b.named();
    if (!(a.config == b.config) || na.size() != nb.size()) return false;
    for (std::size_t i = 0; i < na.size(); ++i) {
        if (na[i].first != nb[i].first || !bit_identical(na[i].second.value(), nb[i].second.value())) return false;
    }
    return true;
}

}  // namespace pcs
