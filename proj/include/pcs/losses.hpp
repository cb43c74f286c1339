#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <iterator>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pcs/model.hpp"

namespace pcs {

/// Squared pixel distance, mean over the batch. The label is detached.
template <typename T>
Var<T> pixel_loss(const Var<T>& recon, const Var<T>& label) {
    return squared_distance(recon, label.detach());
}

template <typename T>
Var<T> pixel_loss(const Var<T>& recon, const Tensor<T>& label) {
    return squared_distance(recon, Var<T>::constant(label));
}

// Feature extractor ---------------------------------------------------------

namespace vgg {

struct Stage {
    std::string_view name;
    /// Channel multiple of the base width; 0 marks a 2x2 max-pool.
    std::size_t width_multiple;
};

/// VGG19 up to pool3.
inline constexpr Stage kPlan[] = {
    {"conv1_1", 1}, {"conv1_2", 1}, {"pool1", 0},   {"conv2_1", 2},   {"conv2_2", 2}, {"pool2", 0},
    {"conv3_1", 4}, {"conv3_2", 4}, {"conv3_3", 4}, {"conv3_4", 4}, {"pool3", 0},
};
inline constexpr std::size_t kPlanSize = std::size(kPlan);
inline constexpr std::size_t kBaseWidth = 64;
inline constexpr std::size_t kInputChannels = 3;

inline constexpr std::string_view kInputTap = "input";

/// Canonical tap name. Accepts plan names, "input", and the aliases
/// vgg2_2 -> pool2, vgg3_4 -> pool3 (case-insensitive).
inline std::string resolve_tap(std::string_view tap) {
    std::string t(tap);
    std::transform(t.begin(), t.end(), t.begin(), [](unsigned char ch) { return char(std::tolower(ch)); });
    if (t == "vgg2_2" || t == "vgg22") return "pool2";
    if (t == "vgg3_4" || t == "vgg34") return "pool3";
    if (t == kInputTap) return t;
    for (const auto& s : kPlan) {
        if (s.name == t) return t;
    }
    throw ConfigError("unknown feature tap '" + std::string(tap) + "'");
}

/// Number of plan layers that must run to produce `tap`.
inline std::size_t layers_for_tap(std::string_view tap) {
    const std::string t = resolve_tap(tap);
    if (t == kInputTap) return 0;
    for (std::size_t i = 0; i < kPlanSize; ++i) {
        if (kPlan[i].name == t) return i + 1;
    }
    return 0;
}

inline std::size_t pool_factor(std::string_view tap) {
    std::size_t f = 1;
    for (std::size_t i = 0; i < layers_for_tap(tap); ++i) {
        if (kPlan[i].width_multiple == 0) f *= 2;
    }
    return f;
}

/// Plan prefix holding `conv_count` convolutions plus a directly following pool.
inline std::size_t layers_for_depth(std::size_t conv_count) {
    std::size_t n = 0, convs = 0;
    while (n < kPlanSize && convs < conv_count) {
        if (kPlan[n].width_multiple != 0) ++convs;
        ++n;
    }
    if (convs < conv_count) {
        throw ConfigError("extractor depth " + std::to_string(conv_count) + " exceeds the 8 convolutions up to pool3");
    }
    if (n < kPlanSize && kPlan[n].width_multiple == 0) ++n;
    return n;
}

}  // namespace vgg

/// Frozen conv3x3+ReLU / maxpool2 stack with named taps (VGG19 naming).
/// Layers past the deepest tap requested at load time are not built.
template <typename T>
class FeatureExtractor {
public:
    struct Layer {
        std::string name;
        bool is_pool = false;
        ConvLayer<T> conv;
    };

    FeatureExtractor() = default;

    FeatureExtractor(std::vector<Layer> layers, std::size_t input_channels)
        : layers_(std::move(layers)), input_channels_(input_channels) {}

    const std::vector<Layer>& layers() const noexcept { return layers_; }
    std::size_t input_channels() const noexcept { return input_channels_; }

    bool has_tap(std::string_view tap) const { return vgg::layers_for_tap(tap) <= layers_.size(); }

    /// Feature map at `tap` (post-ReLU for conv taps). Single-channel input is
    /// replicated to the extractor's input channels.
    Var<T> extract(const Var<T>& image, std::string_view tap) const {
        const std::string t = vgg::resolve_tap(tap);
        const std::size_t count = vgg::layers_for_tap(t);
        if (count > layers_.size()) {
            throw ConfigError("tap '" + t + "' needs " + std::to_string(count) + " layers, extractor has " +
                              std::to_string(layers_.size()));
        }
        const std::size_t factor = vgg::pool_factor(t);
        const Shape& s = image.shape();
        if (s.h % factor != 0 || s.w % factor != 0) {
            throw GeometryError("tap '" + t + "' needs sizes divisible by " + std::to_string(factor) + ", got " +
                                std::to_string(s.h) + "x" + std::to_string(s.w));
        }
        Var<T> x = image;
        if (count == 0) return x;
        if (s.c != input_channels_) {
            if (s.c == 1) {
                x = replicate_channels(x, input_channels_);
            } else {
                throw ShapeError("extractor expects " + std::to_string(input_channels_) + " channels, got " +
                                 s.str());
            }
        }
        for (std::size_t i = 0; i < count; ++i) {
            const Layer& l = layers_[i];
            x = l.is_pool ? maxpool2(x) : relu(l.conv(x));
        }
        return x;
    }

    Tensor<T> extract(const Tensor<T>& image, std::string_view tap) const {
        return extract(Var<T>::constant(image), tap).value();
    }

    PcswFile to_pcsw() const {
        PcswFile f;
        for (const auto& l : layers_) {
            if (l.is_pool) continue;
            f.add(to_record(l.name + ".weight", l.conv.weight.value()));
            f.add(to_record(l.name + ".bias", l.conv.bias.value(), true));
        }
        return f;
    }

    /// Concatenated weight bytes, for freeze checks.
    std::vector<T> snapshot() const {
        std::vector<T> out;
        for (const auto& l : layers_) {
            if (l.is_pool) continue;
            for (T v : l.conv.weight.value().data()) out.push_back(v);
            for (T v : l.conv.bias.value().data()) out.push_back(v);
        }
        return out;
    }

private:
    std::vector<Layer> layers_;
    std::size_t input_channels_ = vgg::kInputChannels;
};

/// Where extractor weights come from: a .pcsw file, or seeded random
/// He-normal weights with `depth` convolutions of base width `width`.
struct ExtractorSource {
    std::string path;
    std::uint64_t seed = 0;
    std::size_t depth = 4;
    std::size_t width = vgg::kBaseWidth;

    bool from_file() const { return !path.empty(); }

    std::string describe() const {
        if (from_file()) return "file:" + path;
        return "random(seed=" + std::to_string(seed) + ",depth=" + std::to_string(depth) +
               ",width=" + std::to_string(width) + ")";
    }
};

namespace detail {

inline std::size_t truncated_size(std::size_t available, const std::optional<std::string>& deepest_tap) {
    if (!deepest_tap) return available;
    const std::size_t need = vgg::layers_for_tap(*deepest_tap);
    if (need > available) {
        throw ConfigError("tap '" + vgg::resolve_tap(*deepest_tap) + "' needs layer '" +
                          std::string(vgg::kPlan[need - 1].name) + "' which the extractor source does not provide");
    }
    return need;
}

}  // namespace detail

template <typename T>
FeatureExtractor<T> random_extractor(std::uint64_t seed, std::size_t depth, std::size_t width = vgg::kBaseWidth,
                                     const std::optional<std::string>& deepest_tap = std::nullopt) {
    if (width == 0) throw ConfigError("extractor width must be >= 1");
    const std::size_t count = detail::truncated_size(vgg::layers_for_depth(depth), deepest_tap);
    Rng rng(seed);
    std::vector<typename FeatureExtractor<T>::Layer> layers;
    std::size_t in_c = vgg::kInputChannels;
    for (std::size_t i = 0; i < count; ++i) {
        const auto& stage = vgg::kPlan[i];
        typename FeatureExtractor<T>::Layer l{std::string(stage.name), stage.width_multiple == 0, {}};
        if (!l.is_pool) {
            const std::size_t out_c = width * stage.width_multiple;
            const ConvSpec spec = ConvSpec::square(in_c, out_c, 3, 1, 1);
            l.conv = {spec, Var<T>::constant(Tensor<T>(spec.weight_shape())),
                      Var<T>::constant(Tensor<T>(spec.bias_shape()))};
            he_init(l.conv, rng);
            in_c = out_c;
        }
        layers.push_back(std::move(l));
    }
    return FeatureExtractor<T>(std::move(layers), vgg::kInputChannels);
}

/// Builds an extractor from `convN_M.weight` / `convN_M.bias` records. The
/// convolutions present must form a prefix of the plan.
template <typename T>
FeatureExtractor<T> extractor_from_pcsw(const PcswFile& f,
                                        const std::optional<std::string>& deepest_tap = std::nullopt) {
    std::size_t available = 0;
    while (available < vgg::kPlanSize) {
        const auto& stage = vgg::kPlan[available];
        if (stage.width_multiple != 0 && !f.find(std::string(stage.name) + ".weight")) break;
        ++available;
    }
    if (available == 0) throw ConfigError("extractor file has no 'conv1_1.weight' record");
    const std::size_t count = detail::truncated_size(available, deepest_tap);

    std::vector<typename FeatureExtractor<T>::Layer> layers;
    std::size_t in_c = 0, input_channels = 0;
    for (std::size_t i = 0; i < count; ++i) {
        const auto& stage = vgg::kPlan[i];
        typename FeatureExtractor<T>::Layer l{std::string(stage.name), stage.width_multiple == 0, {}};
        if (!l.is_pool) {
            const PcswRecord* w = f.find(l.name + ".weight");
            const PcswRecord* b = f.find(l.name + ".bias");
            if (!b) throw ConfigError("extractor file is missing '" + l.name + ".bias'");
            if (w->dims.size() != 4 || w->dims[2] != 3 || w->dims[3] != 3) {
                throw ShapeError("tensor '" + w->name + "' must be (out, in, 3, 3)");
            }
            if (i == 0) {
                in_c = w->dims[1];
                input_channels = in_c;
            }
            const ConvSpec spec = ConvSpec::square(in_c, w->dims[0], 3, 1, 1);
            l.conv = {spec, Var<T>::constant(from_record<T>(*w, spec.weight_shape())),
                      Var<T>::constant(from_record<T>(*b, spec.bias_shape()))};
            in_c = spec.out_channels;
        }
        layers.push_back(std::move(l));
    }
    return FeatureExtractor<T>(std::move(layers), input_channels);
}

template <typename T>
FeatureExtractor<T> load_extractor(const ExtractorSource& source,
                                   const std::optional<std::string>& deepest_tap = std::nullopt) {
    if (source.from_file()) return extractor_from_pcsw<T>(read_pcsw(source.path), deepest_tap);
    return random_extractor<T>(source.seed, source.depth, source.width, deepest_tap);
}

/// Squared feature distance at `tap`, mean over the batch. The label branch
/// is detached.
template <typename T>
Var<T> perceptual_loss(const FeatureExtractor<T>& ex, std::string_view tap, const Var<T>& recon,
                       const Var<T>& label) {
    const Var<T> target = ex.extract(label.detach(), tap).detach();
    return squared_distance(ex.extract(recon, tap), target);
}

// Loss selection ------------------------------------------------------------

enum class LossKind { Pixel, Perceptual };

struct LossSpec {
    LossKind kind = LossKind::Pixel;
    /// Perceptual only; canonicalized by validated().
    std::string tap;
    ExtractorSource extractor;

    static LossSpec pixel() { return {}; }
    static LossSpec perceptual(std::string tap, ExtractorSource source = {}) {
        return LossSpec{LossKind::Perceptual, std::move(tap), std::move(source)}.validated();
    }

    LossSpec validated() const {
        LossSpec s = *this;
        if (s.kind == LossKind::Pixel) {
            if (!s.tap.empty()) throw ConfigError("pixel loss takes no feature tap");
        } else {
            if (s.tap.empty()) throw ConfigError("perceptual loss needs a feature tap");
            s.tap = vgg::resolve_tap(s.tap);
        }
        return s;
    }

    std::size_t pool_factor() const { return kind == LossKind::Perceptual ? vgg::pool_factor(tap) : 1; }

    std::string describe() const {
        return kind == LossKind::Pixel ? "pixel" : "perceptual(tap=" + tap + ", " + extractor.describe() + ")";
    }
};

template <typename T>
Var<T> compute_loss(const LossSpec& spec, const FeatureExtractor<T>* ex, const Var<T>& recon, const Var<T>& label) {
    if (spec.kind == LossKind::Pixel) return pixel_loss(recon, label);
    if (!ex) throw ConfigError("perceptual loss requires a feature extractor");
    return perceptual_loss(*ex, spec.tap, recon, label);
}

}  // namespace pcs
