#pragma once

// Builds the separation network out of the ops in ops.hpp and runs the forward
// pass. Parameter names are stable across runs and are the keys of the
// checkpoint format: <layer>.filters / <layer>.bias, plus <layer>.upsample_w
// for the learned interpolation weights.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "waveunet/config.hpp"
#include "waveunet/ops.hpp"
#include "waveunet/sizes.hpp"
#include "waveunet/tensor.hpp"

namespace waveunet {

/// Ordered, named parameter store. Iteration order is the build order, which
/// both checkpoint serialization and the optimizer rely on.
template <typename T>
struct ParameterSet {
    std::vector<std::pair<std::string, TensorPtr<T>>> entries;

    void add(std::string name, TensorPtr<T> value) {
        entries.emplace_back(std::move(name), std::move(value));
    }

    bool has(const std::string& name) const {
        for (const auto& [k, v] : entries)
            if (k == name) return true;
        return false;
    }

    const TensorPtr<T>& get(const std::string& name) const {
        for (const auto& [k, v] : entries)
            if (k == name) return v;
        throw UsageError("parameter set has no entry '" + name + "'");
    }

    ConvParams<T> conv(const std::string& layer) const {
        return ConvParams<T>{get(layer + ".filters"), get(layer + ".bias")};
    }

    UpsampleWeights<T> upsample_weights(const std::string& layer) const {
        return UpsampleWeights<T>{get(layer + ".upsample_w")};
    }

    std::int64_t parameter_count() const {
        std::int64_t n = 0;
        for (const auto& [k, v] : entries) n += v->shape.elements();
        return n;
    }
};

namespace detail {

template <typename T>
TensorPtr<T> init_filters(std::int64_t f, std::int64_t in_ch, std::int64_t out_ch,
                          std::mt19937_64& rng, bool trainable) {
    // Uniform [-b, b] with b = sqrt(6 / (fan_in + fan_out)), fans taken over
    // filter_size * channels; variance-preserving for the LeakyReLU/tanh stack.
    const double bound = std::sqrt(6.0 / static_cast<double>(f * in_ch + f * out_ch));
    std::uniform_real_distribution<double> dist(-bound, bound);
    auto t = Tensor<T>::zeros(Shape{f, in_ch, out_ch}, trainable);
    for (auto& v : t->data) v = static_cast<T>(dist(rng));
    return t;
}

} // namespace detail

inline int head_count(const ModelConfig& config) {
    return config.difference_output ? config.num_sources - 1 : config.num_sources;
}

/// Deterministic for a fixed seed: two builds with equal seeds are bitwise
/// identical. Biases and learned upsampling weights start at zero (zero weights
/// make the learned interpolator coincide with linear interpolation).
template <typename T>
ParameterSet<T> build(const ModelConfig& config, std::uint64_t rng_seed, bool trainable = true) {
    validate_config(config);
    std::mt19937_64 rng(rng_seed);
    ParameterSet<T> params;

    auto add_conv = [&](const std::string& layer, std::int64_t f, std::int64_t in_ch,
                        std::int64_t out_ch) {
        params.add(layer + ".filters", detail::init_filters<T>(f, in_ch, out_ch, rng, trainable));
        params.add(layer + ".bias", Tensor<T>::zeros(Shape{1, 1, out_ch}, trainable));
    };

    const std::int64_t L = config.levels;
    const std::int64_t fc = config.extra_filters;
    std::int64_t ch = config.num_channels;
    for (std::int64_t i = 1; i <= L; ++i) {
        add_conv("ds_" + std::to_string(i), config.down_filter_size, ch, fc * i);
        ch = fc * i;
    }
    add_conv("bottleneck", config.down_filter_size, ch, fc * (L + 1));
    ch = fc * (L + 1);
    for (std::int64_t i = L; i >= 1; --i) {
        const std::string layer = "us_" + std::to_string(i);
        if (config.upsampling == Upsampling::learned)
            params.add(layer + ".upsample_w", Tensor<T>::zeros(Shape{1, 1, ch}, trainable));
        add_conv(layer, config.up_filter_size, ch + fc * i, fc * i);
        ch = fc * i;
    }
    ch += config.num_channels;
    for (int k = 1; k <= head_count(config); ++k)
        add_conv("head_" + std::to_string(k), 1, ch, config.num_channels);
    return params;
}

/// Runs the network on a mixture window of shape (batch, input_samples,
/// num_channels) and returns one tensor per source, each (batch, output_samples,
/// num_channels). In difference mode the last source is the centre-cropped
/// mixture minus the sum of the tanh heads and is deliberately not range-clamped.
template <typename T>
std::vector<TensorPtr<T>> forward(const ParameterSet<T>& params, const ModelConfig& config,
                                  const TensorPtr<T>& mixture) {
    if (mixture->shape.frames != config.input_samples ||
        mixture->shape.channels != config.num_channels)
        throw ShapeError("forward: mixture shape " + mixture->shape.str() + " does not match (" +
                         std::to_string(config.input_samples) + ", " +
                         std::to_string(config.num_channels) + ")");

    const Padding pad = config.context ? Padding::valid : Padding::same;
    const T slope = static_cast<T>(config.leaky_slope);
    const std::int64_t L = config.levels;

    auto x = mixture;
    std::vector<TensorPtr<T>> skips(L + 1);
    for (std::int64_t i = 1; i <= L; ++i) {
        const std::string layer = "ds_" + std::to_string(i);
        x = activation(conv1d(x, params.conv(layer), pad, layer), Activation::leaky_relu, slope);
        skips[i] = x;
        x = decimate(x, config.context);
    }
    x = activation(conv1d(x, params.conv("bottleneck"), pad, "bottleneck"),
                   Activation::leaky_relu, slope);
    for (std::int64_t i = L; i >= 1; --i) {
        const std::string layer = "us_" + std::to_string(i);
        if (config.upsampling == Upsampling::learned) {
            auto w = params.upsample_weights(layer);
            x = config.context ? upsample_learned(x, w) : upsample_learned_double(x, w);
        } else {
            x = config.context ? upsample_linear(x) : upsample_double(x);
        }
        x = concat_crop(x, skips[i]);
        x = activation(conv1d(x, params.conv(layer), pad, layer), Activation::leaky_relu, slope);
    }
    x = concat_crop(x, mixture);

    std::vector<TensorPtr<T>> sources;
    for (int k = 1; k <= head_count(config); ++k) {
        const std::string layer = "head_" + std::to_string(k);
        sources.push_back(
            activation(conv1d(x, params.conv(layer), Padding::valid, layer), Activation::tanh));
    }
    if (config.difference_output) {
        auto rest = crop_center(mixture, config.output_samples);
        for (const auto& s : sources) rest = sub(rest, s);
        sources.push_back(rest);
    }
    return sources;
}

} // namespace waveunet
