#pragma once

// Integer frame/channel algebra of the network. shape_trace simulates the whole
// graph without touching any tensor data; compute_valid_sizes searches for the
// smallest feasible output window. With context enabled the calculus keeps every
// feature map odd so decimation can be undone without extrapolating borders.

#include <cstdint>
#include <string>
#include <vector>

#include "waveunet/config.hpp"
#include "waveunet/errors.hpp"

namespace waveunet {

struct TraceRow {
    std::string block;
    std::int64_t frames = 0;
    std::int64_t channels = 0;
};

/// One row per block, in execution order. Throws SizeError naming the first
/// block whose feature map becomes infeasible.
inline std::vector<TraceRow> shape_trace(const ModelConfig& config) {
    const std::int64_t L = config.levels;
    const std::int64_t fd = config.down_filter_size;
    const std::int64_t fu = config.up_filter_size;
    const std::int64_t fc = config.extra_filters;
    const bool ctx = config.context;

    std::vector<TraceRow> rows;
    std::vector<std::int64_t> skip_frames(L + 1, 0);
    std::int64_t n = config.input_samples;
    std::int64_t ch = config.num_channels;
    rows.push_back({"input", n, ch});

    for (std::int64_t i = 1; i <= L; ++i) {
        const std::string name = "ds_" + std::to_string(i);
        if (ctx) {
            if (n < fd)
                throw SizeError(name + ".conv: feature map of " + std::to_string(n) +
                                " frames is smaller than the filter (" + std::to_string(fd) + ")");
            n = n - fd + 1;
        }
        ch = fc * i;
        rows.push_back({name + ".conv", n, ch});
        skip_frames[i] = n;
        if (ctx) {
            if (n < 3 || n % 2 == 0)
                throw SizeError(name + ".decimate: context mode needs an odd frame count >= 3, got " +
                                std::to_string(n));
        } else if (n % 2 != 0) {
            throw SizeError(name + ".decimate: input samples must be divisible by 2^levels, got " +
                            std::to_string(n) + " frames at level " + std::to_string(i));
        }
        n = (n + 1) / 2;
        rows.push_back({name + ".decimate", n, ch});
    }

    if (ctx) {
        if (n < fd)
            throw SizeError("bottleneck: feature map of " + std::to_string(n) +
                            " frames is smaller than the filter (" + std::to_string(fd) + ")");
        n = n - fd + 1;
    }
    ch = fc * (L + 1);
    rows.push_back({"bottleneck", n, ch});

    for (std::int64_t i = L; i >= 1; --i) {
        const std::string name = "us_" + std::to_string(i);
        if (n < 2)
            throw SizeError(name + ".upsample: need at least 2 frames, got " + std::to_string(n));
        n = ctx ? 2 * n - 1 : 2 * n;
        rows.push_back({name + ".upsample", n, ch});
        if (skip_frames[i] < n)
            throw SizeError(name + ".concat: skip connection has " +
                            std::to_string(skip_frames[i]) + " frames, current map has " +
                            std::to_string(n));
        if ((skip_frames[i] - n) % 2 != 0)
            throw SizeError(name + ".concat: odd crop difference of " +
                            std::to_string(skip_frames[i] - n) + " frames");
        ch = ch + fc * i;
        rows.push_back({name + ".concat", n, ch});
        if (ctx) {
            if (n < fu)
                throw SizeError(name + ".conv: feature map of " + std::to_string(n) +
                                " frames is smaller than the filter (" + std::to_string(fu) + ")");
            n = n - fu + 1;
        }
        ch = fc * i;
        rows.push_back({name + ".conv", n, ch});
    }

    if (config.input_samples < n)
        throw SizeError("concat_input: input of " + std::to_string(config.input_samples) +
                        " frames is shorter than the final map (" + std::to_string(n) + ")");
    if ((config.input_samples - n) % 2 != 0)
        throw SizeError("concat_input: odd crop difference of " +
                        std::to_string(config.input_samples - n) + " frames");
    ch = ch + config.num_channels;
    rows.push_back({"concat_input", n, ch});
    rows.push_back({"output", n,
                    static_cast<std::int64_t>(config.num_sources) * config.num_channels});
    return rows;
}

/// Full config validation: plain invariants plus a shape_trace pass proving the
/// (input_samples, output_samples) pair is realizable.
inline void validate_config(const ModelConfig& config) {
    if (config.levels < 1) throw ConfigError("levels must be >= 1");
    if (config.extra_filters < 1) throw ConfigError("extra_filters must be >= 1");
    if (config.num_sources < 2)
        throw ConfigError("num_sources must be >= 2 (the difference layer needs at least "
                          "one free source and one derived source)");
    if (config.num_channels != 1 && config.num_channels != 2)
        throw ConfigError("num_channels must be 1 (mono) or 2 (stereo)");
    if (config.down_filter_size < 1 || config.down_filter_size % 2 == 0)
        throw ConfigError("down_filter_size must be odd and >= 1");
    if (config.up_filter_size < 1 || config.up_filter_size % 2 == 0)
        throw ConfigError("up_filter_size must be odd and >= 1");
    if (config.input_samples < 1 || config.output_samples < 1)
        throw ConfigError("window sizes must be >= 1");
    if (!config.context && config.input_samples != config.output_samples)
        throw ConfigError("without context the input and output windows must be equal");
    if (config.context && config.input_samples <= config.output_samples)
        throw ConfigError("context mode needs input_samples > output_samples");
    if (!config.source_names.empty() &&
        static_cast<int>(config.source_names.size()) != config.num_sources)
        throw ConfigError("source_names must list exactly num_sources names");
    if (config.sample_rate < 1) throw ConfigError("sample_rate must be >= 1");

    std::vector<TraceRow> rows;
    try {
        rows = shape_trace(config);
    } catch (const SizeError& e) {
        throw ConfigError(std::string("window sizes are infeasible: ") + e.what());
    }
    if (rows.back().frames != config.output_samples)
        throw ConfigError("window sizes are not a fixed point of the size calculus: input " +
                          std::to_string(config.input_samples) + " yields output " +
                          std::to_string(rows.back().frames) + ", configured " +
                          std::to_string(config.output_samples));
}

/// Smallest feasible output window >= desired_output together with the input
/// window it implies. Searches forward over candidate bottleneck sizes and
/// confirms each candidate by round-tripping through shape_trace.
inline std::pair<std::int64_t, std::int64_t> compute_valid_sizes(const ModelConfig& config,
                                                                 std::int64_t desired_output) {
    if (desired_output < 1) throw UsageError("desired output size must be >= 1");
    const std::int64_t L = config.levels;
    const std::int64_t fd = config.down_filter_size;
    const std::int64_t fu = config.up_filter_size;

    ModelConfig probe = config;
    if (!config.context) {
        // Same-padded convolutions never shrink maps; the only constraints are
        // divisibility by 2^L and a bottleneck wide enough to upsample.
        const std::int64_t unit = std::int64_t(1) << L;
        std::int64_t ls = ((desired_output + unit - 1) / unit) * unit;
        while (ls / unit < 2) ls += unit;
        probe.input_samples = ls;
        probe.output_samples = ls;
        validate_config(probe);
        return {ls, ls};
    }

    for (std::int64_t bottleneck = 2;; ++bottleneck) {
        std::int64_t ls = bottleneck;
        bool feasible = true;
        for (std::int64_t i = 0; i < L && feasible; ++i) {
            if (ls < 2 || 2 * ls - 1 < fu) feasible = false;
            ls = 2 * ls - fu;
        }
        if (!feasible || ls < desired_output) continue;

        std::int64_t lm = bottleneck + fd - 1;
        for (std::int64_t i = 0; i < L; ++i) lm = 2 * lm + fd - 2;

        probe.input_samples = lm;
        probe.output_samples = ls;
        validate_config(probe);
        return {lm, ls};
    }
}

} // namespace waveunet
