#pragma once

// Full-track separation: the track is tiled by consecutive output windows, each
// fed to the network with its surrounding input context (zero-padded where the
// context overruns the track), and every output sample is taken from exactly
// one window. No blending between neighbouring predictions.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "waveunet/audio.hpp"
#include "waveunet/config.hpp"
#include "waveunet/model.hpp"
#include "waveunet/threading.hpp"

namespace waveunet {

struct WindowPlan {
    std::int64_t output_start = 0; // track position of the output window
    std::int64_t emit_offset = 0;  // first in-window sample this window contributes
    std::int64_t emit_count = 0;
};

/// Tiling of a track of `track_len` samples by `window` output frames. The last
/// window is aligned to the track end and only contributes the samples not
/// already covered by the previous window.
inline std::vector<WindowPlan> plan_windows(std::int64_t track_len, std::int64_t window) {
    std::vector<WindowPlan> plan;
    if (track_len <= window) {
        plan.push_back({0, 0, track_len});
        return plan;
    }
    std::int64_t covered = 0;
    while (covered + window <= track_len) {
        plan.push_back({covered, 0, window});
        covered += window;
    }
    if (covered < track_len)
        plan.push_back({track_len - window, covered - (track_len - window), track_len - covered});
    return plan;
}

/// Copies an input window [start, start + count) of one channel into `dst`,
/// zero-filling the part that lies outside the track.
inline void copy_window(const std::vector<float>& samples, std::int64_t start, std::int64_t count,
                        float* dst, std::int64_t stride) {
    const auto len = static_cast<std::int64_t>(samples.size());
    for (std::int64_t i = 0; i < count; ++i) {
        const std::int64_t p = start + i;
        dst[i * stride] = (p >= 0 && p < len) ? samples[p] : 0.0f;
    }
}

/// Runs the model on every planned window of `mixture` and concatenates the
/// predictions into K clips of exactly the input length. Window passes run in
/// parallel; assembly order is fixed by window index.
inline std::vector<AudioClip> separate_track(const ParameterSet<float>& params,
                                             const ModelConfig& config,
                                             const AudioClip& mixture) {
    if (mixture.sample_rate != config.sample_rate)
        throw UsageError("separate_track: clip is at " + std::to_string(mixture.sample_rate) +
                         " Hz but the model expects " + std::to_string(config.sample_rate) + " Hz");
    if (mixture.channel_count() != config.num_channels)
        throw UsageError("separate_track: clip has " + std::to_string(mixture.channel_count()) +
                         " channels but the model expects " +
                         std::to_string(config.num_channels));

    const std::int64_t len = mixture.length();
    const int K = config.num_sources;
    const int C = config.num_channels;
    std::vector<AudioClip> out(K);
    for (auto& clip : out) {
        clip.sample_rate = mixture.sample_rate;
        clip.channels.assign(C, std::vector<float>(len, 0.0f));
    }
    if (len == 0) return out;

    const auto plan = plan_windows(len, config.output_samples);
    const std::int64_t margin = config.context_margin();

    parallel_for(static_cast<std::int64_t>(plan.size()), [&](std::int64_t wi) {
        const WindowPlan& w = plan[wi];
        auto input = Tensor<float>::zeros(Shape{1, config.input_samples, C});
        for (int c = 0; c < C; ++c)
            copy_window(mixture.channels[c], w.output_start - margin, config.input_samples,
                        input->data.data() + c, C);
        const auto sources = forward(params, config, input);
        for (int k = 0; k < K; ++k)
            for (int c = 0; c < C; ++c)
                for (std::int64_t i = 0; i < w.emit_count; ++i)
                    out[k].channels[c][w.output_start + w.emit_offset + i] =
                        sources[k]->at(0, w.emit_offset + i, c);
    });
    return out;
}

} // namespace waveunet
