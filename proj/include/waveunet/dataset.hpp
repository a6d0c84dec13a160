#pragma once

// Dataset directory convention: one directory per track holding one WAV per
// source name plus an optional mixture.wav (re-derived from the stems when
// absent). Singing-voice profile uses [vocals, accompaniment], multi-instrument
// uses [bass, drums, other, vocals].

#include <algorithm>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "waveunet/audio.hpp"
#include "waveunet/config.hpp"
#include "waveunet/errors.hpp"

namespace waveunet {

struct TrackEntry {
    std::string name;
    std::string dir;
    std::optional<std::string> mixture_path;
    std::vector<std::string> source_paths; // ordered like DatasetIndex::source_names
};

struct DatasetIndex {
    std::vector<TrackEntry> tracks;
    std::vector<std::string> source_names;
};

/// Scans `root` for track directories in sorted order. Every track must provide
/// every source exactly once.
inline DatasetIndex index_dataset(const std::string& root,
                                  const std::vector<std::string>& source_names) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw DataError("dataset directory '" + root + "' not found");

    DatasetIndex index;
    index.source_names = source_names;
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());

    for (const auto& dir : dirs) {
        TrackEntry track;
        track.name = dir.filename().string();
        track.dir = dir.string();
        for (const auto& source : source_names) {
            const fs::path p = dir / (source + ".wav");
            if (!fs::is_regular_file(p))
                throw DataError("track '" + track.name + "' is missing source file '" + source +
                                ".wav'");
            track.source_paths.push_back(p.string());
        }
        const fs::path mix = dir / "mixture.wav";
        if (fs::is_regular_file(mix)) track.mixture_path = mix.string();
        index.tracks.push_back(std::move(track));
    }
    return index;
}

struct TrackPair {
    std::string name;
    std::vector<AudioClip> sources; // equal rate, length, channel count
    AudioClip mixture;              // always the sample-wise sum of the sources
};

inline AudioClip derive_mixture(const std::vector<AudioClip>& sources) {
    AudioClip mix = sources.front();
    for (std::size_t k = 1; k < sources.size(); ++k)
        for (int c = 0; c < mix.channel_count(); ++c)
            for (std::int64_t t = 0; t < mix.length(); ++t)
                mix.channels[c][t] += sources[k].channels[c][t];
    return mix;
}

inline TrackPair make_track_pair(std::string name, std::vector<AudioClip> sources) {
    if (sources.empty()) throw DataError("track '" + name + "' has no sources");
    for (const auto& s : sources)
        if (s.sample_rate != sources[0].sample_rate || s.length() != sources[0].length() ||
            s.channel_count() != sources[0].channel_count())
            throw DataError("track '" + name +
                            "': sources differ in rate, length or channel count");
    TrackPair pair;
    pair.name = std::move(name);
    pair.mixture = derive_mixture(sources);
    pair.sources = std::move(sources);
    return pair;
}

/// Decodes a track's stems, applies the preprocessing the model expects
/// (channel layout, sample rate) and derives the mixture from the stems.
inline TrackPair load_track_pair(const TrackEntry& entry, const ModelConfig& config) {
    std::vector<AudioClip> sources;
    for (const auto& path : entry.source_paths) {
        AudioClip clip = read_wav(path);
        if (config.num_channels == 1) {
            clip = to_mono(clip);
        } else if (clip.channel_count() == 1) {
            clip.channels.push_back(clip.channels[0]); // mono stem under a stereo model
        } else if (clip.channel_count() != config.num_channels) {
            throw DataError("track '" + entry.name + "': '" + path + "' has " +
                            std::to_string(clip.channel_count()) + " channels, model expects " +
                            std::to_string(config.num_channels));
        }
        clip = resample(clip, config.sample_rate);
        sources.push_back(std::move(clip));
    }
    return make_track_pair(entry.name, std::move(sources));
}

/// Deterministic seeded shuffle split. Guarantees both partitions are non-empty
/// whenever the fraction is strictly between 0 and 1.
inline std::pair<std::vector<TrackEntry>, std::vector<TrackEntry>> split_dataset(
    const DatasetIndex& index, double val_fraction, std::uint64_t seed) {
    if (val_fraction < 0.0 || val_fraction >= 1.0)
        throw ConfigError("val_fraction must be in [0, 1)");
    std::vector<std::size_t> order(index.tracks.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    auto val_count = static_cast<std::size_t>(std::llround(val_fraction * order.size()));
    if (val_fraction > 0.0 && val_count == 0) val_count = 1;
    if (val_count >= order.size()) val_count = order.size() - 1;

    std::pair<std::vector<TrackEntry>, std::vector<TrackEntry>> split;
    for (std::size_t i = 0; i < order.size(); ++i)
        (i < val_count ? split.second : split.first).push_back(index.tracks[order[i]]);
    return split;
}

} // namespace waveunet
