#pragma once

// Segment-wise SDR with silent-segment exclusion and robust (median/MAD)
// summary statistics. Plain SDR is the raw energy ratio; projected mode first
// rescales the reference by <est, ref>/||ref||^2 so pure gain errors score as
// perfect. Zero-error segments yield +inf rather than a dB cap: means are taken
// over finite values only, with the infinite count disclosed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "waveunet/audio.hpp"
#include "waveunet/dataset.hpp"
#include "waveunet/separate.hpp"

namespace waveunet {

enum class SdrMode { plain, projected };

inline const char* to_string(SdrMode mode) {
    return mode == SdrMode::plain ? "plain" : "projected";
}

struct SegmentScore {
    enum class Kind { finite, infinite, excluded };
    std::string track;
    std::string source;
    std::int64_t segment = 0;
    Kind kind = Kind::finite;
    double db = 0.0; // meaningful only when kind == finite
};

struct SummaryStats {
    double median_db = 0.0;
    double mad_db = 0.0;
    std::optional<double> mean_db; // absent when no finite values exist
    std::optional<double> sd_db;
    std::int64_t n_segments = 0;
    std::int64_t n_excluded = 0;
    std::int64_t n_infinite = 0;
};

/// Splits both clips into non-overlapping segments of round(segment_seconds *
/// rate) samples (final partial segment dropped), flattens channels, and scores
/// each segment. A segment with zero reference energy is excluded; zero error
/// energy scores +inf.
inline std::vector<SegmentScore> segment_sdr(const AudioClip& reference,
                                             const AudioClip& estimate, double segment_seconds,
                                             SdrMode mode) {
    if (reference.sample_rate != estimate.sample_rate ||
        reference.length() != estimate.length() ||
        reference.channel_count() != estimate.channel_count())
        throw UsageError("segment_sdr: reference and estimate disagree in rate, length or "
                         "channel count");
    if (segment_seconds <= 0.0) throw UsageError("segment_sdr: segment_seconds must be > 0");

    const auto seg_len =
        static_cast<std::int64_t>(std::llround(segment_seconds * reference.sample_rate));
    if (seg_len < 1) throw UsageError("segment_sdr: segment shorter than one sample");
    const std::int64_t n_segments = reference.length() / seg_len;
    const int ch = reference.channel_count();

    std::vector<SegmentScore> scores;
    scores.reserve(n_segments);
    for (std::int64_t seg = 0; seg < n_segments; ++seg) {
        const std::int64_t start = seg * seg_len;
        double ref_energy = 0.0, dot = 0.0, est_energy = 0.0, err_direct = 0.0;
        for (int c = 0; c < ch; ++c)
            for (std::int64_t i = start; i < start + seg_len; ++i) {
                const double s = reference.channels[c][i];
                const double e = estimate.channels[c][i];
                ref_energy += s * s;
                est_energy += e * e;
                dot += s * e;
                err_direct += (s - e) * (s - e);
            }

        SegmentScore score;
        score.segment = seg;
        if (ref_energy == 0.0) {
            score.kind = SegmentScore::Kind::excluded;
            scores.push_back(score);
            continue;
        }
        double signal, error;
        if (mode == SdrMode::plain) {
            signal = ref_energy;
            error = err_direct;
        } else {
            const double alpha = dot / ref_energy;
            signal = alpha * alpha * ref_energy;
            error = signal - 2.0 * alpha * dot + est_energy; // ||alpha*s - e||^2
            if (error < 0.0) error = 0.0;                    // expansion rounding
        }
        if (error == 0.0) {
            score.kind = SegmentScore::Kind::infinite;
        } else {
            score.kind = SegmentScore::Kind::finite;
            score.db = 10.0 * std::log10(signal / error);
        }
        scores.push_back(score);
    }
    return scores;
}

namespace detail {

// Median over values that may contain +inf, which orders above every finite
// value. For even counts the median is the mean of the two middles; when those
// straddle finite/+inf (exactly half the values infinite) the finite lower
// middle is returned, so the median is infinite only when more than half are.
inline double ordered_median(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    if (n % 2 == 1) return values[n / 2];
    const double lo = values[n / 2 - 1], hi = values[n / 2];
    if (std::isinf(hi) && !std::isinf(lo)) return lo;
    return (lo + hi) / 2.0;
}

} // namespace detail

/// Median and MAD are computed over finite and infinite values by ordering;
/// mean and (population) SD over the finite values only. Throws when every
/// segment was excluded.
inline SummaryStats summarize(const std::vector<SegmentScore>& scores) {
    SummaryStats stats;
    stats.n_segments = static_cast<std::int64_t>(scores.size());
    std::vector<double> values;
    std::vector<double> finite;
    for (const auto& s : scores) {
        switch (s.kind) {
            case SegmentScore::Kind::excluded:
                stats.n_excluded += 1;
                break;
            case SegmentScore::Kind::infinite:
                stats.n_infinite += 1;
                values.push_back(std::numeric_limits<double>::infinity());
                break;
            case SegmentScore::Kind::finite:
                // Projected scoring of an exactly orthogonal estimate yields
                // -inf; it participates in the order statistics but not the mean.
                values.push_back(s.db);
                if (std::isfinite(s.db)) finite.push_back(s.db);
                break;
        }
    }
    if (values.empty()) throw UsageError("summarize: every segment was excluded");

    stats.median_db = detail::ordered_median(values);
    std::vector<double> deviations;
    deviations.reserve(values.size());
    for (const double v : values)
        deviations.push_back(std::isinf(v) && std::isinf(stats.median_db)
                                 ? 0.0
                                 : std::abs(v - stats.median_db));
    stats.mad_db = detail::ordered_median(std::move(deviations));

    if (!finite.empty()) {
        double mean = 0.0;
        for (const double v : finite) mean += v;
        mean /= static_cast<double>(finite.size());
        double var = 0.0;
        for (const double v : finite) var += (v - mean) * (v - mean);
        var /= static_cast<double>(finite.size());
        stats.mean_db = mean;
        stats.sd_db = std::sqrt(var);
    }
    return stats;
}

struct SourceReport {
    std::string source;
    SummaryStats stats;
};

struct EvalReport {
    SdrMode mode = SdrMode::plain;
    double segment_seconds = 1.0;
    std::string checkpoint_hash;
    std::string score_pooling = "all_segments"; // segments pooled across tracks
    std::vector<SourceReport> per_source;
    std::vector<SegmentScore> scores; // full list, for distribution plots
    std::int64_t n_failed_tracks = 0;
};

using SeparatorFn =
    std::function<std::vector<AudioClip>(const TrackPair&)>; // mixture -> K estimates

/// Separates every track of the index, scores every source, and pools the
/// segments of the whole dataset per source. Per-track failures are logged to
/// `log`, skipped, and counted in n_failed_tracks.
inline EvalReport evaluate_dataset(const SeparatorFn& separator, const DatasetIndex& index,
                                   const ModelConfig& config, double segment_seconds,
                                   SdrMode mode, std::ostream* log = nullptr) {
    EvalReport report;
    report.mode = mode;
    report.segment_seconds = segment_seconds;
    const auto names = index.source_names;
    std::vector<std::vector<SegmentScore>> pooled(names.size());

    for (const auto& entry : index.tracks) {
        try {
            const TrackPair pair = load_track_pair(entry, config);
            const auto estimates = separator(pair);
            if (estimates.size() != names.size())
                throw UsageError("separator returned " + std::to_string(estimates.size()) +
                                 " sources, dataset has " + std::to_string(names.size()));
            for (std::size_t k = 0; k < names.size(); ++k) {
                auto scores = segment_sdr(pair.sources[k], estimates[k], segment_seconds, mode);
                for (auto& s : scores) {
                    s.track = entry.name;
                    s.source = names[k];
                    pooled[k].push_back(s);
                    report.scores.push_back(std::move(s));
                }
            }
        } catch (const std::exception& e) {
            report.n_failed_tracks += 1;
            if (log) *log << "track '" << entry.name << "' failed: " << e.what() << "\n";
        }
    }

    for (std::size_t k = 0; k < names.size(); ++k) {
        if (pooled[k].empty()) continue; // every track failed
        SourceReport sr;
        sr.source = names[k];
        sr.stats = summarize(pooled[k]);
        report.per_source.push_back(std::move(sr));
    }
    return report;
}

inline EvalReport evaluate_dataset(const ParameterSet<float>& params, const ModelConfig& config,
                                   const DatasetIndex& index, double segment_seconds,
                                   SdrMode mode, std::ostream* log = nullptr) {
    return evaluate_dataset(
        [&](const TrackPair& pair) { return separate_track(params, config, pair.mixture); },
        index, config, segment_seconds, mode, log);
}

inline nlohmann::json report_to_json(const EvalReport& report) {
    nlohmann::json j;
    j["mode"] = to_string(report.mode);
    j["segment_seconds"] = report.segment_seconds;
    j["checkpoint_hash"] = report.checkpoint_hash;
    j["score_pooling"] = report.score_pooling;
    j["n_failed_tracks"] = report.n_failed_tracks;
    j["sources"] = nlohmann::json::object();
    for (const auto& sr : report.per_source) {
        nlohmann::json s;
        s["median_db"] = sr.stats.median_db;
        s["mad_db"] = sr.stats.mad_db;
        s["mean_db"] = sr.stats.mean_db ? nlohmann::json(*sr.stats.mean_db) : nlohmann::json();
        s["sd_db"] = sr.stats.sd_db ? nlohmann::json(*sr.stats.sd_db) : nlohmann::json();
        s["n_segments"] = sr.stats.n_segments;
        s["n_excluded"] = sr.stats.n_excluded;
        s["n_infinite"] = sr.stats.n_infinite;
        j["sources"][sr.source] = std::move(s);
    }
    return j;
}

/// CSV of every segment score: track, source, segment, sdr_db|excluded|inf.
inline void write_scores_csv(const EvalReport& report, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot open '" + path + "' for writing");
    f << "track,source,segment,sdr_db\n";
    for (const auto& s : report.scores) {
        f << s.track << ',' << s.source << ',' << s.segment << ',';
        switch (s.kind) {
            case SegmentScore::Kind::finite: f << s.db; break;
            case SegmentScore::Kind::infinite: f << "inf"; break;
            case SegmentScore::Kind::excluded: f << "excluded"; break;
        }
        f << '\n';
    }
}

} // namespace waveunet
