#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "waveunet/evaluation.hpp"

using namespace waveunet;
using Catch::Approx;

namespace {

namespace fs = std::filesystem;

AudioClip const_clip(int rate, std::int64_t len, float value) {
    AudioClip clip;
    clip.sample_rate = rate;
    clip.channels = {std::vector<float>(len, value)};
    return clip;
}

AudioClip sine_clip(int rate, double freq, std::int64_t len, float amp) {
    AudioClip clip;
    clip.sample_rate = rate;
    clip.channels = {std::vector<float>(len)};
    for (std::int64_t t = 0; t < len; ++t)
        clip.channels[0][t] = amp * static_cast<float>(std::sin(2.0 * M_PI * freq * t / rate));
    return clip;
}

std::vector<SegmentScore> finite_scores(const std::vector<double>& values) {
    std::vector<SegmentScore> scores;
    for (std::size_t i = 0; i < values.size(); ++i) {
        SegmentScore s;
        s.segment = static_cast<std::int64_t>(i);
        s.kind = SegmentScore::Kind::finite;
        s.db = values[i];
        scores.push_back(s);
    }
    return scores;
}

// independent sort-based median/MAD oracle over finite values
std::pair<double, double> median_mad_oracle(std::vector<double> v) {
    auto med = [](std::vector<double> x) {
        std::sort(x.begin(), x.end());
        const std::size_t n = x.size();
        return n % 2 == 1 ? x[n / 2] : 0.5 * (x[n / 2 - 1] + x[n / 2]);
    };
    const double m = med(v);
    for (auto& x : v) x = std::abs(x - m);
    return {m, med(v)};
}

} // namespace

TEST_CASE("plain SDR oracle values", "[sdr]") {
    const auto ref = sine_clip(8000, 440.0, 16000, 0.5f);

    SECTION("silent estimate scores 0 dB exactly") {
        const auto scores = segment_sdr(ref, const_clip(8000, 16000, 0.0f), 1.0, SdrMode::plain);
        REQUIRE(scores.size() == 2);
        for (const auto& s : scores) {
            REQUIRE(s.kind == SegmentScore::Kind::finite);
            REQUIRE(s.db == 0.0); // error energy equals signal energy
        }
    }
    SECTION("half-gain estimate: plain 6.0206 dB, projected +inf") {
        AudioClip half = ref;
        for (auto& v : half.channels[0]) v *= 0.5f;
        const auto plain = segment_sdr(ref, half, 1.0, SdrMode::plain);
        for (const auto& s : plain) REQUIRE(s.db == Approx(10.0 * std::log10(4.0)).margin(1e-4));

        const auto projected = segment_sdr(ref, half, 1.0, SdrMode::projected);
        for (const auto& s : projected) REQUIRE(s.kind == SegmentScore::Kind::infinite);
    }
    SECTION("silent reference segments are excluded") {
        AudioClip gated = ref;
        std::fill(gated.channels[0].begin(), gated.channels[0].begin() + 8000, 0.0f);
        const auto scores = segment_sdr(gated, ref, 1.0, SdrMode::plain);
        REQUIRE(scores[0].kind == SegmentScore::Kind::excluded);
        REQUIRE(scores[1].kind != SegmentScore::Kind::excluded);
    }
    SECTION("shape mismatch") {
        REQUIRE_THROWS_AS(
            segment_sdr(ref, const_clip(8000, 100, 0.0f), 1.0, SdrMode::plain), UsageError);
    }
}

TEST_CASE("SDR scale invariances", "[sdr][property]") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<float> dist(-0.5f, 0.5f);
    AudioClip ref = const_clip(4000, 4000, 0.0f);
    AudioClip est = ref;
    for (auto& v : ref.channels[0]) v = dist(rng);
    for (std::int64_t i = 0; i < est.length(); ++i)
        est.channels[0][i] = ref.channels[0][i] + 0.1f * dist(rng);

    const double base = segment_sdr(ref, est, 1.0, SdrMode::plain)[0].db;
    AudioClip ref2 = ref, est2 = est;
    for (auto& v : ref2.channels[0]) v *= 0.3f;
    for (auto& v : est2.channels[0]) v *= 0.3f;
    // joint scaling leaves plain SDR unchanged
    REQUIRE(segment_sdr(ref2, est2, 1.0, SdrMode::plain)[0].db == Approx(base).margin(1e-6));

    const double proj = segment_sdr(ref, est, 1.0, SdrMode::projected)[0].db;
    AudioClip est3 = est;
    for (auto& v : est3.channels[0]) v *= 7.5f;
    // estimate-only scaling leaves projected SDR unchanged
    REQUIRE(segment_sdr(ref, est3, 1.0, SdrMode::projected)[0].db == Approx(proj).margin(1e-6));
}

TEST_CASE("segment tiling drops the final partial segment", "[sdr]") {
    const auto ref = sine_clip(1000, 100.0, 4500, 0.5f);
    const auto est = const_clip(1000, 4500, 0.1f);
    REQUIRE(segment_sdr(ref, est, 1.0, SdrMode::plain).size() == 4);
    REQUIRE(segment_sdr(ref, est, 2.0, SdrMode::plain).size() == 2); // halves (+-1)
    REQUIRE(segment_sdr(ref, est, 0.5, SdrMode::plain).size() == 9);
}

TEST_CASE("summarize oracle values", "[stats]") {
    SECTION("hand-computed list") {
        const auto stats = summarize(finite_scores({1, 2, 3, 4, 100}));
        REQUIRE(stats.median_db == 3.0);
        REQUIRE(stats.mad_db == 1.0);
        REQUIRE(*stats.mean_db == Approx(22.0));
        REQUIRE(stats.n_segments == 5);
    }
    SECTION("single value") {
        const auto stats = summarize(finite_scores({7.5}));
        REQUIRE(stats.median_db == 7.5);
        REQUIRE(stats.mad_db == 0.0);
        REQUIRE(*stats.sd_db == 0.0);
    }
    SECTION("all excluded is an error") {
        SegmentScore s;
        s.kind = SegmentScore::Kind::excluded;
        REQUIRE_THROWS_AS(summarize({s, s}), UsageError);
    }
}

TEST_CASE("median/MAD against a brute-force oracle", "[stats][property]") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> dist(-30.0, 30.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng() % 40;
        std::vector<double> values(n);
        for (auto& v : values) v = dist(rng);
        const auto stats = summarize(finite_scores(values));
        const auto [med, mad] = median_mad_oracle(values);
        REQUIRE(stats.median_db == Approx(med).margin(1e-12));
        REQUIRE(stats.mad_db == Approx(mad).margin(1e-12));
    }
}

TEST_CASE("MAD interpretation: at least half the values lie within MAD of the median",
          "[stats][property]") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> dist(-20.0, 20.0);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> values(1 + rng() % 60);
        for (auto& v : values) v = dist(rng);
        const auto stats = summarize(finite_scores(values));
        std::int64_t within = 0;
        for (const double v : values)
            if (std::abs(v - stats.median_db) <= stats.mad_db) within += 1;
        REQUIRE(2 * within >= static_cast<std::int64_t>(values.size()));
    }
}

TEST_CASE("infinite scores order above all finite values", "[stats]") {
    auto scores = finite_scores({1, 2, 3});
    SegmentScore inf_score;
    inf_score.kind = SegmentScore::Kind::infinite;

    SECTION("minority of infinities leaves the median finite") {
        scores.push_back(inf_score); // 1 2 3 inf -> middles (2, 3)
        const auto stats = summarize(scores);
        REQUIRE(stats.median_db == 2.5);
        REQUIRE(stats.n_infinite == 1);
        REQUIRE(*stats.mean_db == Approx(2.0)); // finite values only
    }
    SECTION("exactly half infinite: median stays finite") {
        scores.push_back(inf_score);
        scores.push_back(inf_score);
        scores.erase(scores.begin()); // 2 3 inf inf
        const auto stats = summarize(scores);
        REQUIRE(stats.median_db == 3.0);
    }
    SECTION("majority infinite: median is +inf, MAD collapses to zero") {
        std::vector<SegmentScore> mostly_inf = {inf_score, inf_score, inf_score};
        mostly_inf.push_back(finite_scores({5})[0]);
        const auto stats = summarize(mostly_inf);
        REQUIRE(std::isinf(stats.median_db));
        REQUIRE(stats.median_db > 0);
        REQUIRE(stats.mad_db == 0.0);
    }
}

TEST_CASE("median robustness: permutations and upper-tail inflation", "[stats][property]") {
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> dist(-10.0, 10.0);
    std::vector<double> values(31);
    for (auto& v : values) v = dist(rng);
    const double med = summarize(finite_scores(values)).median_db;

    for (int trial = 0; trial < 20; ++trial) {
        auto shuffled = values;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        REQUIRE(summarize(finite_scores(shuffled)).median_db == med);
    }
    auto inflated = values;
    for (auto& v : inflated)
        if (v > med) v += 1000.0 * (1.0 + dist(rng) * 0.01);
    REQUIRE(summarize(finite_scores(inflated)).median_db == med);
}

TEST_CASE("mean tracks median for normal synthetic scores", "[stats][property]") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> dist(4.0, 3.0);
    const int n = 10000;
    std::vector<double> values(n);
    for (auto& v : values) v = dist(rng);
    const auto stats = summarize(finite_scores(values));
    REQUIRE(std::abs(*stats.mean_db - stats.median_db) < 2.0 * *stats.sd_db / std::sqrt(n));
}

namespace {

// two-source fixture dataset on disk: vocals with silent and near-silent
// passages, accompaniment steady
std::string write_fixture_dataset(const std::string& name) {
    const auto root = fs::temp_directory_path() / name;
    fs::remove_all(root);
    fs::create_directories(root / "track0");
    const int rate = 8000;
    const std::int64_t seg = rate; // one-second segments
    const std::int64_t n = 12 * seg;

    AudioClip vocals = const_clip(rate, n, 0.0f);
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    for (std::int64_t s = 0; s < 12; ++s) {
        float amp;
        if (s < 8)
            amp = 0.25f; // voiced
        else if (s < 10)
            amp = 1e-3f; // near-silent
        else
            amp = 0.0f; // silent
        for (std::int64_t t = s * seg; t < (s + 1) * seg; ++t)
            vocals.channels[0][t] =
                amp * static_cast<float>(std::sin(2.0 * M_PI * 220.0 * t / rate));
    }
    AudioClip accomp = const_clip(rate, n, 0.0f);
    for (auto& v : accomp.channels[0]) v = 0.5f * dist(rng);

    write_wav(vocals, (root / "track0" / "vocals.wav").string(), WavFormat::float32);
    write_wav(accomp, (root / "track0" / "accompaniment.wav").string(), WavFormat::float32);
    return root.string();
}

} // namespace

TEST_CASE("evaluate_dataset with oracle separators", "[evaluate]") {
    const auto root = write_fixture_dataset("wu_eval_fixture");
    const auto index = index_dataset(root, {"vocals", "accompaniment"});
    REQUIRE(index.tracks.size() == 1);
    ModelConfig cfg;
    cfg.sample_rate = 8000;
    cfg.num_channels = 1;

    SECTION("perfect estimates give +inf everywhere") {
        const auto report = evaluate_dataset(
            [](const TrackPair& pair) { return pair.sources; }, index, cfg, 1.0, SdrMode::plain);
        for (const auto& sr : report.per_source) {
            REQUIRE(sr.stats.n_infinite + sr.stats.n_excluded == sr.stats.n_segments);
            REQUIRE(std::isinf(sr.stats.median_db));
        }
    }
    SECTION("mixture-as-estimate reproduces the outlier phenomenon") {
        const auto report = evaluate_dataset(
            [](const TrackPair& pair) {
                return std::vector<AudioClip>{pair.mixture, pair.mixture};
            },
            index, cfg, 1.0, SdrMode::plain);

        const auto& vocal = report.per_source[0].stats;
        REQUIRE(vocal.n_excluded == 2); // the silent passages
        std::vector<double> finite;
        for (const auto& s : report.scores)
            if (s.source == "vocals" && s.kind == SegmentScore::Kind::finite)
                finite.push_back(s.db);
        const double min_v = *std::min_element(finite.begin(), finite.end());
        REQUIRE(min_v < vocal.median_db - 3.0 * vocal.mad_db); // strong negative outliers

        // accompaniment dominates the mixture, so its SDR is high where vocals are quiet
        const auto& acc = report.per_source[1].stats;
        REQUIRE(acc.median_db > vocal.median_db);
    }
    SECTION("failing separator is skipped and counted") {
        const auto report = evaluate_dataset(
            [](const TrackPair&) -> std::vector<AudioClip> {
                throw DataError("synthetic failure");
            },
            index, cfg, 1.0, SdrMode::plain, nullptr);
        REQUIRE(report.n_failed_tracks == 1);
        REQUIRE(report.scores.empty());
        REQUIRE(report.per_source.empty());
    }
    fs::remove_all(root);
}

TEST_CASE("report emission", "[evaluate]") {
    const auto root = write_fixture_dataset("wu_eval_report");
    const auto index = index_dataset(root, {"vocals", "accompaniment"});
    ModelConfig cfg;
    cfg.sample_rate = 8000;
    auto report = evaluate_dataset(
        [](const TrackPair& pair) {
            return std::vector<AudioClip>{pair.mixture, pair.mixture};
        },
        index, cfg, 1.0, SdrMode::plain);
    report.checkpoint_hash = "deadbeef";

    const auto j = report_to_json(report);
    REQUIRE(j.at("mode") == "plain");
    REQUIRE(j.at("segment_seconds") == 1.0);
    REQUIRE(j.at("checkpoint_hash") == "deadbeef");
    REQUIRE(j.at("sources").contains("vocals"));
    REQUIRE(j.at("sources").at("vocals").contains("median_db"));

    const auto csv_path = (fs::temp_directory_path() / "wu_scores.csv").string();
    write_scores_csv(report, csv_path);
    std::ifstream csv(csv_path);
    std::string line;
    std::getline(csv, line);
    REQUIRE(line == "track,source,segment,sdr_db");
    int rows = 0, excluded = 0;
    while (std::getline(csv, line)) {
        rows += 1;
        if (line.find("excluded") != std::string::npos) excluded += 1;
    }
    REQUIRE(rows == static_cast<int>(report.scores.size()));
    REQUIRE(excluded == 2);
    fs::remove(csv_path);
    fs::remove_all(root);
}
