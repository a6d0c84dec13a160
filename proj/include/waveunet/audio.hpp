#pragma once

// RIFF/WAVE decoding and encoding (PCM 16-bit and IEEE float 32-bit),
// band-limited sample-rate conversion and mono mixdown.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "waveunet/errors.hpp"

namespace waveunet {

struct AudioClip {
    int sample_rate = 44100;
    std::vector<std::vector<float>> channels; // per-channel samples, equal lengths

    std::int64_t length() const { return channels.empty() ? 0 : channels[0].size(); }
    int channel_count() const { return static_cast<int>(channels.size()); }
};

enum class WavFormat { pcm16, float32 };

namespace detail {

inline std::uint32_t read_u32(const std::vector<std::uint8_t>& b, std::size_t off) {
    return std::uint32_t(b[off]) | std::uint32_t(b[off + 1]) << 8 |
           std::uint32_t(b[off + 2]) << 16 | std::uint32_t(b[off + 3]) << 24;
}
inline std::uint16_t read_u16(const std::vector<std::uint8_t>& b, std::size_t off) {
    return std::uint16_t(b[off] | b[off + 1] << 8);
}
inline void push_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    b.push_back(v & 0xff);
    b.push_back((v >> 8) & 0xff);
    b.push_back((v >> 16) & 0xff);
    b.push_back((v >> 24) & 0xff);
}
inline void push_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
    b.push_back(v & 0xff);
    b.push_back((v >> 8) & 0xff);
}
inline void push_tag(std::vector<std::uint8_t>& b, const char* tag) {
    b.insert(b.end(), tag, tag + 4);
}

} // namespace detail

/// Decodes a RIFF/WAVE file. 16-bit samples map to [-1, 1) by division by 32768;
/// float samples are taken verbatim. Truncated chunks are an error, never
/// silently padded.
inline AudioClip read_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DecodeError("cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());

    auto fail = [&](std::size_t off, const std::string& what) {
        throw DecodeError(path + ": " + what + " at byte offset " + std::to_string(off));
    };
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0)
        fail(0, "not a RIFF file");
    if (std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) fail(8, "not a WAVE form");

    std::uint16_t format_code = 0, num_channels = 0, bits = 0, block_align = 0;
    std::uint32_t rate = 0;
    bool have_fmt = false;
    std::size_t data_off = 0, data_size = 0;

    std::size_t off = 12;
    while (off + 8 <= bytes.size()) {
        const std::size_t chunk_off = off;
        char id[5] = {};
        std::memcpy(id, bytes.data() + off, 4);
        const std::uint32_t size = detail::read_u32(bytes, off + 4);
        off += 8;
        if (off + size > bytes.size())
            fail(chunk_off, std::string("truncated '") + id + "' chunk (need " +
                                std::to_string(size) + " bytes)");
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (size < 16) fail(chunk_off, "fmt chunk too small");
            format_code = detail::read_u16(bytes, off);
            num_channels = detail::read_u16(bytes, off + 2);
            rate = detail::read_u32(bytes, off + 4);
            block_align = detail::read_u16(bytes, off + 12);
            bits = detail::read_u16(bytes, off + 14);
            have_fmt = true;
        } else if (std::memcmp(id, "data", 4) == 0) {
            data_off = off;
            data_size = size;
        }
        off += size + (size % 2); // chunks are word-aligned
    }
    if (!have_fmt) fail(bytes.size(), "missing fmt chunk");
    if (data_off == 0) fail(bytes.size(), "missing data chunk");
    if (num_channels < 1) fail(data_off, "zero channels");

    const bool pcm16 = format_code == 1 && bits == 16;
    const bool ieee32 = format_code == 3 && bits == 32;
    if (!pcm16 && !ieee32)
        fail(data_off, "unsupported codec (format " + std::to_string(format_code) + ", " +
                           std::to_string(bits) + " bits); need PCM 16-bit or IEEE float 32-bit");
    const std::size_t bytes_per_sample = bits / 8;
    if (block_align != num_channels * bytes_per_sample) fail(data_off, "inconsistent block align");
    if (data_size % block_align != 0) fail(data_off, "data chunk is not a whole number of frames");

    const std::size_t frames = data_size / block_align;
    AudioClip clip;
    clip.sample_rate = static_cast<int>(rate);
    clip.channels.assign(num_channels, std::vector<float>(frames));
    for (std::size_t t = 0; t < frames; ++t) {
        for (std::uint16_t c = 0; c < num_channels; ++c) {
            const std::size_t p = data_off + (t * num_channels + c) * bytes_per_sample;
            if (pcm16) {
                const std::int16_t s =
                    static_cast<std::int16_t>(bytes[p] | (bytes[p + 1] << 8));
                clip.channels[c][t] = static_cast<float>(s) / 32768.0f;
            } else {
                float v;
                std::uint32_t raw = detail::read_u32(bytes, p);
                std::memcpy(&v, &raw, 4);
                clip.channels[c][t] = v;
            }
        }
    }
    return clip;
}

/// Encodes a clip. pcm16 clamps to [-1, 1 - 2^-15] and rounds half away from
/// zero; float32 is lossless.
inline void write_wav(const AudioClip& clip, const std::string& path, WavFormat format) {
    const int ch = clip.channel_count();
    if (ch < 1) throw UsageError("write_wav: clip has no channels");
    const std::int64_t frames = clip.length();
    const std::uint16_t bytes_per_sample = format == WavFormat::pcm16 ? 2 : 4;
    const std::uint32_t data_size = static_cast<std::uint32_t>(frames * ch * bytes_per_sample);
    const bool is_float = format == WavFormat::float32;

    std::vector<std::uint8_t> out;
    out.reserve(data_size + 64);
    detail::push_tag(out, "RIFF");
    const std::uint32_t fact_size = is_float ? 12 : 0;
    detail::push_u32(out, 4 + 24 + fact_size + 8 + data_size);
    detail::push_tag(out, "WAVE");
    detail::push_tag(out, "fmt ");
    detail::push_u32(out, 16);
    detail::push_u16(out, is_float ? 3 : 1);
    detail::push_u16(out, static_cast<std::uint16_t>(ch));
    detail::push_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
    detail::push_u32(out, static_cast<std::uint32_t>(clip.sample_rate) * ch * bytes_per_sample);
    detail::push_u16(out, static_cast<std::uint16_t>(ch * bytes_per_sample));
    detail::push_u16(out, static_cast<std::uint16_t>(bytes_per_sample * 8));
    if (is_float) {
        detail::push_tag(out, "fact");
        detail::push_u32(out, 4);
        detail::push_u32(out, static_cast<std::uint32_t>(frames));
    }
    detail::push_tag(out, "data");
    detail::push_u32(out, data_size);

    constexpr float kMax16 = 32767.0f / 32768.0f;
    for (std::int64_t t = 0; t < frames; ++t) {
        for (int c = 0; c < ch; ++c) {
            const float v = clip.channels[c][t];
            if (format == WavFormat::pcm16) {
                const float clamped = std::clamp(v, -1.0f, kMax16);
                const auto q = static_cast<std::int16_t>(std::lround(clamped * 32768.0f));
                detail::push_u16(out, static_cast<std::uint16_t>(q));
            } else {
                std::uint32_t raw;
                std::memcpy(&raw, &v, 4);
                detail::push_u32(out, raw);
            }
        }
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("write failed for '" + path + "'");
}

namespace detail {

inline double bessel_i0(double x) {
    // Series expansion; converges quickly for the beta values used here.
    double sum = 1.0, term = 1.0;
    const double q = x * x / 4.0;
    for (int k = 1; k < 64; ++k) {
        term *= q / (static_cast<double>(k) * k);
        sum += term;
        if (term < 1e-16 * sum) break;
    }
    return sum;
}

} // namespace detail

/// Kaiser-windowed sinc resampler (64 taps per side at the lower of the two
/// rates, beta = 8.6, cutoff 0.9x the lower Nyquist). Output length is
/// round(n * target / source); equal rates return the clip unchanged.
inline AudioClip resample(const AudioClip& clip, int target_rate) {
    if (target_rate < 1) throw UsageError("resample: target rate must be >= 1");
    if (target_rate == clip.sample_rate) return clip;

    const double ratio = static_cast<double>(target_rate) / clip.sample_rate;
    const std::int64_t n = clip.length();
    const auto out_len = static_cast<std::int64_t>(std::llround(n * ratio));
    const double cutoff = 0.45 * std::min(1.0, ratio); // cycles per input sample
    const double half_width = 64.0 / std::min(1.0, ratio);
    const auto reach = static_cast<std::int64_t>(std::ceil(half_width));
    const double beta = 8.6;
    const double i0_beta = detail::bessel_i0(beta);

    AudioClip out;
    out.sample_rate = target_rate;
    out.channels.assign(clip.channel_count(), std::vector<float>(out_len));
    for (int c = 0; c < clip.channel_count(); ++c) {
        const auto& x = clip.channels[c];
        auto& y = out.channels[c];
        for (std::int64_t j = 0; j < out_len; ++j) {
            const double center = j / ratio;
            const auto lo = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(center)) - reach);
            const auto hi = std::min<std::int64_t>(n - 1, static_cast<std::int64_t>(std::floor(center)) + reach);
            double acc = 0.0;
            for (std::int64_t i = lo; i <= hi; ++i) {
                const double t = center - static_cast<double>(i);
                const double u = 2.0 * cutoff * t;
                const double sinc = u == 0.0 ? 1.0 : std::sin(M_PI * u) / (M_PI * u);
                const double w = t / half_width;
                const double window =
                    std::abs(w) >= 1.0 ? 0.0
                                       : detail::bessel_i0(beta * std::sqrt(1.0 - w * w)) / i0_beta;
                acc += static_cast<double>(x[i]) * 2.0 * cutoff * sinc * window;
            }
            y[j] = static_cast<float>(acc);
        }
    }
    return out;
}

/// Mean over channels; mono input is returned unchanged.
inline AudioClip to_mono(const AudioClip& clip) {
    if (clip.channel_count() < 1) throw UsageError("to_mono: clip has no channels");
    if (clip.channel_count() == 1) return clip;
    AudioClip out;
    out.sample_rate = clip.sample_rate;
    out.channels.assign(1, std::vector<float>(clip.length()));
    const float inv = 1.0f / static_cast<float>(clip.channel_count());
    for (std::int64_t t = 0; t < clip.length(); ++t) {
        float acc = 0.0f;
        for (const auto& ch : clip.channels) acc += ch[t];
        out.channels[0][t] = acc * inv;
    }
    return out;
}

} // namespace waveunet
