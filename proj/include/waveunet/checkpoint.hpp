#pragma once

// Checkpoint container: magic "WUNC", format version u16, a length-prefixed
// UTF-8 JSON blob (model config plus optional training-state scalars), then one
// record per array: u32 name length + name bytes, u8 rank, u32 dims, raw 32-bit
// little-endian IEEE-754 values. Optimizer state trails the parameters under
// names prefixed "adam.m." / "adam.v.". All integers little-endian.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "waveunet/config.hpp"
#include "waveunet/model.hpp"

namespace waveunet {

constexpr std::uint16_t kCheckpointVersion = 1;

struct NamedArray {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> values;
};

struct Checkpoint {
    ModelConfig model;
    nlohmann::json extra = nlohmann::json::object(); // training-state scalars
    std::vector<NamedArray> arrays;                  // parameters, then adam.m./adam.v.
};

namespace detail {

inline void put_u16(std::ofstream& f, std::uint16_t v) {
    const char b[2] = {char(v & 0xff), char((v >> 8) & 0xff)};
    f.write(b, 2);
}
inline void put_u32(std::ofstream& f, std::uint32_t v) {
    const char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
                       char((v >> 24) & 0xff)};
    f.write(b, 4);
}
inline std::uint16_t take_u16(const std::uint8_t* p) { return std::uint16_t(p[0] | p[1] << 8); }
inline std::uint32_t take_u32(const std::uint8_t* p) {
    return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
           std::uint32_t(p[3]) << 24;
}

} // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open '" + path + "' for writing");

    nlohmann::json blob;
    blob["model"] = ckpt.model;
    for (auto it = ckpt.extra.begin(); it != ckpt.extra.end(); ++it) blob[it.key()] = it.value();
    const std::string json = blob.dump(); // keys sorted, so byte-stable

    f.write("WUNC", 4);
    detail::put_u16(f, kCheckpointVersion);
    detail::put_u32(f, static_cast<std::uint32_t>(json.size()));
    f.write(json.data(), static_cast<std::streamsize>(json.size()));

    for (const auto& arr : ckpt.arrays) {
        detail::put_u32(f, static_cast<std::uint32_t>(arr.name.size()));
        f.write(arr.name.data(), static_cast<std::streamsize>(arr.name.size()));
        f.put(static_cast<char>(arr.dims.size()));
        std::uint64_t count = 1;
        for (const std::uint32_t d : arr.dims) {
            detail::put_u32(f, d);
            count *= d;
        }
        if (count != arr.values.size())
            throw UsageError("checkpoint array '" + arr.name + "' dims do not match value count");
        static_assert(sizeof(float) == 4);
        for (const float v : arr.values) {
            std::uint32_t raw;
            std::memcpy(&raw, &v, 4);
            detail::put_u32(f, raw);
        }
    }
    if (!f) throw DataError("write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DecodeError("cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    auto fail = [&](std::size_t off, const std::string& what) {
        throw DecodeError(path + ": " + what + " at byte offset " + std::to_string(off));
    };
    if (bytes.size() < 10 || std::memcmp(bytes.data(), "WUNC", 4) != 0)
        fail(0, "bad magic (expected WUNC)");
    const std::uint16_t version = detail::take_u16(bytes.data() + 4);
    if (version != kCheckpointVersion)
        fail(4, "unsupported format version " + std::to_string(version));
    const std::uint32_t json_len = detail::take_u32(bytes.data() + 6);
    std::size_t off = 10;
    if (off + json_len > bytes.size()) fail(off, "truncated config blob");

    Checkpoint ckpt;
    nlohmann::json blob;
    try {
        blob = nlohmann::json::parse(bytes.begin() + off, bytes.begin() + off + json_len);
    } catch (const nlohmann::json::exception& e) {
        fail(off, std::string("config blob is not valid JSON: ") + e.what());
    }
    ckpt.model = blob.at("model").get<ModelConfig>();
    blob.erase("model");
    ckpt.extra = std::move(blob);
    off += json_len;

    while (off < bytes.size()) {
        if (off + 4 > bytes.size()) fail(off, "truncated record name length");
        const std::uint32_t name_len = detail::take_u32(bytes.data() + off);
        off += 4;
        if (off + name_len + 1 > bytes.size()) fail(off, "truncated record header");
        NamedArray arr;
        arr.name.assign(reinterpret_cast<const char*>(bytes.data() + off), name_len);
        off += name_len;
        const std::uint8_t rank = bytes[off++];
        std::uint64_t count = 1;
        for (std::uint8_t d = 0; d < rank; ++d) {
            if (off + 4 > bytes.size()) fail(off, "truncated dims of '" + arr.name + "'");
            arr.dims.push_back(detail::take_u32(bytes.data() + off));
            count *= arr.dims.back();
            off += 4;
        }
        if (off + count * 4 > bytes.size()) fail(off, "truncated values of '" + arr.name + "'");
        arr.values.resize(count);
        for (std::uint64_t i = 0; i < count; ++i) {
            const std::uint32_t raw = detail::take_u32(bytes.data() + off);
            std::memcpy(&arr.values[i], &raw, 4);
            off += 4;
        }
        ckpt.arrays.push_back(std::move(arr));
    }
    return ckpt;
}

/// Parameters -> checkpoint records, preserving build order.
inline std::vector<NamedArray> arrays_from_params(const ParameterSet<float>& params) {
    std::vector<NamedArray> arrays;
    for (const auto& [name, tensor] : params.entries) {
        NamedArray arr;
        arr.name = name;
        if (name.ends_with(".filters"))
            arr.dims = {static_cast<std::uint32_t>(tensor->shape.batch),
                        static_cast<std::uint32_t>(tensor->shape.frames),
                        static_cast<std::uint32_t>(tensor->shape.channels)};
        else
            arr.dims = {static_cast<std::uint32_t>(tensor->shape.channels)};
        arr.values = tensor->data;
        arrays.push_back(std::move(arr));
    }
    return arrays;
}

/// Reconstructs a parameter set from the non-optimizer records of a checkpoint,
/// validating names and shapes against a fresh build of the stored config.
inline ParameterSet<float> params_from_checkpoint(const Checkpoint& ckpt, bool trainable = false) {
    ParameterSet<float> reference = build<float>(ckpt.model, 0, trainable);
    std::size_t i = 0;
    for (const auto& arr : ckpt.arrays) {
        if (arr.name.starts_with("adam.")) continue;
        if (i >= reference.entries.size())
            throw DecodeError("checkpoint has more parameter records than the config defines");
        auto& [name, tensor] = reference.entries[i++];
        if (arr.name != name)
            throw DecodeError("checkpoint record '" + arr.name + "' does not match expected '" +
                              name + "'");
        if (arr.values.size() != tensor->data.size())
            throw DecodeError("checkpoint record '" + arr.name + "' has " +
                              std::to_string(arr.values.size()) + " values, expected " +
                              std::to_string(tensor->data.size()));
        tensor->data = arr.values;
    }
    if (i != reference.entries.size())
        throw DecodeError("checkpoint is missing parameter records (got " + std::to_string(i) +
                          " of " + std::to_string(reference.entries.size()) + ")");
    return reference;
}

/// FNV-1a over the file bytes; used to identify checkpoints in reports.
inline std::string file_hash_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::uint64_t h = 1469598103934665603ull;
    char buf[4096];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<std::uint8_t>(buf[i]);
            h *= 1099511628211ull;
        }
        if (!in) break;
    }
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
    return std::string(hex);
}

} // namespace waveunet
