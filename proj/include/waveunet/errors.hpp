#pragma once

#include <stdexcept>
#include <string>

namespace waveunet {

/// Tensor shapes disagree (channel mismatch, elementwise ops on unequal shapes, ...).
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A feature map is too small for the operation (valid conv, decimate, upsample).
struct SizeError : std::runtime_error {
    explicit SizeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A model or training configuration violates an invariant.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// The caller misused an API (backward on an unrecorded tensor, rate mismatch, ...).
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A file could not be decoded; message carries the byte offset where parsing failed.
struct DecodeError : std::runtime_error {
    explicit DecodeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dataset-level failure (missing stems, unreadable track, empty index).
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Non-finite value where a finite one is required (gradients, losses).
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace waveunet
