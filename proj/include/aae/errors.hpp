#pragma once

#include <stdexcept>
#include <string>

namespace aae {

/// Invalid experiment description: bad dimensions, incompatible regime/prior,
/// malformed schedule. Raised before any training side effect.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor shape mismatch inside the engine.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dataset file failed to parse; message carries the byte offset.
struct IngestError : std::runtime_error {
    IngestError(const std::string& msg, std::uint64_t offset)
        : std::runtime_error(msg + " (byte offset " + std::to_string(offset) + ")"),
          byte_offset(offset) {}
    std::uint64_t byte_offset;
};

/// A density was requested from a prior that only supports sampling.
struct UnsupportedDensityError : std::runtime_error {
    explicit UnsupportedDensityError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace aae
