#pragma once

#include <stdexcept>
#include <string>

namespace mvps {

// Malformed or contract-violating input data (manifest lines, images,
// out-of-range fields). Carries a human-readable location in the message.
struct SchemaError : std::runtime_error {
    explicit SchemaError(const std::string& what) : std::runtime_error(what) {}
};

// Filesystem problems; message names the offending path.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Checkpoint file is unreadable, truncated, or from another schema version.
struct CheckpointError : std::runtime_error {
    explicit CheckpointError(const std::string& what) : std::runtime_error(what) {}
};

// Geometric precondition violations (coincident points, out-of-footprint
// locations, camera inside geometry).
struct GeometryError : std::invalid_argument {
    explicit GeometryError(const std::string& what) : std::invalid_argument(what) {}
};

}  // namespace mvps
