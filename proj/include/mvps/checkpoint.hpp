#pragma once
// Single-file training checkpoints: config snapshot, parameters, buffers,
// optimizer moments, and RNG state, CRC-protected.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mvps/nn/module.hpp"
#include "mvps/rng.hpp"

namespace mvps::data {

struct CheckpointData {
    std::string config_json;  // run configuration at save time
    uint64_t step = 0;        // training steps completed

    // name -> (shape, values); std::map keeps serialization order stable.
    std::map<std::string, std::pair<nn::Shape, std::vector<float>>> params;
    std::map<std::string, std::pair<nn::Shape, std::vector<float>>> buffers;

    bool has_optimizer = false;
    uint64_t opt_step = 0;
    std::map<std::string, nn::AdamW::Slot> opt_state;

    bool has_rng = false;
    std::string rng_state;
};

// Writes the archive atomically (temp file + rename). Throws IoError on
// filesystem failure.
void save_checkpoint(const CheckpointData& data, const std::string& path);

// Throws CheckpointError when the file is corrupt, truncated, or carries an
// unsupported version tag; IoError when it cannot be opened.
CheckpointData load_checkpoint(const std::string& path);

// Captures every parameter and buffer in the store, plus optimizer moments
// and RNG state when provided.
CheckpointData snapshot_state(const nn::ParamStore& store, const nn::AdamW* opt,
                              const Rng* rng, const std::string& config_json, uint64_t step);

// Writes the saved values back. Parameters must already exist in the store
// with matching sizes (construct the model first, then restore).
void restore_state(const CheckpointData& data, nn::ParamStore& store, nn::AdamW* opt,
                   Rng* rng);

}  // namespace mvps::data
