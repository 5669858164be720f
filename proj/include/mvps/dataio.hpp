#pragma once
// Manifest loading, condition assembly, and dataset splits.

#include <string>
#include <vector>

#include "mvps/geo.hpp"
#include "mvps/image.hpp"
#include "mvps/nn/tensor.hpp"

namespace mvps::data {

// HWC uint8 -> 1 x C x H x W float, [0,255] mapped to [-1,1].
nn::Tensor image_to_tensor(const img::Image& image);

// Inverse of image_to_tensor for a single sample (first batch item of a
// B x C x H x W tensor, C = 1 or 3); values clamped to [-1,1].
img::Image tensor_to_image(const nn::Tensor& t);

inline constexpr const char* kDefaultPrompt = "A high-resolution street-view panorama";

struct PanoramaRef {
    std::string path;  // relative to the manifest directory
    geo::GeoLocation loc;
    double distance_m = 0.0;  // haversine distance to the record's target
};

struct SampleRecord {
    std::string id;
    std::string satellite_path;
    geo::OverheadFrame frame;
    std::vector<PanoramaRef> panoramas;  // ascending by distance_m, ties keep file order
    geo::GeoLocation target;
    std::string target_pano_path;
    std::string seg_path;  // empty when the record has no segmentation
    std::string base_dir;

    // Joins a manifest-relative path onto base_dir; absolute paths pass through.
    std::string resolve(const std::string& rel) const;
};

// Reads a JSON-Lines manifest (one record per line, blank lines ignored).
// Throws IoError if the file is missing, SchemaError with the line number on
// malformed lines, and SchemaError naming the record when the target lies
// outside the satellite footprint.
std::vector<SampleRecord> load_manifest(const std::string& path);

// Inputs handed to the diffusion core for one sample. Shapes are fixed:
// the satellite is resized square and tiled 4x to match the panorama aspect,
// and the panorama list always has exactly K entries (zero-padded).
struct ConditionSet {
    img::Image seg;              // empty when unavailable
    img::Image satellite_tiled;  // H x 4H
    std::vector<img::Image> panos;  // exactly K, each H x 4H
    std::vector<bool> drop_mask;    // per pano slot; true marks a padded or dropped slot
    bool seg_dropped = false;       // set when seg is absent or dropped
    bool sat_dropped = false;
    std::string prompt;
};

// Picks the K nearest panoramas, loads and resizes all referenced images to
// height H (panoramas and the tiled satellite end up H x 4H), and pads empty
// slots with zero images flagged in drop_mask. Segmentation maps are resized
// nearest-neighbor to keep class ids intact.
ConditionSet select_conditions(const SampleRecord& record, int k = 2, int image_height = 256,
                               img::ResizeFilter filter = img::ResizeFilter::Bilinear);

struct AttentionSource {
    img::Image image;  // H x 4H
    geo::GeoLocation loc;
    double distance_m = 0.0;
};

// Up to n nearest panoramas with their locations, ascending by distance.
std::vector<AttentionSource> select_attention_set(const SampleRecord& record, int n = 20,
                                                  int image_height = 256,
                                                  img::ResizeFilter filter =
                                                      img::ResizeFilter::Bilinear);

struct SplitSpec {
    std::vector<std::string> train, val, test;
};

// Deterministic shuffled partition. val/test sizes round to the nearest
// record; train takes the rest. Fractions must be non-negative and sum < 1.
SplitSpec make_splits(const std::vector<SampleRecord>& records, double val_frac,
                      double test_frac, uint64_t seed);

}  // namespace mvps::data
