#pragma once
// Procedural toy-city generator and exact renderers. Scenes are axis-aligned
// boxes over an infinite ground plane in local ENU meters anchored at a
// geodetic origin; rendering is analytic ray casting with flat shading, so
// every pixel has a closed-form geometric explanation.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mvps/geo.hpp"
#include "mvps/image.hpp"
#include "mvps/rng.hpp"

namespace mvps::synth {

using Color = std::array<uint8_t, 3>;

// Segmentation class ids.
enum : uint8_t { kSky = 0, kGround = 1, kStreet = 2, kBuilding = 3 };

struct StreetSegment {
    // Axis-aligned center line (ax,ay)-(bx,by), local meters; ax==bx or ay==by.
    double ax, ay, bx, by;
    double width;
};

struct Building {
    double min_e, min_n, max_e, max_n;  // footprint, local meters
    double height;
    int color_id;
};

struct Landmark {
    double e, n;  // pillar center, local meters
    int color_id;
};

struct SceneSpec {
    uint64_t seed = 0;
    double extent = 200.0;  // square footprint side, meters
    geo::GeoLocation origin{40.70, -73.95};
    std::vector<StreetSegment> streets;
    std::vector<Building> buildings;
    std::vector<Landmark> landmarks;
    Color ground_color{178, 168, 148};
    Color sky_color{136, 206, 235};
    Color street_color{70, 70, 76};
};

struct SceneParams {
    double extent = 200.0;
    int blocks = 3;                   // grid cells per axis
    double street_width = 8.0;
    double building_density = 0.7;    // probability a lot slot gets a building
    int buildings_per_block = 2;
    double min_building_size = 6.0;   // footprint side, meters
    double min_height = 6.0;
    double max_height = 26.0;
    int landmark_count = 2;
    geo::GeoLocation origin{40.70, -73.95};
};

struct RenderSettings {
    int pano_height = 32;   // width is fixed at 4*height (equirectangular)
    int overhead_size = 256;
    double gsd = 0.5;       // meters per overhead pixel
    double camera_height = 2.5;
};

// Pillar landmarks are deliberately chunky so they subtend at least one
// panorama column at typical in-scene distances.
inline constexpr double kLandmarkHalfWidth = 1.5;  // meters
inline constexpr double kLandmarkHeight = 35.0;    // meters

Color palette_color(int id);

// Deterministic scene from (seed, params): a street grid with buildings set
// back from the streets and pillar landmarks on street ground.
// Throws std::invalid_argument when params demand buildings that cannot fit.
SceneSpec generate_scene(uint64_t seed, const SceneParams& params);

// North-up orthographic roof view. Throws GeometryError when the frame
// footprint leaves the scene extent.
img::Image render_overhead(const SceneSpec& scene, const geo::OverheadFrame& frame);

// Equirectangular panorama (and its per-pixel class labels) from a camera at
// `loc`, center column facing north plus `yaw_deg` clockwise. Throws
// GeometryError when the camera stands inside a building or pillar.
img::Image render_panorama(const SceneSpec& scene, const geo::GeoLocation& loc,
                           const RenderSettings& settings, double yaw_deg = 0.0);
img::Image render_segmentation(const SceneSpec& scene, const geo::GeoLocation& loc,
                               const RenderSettings& settings, double yaw_deg = 0.0);

// Both outputs of the single ray-cast pass.
struct PanoramaRender {
    img::Image color;
    img::Image labels;
};
PanoramaRender render_panorama_full(const SceneSpec& scene, const geo::GeoLocation& loc,
                                    const RenderSettings& settings, double yaw_deg = 0.0);

// True when the point sits inside a street rectangle (used by samplers/tests).
bool point_on_street(const SceneSpec& scene, double e, double n);
bool point_in_building(const SceneSpec& scene, double e, double n);

// Samples a camera location on a street, inside the overhead footprint.
geo::GeoLocation sample_street_location(const SceneSpec& scene, double max_abs_en, Rng& rng);

struct DatasetParams {
    int n_scenes = 1;
    int panos_per_scene = 3;
    uint64_t seed = 0;
    SceneParams scene;
    RenderSettings render;
};

// Generates scenes, renders all imagery, and writes a JSONL manifest
// (returned path) plus PNGs under out_dir. Deterministic in params.seed.
std::string make_dataset(const DatasetParams& params, const std::string& out_dir);

}  // namespace mvps::synth
