#include "mvps/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "mvps/errors.hpp"

namespace fs = std::filesystem;

namespace mvps::synth {

namespace {

constexpr double kEps = 1e-9;

struct Box {
    double min_e, min_n, max_e, max_n, min_z, max_z;
    Color wall, roof;
};

Color scale_color(Color c, double f) {
    return {static_cast<uint8_t>(std::lround(c[0] * f)),
            static_cast<uint8_t>(std::lround(c[1] * f)),
            static_cast<uint8_t>(std::lround(c[2] * f))};
}

std::vector<Box> scene_boxes(const SceneSpec& scene) {
    std::vector<Box> boxes;
    boxes.reserve(scene.buildings.size() + scene.landmarks.size());
    for (const Building& b : scene.buildings) {
        const Color wall = palette_color(b.color_id);
        boxes.push_back({b.min_e, b.min_n, b.max_e, b.max_n, 0.0, b.height, wall,
                         scale_color(wall, 0.72)});
    }
    for (const Landmark& l : scene.landmarks) {
        const Color c = palette_color(l.color_id);
        boxes.push_back({l.e - kLandmarkHalfWidth, l.n - kLandmarkHalfWidth,
                         l.e + kLandmarkHalfWidth, l.n + kLandmarkHalfWidth, 0.0,
                         kLandmarkHeight, c, c});
    }
    return boxes;
}

struct StreetRect {
    double min_e, min_n, max_e, max_n;
};

StreetRect street_rect(const StreetSegment& s) {
    const double h = s.width / 2.0;
    return {std::min(s.ax, s.bx) - (s.ay == s.by ? 0.0 : h),
            std::min(s.ay, s.by) - (s.ax == s.bx ? 0.0 : h),
            std::max(s.ax, s.bx) + (s.ay == s.by ? 0.0 : h),
            std::max(s.ay, s.by) + (s.ax == s.bx ? 0.0 : h)};
}

bool rect_contains(const StreetRect& r, double e, double n) {
    return e >= r.min_e && e <= r.max_e && n >= r.min_n && n <= r.max_n;
}

// Slab intersection; returns entry distance and the entry axis (0=e,1=n,2=z),
// or a negative distance on miss.
struct BoxHit {
    double t = -1.0;
    int axis = -1;
    double sign = 0.0;  // ray direction component sign along the entry axis
};

BoxHit intersect_box(const Box& b, const std::array<double, 3>& o, const geo::Vec3& d) {
    const double lo[3] = {b.min_e, b.min_n, b.min_z};
    const double hi[3] = {b.max_e, b.max_n, b.max_z};
    double tmin = 0.0, tmax = std::numeric_limits<double>::infinity();
    int axis = -1;
    for (int a = 0; a < 3; ++a) {
        if (std::abs(d[a]) < kEps) {
            if (o[a] < lo[a] || o[a] > hi[a]) return {};
            continue;
        }
        double t1 = (lo[a] - o[a]) / d[a];
        double t2 = (hi[a] - o[a]) / d[a];
        if (t1 > t2) std::swap(t1, t2);
        if (t1 > tmin) {
            tmin = t1;
            axis = a;
        }
        tmax = std::min(tmax, t2);
        if (tmin > tmax) return {};
    }
    if (axis < 0 || tmin <= kEps) return {};  // started inside or degenerate
    return {tmin, axis, d[axis]};
}

}  // namespace

Color palette_color(int id) {
    static const Color kPalette[] = {
        {196, 90, 72},   // brick red
        {102, 132, 186}, // slate blue
        {214, 182, 98},  // sandstone
        {120, 168, 112}, // mossy green
        {172, 120, 168}, // mauve
        {96, 180, 184},  // teal
        {228, 140, 64},  // orange
        {150, 150, 158}, // concrete
    };
    const int n = static_cast<int>(sizeof(kPalette) / sizeof(kPalette[0]));
    int k = id % n;
    if (k < 0) k += n;
    return kPalette[k];
}

SceneSpec generate_scene(uint64_t seed, const SceneParams& params) {
    if (params.extent <= 0.0) throw std::invalid_argument("scene extent must be positive");
    if (params.blocks < 1) throw std::invalid_argument("scene needs at least one block");
    if (params.building_density < 0.0) throw std::invalid_argument("building density must be >= 0");

    SceneSpec scene;
    scene.seed = seed;
    scene.extent = params.extent;
    scene.origin = params.origin;

    const double half = params.extent / 2.0;
    const double cell = params.extent / params.blocks;

    for (int i = 0; i <= params.blocks; ++i) {
        const double p = -half + i * cell;
        scene.streets.push_back({-half, p, half, p, params.street_width});  // east-west
        scene.streets.push_back({p, -half, p, half, params.street_width});  // north-south
    }

    const double margin = 1.0;
    const double inner = cell - params.street_width - 2.0 * margin;
    const bool want_buildings = params.building_density > 0.0 && params.buildings_per_block > 0;
    if (want_buildings && inner < params.min_building_size)
        throw std::invalid_argument("block interior too small for requested buildings");

    Rng brng = Rng::substream(seed, "buildings");
    if (want_buildings) {
        for (int by = 0; by < params.blocks; ++by) {
            for (int bx = 0; bx < params.blocks; ++bx) {
                const double lo_e = -half + bx * cell + params.street_width / 2.0 + margin;
                const double lo_n = -half + by * cell + params.street_width / 2.0 + margin;
                for (int k = 0; k < params.buildings_per_block; ++k) {
                    if (brng.uniform() >= params.building_density) continue;
                    // bounded rejection: find a sub-rectangle that fits
                    for (int attempt = 0; attempt < 16; ++attempt) {
                        const double w = brng.uniform(params.min_building_size, inner);
                        const double h = brng.uniform(params.min_building_size, inner);
                        const double e0 = lo_e + brng.uniform(0.0, inner - w);
                        const double n0 = lo_n + brng.uniform(0.0, inner - h);
                        Building cand{e0, n0, e0 + w, n0 + h,
                                      brng.uniform(params.min_height, params.max_height),
                                      static_cast<int>(brng.uniform_index(8))};
                        bool clash = false;
                        for (const Building& other : scene.buildings)
                            if (cand.min_e < other.max_e && cand.max_e > other.min_e &&
                                cand.min_n < other.max_n && cand.max_n > other.min_n) {
                                clash = true;
                                break;
                            }
                        if (!clash) {
                            scene.buildings.push_back(cand);
                            break;
                        }
                    }
                }
            }
        }
    }

    Rng lrng = Rng::substream(seed, "landmarks");
    for (int k = 0; k < params.landmark_count; ++k) {
        // pillars stand on street intersections' quarters, clear of buildings
        for (int attempt = 0; attempt < 64; ++attempt) {
            const int gi = static_cast<int>(lrng.uniform_index(params.blocks + 1));
            const double along = lrng.uniform(-half + 2.0, half - 2.0);
            const bool ew = lrng.uniform() < 0.5;
            const double e = ew ? along : -half + gi * cell;
            const double n = ew ? -half + gi * cell : along;
            if (point_in_building(scene, e, n)) continue;
            bool near_other = false;
            for (const Landmark& other : scene.landmarks)
                if (std::abs(other.e - e) < 4.0 * kLandmarkHalfWidth &&
                    std::abs(other.n - n) < 4.0 * kLandmarkHalfWidth)
                    near_other = true;
            if (near_other) continue;
            scene.landmarks.push_back({e, n, static_cast<int>(lrng.uniform_index(8))});
            break;
        }
    }
    return scene;
}

bool point_on_street(const SceneSpec& scene, double e, double n) {
    for (const StreetSegment& s : scene.streets)
        if (rect_contains(street_rect(s), e, n)) return true;
    return false;
}

bool point_in_building(const SceneSpec& scene, double e, double n) {
    for (const Building& b : scene.buildings)
        if (e >= b.min_e && e <= b.max_e && n >= b.min_n && n <= b.max_n) return true;
    for (const Landmark& l : scene.landmarks)
        if (std::abs(e - l.e) <= kLandmarkHalfWidth && std::abs(n - l.n) <= kLandmarkHalfWidth)
            return true;
    return false;
}

img::Image render_overhead(const SceneSpec& scene, const geo::OverheadFrame& frame) {
    const auto [ce, cn] = geo::enu_offset(scene.origin, frame.center);
    const double half_frame = frame.size * frame.gsd / 2.0;
    const double half_scene = scene.extent / 2.0;
    if (std::abs(ce) + half_frame > half_scene + 1e-6 ||
        std::abs(cn) + half_frame > half_scene + 1e-6)
        throw GeometryError("overhead frame footprint exceeds scene extent");

    const auto boxes = scene_boxes(scene);
    img::Image out(frame.size, frame.size, 3);
    for (int r = 0; r < frame.size; ++r) {
        const double n = cn + (frame.size / 2.0 - (r + 0.5)) * frame.gsd;
        for (int c = 0; c < frame.size; ++c) {
            const double e = ce + (c + 0.5 - frame.size / 2.0) * frame.gsd;
            Color px = point_on_street(scene, e, n) ? scene.street_color : scene.ground_color;
            double top = -1.0;
            for (const Box& b : boxes)
                if (e >= b.min_e && e <= b.max_e && n >= b.min_n && n <= b.max_n && b.max_z > top) {
                    top = b.max_z;
                    px = b.roof;
                }
            out.at(r, c, 0) = px[0];
            out.at(r, c, 1) = px[1];
            out.at(r, c, 2) = px[2];
        }
    }
    return out;
}

PanoramaRender render_panorama_full(const SceneSpec& scene, const geo::GeoLocation& loc,
                                    const RenderSettings& settings, double yaw_deg) {
    const int H = settings.pano_height;
    const int W = 4 * H;
    if (H < 2) throw std::invalid_argument("panorama height must be at least 2");

    const auto [cam_e, cam_n] = geo::enu_offset(scene.origin, loc);
    if (point_in_building(scene, cam_e, cam_n))
        throw GeometryError("camera location is inside scene geometry");
    const std::array<double, 3> o{cam_e, cam_n, settings.camera_height};

    const auto boxes = scene_boxes(scene);
    const geo::RayField rays = geo::pixel_ray_field(H, W);
    const double yaw = geo::deg_to_rad(yaw_deg);
    const double cy = std::cos(yaw), sy = std::sin(yaw);

    PanoramaRender out{img::Image(H, W, 3), img::Image(H, W, 1)};
    for (int v = 0; v < H; ++v) {
        for (int u = 0; u < W; ++u) {
            const geo::Vec3& r0 = rays.at(v, u);
            // camera yawed clockwise by yaw: pixel azimuth theta shows world azimuth theta+yaw
            const geo::Vec3 d{r0[0] * cy + r0[1] * sy, r0[1] * cy - r0[0] * sy, r0[2]};

            Color px = scene.sky_color;
            uint8_t label = kSky;
            double best = std::numeric_limits<double>::infinity();

            if (d[2] < -kEps) {  // ground plane z = 0
                const double t = -o[2] / d[2];
                const double ge = o[0] + t * d[0];
                const double gn = o[1] + t * d[1];
                best = t;
                if (point_on_street(scene, ge, gn)) {
                    px = scene.street_color;
                    label = kStreet;
                } else {
                    px = scene.ground_color;
                    label = kGround;
                }
            }
            for (const Box& b : boxes) {
                const BoxHit hit = intersect_box(b, o, d);
                if (hit.t > 0.0 && hit.t < best) {
                    best = hit.t;
                    px = (hit.axis == 2 && hit.sign < 0.0) ? b.roof : b.wall;
                    label = kBuilding;
                }
            }
            out.color.at(v, u, 0) = px[0];
            out.color.at(v, u, 1) = px[1];
            out.color.at(v, u, 2) = px[2];
            out.labels.at(v, u, 0) = label;
        }
    }
    return out;
}

img::Image render_panorama(const SceneSpec& scene, const geo::GeoLocation& loc,
                           const RenderSettings& settings, double yaw_deg) {
    return render_panorama_full(scene, loc, settings, yaw_deg).color;
}

img::Image render_segmentation(const SceneSpec& scene, const geo::GeoLocation& loc,
                               const RenderSettings& settings, double yaw_deg) {
    return render_panorama_full(scene, loc, settings, yaw_deg).labels;
}

geo::GeoLocation sample_street_location(const SceneSpec& scene, double max_abs_en, Rng& rng) {
    for (int attempt = 0; attempt < 4096; ++attempt) {
        const size_t si = rng.uniform_index(scene.streets.size());
        const StreetSegment& s = scene.streets[si];
        const double t = rng.uniform();
        const double jitter = rng.uniform(-0.4, 0.4) * s.width;
        double e = s.ax + t * (s.bx - s.ax);
        double n = s.ay + t * (s.by - s.ay);
        if (s.ay == s.by) n += jitter;
        else e += jitter;
        if (std::abs(e) > max_abs_en || std::abs(n) > max_abs_en) continue;
        if (point_in_building(scene, e, n)) continue;
        if (!point_on_street(scene, e, n)) continue;
        return geo::offset_geo(scene.origin, e, n);
    }
    throw GeometryError("could not sample a street location inside the footprint");
}

std::string make_dataset(const DatasetParams& params, const std::string& out_dir) {
    if (params.n_scenes < 1) throw std::invalid_argument("n_scenes must be >= 1");
    if (params.panos_per_scene < 0) throw std::invalid_argument("panos_per_scene must be >= 0");
    const double footprint = params.render.overhead_size * params.render.gsd;
    if (footprint > params.scene.extent)
        throw std::invalid_argument("overhead footprint larger than scene extent");

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create dataset directory " + out_dir + ": " + ec.message());

    const std::string manifest_path = (fs::path(out_dir) / "manifest.jsonl").string();
    std::ofstream manifest(manifest_path, std::ios::trunc);
    if (!manifest) throw IoError("cannot open manifest for writing: " + manifest_path);

    // cameras stay clear of the footprint edge so every location is usable
    const double sample_half = footprint / 2.0 - 2.0 * params.render.gsd;

    for (int i = 0; i < params.n_scenes; ++i) {
        const std::string id = "scene_" + std::to_string(i / 1000 % 10) +
                               std::to_string(i / 100 % 10) + std::to_string(i / 10 % 10) +
                               std::to_string(i % 10);
        Rng srng = Rng::substream(params.seed, "scene/" + id);
        const uint64_t scene_seed = srng.uniform_index(std::numeric_limits<uint32_t>::max());
        const SceneSpec scene = generate_scene(scene_seed, params.scene);

        const fs::path scene_dir = fs::path(out_dir) / id;
        fs::create_directories(scene_dir, ec);
        if (ec) throw IoError("cannot create scene directory " + scene_dir.string());

        const geo::OverheadFrame frame{scene.origin, params.render.gsd, params.render.overhead_size};
        img::write_png((scene_dir / "sat.png").string(), render_overhead(scene, frame));

        Rng crng = Rng::substream(params.seed, "cameras/" + id);
        const geo::GeoLocation target = sample_street_location(scene, sample_half, crng);
        const PanoramaRender tr = render_panorama_full(scene, target, params.render);
        img::write_png((scene_dir / "target.png").string(), tr.color);
        img::write_png((scene_dir / "seg.png").string(), tr.labels);

        nlohmann::json panos = nlohmann::json::array();
        for (int p = 0; p < params.panos_per_scene; ++p) {
            const geo::GeoLocation ploc = sample_street_location(scene, sample_half, crng);
            const std::string rel = id + "/pano_" + std::to_string(p / 10) + std::to_string(p % 10) + ".png";
            img::write_png((fs::path(out_dir) / rel).string(),
                           render_panorama(scene, ploc, params.render));
            panos.push_back({{"path", rel}, {"lat", ploc.lat}, {"lon", ploc.lon}});
        }

        nlohmann::json rec{
            {"id", id},
            {"satellite",
             {{"path", id + "/sat.png"},
              {"center", {{"lat", scene.origin.lat}, {"lon", scene.origin.lon}}},
              {"gsd", params.render.gsd},
              {"size", params.render.overhead_size}}},
            {"panoramas", panos},
            {"target", {{"lat", target.lat}, {"lon", target.lon}}},
            {"target_pano_path", id + "/target.png"},
            {"seg_path", id + "/seg.png"}};
        manifest << rec.dump() << "\n";
    }
    manifest.flush();
    if (!manifest) throw IoError("failed writing manifest: " + manifest_path);
    return manifest_path;
}

}  // namespace mvps::synth
