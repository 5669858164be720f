#pragma once

#include <array>
#include <utility>
#include <vector>

namespace mvps::geo {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kEarthRadius = 6'371'000.0;  // sphere model, meters

inline double deg_to_rad(double d) { return d * (kPi / 180.0); }
inline double rad_to_deg(double r) { return r * (180.0 / kPi); }

using Vec3 = std::array<double, 3>;  // east, north, up

struct GeoLocation {
    double lat = 0.0;  // degrees, [-90, 90]
    double lon = 0.0;  // degrees, [-180, 180)
    bool operator==(const GeoLocation&) const = default;
};

// Throws GeometryError if lat/lon are out of bounds.
void validate(const GeoLocation& loc);

// Equirectangular pixel rays in ENU coordinates.
// The continuous image center (u = W/2 - 0.5, v = H/2 - 0.5) looks north.
struct RayField {
    int height = 0;
    int width = 0;
    std::vector<Vec3> rays;  // row-major H*W

    const Vec3& at(int v, int u) const { return rays[static_cast<size_t>(v) * width + u]; }
};

// Per-pixel geometric conditioning for one (source, target) pair.
struct GeoFeatureMaps {
    int height = 0;
    int width = 0;
    std::vector<double> distance;    // H*W, spatially constant (meters / 100)
    std::vector<Vec3> orientation;   // H*W unit vectors, target-relative
};

// North-up square overhead tile. Row index decreases toward north.
struct OverheadFrame {
    GeoLocation center;
    double gsd = 0.5;  // meters per pixel, > 0
    int size = 256;    // pixels per side
};

struct PixelCoord {
    double row = 0.0;
    double col = 0.0;
};

// Great-circle distance in meters on the R = 6,371,000 m sphere.
double haversine_distance(const GeoLocation& a, const GeoLocation& b);

// Initial great-circle heading from a to b, degrees in [0, 360), 0 = north,
// 90 = east. Throws GeometryError on coincident points.
double compass_bearing(const GeoLocation& a, const GeoLocation& b);

// Ray for continuous pixel coordinates (u, v) with +0.5 pixel centers:
//   azimuth   theta = 2*pi*((u+0.5)/W - 0.5)
//   elevation phi   =   pi*(0.5 - (v+0.5)/H)
//   ray = [sin(theta)*cos(phi), cos(theta)*cos(phi), sin(phi)]
// Column 0 therefore leans south and azimuth wraps 360 degrees across W.
Vec3 ray_direction(double u, double v, int height, int width);

// Rays sampled at every integer pixel. Throws GeometryError if H or W < 2.
RayField pixel_ray_field(int height, int width);

// Rotate every ray about the up axis so the horizontal direction with
// azimuth `bearing_deg` maps to [0,1,0]. Norm-preserving.
std::vector<Vec3> target_relative_orientation(const RayField& rays, double bearing_deg);

// Constant H*W map of haversine_distance(a, b) / 100.
std::vector<double> distance_feature(const GeoLocation& a, const GeoLocation& b,
                                     int height, int width);

// Distance + orientation maps for a panorama at `source` conditioned on
// `target`. Coincident locations use the identity rotation.
GeoFeatureMaps geo_feature_maps(const GeoLocation& source, const GeoLocation& target,
                                int height, int width);

// Local tangent-plane mapping between geolocations and overhead pixels:
//   east  = R*cos(lat_c)*dlon,  north = R*dlat   (radians)
//   col   = size/2 + east/gsd,  row   = size/2 - north/gsd
// Throws GeometryError when the result falls outside [0, size).
PixelCoord geo_to_overhead_pixel(const GeoLocation& loc, const OverheadFrame& frame);

// Exact inverse of geo_to_overhead_pixel (no footprint check).
GeoLocation overhead_pixel_to_geo(double row, double col, const OverheadFrame& frame);

// Tangent-plane offset helpers used to lay out scenes in local meters.
GeoLocation offset_geo(const GeoLocation& origin, double east_m, double north_m);
std::pair<double, double> enu_offset(const GeoLocation& origin, const GeoLocation& loc);

}  // namespace mvps::geo
