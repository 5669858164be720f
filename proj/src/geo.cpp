#include "mvps/geo.hpp"

#include <cmath>
#include <string>

#include "mvps/errors.hpp"

namespace mvps::geo {

void validate(const GeoLocation& loc) {
    if (!(loc.lat >= -90.0 && loc.lat <= 90.0))
        throw GeometryError("latitude out of range: " + std::to_string(loc.lat));
    if (!(loc.lon >= -180.0 && loc.lon < 180.0))
        throw GeometryError("longitude out of range: " + std::to_string(loc.lon));
}

double haversine_distance(const GeoLocation& a, const GeoLocation& b) {
    const double phi1 = deg_to_rad(a.lat);
    const double phi2 = deg_to_rad(b.lat);
    const double dphi = phi2 - phi1;
    const double dlam = deg_to_rad(b.lon - a.lon);
    const double s1 = std::sin(dphi * 0.5);
    const double s2 = std::sin(dlam * 0.5);
    const double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
    return kEarthRadius * 2.0 * std::atan2(std::sqrt(h), std::sqrt(1.0 - h));
}

double compass_bearing(const GeoLocation& a, const GeoLocation& b) {
    if (a == b) throw GeometryError("compass_bearing: coincident points");
    const double phi1 = deg_to_rad(a.lat);
    const double phi2 = deg_to_rad(b.lat);
    const double dlam = deg_to_rad(b.lon - a.lon);
    const double y = std::sin(dlam) * std::cos(phi2);
    const double x = std::cos(phi1) * std::sin(phi2) - std::sin(phi1) * std::cos(phi2) * std::cos(dlam);
    double deg = rad_to_deg(std::atan2(y, x));
    deg = std::fmod(deg + 360.0, 360.0);
    return deg == 360.0 ? 0.0 : deg;
}

Vec3 ray_direction(double u, double v, int height, int width) {
    const double theta = 2.0 * kPi * ((u + 0.5) / width - 0.5);
    const double phi = kPi * (0.5 - (v + 0.5) / height);
    const double cp = std::cos(phi);
    return {std::sin(theta) * cp, std::cos(theta) * cp, std::sin(phi)};
}

RayField pixel_ray_field(int height, int width) {
    if (height < 2 || width < 2)
        throw GeometryError("pixel_ray_field: H and W must be >= 2");
    RayField field;
    field.height = height;
    field.width = width;
    field.rays.resize(static_cast<size_t>(height) * width);
    for (int v = 0; v < height; ++v)
        for (int u = 0; u < width; ++u)
            field.rays[static_cast<size_t>(v) * width + u] = ray_direction(u, v, height, width);
    return field;
}

std::vector<Vec3> target_relative_orientation(const RayField& rays, double bearing_deg) {
    const double b = deg_to_rad(bearing_deg);
    const double cb = std::cos(b);
    const double sb = std::sin(b);
    std::vector<Vec3> out(rays.rays.size());
    for (size_t i = 0; i < rays.rays.size(); ++i) {
        const Vec3& r = rays.rays[i];
        // compass rotation by -bearing: azimuth theta maps to theta - bearing
        out[i] = {r[0] * cb - r[1] * sb, r[0] * sb + r[1] * cb, r[2]};
    }
    return out;
}

std::vector<double> distance_feature(const GeoLocation& a, const GeoLocation& b,
                                     int height, int width) {
    const double d = haversine_distance(a, b) / 100.0;
    return std::vector<double>(static_cast<size_t>(height) * width, d);
}

GeoFeatureMaps geo_feature_maps(const GeoLocation& source, const GeoLocation& target,
                                int height, int width) {
    GeoFeatureMaps maps;
    maps.height = height;
    maps.width = width;
    maps.distance = distance_feature(source, target, height, width);
    const RayField field = pixel_ray_field(height, width);
    const double bearing = (source == target) ? 0.0 : compass_bearing(source, target);
    maps.orientation = target_relative_orientation(field, bearing);
    return maps;
}

PixelCoord geo_to_overhead_pixel(const GeoLocation& loc, const OverheadFrame& frame) {
    const double east = kEarthRadius * std::cos(deg_to_rad(frame.center.lat)) *
                        deg_to_rad(loc.lon - frame.center.lon);
    const double north = kEarthRadius * deg_to_rad(loc.lat - frame.center.lat);
    PixelCoord px;
    px.col = frame.size / 2.0 + east / frame.gsd;
    px.row = frame.size / 2.0 - north / frame.gsd;
    if (px.row < 0.0 || px.row >= frame.size || px.col < 0.0 || px.col >= frame.size)
        throw GeometryError("geo_to_overhead_pixel: location outside frame footprint");
    return px;
}

GeoLocation overhead_pixel_to_geo(double row, double col, const OverheadFrame& frame) {
    const double east = (col - frame.size / 2.0) * frame.gsd;
    const double north = (frame.size / 2.0 - row) * frame.gsd;
    return offset_geo(frame.center, east, north);
}

GeoLocation offset_geo(const GeoLocation& origin, double east_m, double north_m) {
    GeoLocation out;
    out.lat = origin.lat + rad_to_deg(north_m / kEarthRadius);
    out.lon = origin.lon + rad_to_deg(east_m / (kEarthRadius * std::cos(deg_to_rad(origin.lat))));
    return out;
}

std::pair<double, double> enu_offset(const GeoLocation& origin, const GeoLocation& loc) {
    const double east = kEarthRadius * std::cos(deg_to_rad(origin.lat)) *
                        deg_to_rad(loc.lon - origin.lon);
    const double north = kEarthRadius * deg_to_rad(loc.lat - origin.lat);
    return {east, north};
}

}  // namespace mvps::geo
