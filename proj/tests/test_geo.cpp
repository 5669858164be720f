#include <doctest.h>

#include <cmath>

#include "mvps/errors.hpp"
#include "mvps/geo.hpp"
#include "mvps/rng.hpp"

using namespace mvps;
using geo::GeoLocation;
using geo::kPi;

namespace {

// Frozen from a 50-digit spherical-trig evaluation done independently of
// this implementation.
constexpr double kOneDegEquatorMeters = 111194.92664455874;
constexpr double kBearingNE = 37.40128735383104;   // (40,-74) -> (40.1,-73.9)
constexpr double kDistanceNE = 14003.340159456834;

double norm3(const geo::Vec3& v) {
    return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
}

}  // namespace

TEST_CASE("haversine distance") {
    GeoLocation a{40.65, -73.95};
    CHECK(geo::haversine_distance(a, a) == 0.0);

    CHECK(geo::haversine_distance({0, 0}, {0, 1}) == doctest::Approx(kOneDegEquatorMeters).epsilon(1e-12));
    CHECK(geo::haversine_distance({40.0, -74.0}, {40.1, -73.9}) ==
          doctest::Approx(kDistanceNE).epsilon(1e-12));

    Rng rng = Rng::substream(7, "geo-symmetry");
    for (int i = 0; i < 100; ++i) {
        GeoLocation p{rng.uniform(-80, 80), rng.uniform(-179, 179)};
        GeoLocation q{rng.uniform(-80, 80), rng.uniform(-179, 179)};
        const double dpq = geo::haversine_distance(p, q);
        CHECK(dpq == geo::haversine_distance(q, p));
        CHECK(dpq >= 0.0);
    }
}

TEST_CASE("compass bearing") {
    CHECK(geo::compass_bearing({0, 0}, {1, 0}) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(geo::compass_bearing({0, 0}, {0, 1}) == doctest::Approx(90.0).epsilon(1e-12));
    CHECK(geo::compass_bearing({40.0, -74.0}, {40.1, -73.9}) ==
          doctest::Approx(kBearingNE).epsilon(0).scale(1).epsilon(1e-9));

    GeoLocation a{12.5, 33.0};
    CHECK_THROWS_AS(geo::compass_bearing(a, a), GeometryError);

    Rng rng = Rng::substream(7, "geo-bearing-range");
    for (int i = 0; i < 100; ++i) {
        GeoLocation p{rng.uniform(-80, 80), rng.uniform(-179, 179)};
        GeoLocation q{rng.uniform(-80, 80), rng.uniform(-179, 179)};
        if (p == q) continue;
        const double b = geo::compass_bearing(p, q);
        CHECK(b >= 0.0);
        CHECK(b < 360.0);
    }
}

TEST_CASE("pixel ray field conventions") {
    CHECK_THROWS_AS(geo::pixel_ray_field(1, 8), GeometryError);
    CHECK_THROWS_AS(geo::pixel_ray_field(4, 1), GeometryError);

    const int H = 4, W = 8;
    const geo::RayField field = geo::pixel_ray_field(H, W);
    REQUIRE(field.rays.size() == size_t(H) * W);

    // continuous image center looks due north
    const geo::Vec3 center = geo::ray_direction(W / 2.0 - 0.5, H / 2.0 - 0.5, H, W);
    CHECK(center[0] == doctest::Approx(0.0).epsilon(0).scale(1).epsilon(1e-9));
    CHECK(center[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(center[2] == doctest::Approx(0.0).epsilon(0).scale(1).epsilon(1e-9));

    // column 0 azimuth = -pi + pi/8: south-leaning
    const geo::Vec3 left = geo::ray_direction(0, H / 2.0 - 0.5, H, W);
    CHECK(left[0] == doctest::Approx(-std::sin(kPi / 8)).epsilon(1e-12));
    CHECK(left[1] == doctest::Approx(-std::cos(kPi / 8)).epsilon(1e-12));

    // top row looks up
    for (int u = 0; u < W; ++u) CHECK(field.at(0, u)[2] > 0.0);
    const geo::Vec3 zenith = geo::ray_direction(0, -0.5, H, W);
    CHECK(zenith[2] == doctest::Approx(1.0).epsilon(1e-12));

    // unit norms
    for (const geo::Vec3& r : field.rays)
        CHECK(std::abs(norm3(r) - 1.0) < 1e-9);

    // azimuth strictly monotone along the horizon row, wrapping 360/W per step
    const double step = 2 * kPi / W;
    double prev = std::atan2(geo::ray_direction(0, 1.5, H, W)[0], geo::ray_direction(0, 1.5, H, W)[1]);
    for (int u = 1; u < W; ++u) {
        const geo::Vec3 r = geo::ray_direction(u, 1.5, H, W);
        const double az = std::atan2(r[0], r[1]);
        CHECK(az > prev);
        CHECK(az - prev == doctest::Approx(step).epsilon(1e-9));
        prev = az;
    }
    // wrap: one more azimuth step past column W-1 returns to column 0
    const geo::Vec3 first = field.at(2, 0);
    const geo::Vec3 last = field.at(2, W - 1);
    const double dot = first[0] * last[0] + first[1] * last[1] + first[2] * last[2];
    const double phi_row2 = kPi * (0.5 - 2.5 / H);
    const double expected = std::cos(phi_row2) * std::cos(phi_row2) * std::cos(step) +
                            std::sin(phi_row2) * std::sin(phi_row2);
    CHECK(dot == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("target relative orientation") {
    const int H = 8, W = 32;
    const geo::RayField field = geo::pixel_ray_field(H, W);

    SUBCASE("zero bearing is identity") {
        const auto out = geo::target_relative_orientation(field, 0.0);
        for (size_t i = 0; i < out.size(); ++i)
            for (int k = 0; k < 3; ++k)
                CHECK(out[i][k] == field.rays[i][k]);
    }

    SUBCASE("bearing column maps to north") {
        // pick a column and use its exact azimuth as the bearing
        const int u = 23;
        const double theta = 2 * kPi * ((u + 0.5) / W - 0.5);
        double bearing = std::fmod(geo::rad_to_deg(theta) + 360.0, 360.0);
        const auto out = geo::target_relative_orientation(field, bearing);
        // horizon is between rows; evaluate the rotation on the continuous ray
        const geo::Vec3 r = geo::ray_direction(u, H / 2.0 - 0.5, H, W);
        const double b = geo::deg_to_rad(bearing);
        const double e = r[0] * std::cos(b) - r[1] * std::sin(b);
        const double n = r[0] * std::sin(b) + r[1] * std::cos(b);
        CHECK(std::abs(e) < 1e-6);
        CHECK(n == doctest::Approx(1.0).epsilon(1e-9));
        // and the sampled grid keeps unit norm everywhere
        for (const geo::Vec3& v : out) CHECK(std::abs(norm3(v) - 1.0) < 1e-9);
    }

    SUBCASE("pairwise angles preserved") {
        const auto out = geo::target_relative_orientation(field, 211.25);
        Rng rng = Rng::substream(7, "geo-rotation-pairs");
        for (int trial = 0; trial < 50; ++trial) {
            const size_t i = rng.uniform_index(field.rays.size());
            const size_t j = rng.uniform_index(field.rays.size());
            const auto& a = field.rays[i];
            const auto& b = field.rays[j];
            const double before = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
            const double after = out[i][0] * out[j][0] + out[i][1] * out[j][1] + out[i][2] * out[j][2];
            CHECK(after == doctest::Approx(before).epsilon(0).scale(1).epsilon(1e-12));
        }
    }
}

TEST_CASE("distance feature") {
    GeoLocation a{40.65, -73.95};
    const auto zeros = geo::distance_feature(a, a, 4, 16);
    REQUIRE(zeros.size() == 64);
    for (double v : zeros) CHECK(v == 0.0);

    // displace 50 m due north: haversine is exact for meridian arcs
    const GeoLocation b = geo::offset_geo(a, 0.0, 50.0);
    const auto half = geo::distance_feature(a, b, 4, 16);
    for (double v : half) CHECK(v == doctest::Approx(0.5).epsilon(1e-9));

    // constant map: every entry bitwise-equal, hence zero variance
    double var = 0;
    for (double v : half) var += (v - half[0]) * (v - half[0]);
    CHECK(var == 0.0);
}

TEST_CASE("geo feature maps") {
    GeoLocation target{40.65, -73.95};
    const GeoLocation src = geo::offset_geo(target, 30.0, 40.0);  // 50 m away
    const auto maps = geo::geo_feature_maps(src, target, 8, 32);
    REQUIRE(maps.distance.size() == 8 * 32);
    REQUIRE(maps.orientation.size() == 8 * 32);
    // tangent-plane layout vs great-circle distance: agree to ~1e-6 relative
    CHECK(maps.distance[0] == doctest::Approx(0.5).epsilon(1e-4));
    for (const geo::Vec3& v : maps.orientation) CHECK(std::abs(norm3(v) - 1.0) < 1e-9);

    // the column whose azimuth equals bearing(src, target) has the maximal
    // north component along the horizon-adjacent row
    const double bearing = geo::compass_bearing(src, target);
    const geo::RayField field = geo::pixel_ray_field(8, 32);
    int best_u = -1;
    double best_n = -2;
    for (int u = 0; u < 32; ++u) {
        const double n = maps.orientation[3 * 32 + u][1];
        if (n > best_n) {
            best_n = n;
            best_u = u;
        }
    }
    // expected: column whose azimuth is closest to the bearing
    int expect_u = -1;
    double best_gap = 1e9;
    for (int u = 0; u < 32; ++u) {
        const geo::Vec3& r = field.at(3, u);
        double az = geo::rad_to_deg(std::atan2(r[0], r[1]));
        az = std::fmod(az + 360.0, 360.0);
        double gap = std::abs(az - bearing);
        gap = std::min(gap, 360.0 - gap);
        if (gap < best_gap) {
            best_gap = gap;
            expect_u = u;
        }
    }
    CHECK(best_u == expect_u);
}

TEST_CASE("overhead pixel mapping") {
    geo::OverheadFrame frame;
    frame.center = {40.65, -73.95};
    frame.gsd = 0.5;
    frame.size = 256;

    SUBCASE("center maps to image center") {
        const auto px = geo::geo_to_overhead_pixel(frame.center, frame);
        CHECK(px.row == doctest::Approx(128.0).epsilon(1e-12));
        CHECK(px.col == doctest::Approx(128.0).epsilon(1e-12));
    }

    SUBCASE("one gsd east is one column") {
        const GeoLocation east = geo::offset_geo(frame.center, frame.gsd, 0.0);
        const auto px = geo::geo_to_overhead_pixel(east, frame);
        CHECK(px.col == doctest::Approx(129.0).epsilon(0).scale(1).epsilon(1e-6));
        CHECK(px.row == doctest::Approx(128.0).epsilon(0).scale(1).epsilon(1e-6));
    }

    SUBCASE("round trip within 1e-6 px") {
        Rng rng = Rng::substream(7, "geo-roundtrip");
        for (int i = 0; i < 100; ++i) {
            const double row = rng.uniform(0.0, 256.0);
            const double col = rng.uniform(0.0, 256.0);
            const GeoLocation loc = geo::overhead_pixel_to_geo(row, col, frame);
            const auto px = geo::geo_to_overhead_pixel(loc, frame);
            CHECK(std::abs(px.row - row) < 1e-6);
            CHECK(std::abs(px.col - col) < 1e-6);
        }
    }

    SUBCASE("out of footprint throws") {
        const GeoLocation far_east = geo::offset_geo(frame.center, 0.5 * frame.gsd * frame.size + 1.0, 0.0);
        CHECK_THROWS_AS(geo::geo_to_overhead_pixel(far_east, frame), GeometryError);
    }

    SUBCASE("enu offset inverts offset_geo") {
        const GeoLocation loc = geo::offset_geo(frame.center, 17.25, -42.5);
        const auto [east, north] = geo::enu_offset(frame.center, loc);
        CHECK(east == doctest::Approx(17.25).epsilon(1e-9));
        CHECK(north == doctest::Approx(-42.5).epsilon(1e-9));
    }
}

TEST_CASE("location validation") {
    CHECK_NOTHROW(geo::validate({0, 0}));
    CHECK_NOTHROW(geo::validate({-90, -180}));
    CHECK_THROWS_AS(geo::validate({90.5, 0}), GeometryError);
    CHECK_THROWS_AS(geo::validate({0, 180.0}), GeometryError);
}
