#include <doctest.h>

#include <cmath>

#include "skyhdr/rng.hpp"
#include "skyhdr/sun_detect.hpp"

using namespace skyhdr;

namespace {

void disk(LdrPanorama& p, double row, double col, double radius) {
    const int w = p.width();
    for (int r = 0; r < p.height(); ++r)
        for (int c = 0; c < w; ++c) {
            double dc = std::abs(c - col);
            dc = std::min(dc, w - dc);
            if ((r - row) * (r - row) + dc * dc <= radius * radius)
                for (int ch = 0; ch < 3; ++ch) p(r, c, ch) = 255;
        }
}

double col_distance(double a, double b, int w) {
    const double d = std::fmod(std::abs(a - b), double(w));
    return std::min(d, w - d);
}

}  // namespace

TEST_CASE("single disk") {
    LdrPanorama p(128, 64, 20);
    disk(p, 20, 64, 2.5);
    const SunPosition s = detect_sun(p);
    CHECK(s.pixel_row() == 20);
    CHECK(s.pixel_col(128) == 64);
}

TEST_CASE("largest region wins") {
    LdrPanorama p(128, 64, 10);
    disk(p, 30, 20, 4.0);  // ~50 px
    disk(p, 30, 90, 1.8);  // ~10 px
    const SunPosition s = detect_sun(p);
    CHECK(col_distance(s.col, 20, 128) <= 1.0);
}

TEST_CASE("disk across the seam") {
    LdrPanorama p(128, 64, 10);
    disk(p, 25, 0, 3.0);
    const SunPosition s = detect_sun(p);
    CHECK(col_distance(s.col, 0, 128) <= 1.0);
    const SunPosition r = detect_sun(rotate_azimuth(p, 64));
    CHECK(col_distance(r.col - 64, s.col, 128) <= 1.0);
}

TEST_CASE("no saturation") {
    LdrPanorama p(128, 64, 100);
    CHECK_THROWS_AS(detect_sun(p), DataError);
}

TEST_CASE("centering") {
    CHECK(centering_shift(sun_from_angles(0.3, azimuth_of_col(64, 128), 128, 64), 128) == 0);
    const int s = centering_shift(sun_from_angles(0.3, M_PI / 2, 128, 64), 128);
    const int m = ((s % 128) + 128) % 128;
    CHECK(std::abs(std::min(m, 128 - m) - 32) <= 1);
    Rng rng(11);
    for (int i = 0; i < 100; ++i) {
        LdrPanorama p(128, 64, std::uint8_t(rng.index(200)));
        disk(p, rng.uniform(2, 40), rng.uniform(0, 128), rng.uniform(1.0, 3.0));
        const SunAlignment a = align_sun_center(p);
        CHECK(std::abs(detect_sun(a.panorama).azimuth) <= 2 * M_PI / 128 + 1e-9);
    }
}
