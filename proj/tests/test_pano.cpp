#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "skyhdr/pano.hpp"
#include "skyhdr/pano_io.hpp"
#include "skyhdr/rng.hpp"

using namespace skyhdr;

TEST_CASE("tonemap closed form") {
    const TonemapParams tp;
    CHECK(tonemap_value(0.0, tp) == 0.0);
    const long double expect = std::pow(100000.0L, 1.0L / 2.2L) / 30.0L;
    CHECK(std::abs(tonemap_value(1e5, tp) - double(expect)) < 1e-12 * double(expect));
    CHECK(inverse_tonemap_value(0.0, tp) == 0.0);
    CHECK(inverse_tonemap_value(1.0 / 30.0, tp) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(tonemap_value(inverse_tonemap_value(1.0, tp), tp) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(tonemap_value(-1.0, tp), DataError);
    CHECK_THROWS_AS(tonemap_value(NAN, tp), DataError);
    TonemapParams bad;
    bad.gamma = 0.5;
    CHECK_THROWS_AS(bad.validate(), UsageError);
}

TEST_CASE("tonemap panorama round trip") {
    HdrPanorama p(16, 8);
    Rng rng(3);
    for (auto& v : p.values()) v = float(rng.log_uniform(1e-3, 1e5));
    const HdrPanorama back = inverse_tonemap(tonemap(p));
    for (std::size_t i = 0; i < p.values().size(); ++i)
        CHECK(std::abs(back.values()[i] - p.values()[i]) <= 1e-5f * p.values()[i]);
}

TEST_CASE("expose") {
    HdrPanorama p(8, 4, 2.0f);
    CHECK(expose(p, 1.0) == p);
    const HdrPanorama q = expose(expose(p, 1.0 / 1.75), 1.75);
    for (std::size_t i = 0; i < p.values().size(); ++i) CHECK(std::abs(q.values()[i] - 2.0f) < 2e-6f);
    CHECK_THROWS(expose(p, 0.0));
}

TEST_CASE("quantize rounding rule") {
    CHECK(quantize_code(0.0) == 0);
    CHECK(quantize_code(1.0) == 255);
    CHECK(quantize_code(7.0) == 255);
    CHECK(quantize_code(-1.0) == 0);
    CHECK(quantize_code(0.5) == 128);
    for (int k = 0; k < 255; ++k) {
        const double mid = (k + 0.5) / 255.0;
        CHECK(quantize_code(mid + 1e-9) == k + 1);
        CHECK(quantize_code(mid - 1e-9) == k);
    }
}

TEST_CASE("pixel geometry") {
    CHECK(elevation_of_row(0, 64) == doctest::Approx(M_PI / 2 - M_PI / 128));
    CHECK(std::abs(elevation_of_row(31.5, 64)) < 1e-12);
    CHECK(std::abs(azimuth_of_col(63.5, 128)) < 1e-12);
    for (int r = 0; r < 64; r += 7)
        for (int c = 0; c < 128; c += 5) {
            CHECK(direction_of_pixel(r, c, 128, 64).norm() == doctest::Approx(1.0).epsilon(1e-12));
            CHECK(row_of_elevation(elevation_of_row(r, 64), 64) == doctest::Approx(r));
            CHECK(col_of_azimuth(azimuth_of_col(c, 128), 128) == doctest::Approx(c));
        }
    const Vec3 z = direction_from_angles(0.0, 0.0), x = direction_from_angles(0.0, M_PI / 2);
    CHECK(z.z() == doctest::Approx(1.0));
    CHECK(x.x() == doctest::Approx(1.0));
    CHECK(direction_from_angles(M_PI / 2, 0.3).y() == doctest::Approx(1.0));
}

TEST_CASE("solid angles") {
    double total = 0.0;
    for (int r = 0; r < 64; ++r) total += 128 * solid_angle(r, 128, 64);
    CHECK(std::abs(total - 4 * M_PI) < 1e-3 * 4 * M_PI);
    double lo = 1e9;
    int argmin = -1;
    for (int r = 0; r < 64; ++r)
        if (solid_angle(r, 128, 64) < lo) lo = solid_angle(r, 128, 64), argmin = r;
    CHECK((argmin == 0 || argmin == 63));
    for (int r = 0; r < 32; ++r) CHECK(solid_angle(r, 128, 64) == doctest::Approx(solid_angle(63 - r, 128, 64)));
}

TEST_CASE("rotation and flips") {
    LdrPanorama p(16, 8);
    Rng rng(5);
    for (auto& v : p.values()) v = std::uint8_t(rng.index(256));
    CHECK(rotate_azimuth(p, 16) == p);
    CHECK(rotate_azimuth(rotate_azimuth(p, 5), -5) == p);
    CHECK(hflip(hflip(p)) == p);
    CHECK(rotate_azimuth(p, 3)(2, 3, 1) == p(2, 0, 1));
    CHECK_THROWS_AS(LdrPanorama(10, 10), DataError);
}

TEST_CASE("PFM and PPM round trips") {
    const auto dir = std::filesystem::temp_directory_path() / "skyhdr_test_io";
    std::filesystem::create_directories(dir);
    FloatImage f(5, 3);
    Rng rng(9);
    for (auto& v : f.values()) v = float(rng.uniform(0, 1e4));
    write_pfm(dir / "a.pfm", f);
    CHECK(read_pfm(dir / "a.pfm") == f);
    Image<std::uint8_t> u(7, 2);
    for (auto& v : u.values()) v = std::uint8_t(rng.index(256));
    write_ppm(dir / "a.ppm", u);
    CHECK(read_ppm(dir / "a.ppm") == u);

    const std::string bytes = encode_pfm(f);
    CHECK_THROWS_AS(decode_pfm(bytes.substr(0, bytes.size() - 3)), DataError);
    CHECK_THROWS_AS(decode_ppm("P3\n1 1\n255\n"), DataError);
    CHECK_THROWS_AS(read_pfm(dir / "missing.pfm"), DataError);
    for (const auto& e : std::filesystem::directory_iterator(dir))
        CHECK(e.path().filename().string().find(".tmp") == std::string::npos);
    std::filesystem::remove_all(dir);
}
