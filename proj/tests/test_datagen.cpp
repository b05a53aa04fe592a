#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "skyhdr/datagen.hpp"
#include "skyhdr/pano_io.hpp"

using namespace skyhdr;

namespace {

SkyParams flat_sky() {
    SkyParams s;
    s.base = 1.0;
    s.ratio = 1e-9;
    s.circumsolar = 0.0;
    s.horizon = 0.0;
    s.tint = {1.0, 1.0, 1.0};
    s.cloudiness = 0.0;
    return s;
}

}  // namespace

TEST_CASE("sky model") {
    SkyParams sp;
    sp.sun_elevation = 0.5;
    sp.sun_azimuth = 0.3;
    const HdrPanorama sky = gen_sky(sp, 128, 64);
    int br = 0, bc = 0;
    float best = -1;
    double integral = 0;
    for (int r = 0; r < 64; ++r)
        for (int c = 0; c < 128; ++c) {
            if (sky(r, c, 0) > best) best = sky(r, c, 0), br = r, bc = c;
            integral += sky(r, c, 1) * solid_angle(r, 128, 64);
            if (r >= 32) CHECK(sky(r, c, 2) == 0.0f);
        }
    const SunPosition sun = sun_from_angles(0.5, 0.3, 128, 64);
    CHECK(br == sun.pixel_row());
    CHECK(bc == sun.pixel_col(128));
    CHECK(std::isfinite(integral));
    CHECK(integral > 0);
    SkyParams twice = sp;
    twice.base *= 2;
    const HdrPanorama s2 = gen_sky(twice, 128, 64);
    for (std::size_t i = 0; i < sky.values().size(); i += 13)
        CHECK(s2.values()[i] == doctest::Approx(2 * sky.values()[i]).epsilon(1e-6));
}

TEST_CASE("ground shading") {
    GroundParams gp;
    gp.albedo = {0.0, 0.0, 0.0};
    const GeneratedPanorama dark = gen_panorama(SkyParams{}, gp, 128, 64);
    for (int r = 32; r < 64; ++r)
        for (int c = 0; c < 128; ++c) CHECK(dark.hdr(r, c, 0) == 0.0f);

    gp.albedo = {0.5, 0.25, 0.1};
    gp.max_radiance = 1e9;
    const GeneratedPanorama g = gen_panorama(flat_sky(), gp, 128, 64);
    for (int r = 32; r < 64; r += 5)
        for (int c = 0; c < 128; c += 9)
            for (int ch = 0; ch < 3; ++ch) CHECK(std::abs(g.hdr(r, c, ch) / gp.albedo[std::size_t(ch)] - 1.0) < 0.02);

    GroundParams walls;
    walls.occluders.push_back({M_PI, 0.4, 5.0, 6.0});
    walls.max_radiance = 0.3;
    SkyParams sp;
    sp.sun_azimuth = 0.0;
    const GeneratedPanorama w = gen_panorama(sp, walls, 128, 64);
    float peak = 0;
    for (int r = 32; r < 64; ++r)
        for (int c = 0; c < 128; ++c) peak = std::max(peak, w.hdr(r, c, 0));
    CHECK(peak <= 0.3f + 1e-6f);
}

TEST_CASE("generated samples") {
    GenConfig cfg;
    for (int group = 0; group < 6; ++group) {
        SampleDraw used;
        const auto aug = generate_sample(cfg, group, group % 4, &used);
        REQUIRE(aug.size() == 6);
        std::set<std::string> ids;
        for (const auto& a : aug) {
            ids.insert(a.id);
            CHECK(saturated_fraction(a.ldr) >= cfg.min_saturation);
            CHECK(std::abs(a.sun.azimuth) <= 2 * M_PI / 128);
            const SunPosition d = detect_sun(a.ldr);
            double dc = std::abs(d.col - a.sun.col);
            dc = std::min(dc, 128 - dc);
            CHECK(dc <= 2.0);
            CHECK(std::abs(d.row - a.sun.row) <= 2.0);
        }
        CHECK(ids.size() == 6);
        const HdrPanorama up = expose(aug[0].hdr, 1.75);
        for (std::size_t k = 0; k < up.values().size(); k += 7)
            CHECK(aug[1].hdr.values()[k] == doctest::Approx(up.values()[k]).epsilon(1e-6));
        CHECK(aug[3].hdr == hflip(aug[0].hdr));
        const auto again = generate_sample(cfg, group, group % 4);
        CHECK(again[2].ldr == aug[2].ldr);
        CHECK(again[2].hdr == aug[2].hdr);
    }
}

TEST_CASE("CRF and colour") {
    for (const CrfParams crf : {CrfParams{CrfFamily::identity, 1.0, 0.0}, CrfParams{CrfFamily::gamma, 2.2, 0.0},
                                CrfParams{CrfFamily::gamma_sigmoid, 2.0, 4.0}}) {
        CHECK(crf.apply(0.0) == doctest::Approx(0.0));
        CHECK(crf.apply(1.0) == doctest::Approx(1.0));
        double prev = -1;
        for (double x = 0.0; x <= 1.0; x += 0.01) {
            const double y = crf.apply(x);
            CHECK(y > prev);
            prev = y;
            CHECK(crf.invert(y) == doctest::Approx(x).epsilon(1e-9));
        }
    }
    for (double h = 0; h < 360; h += 37)
        for (double s : {0.0, 0.3, 1.0}) {
            double r, g, b, h2, s2, v2;
            hsv_to_rgb(h, s, 0.8, r, g, b);
            rgb_to_hsv(r, g, b, h2, s2, v2);
            CHECK(v2 == doctest::Approx(0.8));
            CHECK(s2 == doctest::Approx(s));
            if (s > 0) CHECK(h2 == doctest::Approx(h));
        }

    HdrPanorama p(16, 8);
    for (int i = 0; i < 16 * 8; ++i)
        for (int ch = 0; ch < 3; ++ch) p.values()[std::size_t(i) * 3 + ch] = float(i) / 200.0f + 0.01f * ch;
    const CrfParams id{CrfFamily::identity, 1.0, 0.0};
    const LdrPanorama q = derive_ldr(p, 1.0, id);
    for (std::size_t i = 0; i < p.values().size(); ++i) CHECK(q.values()[i] == quantize_code(p.values()[i]));
    CHECK(derive_ldr(p, 1.0, id, 360.0, 0.0) == derive_ldr(p, 1.0, id, 0.0, 0.0));
    CHECK(derive_ldr(p, 1.0, CrfParams{}, 370.0, 0.05) == derive_ldr(p, 1.0, CrfParams{}, 10.0, 0.05));

    // monotone CRF keeps the order of unclipped grey pixels
    HdrPanorama grey(16, 8);
    Rng rng(3);
    for (int i = 0; i < 128; ++i) {
        const float v = float(rng.uniform(0.0, 0.9));
        for (int ch = 0; ch < 3; ++ch) grey.values()[std::size_t(i) * 3 + ch] = v;
    }
    const LdrPanorama gl = derive_ldr(grey, 1.0, CrfParams{CrfFamily::gamma_sigmoid, 2.4, 3.0});
    for (int i = 0; i < 128; ++i)
        for (int j = 0; j < 128; ++j)
            if (grey.values()[std::size_t(i) * 3] < grey.values()[std::size_t(j) * 3])
                CHECK(gl.values()[std::size_t(i) * 3] <= gl.values()[std::size_t(j) * 3]);
}

TEST_CASE("linearization modes") {
    LdrPanorama l(16, 8, 128);
    l(0, 0, 0) = 255;
    CHECK(linearize_input(l, LinearizeMode::jpg)(1, 1, 1) == doctest::Approx(128.0 / 255.0));
    CHECK(linearize_input(l, LinearizeMode::gamma22)(0, 0, 0) == doctest::Approx(1.0));
    const CrfParams crf{CrfFamily::gamma_sigmoid, 2.3, 3.5};
    HdrPanorama p(16, 8);
    Rng rng(8);
    for (auto& v : p.values()) v = float(rng.uniform(0.0, 0.95));
    const FloatPanorama lin = linearize_input(derive_ldr(p, 1.0, crf), LinearizeMode::rf, Calibration{crf, {1, 1, 1}});
    for (std::size_t i = 0; i < p.values().size(); ++i) {
        const double lo = crf.invert(std::max(0.0, crf.apply(p.values()[i]) - 0.5 / 255));
        const double hi = crf.invert(std::min(1.0, crf.apply(p.values()[i]) + 0.5 / 255));
        CHECK(lin.values()[i] >= lo - 1e-6);
        CHECK(lin.values()[i] <= hi + 1e-6);
    }
    CHECK_THROWS_AS(parse_linearize_mode("raw"), UsageError);
    CHECK(parse_linearize_mode("rf_wb") == LinearizeMode::rf_wb);
}

TEST_CASE("splits") {
    const auto s = split_groups(60, {0.69, 0.15, 0.16}, 1);
    std::set<int> all;
    for (const auto& g : s)
        for (int id : g) CHECK(all.insert(id).second);
    CHECK(all.size() == 60);
    CHECK(s[0].size() + s[1].size() + s[2].size() == 60);
    CHECK(s[1].size() >= 1);
    CHECK(s[2].size() >= 1);
    CHECK(split_groups(60, {0.69, 0.15, 0.16}, 1) == s);
    CHECK_THROWS_AS(split_groups(10, {0.5, 0.6, 0.1}, 1), UsageError);
}

TEST_CASE("dataset build, manifest and determinism") {
    const auto root = std::filesystem::temp_directory_path() / "skyhdr_test_data";
    std::filesystem::remove_all(root);
    GenConfig cfg;
    cfg.scenes = 4;
    cfg.samples_per_scene = 1;
    cfg.fractions = {0.5, 0.25, 0.25};
    const Manifest a = build_dataset(cfg, root / "a");
    const Manifest b = build_dataset(cfg, root / "b");
    CHECK(a.rows.size() == 4 * 1 * 6);
    CHECK(read_file(root / "a" / "manifest.csv") == read_file(root / "b" / "manifest.csv"));
    for (const auto& r : a.rows) {
        CHECK(read_file(root / "a" / r.hdr_path) == read_file(root / "b" / r.hdr_path));
        CHECK(read_file(root / "a" / r.ldr_path) == read_file(root / "b" / r.ldr_path));
    }
    const Manifest parsed = parse_manifest(manifest_csv(a));
    CHECK(manifest_csv(parsed) == manifest_csv(a));

    const Dataset tr = load_dataset(root / "a" / "manifest.csv", "train");
    const Dataset te = load_dataset(root / "a" / "manifest.csv", "test");
    const Dataset all = load_dataset(root / "a" / "manifest.csv", "all");
    CHECK(all.size() == 24);
    CHECK(tr.size() + te.size() + load_dataset(root / "a" / "manifest.csv", "val").size() == 24);
    CHECK_NOTHROW(check_disjoint_groups(tr, te));
    CHECK(tr.samples[0].input.size() == 3 * 64 * 128);
    CHECK(tr.samples[0].target_tm.size() == 3 * 64 * 128);
    CHECK_THROWS_AS(load_dataset(root / "a" / "manifest.csv", "bogus"), UsageError);
    CHECK_THROWS_AS(parse_manifest("id,group\nx,1\n"), DataError);
    std::filesystem::remove(root / "a" / a.rows[0].ldr_path);
    CHECK_THROWS_AS(load_dataset(root / "a" / "manifest.csv", "all"), DataError);
    std::filesystem::remove_all(root);
}

TEST_CASE("day sequence") {
    const auto frames = gen_day_sequence(3, 12);
    REQUIRE(frames.size() == 12);
    for (const auto& f : frames) {
        CHECK(std::abs(f.sun.azimuth) <= 2 * M_PI / 128);
        CHECK(saturated_fraction(f.ldr) > 0.0);
    }
    CHECK(frames[6].sun.elevation > frames[0].sun.elevation);
    CHECK(frames[6].sun.elevation > frames[11].sun.elevation);
    CHECK_THROWS_AS(gen_day_sequence(3, 1), UsageError);
}
