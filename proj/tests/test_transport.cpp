#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "skyhdr/rng.hpp"
#include "skyhdr/pano_io.hpp"
#include "skyhdr/transport.hpp"

using namespace skyhdr;

namespace {

SceneSpec small_spec() {
    SceneSpec s;
    s.render_width = 16;
    s.render_height = 16;
    return s;
}

const TransportMatrix& small_t() {
    static const TransportMatrix t = build_transport(small_spec());
    return t;
}

FloatPanorama random_sky(Rng& rng, int w, int h) {
    FloatPanorama p(w, h);
    for (auto& v : p.values()) v = float(rng.uniform(0, 2));
    return p;
}

double dot(const FloatImage& a, const FloatImage& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.values().size(); ++i) s += double(a.values()[i]) * b.values()[i];
    return s;
}

}  // namespace

TEST_CASE("uniform sky on unoccluded ground") {
    const TransportMatrix& t = small_t();
    CHECK(t.rows() == 256);
    CHECK(t.cols() == 128 * 32);
    CHECK(t.weights.minCoeff() >= 0.0f);
    // Occlusion only removes light.
    CHECK(t.weights.rowwise().sum().maxCoeff() <= 1.02f);

    // Object sunk below the ground: every visible point sees the full sky.
    SceneSpec open = small_spec();
    open.object_center = Vec3(0.0, -50.0, 0.0);
    const TransportMatrix o = build_transport(open);
    const SpikySphereScene scene(open);
    int checked = 0;
    for (int py = 0; py < 16; ++py)
        for (int px = 0; px < 16; ++px) {
            const auto hit = scene.trace_primary(px, py);
            const int i = py * 16 + px;
            if (!hit.hit) {
                CHECK(o.weights.row(i).sum() == 0.0f);
                continue;
            }
            CHECK(!hit.on_object);
            CHECK(std::abs(o.weights.row(i).sum() - 1.0) < 0.02);
            ++checked;
        }
    CHECK(checked > 100);

    // A point shaded by the object loses exactly the blocked directions.
    const SpikySphereScene real(small_spec());
    int partial = 0;
    for (int py = 0; py < 16; py += 5)
        for (int px = 0; px < 16; px += 5) {
            const auto hit = real.trace_primary(px, py);
            if (!hit.hit || hit.on_object) continue;
            double blocked = 0;
            for (int r = 0; r < 32; ++r)
                for (int c = 0; c < 128; ++c) {
                    const Vec3 d = direction_of_pixel(r, c, 128, 64);
                    if (!real.unoccluded(hit.point + hit.normal * 1e-6, d))
                        blocked += d.y() * solid_angle(r, 128, 64) / M_PI;
                }
            partial += blocked > 0;
            CHECK(t.weights.row(py * 16 + px).sum() + blocked ==
                  doctest::Approx(o.weights.row(py * 16 + px).sum()).epsilon(1e-4));
        }
    CHECK(partial > 0);
}

TEST_CASE("delta sky") {
    const TransportMatrix& t = small_t();
    const SpikySphereScene scene(small_spec());
    const int row = 10, col = 40, j = row * 128 + col;
    const Vec3 d = direction_of_pixel(row, col, 128, 64);
    int lit = 0, shadowed = 0;
    for (int py = 0; py < 16; ++py)
        for (int px = 0; px < 16; ++px) {
            const auto hit = scene.trace_primary(px, py);
            if (!hit.hit || hit.on_object) continue;
            const double w = t.weights(py * 16 + px, j);
            if (scene.unoccluded(hit.point + hit.normal * 1e-6, d)) {
                CHECK(w == doctest::Approx(d.y() * solid_angle(row, 128, 64) / M_PI).epsilon(1e-4));
                ++lit;
            } else {
                CHECK(w == 0.0f);
                ++shadowed;
            }
        }
    CHECK(lit > 0);
}

TEST_CASE("render linearity and adjoint") {
    const TransportMatrix& t = small_t();
    Rng rng(2);
    const FloatPanorama zero(128, 64);
    const FloatImage rz = render(t, zero);
    for (float v : rz.values()) CHECK(v == 0.0f);
    const FloatPanorama a = random_sky(rng, 128, 64), b = random_sky(rng, 128, 64);
    FloatPanorama sum(128, 64), twice(128, 64);
    for (std::size_t i = 0; i < sum.values().size(); ++i) {
        sum.values()[i] = a.values()[i] + b.values()[i];
        twice.values()[i] = 2 * a.values()[i];
    }
    const FloatImage ra = render(t, a), rb = render(t, b), rs = render(t, sum), r2 = render(t, twice);
    for (std::size_t i = 0; i < ra.values().size(); ++i) {
        CHECK(std::abs(rs.values()[i] - ra.values()[i] - rb.values()[i]) <= 1e-5 * (std::abs(rs.values()[i]) + 1e-6));
        CHECK(r2.values()[i] == doctest::Approx(2 * ra.values()[i]).epsilon(1e-6));
    }
    // bottom hemisphere is invisible
    FloatPanorama low = a;
    for (int r = 32; r < 64; ++r)
        for (int c = 0; c < 128; ++c) low(r, c, 0) += 5.0f;
    CHECK(render(t, low) == ra);

    FloatImage up(16, 16);
    const FloatPanorama gz = render_backward(t, up);
    for (float v : gz.values()) CHECK(v == 0.0f);
    for (auto& v : up.values()) v = float(rng.uniform(-1, 1));
    const FloatPanorama g = render_backward(t, up);
    for (int r = 32; r < 64; ++r) CHECK(g(r, 5, 1) == 0.0f);
    CHECK(dot(ra, up) == doctest::Approx(dot(a, g)).epsilon(1e-5));
    double worst = 0.0;
    for (int k = 0; k < 30; ++k) {
        const int r = int(rng.index(32)), c = int(rng.index(128)), ch = int(rng.index(3));
        // render is linear, so probe a single pixel from a zero sky to avoid cancellation
        FloatPanorama p(128, 64), m(128, 64);
        const float h = 0.25f;
        p(r, c, ch) = h;
        m(r, c, ch) = -h;
        const double fd = (dot(render(t, p), up) - dot(render(t, m), up)) / (2.0 * h);
        worst = std::max(worst, std::abs(fd - g(r, c, ch)) / std::max(std::abs(fd), 1e-3));
    }
    CHECK(worst < 1e-4);

    FloatImage single(16, 16);
    single(7, 9, 2) = 1.0f;
    const FloatPanorama col = render_backward(t, single);
    for (int j = 0; j < t.cols(); j += 97) CHECK(col(j / 128, j % 128, 2) == t.weights(7 * 16 + 9, j));
}

TEST_CASE("transport cache") {
    const auto dir = std::filesystem::temp_directory_path() / "skyhdr_test_transport";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    const TransportMatrix& t = small_t();
    save_transport(dir / "t.bin", t);
    const TransportMatrix l = load_transport(dir / "t.bin");
    CHECK(l.weights == t.weights);
    CHECK(l.scene_hash == small_spec().hash());
    SceneSpec other = small_spec();
    other.spike_count = 5;
    CHECK(other.hash() != small_spec().hash());
    const TransportMatrix rebuilt = load_or_build_transport(dir / "t.bin", other);
    CHECK(rebuilt.scene_hash == other.hash());
    CHECK(load_transport(dir / "t.bin").scene_hash == other.hash());
    const std::string bytes = read_file(dir / "t.bin");
    write_file_atomic(dir / "short.bin", bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(load_transport(dir / "short.bin"), DataError);
    std::filesystem::remove_all(dir);
}
