#include "skyhdr/transport.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <Eigen/Geometry>

#include "skyhdr/pano_io.hpp"
#include "skyhdr/parallel.hpp"
#include "skyhdr/rng.hpp"

namespace skyhdr {

namespace {

constexpr std::uint32_t kTransportMagic = 0x54594b53;  // "SKYT"
constexpr std::uint32_t kTransportVersion = 1;

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt(const Vec3& v) { return fmt(v.x()) + "," + fmt(v.y()) + "," + fmt(v.z()); }

/// Ray/sphere entry and exit distances; false when the ray misses.
bool sphere_span(const Vec3& o, const Vec3& d, const Vec3& c, double radius, double* t0,
                 double* t1) {
    const Vec3 oc = o - c;
    const double b = oc.dot(d);
    const double q = oc.squaredNorm() - radius * radius;
    const double disc = b * b - q;
    if (disc <= 0.0) return false;
    const double s = std::sqrt(disc);
    *t0 = -b - s;
    *t1 = -b + s;
    return *t1 > 0.0;
}

}  // namespace

std::string SceneSpec::describe() const {
    std::ostringstream ss;
    ss << "spiky-sphere-v1;center=" << fmt(object_center) << ";radius=" << fmt(base_radius)
       << ";spikes=" << spike_count << ";amplitude=" << fmt(spike_amplitude)
       << ";width=" << fmt(spike_width) << ";albedo=" << fmt(albedo)
       << ";camera=" << fmt(camera_position) << ";target=" << fmt(camera_target)
       << ";fov=" << fmt(fov_degrees) << ";render=" << render_width << "x" << render_height
       << ";pano=" << pano_width << "x" << pano_height;
    return ss.str();
}

std::uint64_t SceneSpec::hash() const {
    const std::string s = describe();
    return fnv1a(s.data(), s.size());
}

SpikySphereScene::SpikySphereScene(const SceneSpec& spec) : spec_(spec) {
    if (spec.base_radius <= 0.0 || spec.spike_amplitude < 0.0 || spec.spike_width <= 0.0 ||
        spec.spike_count < 0)
        throw UsageError("invalid spiky sphere parameters");
    if (spec.albedo < 0.0) throw UsageError("albedo must be non-negative");
    if (spec.render_width <= 0 || spec.render_height <= 0)
        throw UsageError("render resolution must be positive");
    if (spec.pano_width != 2 * spec.pano_height || spec.pano_height % 2 != 0)
        throw UsageError("panorama must be 2:1 with an even height");

    // Fibonacci sphere directions.
    const double golden = M_PI * (3.0 - std::sqrt(5.0));
    for (int k = 0; k < spec.spike_count; ++k) {
        const double y = 1.0 - 2.0 * (k + 0.5) / spec.spike_count;
        const double rad = std::sqrt(std::max(0.0, 1.0 - y * y));
        spikes_.emplace_back(rad * std::cos(golden * k), y, rad * std::sin(golden * k));
    }
    double max_sum = 0.0;
    for (const Vec3& s : spikes_) {
        double sum = 0.0;
        for (const Vec3& t : spikes_) sum += std::exp((s.dot(t) - 1.0) / spec.spike_width);
        max_sum = std::max(max_sum, sum);
    }
    bound_radius_ = spec.base_radius + spec.spike_amplitude * max_sum * 1.05 + 1e-3;

    // Lipschitz bound of the field outside the base sphere: the angular slope
    // of one bump peaks at e^{-1/2}/sqrt(width).
    const double slope = spec.spike_amplitude * max_sum * std::exp(-0.5) / std::sqrt(spec.spike_width);
    step_scale_ = 0.9 / std::sqrt(1.0 + std::pow(slope / spec.base_radius, 2));

    if (spec.camera_position.y() <= 0.0 || field(spec.camera_position) <= 0.0)
        throw UsageError("degenerate scene: camera inside geometry");
    cam_forward_ = (spec.camera_target - spec.camera_position).normalized();
    Vec3 up_hint(0.0, 1.0, 0.0);
    if (std::abs(cam_forward_.dot(up_hint)) > 0.999) up_hint = Vec3(0.0, 0.0, 1.0);
    cam_right_ = cam_forward_.cross(up_hint).normalized();
    cam_up_ = cam_right_.cross(cam_forward_);
}

double SpikySphereScene::field(const Vec3& p) const {
    const Vec3 v = p - spec_.object_center;
    const double dist = v.norm();
    if (dist < 1e-12) return -spec_.base_radius;
    const Vec3 u = v / dist;
    double bumps = 0.0;
    for (const Vec3& s : spikes_) bumps += std::exp((u.dot(s) - 1.0) / spec_.spike_width);
    return dist - (spec_.base_radius + spec_.spike_amplitude * bumps);
}

Vec3 SpikySphereScene::object_normal(const Vec3& p) const {
    const double e = 1e-5;
    Vec3 g;
    for (int i = 0; i < 3; ++i) {
        Vec3 a = p, b = p;
        a[i] += e;
        b[i] -= e;
        g[i] = field(a) - field(b);
    }
    return g.normalized();
}

bool SpikySphereScene::march(const Vec3& o, const Vec3& d, double t_max, double* t_hit) const {
    double t0, t1;
    if (!sphere_span(o, d, spec_.object_center, bound_radius_, &t0, &t1)) return false;
    double t = std::max(t0, 0.0);
    const double t_end = std::min(t1, t_max);
    double prev_t = t;
    double prev_f = field(o + t * d);
    if (prev_f <= 0.0) {
        *t_hit = t;
        return true;
    }
    constexpr double kMinStep = 2e-4;
    while (t < t_end) {
        t = std::min(t_end, t + std::max(prev_f * step_scale_, kMinStep));
        const double f = field(o + t * d);
        if (f <= 0.0) {
            double lo = prev_t, hi = t;
            for (int i = 0; i < 40; ++i) {
                const double mid = 0.5 * (lo + hi);
                if (field(o + mid * d) > 0.0) lo = mid;
                else hi = mid;
            }
            *t_hit = hi;
            return true;
        }
        prev_t = t;
        prev_f = f;
    }
    return false;
}

SpikySphereScene::Hit SpikySphereScene::trace_primary(int px, int py) const {
    const double aspect = double(spec_.render_width) / spec_.render_height;
    const double tan_half = std::tan(spec_.fov_degrees * M_PI / 360.0);
    const double sx = (2.0 * (px + 0.5) / spec_.render_width - 1.0) * tan_half * aspect;
    const double sy = (1.0 - 2.0 * (py + 0.5) / spec_.render_height) * tan_half;
    const Vec3 dir = (cam_forward_ + sx * cam_right_ + sy * cam_up_).normalized();
    const Vec3& o = spec_.camera_position;

    Hit hit;
    double t_plane = std::numeric_limits<double>::infinity();
    if (dir.y() < 0.0) t_plane = -o.y() / dir.y();
    double t_obj;
    if (march(o, dir, t_plane, &t_obj)) {
        hit.hit = true;
        hit.on_object = true;
        hit.point = o + t_obj * dir;
        hit.normal = object_normal(hit.point);
        return hit;
    }
    if (std::isfinite(t_plane)) {
        hit.hit = true;
        hit.point = o + t_plane * dir;
        hit.point.y() = 0.0;
        hit.normal = Vec3(0.0, 1.0, 0.0);
    }
    return hit;
}

bool SpikySphereScene::unoccluded(const Vec3& origin, const Vec3& dir) const {
    double t;
    return !march(origin, dir, std::numeric_limits<double>::infinity(), &t);
}

TransportMatrix build_transport(const SceneSpec& spec) {
    const SpikySphereScene scene(spec);
    const int w = spec.pano_width;
    const int h = spec.pano_height;
    const int cols = w * (h / 2);
    const int rows = spec.render_width * spec.render_height;

    std::vector<Vec3> dirs(cols);
    std::vector<double> omega(cols);
    for (int r = 0; r < h / 2; ++r)
        for (int c = 0; c < w; ++c) {
            dirs[r * w + c] = direction_of_pixel(r, c, w, h);
            omega[r * w + c] = solid_angle(r, w, h);
        }

    TransportMatrix t;
    t.render_width = spec.render_width;
    t.render_height = spec.render_height;
    t.pano_width = w;
    t.pano_height = h;
    t.scene_hash = spec.hash();
    t.weights = MatrixRMf::Zero(rows, cols);

    const double k = spec.albedo / M_PI;
    parallel_for(0, std::size_t(rows), [&](std::size_t i) {
        const auto hit = scene.trace_primary(int(i) % spec.render_width, int(i) / spec.render_width);
        if (!hit.hit) return;
        const Vec3 origin = hit.point + hit.normal * (hit.on_object ? 2e-3 : 1e-6);
        for (int j = 0; j < cols; ++j) {
            const double cosine = hit.normal.dot(dirs[j]);
            if (cosine <= 0.0) continue;
            if (!scene.unoccluded(origin, dirs[j])) continue;
            t.weights(Eigen::Index(i), j) = float(k * cosine * omega[j]);
        }
    });
    return t;
}

namespace {

void check_compat(const TransportMatrix& t, int pano_w, int pano_h) {
    if (pano_w != t.pano_width || pano_h != t.pano_height)
        throw DataError("panorama size does not match the transport matrix");
}

}  // namespace

FloatImage render(const TransportMatrix& t, const FloatPanorama& sky) {
    check_compat(t, sky.width(), sky.height());
    const int cols = t.cols();
    // Top hemisphere rows are the first `cols` pixels of the raster.
    Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, 3, Eigen::RowMajor>> top(
        sky.values().data(), cols, 3);
    FloatImage out(t.render_width, t.render_height);
    Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, 3, Eigen::RowMajor>> dst(out.values().data(),
                                                                            t.rows(), 3);
    dst.noalias() = t.weights * top;
    return out;
}

FloatPanorama render_backward(const TransportMatrix& t, const FloatImage& upstream) {
    if (upstream.width() != t.render_width || upstream.height() != t.render_height)
        throw DataError("upstream gradient size does not match the render size");
    FloatPanorama out(t.pano_width, t.pano_height);
    Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, 3, Eigen::RowMajor>> g(
        upstream.values().data(), t.rows(), 3);
    Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, 3, Eigen::RowMajor>> dst(out.values().data(),
                                                                            t.cols(), 3);
    dst.noalias() = t.weights.transpose() * g;
    return out;
}

void save_transport(const std::filesystem::path& path, const TransportMatrix& t) {
    ByteWriter w;
    w.put<std::uint32_t>(kTransportMagic);
    w.put<std::uint32_t>(kTransportVersion);
    w.put<std::uint64_t>(t.scene_hash);
    w.put<std::uint32_t>(std::uint32_t(t.render_width));
    w.put<std::uint32_t>(std::uint32_t(t.render_height));
    w.put<std::uint32_t>(std::uint32_t(t.pano_width));
    w.put<std::uint32_t>(std::uint32_t(t.pano_height));
    w.put<std::uint32_t>(std::uint32_t(t.rows()));
    w.put<std::uint32_t>(std::uint32_t(t.cols()));
    for (Eigen::Index i = 0; i < t.weights.size(); ++i) w.put<float>(t.weights.data()[i]);
    write_file_atomic(path, w.bytes());
}

TransportMatrix load_transport(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    ByteReader rd(bytes);
    if (rd.get<std::uint32_t>() != kTransportMagic) throw DataError("not a transport cache file");
    if (rd.get<std::uint32_t>() != kTransportVersion)
        throw DataError("unsupported transport cache version");
    TransportMatrix t;
    t.scene_hash = rd.get<std::uint64_t>();
    t.render_width = int(rd.get<std::uint32_t>());
    t.render_height = int(rd.get<std::uint32_t>());
    t.pano_width = int(rd.get<std::uint32_t>());
    t.pano_height = int(rd.get<std::uint32_t>());
    const auto rows = rd.get<std::uint32_t>();
    const auto cols = rd.get<std::uint32_t>();
    if (rows != std::uint32_t(t.render_width * t.render_height) ||
        cols != std::uint32_t(t.pano_width * t.pano_height / 2))
        throw DataError("inconsistent transport cache dimensions");
    if (rd.remaining() != std::size_t(rows) * cols * 4)
        throw DataError("transport cache payload has the wrong size");
    t.weights.resize(rows, cols);
    for (Eigen::Index i = 0; i < t.weights.size(); ++i) t.weights.data()[i] = rd.get<float>();
    return t;
}

TransportMatrix load_or_build_transport(const std::filesystem::path& path, const SceneSpec& spec) {
    if (!path.empty() && std::filesystem::exists(path)) {
        TransportMatrix t = load_transport(path);
        if (t.scene_hash == spec.hash()) return t;
    }
    TransportMatrix t = build_transport(spec);
    if (!path.empty()) save_transport(path, t);
    return t;
}

}  // namespace skyhdr
