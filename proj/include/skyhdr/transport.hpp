#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "skyhdr/pano.hpp"

namespace skyhdr {

using MatrixRMf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// "Spiky sphere" on a ground plane (y = 0) viewed from above by a pinhole
/// camera. The object is the implicit surface |p - c| = r(u) where
/// r(u) = base_radius + spike_amplitude * sum_k exp((u . s_k - 1) / spike_width)
/// over spike_count Fibonacci-distributed directions s_k.
struct SceneSpec {
    Vec3 object_center{0.0, 1.0, 0.0};
    double base_radius = 0.7;
    int spike_count = 14;
    double spike_amplitude = 0.45;
    double spike_width = 0.03;
    double albedo = 1.0;

    Vec3 camera_position{0.0, 4.6, -2.6};
    Vec3 camera_target{0.0, 0.3, -0.7};
    double fov_degrees = 50.0;
    int render_width = 64;
    int render_height = 64;

    int pano_width = kDefaultPanoWidth;
    int pano_height = kDefaultPanoHeight;

    /// Fingerprint of every field; stored in the cache file header.
    std::uint64_t hash() const;
    std::string describe() const;
};

/// Dense Lambertian transport from the top-hemisphere panorama pixels to the
/// rendered image: render = T * sky. Row i is render pixel i (row-major),
/// column j is panorama pixel (j / pano_width, j % pano_width) with
/// j < pano_width * pano_height / 2. Channel independent.
struct TransportMatrix {
    int render_width = 0;
    int render_height = 0;
    int pano_width = 0;
    int pano_height = 0;
    std::uint64_t scene_hash = 0;
    MatrixRMf weights;

    int rows() const { return int(weights.rows()); }
    int cols() const { return int(weights.cols()); }
};

/// Geometry queries used by build_transport; exposed for testing.
class SpikySphereScene {
public:
    explicit SpikySphereScene(const SceneSpec& spec);

    double field(const Vec3& p) const;  ///< < 0 inside the object
    Vec3 object_normal(const Vec3& p) const;

    struct Hit {
        bool hit = false;
        bool on_object = false;
        Vec3 point = Vec3::Zero();
        Vec3 normal = Vec3::Zero();
    };
    Hit trace_primary(int px, int py) const;
    /// True when a ray from origin along dir escapes without hitting the object.
    bool unoccluded(const Vec3& origin, const Vec3& dir) const;

    const SceneSpec& spec() const { return spec_; }

private:
    bool march(const Vec3& o, const Vec3& d, double t_max, double* t_hit) const;

    SceneSpec spec_;
    std::vector<Vec3> spikes_;
    double bound_radius_ = 0.0;
    double step_scale_ = 0.5;
    Vec3 cam_forward_, cam_right_, cam_up_;
};

/// T[i,j] = albedo/pi * max(0, n.d_j) * omega_j * V(x_i, d_j); zero rows for
/// pixels whose primary ray misses. Throws UsageError for degenerate scenes.
TransportMatrix build_transport(const SceneSpec& spec);

/// Renders the top hemisphere of a sky panorama (3 channels).
FloatImage render(const TransportMatrix& t, const FloatPanorama& sky);
/// Adjoint of render: T^T * upstream, returned as a full panorama whose bottom
/// hemisphere is zero.
FloatPanorama render_backward(const TransportMatrix& t, const FloatImage& upstream);

/// Cache file: see docs/formats.md.
void save_transport(const std::filesystem::path& path, const TransportMatrix& t);
TransportMatrix load_transport(const std::filesystem::path& path);
/// Loads the cache when it matches spec.hash(), otherwise builds and saves it.
TransportMatrix load_or_build_transport(const std::filesystem::path& path, const SceneSpec& spec);

}  // namespace skyhdr
