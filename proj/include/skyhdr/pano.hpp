#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "skyhdr/error.hpp"

namespace skyhdr {

using Vec3 = Eigen::Vector3d;

/// Interleaved RGB raster, row 0 at the top.
template <typename T>
class Image {
public:
    Image() = default;
    Image(int width, int height, T fill = T{}) : width_(width), height_(height) {
        if (width <= 0 || height <= 0) throw DataError("image dimensions must be positive");
        data_.assign(std::size_t(width) * std::size_t(height) * 3, fill);
    }

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t pixel_count() const { return std::size_t(width_) * std::size_t(height_); }

    T& operator()(int row, int col, int ch) { return data_[index(row, col, ch)]; }
    const T& operator()(int row, int col, int ch) const { return data_[index(row, col, ch)]; }

    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }

    bool operator==(const Image&) const = default;

private:
    std::size_t index(int row, int col, int ch) const {
        return (std::size_t(row) * std::size_t(width_) + std::size_t(col)) * 3 + std::size_t(ch);
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<T> data_;
};

/// Latitude-longitude panorama: width == 2 * height, row 0 at the zenith,
/// column width/2 just east of azimuth 0.
template <typename T>
class Panorama : public Image<T> {
public:
    Panorama() = default;
    Panorama(int width, int height, T fill = T{}) : Image<T>(width, height, fill) {
        if (width != 2 * height) throw DataError("panorama width must be twice its height");
    }
    explicit Panorama(Image<T> img) : Image<T>(std::move(img)) {
        if (this->width() != 2 * this->height())
            throw DataError("panorama width must be twice its height");
    }
};

using FloatImage = Image<float>;
using FloatPanorama = Panorama<float>;
/// Linear radiance, relative units.
using HdrPanorama = Panorama<float>;
using LdrPanorama = Panorama<std::uint8_t>;

inline constexpr int kDefaultPanoWidth = 128;
inline constexpr int kDefaultPanoHeight = 64;

struct TonemapParams {
    double alpha = 1.0 / 30.0;
    double gamma = 2.2;

    /// Throws UsageError unless alpha > 0 and gamma >= 1.
    void validate() const;
};

/// alpha * v^(1/gamma). Throws DataError on negative or non-finite input.
double tonemap_value(double v, const TonemapParams& tp = {});
/// (q / alpha)^gamma.
double inverse_tonemap_value(double q, const TonemapParams& tp = {});

FloatPanorama tonemap(const HdrPanorama& p, const TonemapParams& tp = {});
HdrPanorama inverse_tonemap(const FloatPanorama& q, const TonemapParams& tp = {});

/// Multiplies every value by factor (> 0).
HdrPanorama expose(const HdrPanorama& p, double factor);

/// Clamp to [0,1], scale by 255, round half away from zero.
std::uint8_t quantize_code(double v);
LdrPanorama quantize_ldr(const FloatPanorama& p);

/// Throws DataError if any value is negative or non-finite.
void check_hdr(const HdrPanorama& p);

// Geometry. World frame is y-up; azimuth 0 looks down +z, +pi/2 down +x.
double elevation_of_row(double row, int height);
double azimuth_of_col(double col, int width);
/// Inverse of elevation_of_row; fractional pixel coordinate (centers at integers).
double row_of_elevation(double elevation, int height);
double col_of_azimuth(double azimuth, int width);
Vec3 direction_from_angles(double elevation, double azimuth);
Vec3 direction_of_pixel(int row, int col, int width, int height);
/// Steradian footprint of any pixel in the given row.
double solid_angle(int row, int width, int height);

/// Circular column shift: output column (c + shift) mod width holds input column c.
template <typename T>
Panorama<T> rotate_azimuth(const Panorama<T>& p, int shift) {
    const int w = p.width();
    const int s = ((shift % w) + w) % w;
    Panorama<T> out(w, p.height());
    for (int r = 0; r < p.height(); ++r)
        for (int c = 0; c < w; ++c)
            for (int ch = 0; ch < 3; ++ch) out(r, (c + s) % w, ch) = p(r, c, ch);
    return out;
}

template <typename T>
Panorama<T> hflip(const Panorama<T>& p) {
    const int w = p.width();
    Panorama<T> out(w, p.height());
    for (int r = 0; r < p.height(); ++r)
        for (int c = 0; c < w; ++c)
            for (int ch = 0; ch < 3; ++ch) out(r, w - 1 - c, ch) = p(r, c, ch);
    return out;
}

}  // namespace skyhdr
