#include "skyhdr/pano.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace skyhdr {

void TonemapParams::validate() const {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw UsageError("tonemap alpha must be > 0");
    if (!(gamma >= 1.0) || !std::isfinite(gamma)) throw UsageError("tonemap gamma must be >= 1");
}

double tonemap_value(double v, const TonemapParams& tp) {
    if (!(v >= 0.0) || !std::isfinite(v))
        throw DataError("tonemap: negative or non-finite radiance " + std::to_string(v));
    return tp.alpha * std::pow(v, 1.0 / tp.gamma);
}

double inverse_tonemap_value(double q, const TonemapParams& tp) {
    if (!(q >= 0.0) || !std::isfinite(q))
        throw DataError("inverse_tonemap: negative or non-finite value " + std::to_string(q));
    return std::pow(q / tp.alpha, tp.gamma);
}

FloatPanorama tonemap(const HdrPanorama& p, const TonemapParams& tp) {
    tp.validate();
    FloatPanorama out(p.width(), p.height());
    auto src = p.values();
    auto dst = out.values();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = float(tonemap_value(src[i], tp));
    return out;
}

HdrPanorama inverse_tonemap(const FloatPanorama& q, const TonemapParams& tp) {
    tp.validate();
    HdrPanorama out(q.width(), q.height());
    auto src = q.values();
    auto dst = out.values();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = float(inverse_tonemap_value(src[i], tp));
    return out;
}

HdrPanorama expose(const HdrPanorama& p, double factor) {
    if (!(factor > 0.0) || !std::isfinite(factor)) throw UsageError("exposure factor must be > 0");
    HdrPanorama out = p;
    for (float& v : out.values()) v = float(double(v) * factor);
    return out;
}

std::uint8_t quantize_code(double v) {
    if (std::isnan(v)) throw DataError("quantize: NaN value");
    const double c = std::clamp(v, 0.0, 1.0) * 255.0;
    return static_cast<std::uint8_t>(std::round(c));
}

LdrPanorama quantize_ldr(const FloatPanorama& p) {
    LdrPanorama out(p.width(), p.height());
    auto src = p.values();
    auto dst = out.values();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = quantize_code(src[i]);
    return out;
}

void check_hdr(const HdrPanorama& p) {
    for (float v : p.values())
        if (!(v >= 0.0f) || !std::isfinite(v))
            throw DataError("HDR panorama contains a negative or non-finite value");
}

double elevation_of_row(double row, int height) {
    return M_PI / 2.0 - M_PI * (row + 0.5) / height;
}

double azimuth_of_col(double col, int width) { return 2.0 * M_PI * (col + 0.5) / width - M_PI; }

double row_of_elevation(double elevation, int height) {
    return (M_PI / 2.0 - elevation) * height / M_PI - 0.5;
}

double col_of_azimuth(double azimuth, int width) {
    return (azimuth + M_PI) * width / (2.0 * M_PI) - 0.5;
}

Vec3 direction_from_angles(double elevation, double azimuth) {
    const double ce = std::cos(elevation);
    return Vec3(ce * std::sin(azimuth), std::sin(elevation), ce * std::cos(azimuth));
}

Vec3 direction_of_pixel(int row, int col, int width, int height) {
    if (row < 0 || row >= height || col < 0 || col >= width)
        throw UsageError("direction_of_pixel: pixel outside the panorama");
    return direction_from_angles(elevation_of_row(row, height), azimuth_of_col(col, width));
}

double solid_angle(int row, int width, int height) {
    return (2.0 * M_PI / width) * (M_PI / height) * std::cos(elevation_of_row(row, height));
}

}  // namespace skyhdr
