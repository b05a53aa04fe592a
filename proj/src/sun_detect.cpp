#include "skyhdr/sun_detect.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace skyhdr {

int SunPosition::pixel_row() const { return int(std::lround(row)); }

int SunPosition::pixel_col(int width) const {
    const int c = int(std::lround(col));
    return ((c % width) + width) % width;
}

SunPosition sun_from_angles(double elevation, double azimuth, int width, int height) {
    SunPosition s;
    s.elevation = elevation;
    s.azimuth = std::remainder(azimuth, 2.0 * M_PI);
    if (s.azimuth <= -M_PI) s.azimuth += 2.0 * M_PI;
    s.row = row_of_elevation(elevation, height);
    s.col = col_of_azimuth(s.azimuth, width);
    return s;
}

SunPosition detect_sun(const LdrPanorama& p, int threshold) {
    if (threshold < 1 || threshold > 255) throw UsageError("saturation threshold must be in [1,255]");
    const int w = p.width();
    const int h = p.height();
    std::vector<char> mask(std::size_t(w) * h, 0);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            mask[std::size_t(r) * w + c] = p(r, c, 0) >= threshold && p(r, c, 1) >= threshold &&
                                           p(r, c, 2) >= threshold;

    std::vector<int> label(mask.size(), -1);
    std::vector<int> stack;
    double best_area = -1.0;
    Vec3 best_sum = Vec3::Zero();
    int next_label = 0;
    for (std::size_t seed = 0; seed < mask.size(); ++seed) {
        if (!mask[seed] || label[seed] >= 0) continue;
        double area = 0.0;
        Vec3 sum = Vec3::Zero();
        stack.assign(1, int(seed));
        label[seed] = next_label;
        while (!stack.empty()) {
            const int idx = stack.back();
            stack.pop_back();
            const int r = idx / w;
            const int c = idx % w;
            const double omega = solid_angle(r, w, h);
            area += omega;
            sum += omega * direction_of_pixel(r, c, w, h);
            const int nbr[4][2] = {{r - 1, c}, {r + 1, c}, {r, (c + 1) % w}, {r, (c + w - 1) % w}};
            for (const auto& n : nbr) {
                if (n[0] < 0 || n[0] >= h) continue;
                const std::size_t j = std::size_t(n[0]) * w + n[1];
                if (mask[j] && label[j] < 0) {
                    label[j] = next_label;
                    stack.push_back(int(j));
                }
            }
        }
        // Strictly greater: ties keep the first region in scan order.
        if (area > best_area) {
            best_area = area;
            best_sum = sum;
        }
        ++next_label;
    }
    if (next_label == 0) throw DataError("no sun found: no saturated pixel in the panorama");

    const double n = best_sum.norm();
    // A region symmetric about the zenith has no preferred azimuth.
    const Vec3 d = n > 0.0 ? Vec3(best_sum / n) : Vec3(0.0, 1.0, 0.0);
    const double elevation = std::asin(std::clamp(d.y(), -1.0, 1.0));
    const double azimuth = std::atan2(d.x(), d.z());
    return sun_from_angles(elevation, azimuth, w, h);
}

int centering_shift(const SunPosition& sun, int width) {
    const int s = width / 2 - sun.pixel_col(width);
    return ((s % width) + width) % width;
}

SunAlignment align_sun_center(const LdrPanorama& p, int threshold) {
    const SunPosition sun = detect_sun(p, threshold);
    SunAlignment out;
    out.shift = centering_shift(sun, p.width());
    out.panorama = rotate_azimuth(p, out.shift);
    out.sun = sun_from_angles(sun.elevation, sun.azimuth + 2.0 * M_PI * out.shift / p.width(),
                              p.width(), p.height());
    return out;
}

}  // namespace skyhdr
