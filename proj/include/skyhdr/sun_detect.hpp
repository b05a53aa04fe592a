#pragma once

#include <cstdint>

#include "skyhdr/pano.hpp"

namespace skyhdr {

struct SunPosition {
    double elevation = 0.0;  ///< radians, [-pi/2, pi/2]
    double azimuth = 0.0;    ///< radians, (-pi, pi]
    double row = 0.0;        ///< fractional pixel coordinate (centers at integers)
    double col = 0.0;

    int pixel_row() const;
    int pixel_col(int width) const;
};

inline constexpr int kDefaultSaturationThreshold = 254;

/// Centre of mass of the largest saturated region. A pixel is saturated when
/// all three channels are >= threshold. Regions are 4-connected, wrap around in
/// azimuth and are ranked by solid angle; the centre is the direction of the
/// solid-angle-weighted mean of the member directions. Throws DataError when
/// nothing is saturated.
SunPosition detect_sun(const LdrPanorama& p, int saturation_threshold = kDefaultSaturationThreshold);

/// SunPosition for a given direction on a panorama of the given size.
SunPosition sun_from_angles(double elevation, double azimuth, int width, int height);

struct SunAlignment {
    LdrPanorama panorama;
    SunPosition sun;  ///< in the rotated panorama
    int shift = 0;    ///< columns applied through rotate_azimuth
};

/// Column shift that moves the detected sun to column width/2.
int centering_shift(const SunPosition& sun, int width);

/// Rotates the panorama so the sun lands in column width/2 (azimuth within one
/// column of 0).
SunAlignment align_sun_center(const LdrPanorama& p,
                              int saturation_threshold = kDefaultSaturationThreshold);

}  // namespace skyhdr
