#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "skyhdr/pano.hpp"
#include "skyhdr/rng.hpp"
#include "skyhdr/sun_detect.hpp"
#include "skyhdr/training.hpp"

namespace skyhdr {

inline constexpr double kSunAngularRadius = 0.2555 * M_PI / 180.0;
inline constexpr int kGeneratorVersion = 1;

/// Analytic sky: base * (tint * g(elev) + glow(gamma) + cloudiness * cloud(dir))
/// with g = 1 + horizon * exp(-elev / 0.25) and glow = circumsolar *
/// exp(-gamma / circumsolar_width); the sun disk adds ratio * base over its
/// solid angle.
struct SkyParams {
    double sun_elevation = 0.6;   ///< radians, [0.05, 1.45]
    double sun_azimuth = 0.0;     ///< radians
    double ratio = 1e4;           ///< sun disk / sky base radiance, [1e2, 1.3e5]
    double base = 0.3;            ///< sky base radiance
    double circumsolar = 20.0;    ///< glow amplitude relative to base
    double circumsolar_width = 0.08;
    double horizon = 0.5;
    std::array<double, 3> tint{0.8, 0.9, 1.0};
    double cloudiness = 0.0;
    double cloud_phase = 0.0;

    void validate() const;
};

/// Circular building walls around the camera.
struct Occluder {
    double azimuth = 0.0;     ///< centre, radians
    double half_width = 0.2;  ///< radians
    double distance = 8.0;
    double height = 3.0;
};

struct GroundParams {
    std::array<double, 3> albedo{0.2, 0.2, 0.2};
    std::vector<Occluder> occluders;
    double camera_height = 1.0;
    /// Occluders overlapping sun azimuth +- this are dropped per sample.
    double sun_corridor = 0.5;
    /// Albedo is scaled down so no surface pixel exceeds this radiance.
    double max_radiance = 0.3;

    void validate() const;
};

enum class CrfFamily { identity = 0, gamma = 1, gamma_sigmoid = 2 };

/// f(x) = S_k(x^(1/gamma)), S_k a normalised logistic (identity when k = 0).
struct CrfParams {
    CrfFamily family = CrfFamily::gamma;
    double gamma = 2.2;
    double sigmoid = 0.0;  ///< logistic strength k

    void validate() const;
    double apply(double x) const;
    double invert(double y) const;
    double sigmoid_lo() const;
    double sigmoid_hi() const;
};

/// Sky radiance over the top hemisphere (bottom rows zero).
HdrPanorama gen_sky(const SkyParams& sp, int width, int height);

struct GeneratedPanorama {
    HdrPanorama hdr;
    SunPosition sun;  ///< after centring
    int shift = 0;    ///< columns the raw render was rotated by
};

/// Full sphere: sky, occluder walls and Lambertian ground lit by the sky,
/// rotated so the sun sits in column width/2.
GeneratedPanorama gen_panorama(const SkyParams& sp, const GroundParams& gp, int width, int height);

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v);
void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b);

/// expose -> hue/saturation shift -> clamp -> CRF -> 8-bit.
LdrPanorama derive_ldr(const HdrPanorama& p, double exposure, const CrfParams& crf,
                       double hue_shift_deg = 0.0, double sat_shift = 0.0);

/// Fraction of pixels whose channels are all >= the saturation threshold.
double saturated_fraction(const LdrPanorama& p, int threshold = kDefaultSaturationThreshold);

enum class LinearizeMode { jpg, gamma22, rf, rf_wb };
LinearizeMode parse_linearize_mode(const std::string& s);

struct Calibration {
    CrfParams crf;
    std::array<double, 3> white_balance{1.0, 1.0, 1.0};
};

FloatPanorama linearize_input(const LdrPanorama& ldr, LinearizeMode mode, const Calibration& calib = {});

struct GenConfig {
    int scenes = 60;
    int samples_per_scene = 4;
    std::array<double, 3> fractions{0.69, 0.15, 0.16};
    std::uint64_t seed = 1;
    int width = 128;
    int height = 64;
    bool random_crf = true;  ///< otherwise gamma 2.2
    double hue_sigma = 10.0;  ///< degrees
    double sat_sigma = 0.1;
    int max_occluders = 6;
    double min_saturation = 0.005;

    void validate() const;
};

struct ManifestRow {
    std::string id;
    int group = 0;
    std::string split;
    int base_index = 0;
    int flip = 0;
    int exposure_step = 0;  ///< x in 1.75^x
    double sun_elevation = 0.0;
    double sun_azimuth = 0.0;
    double ratio = 0.0;
    int crf_id = 0;
    double crf_gamma = 0.0;
    double crf_sigmoid = 0.0;
    double hue_shift = 0.0;
    double sat_shift = 0.0;
    std::string hdr_path;  ///< relative to the manifest directory
    std::string ldr_path;
};

struct Manifest {
    std::string header;  ///< generator settings line
    std::vector<ManifestRow> rows;
};

/// Group ids per split, in order train, val, test.
std::array<std::vector<int>, 3> split_groups(int scenes, const std::array<double, 3>& fractions,
                                             std::uint64_t seed);

/// Draws the parameters of one sample of a scene group.
struct SampleDraw {
    SkyParams sky;
    GroundParams ground;
    CrfParams crf;
    double hue_shift = 0.0;
    double sat_shift = 0.0;
};
SampleDraw draw_sample(const GenConfig& cfg, int group, int index);

struct Augmented {
    std::string id;
    int flip = 0;
    int exposure_step = 0;
    HdrPanorama hdr;
    LdrPanorama ldr;
    SunPosition sun;
};

/// Generates one base sample and its 2 x 3 augmentations. The glow is
/// strengthened until every LDR variant has the required saturated fraction.
std::vector<Augmented> generate_sample(const GenConfig& cfg, int group, int index, SampleDraw* used = nullptr);

/// Writes hdr/<id>.pfm, ldr/<id>.ppm and manifest.csv under dir.
Manifest build_dataset(const GenConfig& cfg, const std::filesystem::path& dir);

std::string manifest_csv(const Manifest& m);
Manifest parse_manifest(const std::string& text);
Manifest read_manifest(const std::filesystem::path& path);

/// Loads the samples of one split ("train", "val", "test", or "all").
Dataset load_dataset(const std::filesystem::path& manifest_path, const std::string& split,
                     const TonemapParams& tp = {});

/// A single day: sun rising in the east, culminating, setting in the west.
struct DayFrame {
    HdrPanorama hdr;
    LdrPanorama ldr;
    SunPosition sun;
};
std::vector<DayFrame> gen_day_sequence(std::uint64_t seed, int frames, int width = 128, int height = 64);

}  // namespace skyhdr
