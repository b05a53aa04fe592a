#include "skyhdr/datagen.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "skyhdr/error.hpp"
#include "skyhdr/parallel.hpp"
#include "skyhdr/pano_io.hpp"

namespace skyhdr {

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double wrap_angle(double a) {
    a = std::remainder(a, 2.0 * M_PI);
    return a <= -M_PI ? a + 2.0 * M_PI : a;
}

constexpr double kExposureBase = 1.75;
constexpr double kBackgroundCeiling = 0.85;
constexpr int kMaxGlowBoosts = 60;
constexpr int kMaxSunLifts = 20;
constexpr double kSunLift = 0.02;
constexpr double kSunTolerancePx = 2.0;

}  // namespace

void SkyParams::validate() const {
    if (!(sun_elevation >= 0.0 && sun_elevation <= M_PI / 2))
        throw UsageError("sun elevation must lie in [0, pi/2]");
    if (!(ratio > 0.0) || !(base > 0.0)) throw UsageError("sky intensities must be positive");
    if (!(circumsolar >= 0.0) || !(circumsolar_width > 0.0))
        throw UsageError("circumsolar glow must be non-negative with positive width");
    if (!(horizon >= 0.0) || !(cloudiness >= 0.0)) throw UsageError("sky shape terms must be >= 0");
    for (double t : tint)
        if (!(t > 0.0)) throw UsageError("sky tint must be positive");
}

void GroundParams::validate() const {
    for (double a : albedo)
        if (!(a >= 0.0 && a <= 1.0)) throw UsageError("ground albedo must lie in [0, 1]");
    if (!(camera_height > 0.0)) throw UsageError("camera height must be positive");
    for (const auto& o : occluders)
        if (!(o.distance > 0.0) || !(o.height > 0.0) || !(o.half_width > 0.0))
            throw UsageError("occluder dimensions must be positive");
}

double CrfParams::sigmoid_lo() const { return logistic(-0.5 * sigmoid); }
double CrfParams::sigmoid_hi() const { return logistic(0.5 * sigmoid); }

void CrfParams::validate() const {
    if (family == CrfFamily::identity) return;
    if (!(gamma > 0.0)) throw UsageError("CRF gamma must be positive");
    if (!(sigmoid >= 0.0)) throw UsageError("CRF sigmoid strength must be >= 0");
}

double CrfParams::apply(double x) const {
    x = std::clamp(x, 0.0, 1.0);
    if (family == CrfFamily::identity) return x;
    const double u = std::pow(x, 1.0 / gamma);
    if (family == CrfFamily::gamma || sigmoid == 0.0) return u;
    const double lo = sigmoid_lo(), hi = sigmoid_hi();
    return (logistic(sigmoid * (u - 0.5)) - lo) / (hi - lo);
}

double CrfParams::invert(double y) const {
    y = std::clamp(y, 0.0, 1.0);
    if (family == CrfFamily::identity) return y;
    double u = y;
    if (family == CrfFamily::gamma_sigmoid && sigmoid != 0.0) {
        const double lo = sigmoid_lo(), hi = sigmoid_hi();
        const double s = lo + y * (hi - lo);
        u = std::clamp(0.5 + std::log(s / (1.0 - s)) / sigmoid, 0.0, 1.0);
    }
    return std::pow(u, gamma);
}

HdrPanorama gen_sky(const SkyParams& sp, int width, int height) {
    sp.validate();
    HdrPanorama out(width, height);
    const Vec3 sun = direction_from_angles(sp.sun_elevation, sp.sun_azimuth);
    for (int r = 0; r < height / 2; ++r) {
        const double elev = elevation_of_row(r, height);
        const double g = 1.0 + sp.horizon * std::exp(-elev / 0.25);
        for (int c = 0; c < width; ++c) {
            const Vec3 d = direction_of_pixel(r, c, width, height);
            const double gam = std::acos(std::clamp(d.dot(sun), -1.0, 1.0));
            const double glow = sp.circumsolar * std::exp(-gam / sp.circumsolar_width);
            const double cloud =
                sp.cloudiness *
                (1.0 + 0.5 * std::sin(3.0 * azimuth_of_col(c, width) + sp.cloud_phase) * std::cos(elev));
            for (int ch = 0; ch < 3; ++ch)
                out(r, c, ch) = float(sp.base * (sp.tint[std::size_t(ch)] * g + glow + cloud));
        }
    }
    // The disk is far smaller than a pixel: deposit its energy in the pixel
    // that contains its centre.
    const SunPosition s = sun_from_angles(sp.sun_elevation, sp.sun_azimuth, width, height);
    const int sr = std::clamp(s.pixel_row(), 0, height / 2 - 1);
    const int sc = s.pixel_col(width);
    const double disk = 2.0 * M_PI * (1.0 - std::cos(kSunAngularRadius));
    const double add = sp.ratio * sp.base * disk / solid_angle(sr, width, height);
    for (int ch = 0; ch < 3; ++ch) out(sr, sc, ch) = float(out(sr, sc, ch) + add);
    return out;
}

namespace {

bool covers(const Occluder& o, double azimuth) {
    return std::abs(wrap_angle(azimuth - o.azimuth)) <= o.half_width;
}

/// Skyline elevation seen from ground point (px, pz) toward azimuth phi.
double skyline(const std::vector<Occluder>& walls, double px, double pz, double phi) {
    const double ux = std::sin(phi), uz = std::cos(phi);
    const double pu = px * ux + pz * uz;
    const double pp = px * px + pz * pz;
    double best = 0.0;
    for (const auto& o : walls) {
        const double disc = pu * pu - pp + o.distance * o.distance;
        if (disc < 0.0) continue;
        const double sq = std::sqrt(disc);
        for (double s : {-pu - sq, -pu + sq}) {
            if (s <= 1e-9) continue;
            const double hx = px + s * ux, hz = pz + s * uz;
            if (!covers(o, std::atan2(hx, hz))) continue;
            best = std::max(best, std::atan2(o.height, s));
        }
    }
    return best;
}

}  // namespace

GeneratedPanorama gen_panorama(const SkyParams& sp, const GroundParams& gp, int width, int height) {
    gp.validate();
    const HdrPanorama sky = gen_sky(sp, width, height);
    const int half = height / 2;

    std::vector<Occluder> walls;
    for (const auto& o : gp.occluders)
        if (std::abs(wrap_angle(o.azimuth - sp.sun_azimuth)) - o.half_width > gp.sun_corridor)
            walls.push_back(o);

    // Cumulative horizontal irradiance per column from the zenith down.
    std::vector<std::array<double, 3>> prefix(std::size_t(width) * half);
    for (int c = 0; c < width; ++c) {
        std::array<double, 3> acc{0, 0, 0};
        for (int r = 0; r < half; ++r) {
            const double wgt = std::sin(elevation_of_row(r, height)) * solid_angle(r, width, height);
            for (int ch = 0; ch < 3; ++ch) acc[std::size_t(ch)] += sky(r, c, ch) * wgt;
            prefix[std::size_t(c) * half + r] = acc;
        }
    }
    std::array<double, 3> open_sky{0, 0, 0};
    for (int c = 0; c < width; ++c)
        for (int ch = 0; ch < 3; ++ch)
            open_sky[std::size_t(ch)] += prefix[std::size_t(c) * half + half - 1][std::size_t(ch)];

    // Irradiance on the camera-facing wall surface, per column.
    std::vector<std::array<double, 3>> wall_e(std::size_t(width), {0, 0, 0});
    for (int c = 0; c < width; ++c) {
        const double phi = azimuth_of_col(c, width);
        bool any = false;
        for (const auto& o : walls) any = any || covers(o, phi);
        if (!any) continue;
        const Vec3 n(-std::sin(phi), 0.0, -std::cos(phi));
        for (int r = 0; r < half; ++r)
            for (int cc = 0; cc < width; ++cc) {
                const double k = std::max(0.0, n.dot(direction_of_pixel(r, cc, width, height))) *
                                 solid_angle(r, width, height);
                if (k == 0.0) continue;
                for (int ch = 0; ch < 3; ++ch) wall_e[std::size_t(c)][std::size_t(ch)] += sky(r, cc, ch) * k;
            }
    }

    // Unit-albedo radiance of every surface pixel; -1 marks sky.
    std::vector<std::array<double, 3>> surf(std::size_t(width) * height, {-1, -1, -1});
    
    const double hc = gp.camera_height;
    for (int r = 0; r < height; ++r) {
        const double elev = elevation_of_row(r, height);
        for (int c = 0; c < width; ++c) {
            const double phi = azimuth_of_col(c, width);
            const double ground_dist = elev < 0.0 ? hc / std::tan(-elev) : INFINITY;
            const Occluder* hit = nullptr;
            for (const auto& o : walls) {
                if (!covers(o, phi) || o.distance >= ground_dist) continue;
                if (std::atan2(o.height - hc, o.distance) <= elev) continue;
                if (!hit || o.distance < hit->distance) hit = &o;
            }
            auto& px = surf[std::size_t(r) * width + c];
            if (hit) {
                for (int ch = 0; ch < 3; ++ch) px[std::size_t(ch)] = wall_e[std::size_t(c)][std::size_t(ch)] / M_PI;
                continue;
            }
            if (elev >= 0.0) continue;
            std::array<double, 3> e = open_sky;
            if (!walls.empty()) {
                e = {0, 0, 0};
                const double gx = ground_dist * std::sin(phi), gz = ground_dist * std::cos(phi);
                for (int cc = 0; cc < width; ++cc) {
                    const double sl = skyline(walls, gx, gz, azimuth_of_col(cc, width));
                    // Rows strictly above the skyline.
                    const int last = std::min(half - 1, int(std::ceil(row_of_elevation(sl, height))) - 1);
                    if (last < 0) continue;
                    for (int ch = 0; ch < 3; ++ch)
                        e[std::size_t(ch)] += prefix[std::size_t(cc) * half + last][std::size_t(ch)];
                }
            }
            for (int ch = 0; ch < 3; ++ch) px[std::size_t(ch)] = e[std::size_t(ch)] / M_PI;
        }
    }

    std::array<double, 3> albedo = gp.albedo;
    double peak = 0.0;
    for (const auto& px : surf)
        for (int ch = 0; ch < 3; ++ch)
            if (px[std::size_t(ch)] >= 0.0) peak = std::max(peak, px[std::size_t(ch)] * albedo[std::size_t(ch)]);
    if (peak > gp.max_radiance)
        for (double& a : albedo) a *= gp.max_radiance / peak;

    HdrPanorama pano(width, height);
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) {
            const auto& px = surf[std::size_t(r) * width + c];
            for (int ch = 0; ch < 3; ++ch)
                pano(r, c, ch) = px[std::size_t(ch)] < 0.0
                                     ? sky(r, c, ch)
                                     : float(albedo[std::size_t(ch)] * px[std::size_t(ch)]);
        }

    GeneratedPanorama out;
    const SunPosition raw = sun_from_angles(sp.sun_elevation, sp.sun_azimuth, width, height);
    out.shift = centering_shift(raw, width);
    out.hdr = rotate_azimuth(pano, out.shift);
    out.sun = sun_from_angles(sp.sun_elevation, sp.sun_azimuth + 2.0 * M_PI * out.shift / width,
                              width, height);
    return out;
}

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
    const double mx = std::max({r, g, b});
    const double mn = std::min({r, g, b});
    const double d = mx - mn;
    v = mx;
    s = mx > 0.0 ? d / mx : 0.0;
    if (d <= 0.0) {
        h = 0.0;
        return;
    }
    if (mx == r) h = 60.0 * std::fmod((g - b) / d, 6.0);
    else if (mx == g) h = 60.0 * ((b - r) / d + 2.0);
    else h = 60.0 * ((r - g) / d + 4.0);
    if (h < 0.0) h += 360.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
    const double c = v * s;
    const double hp = std::fmod(h, 360.0) / 60.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r1 = 0, g1 = 0, b1 = 0;
    switch (int(hp)) {
        case 0: r1 = c; g1 = x; break;
        case 1: r1 = x; g1 = c; break;
        case 2: g1 = c; b1 = x; break;
        case 3: g1 = x; b1 = c; break;
        case 4: r1 = x; b1 = c; break;
        default: r1 = c; b1 = x; break;
    }
    const double m = v - c;
    r = r1 + m;
    g = g1 + m;
    b = b1 + m;
}

LdrPanorama derive_ldr(const HdrPanorama& p, double exposure, const CrfParams& crf,
                       double hue_shift_deg, double sat_shift) {
    crf.validate();
    if (!(exposure > 0.0)) throw UsageError("exposure must be positive");
    const double hs = std::fmod(hue_shift_deg, 360.0);
    const bool shift = hs != 0.0 || sat_shift != 0.0;
    LdrPanorama out(p.width(), p.height());
    for (int r = 0; r < p.height(); ++r)
        for (int c = 0; c < p.width(); ++c) {
            double rgb[3];
            for (int ch = 0; ch < 3; ++ch) {
                rgb[ch] = double(p(r, c, ch)) * exposure;
                if (!(rgb[ch] >= 0.0) || !std::isfinite(rgb[ch]))
                    throw DataError("HDR panorama holds negative or non-finite radiance");
            }
            if (shift) {
                double h, s, v;
                rgb_to_hsv(rgb[0], rgb[1], rgb[2], h, s, v);
                h = std::fmod(h + hs + 360.0, 360.0);
                s = std::clamp(s + sat_shift, 0.0, 1.0);
                hsv_to_rgb(h, s, v, rgb[0], rgb[1], rgb[2]);
            }
            for (int ch = 0; ch < 3; ++ch) out(r, c, ch) = quantize_code(crf.apply(rgb[ch]));
        }
    return out;
}

double saturated_fraction(const LdrPanorama& p, int threshold) {
    std::size_t n = 0;
    for (int r = 0; r < p.height(); ++r)
        for (int c = 0; c < p.width(); ++c)
            if (p(r, c, 0) >= threshold && p(r, c, 1) >= threshold && p(r, c, 2) >= threshold) ++n;
    return double(n) / double(p.pixel_count());
}

LinearizeMode parse_linearize_mode(const std::string& s) {
    if (s == "jpg") return LinearizeMode::jpg;
    if (s == "gamma22") return LinearizeMode::gamma22;
    if (s == "rf") return LinearizeMode::rf;
    if (s == "rf_wb") return LinearizeMode::rf_wb;
    throw UsageError("linearization mode must be jpg, gamma22, rf or rf_wb, got '" + s + "'");
}

FloatPanorama linearize_input(const LdrPanorama& ldr, LinearizeMode mode, const Calibration& calib) {
    FloatPanorama out(ldr.width(), ldr.height());
    for (int r = 0; r < ldr.height(); ++r)
        for (int c = 0; c < ldr.width(); ++c)
            for (int ch = 0; ch < 3; ++ch) {
                const double q = ldr(r, c, ch) / 255.0;
                double v = q;
                switch (mode) {
                    case LinearizeMode::jpg: break;
                    case LinearizeMode::gamma22: v = std::pow(q, 2.2); break;
                    case LinearizeMode::rf: v = calib.crf.invert(q); break;
                    case LinearizeMode::rf_wb:
                        v = calib.crf.invert(q) * calib.white_balance[std::size_t(ch)];
                        break;
                }
                out(r, c, ch) = float(v);
            }
    return out;
}

void GenConfig::validate() const {
    if (scenes < 1 || samples_per_scene < 1) throw UsageError("scene and sample counts must be >= 1");
    double sum = 0.0;
    for (double f : fractions) {
        if (!(f >= 0.0)) throw UsageError("split fractions must be non-negative");
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw UsageError("split fractions must sum to 1");
    if (width != 2 * height || height % 16 != 0) throw UsageError("panorama size must be 2h x h with h divisible by 16");
    if (!(hue_sigma >= 0.0) || !(sat_sigma >= 0.0)) throw UsageError("shift sigmas must be >= 0");
    if (max_occluders < 0) throw UsageError("max_occluders must be >= 0");
    if (!(min_saturation >= 0.0 && min_saturation < 0.5))
        throw UsageError("min_saturation must lie in [0, 0.5)");
}

std::array<std::vector<int>, 3> split_groups(int scenes, const std::array<double, 3>& fractions,
                                             std::uint64_t seed) {
    double sum = fractions[0] + fractions[1] + fractions[2];
    if (std::abs(sum - 1.0) > 1e-9) throw UsageError("split fractions must sum to 1");
    std::vector<int> ids(static_cast<std::size_t>(scenes));
    for (int i = 0; i < scenes; ++i) ids[std::size_t(i)] = i;
    Rng rng = Rng::stream(seed, 7);
    rng.shuffle(ids);
    const int n_train = int(std::lround(fractions[0] * scenes));
    const int n_val = std::min(scenes - n_train, int(std::lround(fractions[1] * scenes)));
    std::array<std::vector<int>, 3> out;
    for (int i = 0; i < scenes; ++i) {
        const int which = i < n_train ? 0 : (i < n_train + n_val ? 1 : 2);
        out[std::size_t(which)].push_back(ids[std::size_t(i)]);
    }
    for (auto& v : out) std::sort(v.begin(), v.end());
    return out;
}

namespace {

GroundParams draw_ground(Rng& rng, int max_occluders) {
    GroundParams gp;
    const double grey = rng.uniform(0.08, 0.3);
    for (double& a : gp.albedo) a = std::clamp(grey * (1.0 + 0.1 * rng.uniform(-1.0, 1.0)), 0.0, 1.0);
    const int n = max_occluders > 0 ? int(rng.index(std::uint64_t(max_occluders) + 1)) : 0;
    for (int i = 0; i < n; ++i) {
        Occluder o;
        o.azimuth = rng.uniform(-M_PI, M_PI);
        o.half_width = rng.uniform(0.08, 0.35);
        o.distance = rng.uniform(4.0, 15.0);
        o.height = rng.uniform(1.5, 4.5);
        gp.occluders.push_back(o);
    }
    return gp;
}

void draw_day_sky(Rng& rng, SkyParams& sp) {
    sp.base = rng.log_uniform(0.15, 0.45);
    const double blue = rng.uniform();
    sp.tint = {1.0 - 0.25 * blue, 1.0 - 0.1 * blue, 1.0};
    for (double& t : sp.tint) t *= 1.0 + 0.03 * std::clamp(rng.normal(), -2.0, 2.0);
    sp.horizon = rng.uniform(0.2, 1.0);
    sp.cloudiness = rng.uniform() < 0.5 ? 0.0 : rng.uniform(0.0, 0.6);
    sp.cloud_phase = rng.uniform(0.0, 2.0 * M_PI);
    // Keep the sky away from the sun below clipping at the brightest exposure,
    // so the largest saturated region stays the sun.
    double peak = 0.0;
    for (double t : sp.tint) peak = std::max(peak, t * (1.0 + sp.horizon));
    peak += 1.5 * sp.cloudiness;
    sp.base = std::min(sp.base, kBackgroundCeiling / (kExposureBase * peak));
}

double glow_for_ratio(double ratio) { return 8.0 * std::pow(ratio / 100.0, 0.3); }

bool sun_detectable(const LdrPanorama& l, const SunPosition& truth) {
    const SunPosition d = detect_sun(l);
    const double dc = std::abs(d.col - truth.col);
    return std::min(dc, l.width() - dc) <= kSunTolerancePx && std::abs(d.row - truth.row) <= kSunTolerancePx;
}

/// Regenerates with a stronger, wider glow until every exposure step leaves at
/// least min_fraction of the LDR saturated. When the horizon clips the
/// saturated patch so much that detect_sun misses the true sun, the sun is
/// raised slightly and the search restarts.
GeneratedPanorama saturating_panorama(SkyParams& sp, const GroundParams& gp, const CrfParams& crf,
                                      double hue, double sat, const std::vector<int>& steps,
                                      double min_fraction, int width, int height) {
    const SkyParams initial = sp;
    for (int lift = 0; lift < kMaxSunLifts; ++lift) {
        sp = initial;
        sp.sun_elevation = std::min(M_PI / 2, initial.sun_elevation + kSunLift * lift);
        for (int attempt = 0; attempt < kMaxGlowBoosts; ++attempt) {
            GeneratedPanorama g = gen_panorama(sp, gp, width, height);
            bool saturated = true, detectable = true;
            for (int x : steps) {
                const HdrPanorama e = expose(g.hdr, std::pow(kExposureBase, x));
                const LdrPanorama l = derive_ldr(e, 1.0, crf, hue, sat);
                if (saturated_fraction(l) < min_fraction) {
                    saturated = false;
                    break;
                }
                const SunPosition mirrored = sun_from_angles(g.sun.elevation, -g.sun.azimuth, width, height);
                detectable = detectable && sun_detectable(l, g.sun) &&
                             sun_detectable(derive_ldr(hflip(e), 1.0, crf, hue, sat), mirrored);
            }
            if (saturated && detectable) return g;
            if (saturated) break;
            sp.circumsolar *= 1.2;
            sp.circumsolar_width *= 1.05;
        }
    }
    throw DataError("could not reach the required LDR saturation for a generated sky");
}

std::string sample_id(int group, int index, int flip, int step) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "g%04d_s%02d_f%d_x%s", group, index, flip,
                  step < 0 ? "m1" : (step == 0 ? "0" : "p1"));
    return buf;
}

}  // namespace

SampleDraw draw_sample(const GenConfig& cfg, int group, int index) {
    SampleDraw d;
    Rng grng = Rng::stream(cfg.seed, 1000 + std::uint64_t(group));
    draw_day_sky(grng, d.sky);
    d.ground = draw_ground(grng, cfg.max_occluders);

    Rng rng = Rng::stream(cfg.seed, 1000000 + std::uint64_t(group) * 1000 + std::uint64_t(index));
    d.sky.sun_elevation = rng.uniform(0.05, 1.45);
    d.sky.sun_azimuth = rng.uniform(-M_PI, M_PI);
    d.sky.ratio = rng.log_uniform(1e2, 1.3e5);
    d.sky.circumsolar = glow_for_ratio(d.sky.ratio) * rng.uniform(0.8, 1.25);
    d.sky.circumsolar_width = rng.uniform(0.05, 0.1);
    if (cfg.random_crf) {
        d.crf.family = CrfFamily(int(rng.index(3)));
        d.crf.gamma = d.crf.family == CrfFamily::identity ? 1.0 : rng.uniform(1.8, 2.6);
        d.crf.sigmoid = d.crf.family == CrfFamily::gamma_sigmoid ? rng.uniform(2.0, 6.0) : 0.0;
    } else {
        d.crf = CrfParams{CrfFamily::gamma, 2.2, 0.0};
    }
    d.hue_shift = rng.normal(0.0, cfg.hue_sigma);
    d.sat_shift = rng.normal(0.0, cfg.sat_sigma);
    return d;
}

std::vector<Augmented> generate_sample(const GenConfig& cfg, int group, int index, SampleDraw* used) {
    SampleDraw d = draw_sample(cfg, group, index);
    const GeneratedPanorama g =
        saturating_panorama(d.sky, d.ground, d.crf, d.hue_shift, d.sat_shift, {-1, 0, 1},
                            cfg.min_saturation, cfg.width, cfg.height);
    std::vector<Augmented> out;
    for (int flip = 0; flip < 2; ++flip) {
        const HdrPanorama base = flip ? hflip(g.hdr) : g.hdr;
        SunPosition sun = g.sun;
        if (flip) sun = sun_from_angles(g.sun.elevation, -g.sun.azimuth, cfg.width, cfg.height);
        for (int x = -1; x <= 1; ++x) {
            Augmented a;
            a.id = sample_id(group, index, flip, x);
            a.flip = flip;
            a.exposure_step = x;
            a.hdr = expose(base, std::pow(kExposureBase, x));
            a.ldr = derive_ldr(a.hdr, 1.0, d.crf, d.hue_shift, d.sat_shift);
            a.sun = sun;
            out.push_back(std::move(a));
        }
    }
    if (used) *used = d;
    return out;
}

std::string manifest_csv(const Manifest& m) {
    std::string s = m.header + "\n";
    s += "id,group,split,base_index,flip,exposure_step,sun_elevation,sun_azimuth,ratio,crf_id,"
         "crf_gamma,crf_sigmoid,hue_shift,sat_shift,hdr_path,ldr_path\n";
    char buf[1024];
    for (const auto& r : m.rows) {
        std::snprintf(buf, sizeof buf, "%s,%d,%s,%d,%d,%d,%.17g,%.17g,%.17g,%d,%.17g,%.17g,%.17g,%.17g,%s,%s\n",
                      r.id.c_str(), r.group, r.split.c_str(), r.base_index, r.flip, r.exposure_step,
                      r.sun_elevation, r.sun_azimuth, r.ratio, r.crf_id, r.crf_gamma, r.crf_sigmoid,
                      r.hue_shift, r.sat_shift, r.hdr_path.c_str(), r.ldr_path.c_str());
        s += buf;
    }
    return s;
}

Manifest parse_manifest(const std::string& text) {
    Manifest m;
    std::istringstream in(text);
    std::string line;
    bool have_columns = false;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            m.header = line;
            continue;
        }
        if (!have_columns) {
            have_columns = true;
            continue;
        }
        std::vector<std::string> f;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        if (f.size() != 16) throw DataError("manifest line " + std::to_string(line_no) + ": expected 16 fields");
        try {
            ManifestRow r;
            r.id = f[0];
            r.group = std::stoi(f[1]);
            r.split = f[2];
            r.base_index = std::stoi(f[3]);
            r.flip = std::stoi(f[4]);
            r.exposure_step = std::stoi(f[5]);
            r.sun_elevation = std::stod(f[6]);
            r.sun_azimuth = std::stod(f[7]);
            r.ratio = std::stod(f[8]);
            r.crf_id = std::stoi(f[9]);
            r.crf_gamma = std::stod(f[10]);
            r.crf_sigmoid = std::stod(f[11]);
            r.hue_shift = std::stod(f[12]);
            r.sat_shift = std::stod(f[13]);
            r.hdr_path = f[14];
            r.ldr_path = f[15];
            m.rows.push_back(std::move(r));
        } catch (const std::logic_error&) {
            throw DataError("manifest line " + std::to_string(line_no) + ": malformed number");
        }
    }
    if (!have_columns) throw DataError("manifest has no column header");
    return m;
}

Manifest read_manifest(const std::filesystem::path& path) { return parse_manifest(read_file(path)); }

Manifest build_dataset(const GenConfig& cfg, const std::filesystem::path& dir) {
    cfg.validate();
    const auto splits = split_groups(cfg.scenes, cfg.fractions, cfg.seed);
    std::vector<std::string> split_of(std::size_t(cfg.scenes));
    const char* names[3] = {"train", "val", "test"};
    for (int s = 0; s < 3; ++s)
        for (int g : splits[std::size_t(s)]) split_of[std::size_t(g)] = names[s];

    std::filesystem::create_directories(dir / "hdr");
    std::filesystem::create_directories(dir / "ldr");
    const std::size_t base_count = std::size_t(cfg.scenes) * cfg.samples_per_scene;
    std::vector<std::vector<ManifestRow>> rows(base_count);
    parallel_for(0, base_count, [&](std::size_t i) {
        const int group = int(i / std::size_t(cfg.samples_per_scene));
        const int index = int(i % std::size_t(cfg.samples_per_scene));
        SampleDraw d;
        const auto samples = generate_sample(cfg, group, index, &d);
        for (const auto& a : samples) {
            ManifestRow r;
            r.id = a.id;
            r.group = group;
            r.split = split_of[std::size_t(group)];
            r.base_index = index;
            r.flip = a.flip;
            r.exposure_step = a.exposure_step;
            r.sun_elevation = a.sun.elevation;
            r.sun_azimuth = a.sun.azimuth;
            r.ratio = d.sky.ratio;
            r.crf_id = int(d.crf.family);
            r.crf_gamma = d.crf.gamma;
            r.crf_sigmoid = d.crf.sigmoid;
            r.hue_shift = d.hue_shift;
            r.sat_shift = d.sat_shift;
            r.hdr_path = "hdr/" + a.id + ".pfm";
            r.ldr_path = "ldr/" + a.id + ".ppm";
            write_pfm(dir / r.hdr_path, a.hdr);
            write_ppm(dir / r.ldr_path, a.ldr);
            rows[i].push_back(std::move(r));
        }
    });
    Manifest m;
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "# skyhdr-datagen version=%d seed=%llu scenes=%d samples=%d fractions=%.17g,%.17g,%.17g "
                  "size=%dx%d random_crf=%d hue_sigma=%.17g sat_sigma=%.17g max_occluders=%d "
                  "min_saturation=%.17g",
                  kGeneratorVersion, static_cast<unsigned long long>(cfg.seed), cfg.scenes,
                  cfg.samples_per_scene, cfg.fractions[0], cfg.fractions[1], cfg.fractions[2], cfg.width,
                  cfg.height, cfg.random_crf ? 1 : 0, cfg.hue_sigma, cfg.sat_sigma, cfg.max_occluders,
                  cfg.min_saturation);
    m.header = buf;
    for (auto& v : rows)
        for (auto& r : v) m.rows.push_back(std::move(r));
    write_file_atomic(dir / "manifest.csv", manifest_csv(m));
    return m;
}

Dataset load_dataset(const std::filesystem::path& manifest_path, const std::string& split,
                     const TonemapParams& tp) {
    if (split != "train" && split != "val" && split != "test" && split != "all")
        throw UsageError("split must be train, val, test or all, got '" + split + "'");
    const Manifest m = read_manifest(manifest_path);
    const auto dir = manifest_path.parent_path();
    std::vector<const ManifestRow*> rows;
    for (const auto& r : m.rows)
        if (split == "all" || r.split == split) rows.push_back(&r);
    Dataset d;
    d.samples.resize(rows.size());
    parallel_for(0, rows.size(), [&](std::size_t i) {
        const ManifestRow& r = *rows[i];
        const LdrPanorama ldr(read_ppm(dir / r.ldr_path));
        const HdrPanorama hdr(read_pfm(dir / r.hdr_path));
        d.samples[i] = make_sample(ldr, hdr, r.sun_elevation, r.id, r.group, tp);
    });
    if (!d.samples.empty()) {
        const LdrPanorama first(read_ppm(dir / rows[0]->ldr_path));
        d.width = first.width();
        d.height = first.height();
    }
    return d;
}

std::vector<DayFrame> gen_day_sequence(std::uint64_t seed, int frames, int width, int height) {
    if (frames < 2) throw UsageError("a day sequence needs at least 2 frames");
    Rng rng = Rng::stream(seed, 50);
    SkyParams day;
    draw_day_sky(rng, day);
    day.cloudiness = 0.0;
    const GroundParams gp = draw_ground(rng, 4);
    const CrfParams crf{CrfFamily::gamma, 2.2, 0.0};
    std::vector<DayFrame> out;
    for (int t = 0; t < frames; ++t) {
        const double u = (t + 0.5) / frames;
        SkyParams sp = day;
        sp.sun_elevation = std::max(0.05, 1.2 * std::sin(M_PI * u));
        sp.sun_azimuth = -M_PI / 2 + M_PI * u;
        // Attenuation along the air mass.
        sp.ratio = std::clamp(3e4 * std::exp(-0.25 * (1.0 / std::sin(sp.sun_elevation) - 1.0)), 1e2, 1.3e5);
        sp.circumsolar = glow_for_ratio(sp.ratio);
        sp.circumsolar_width = 0.07;
        const GeneratedPanorama g = saturating_panorama(sp, gp, crf, 0.0, 0.0, {0}, 0.005, width, height);
        out.push_back({g.hdr, derive_ldr(g.hdr, 1.0, crf), g.sun});
    }
    return out;
}

}  // namespace skyhdr
