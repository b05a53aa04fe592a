#pragma once

#include <string>
#include <vector>

#include "skyhdr/pano.hpp"
#include "skyhdr/transport.hpp"

namespace skyhdr {

enum class ItmoOperator { linear, gamma, inverse_reinhard, threshold_expand, two_segment };

ItmoOperator parse_itmo(const std::string& name);
std::string to_string(ItmoOperator op);
std::vector<ItmoOperator> all_itmos();

/// Parameter vector per operator:
///   linear            {scale >= 1, linearize (0|1)}
///   gamma             {scale >= 1}
///   inverse_reinhard  {L_max > 1, blur sigma (px) > 0, saturation threshold in (0,1]}
///   threshold_expand  {peak >= 1, blur sigma (px) > 0, saturation threshold in (0,1]}
///   two_segment       {knee in (0,1), slope >= 1}
struct ItmoParams {
    ItmoOperator op = ItmoOperator::linear;
    std::vector<double> values{1.0, 0.0};

    void validate() const;
    std::string describe() const;
    bool operator==(const ItmoParams&) const = default;
};

/// Inverse of Reinhard's operator with white point L_max: maps [0,1] onto
/// [0, L_max] and expands (result >= L_d).
double inverse_reinhard(double l_d, double l_max);
double two_segment_lower(double l, double knee);
double two_segment_upper(double l, double knee, double slope);

/// Separable Gaussian, wrapping in azimuth and clamping at the poles.
std::vector<double> gaussian_blur(const std::vector<double>& field, int width, int height, double sigma);

HdrPanorama itmo_apply(const LdrPanorama& ldr, const ItmoParams& params);

/// Documented search grid (at most 100 points).
std::vector<ItmoParams> itmo_grid(ItmoOperator op);

enum class CvMetric { e_hdr, e_sun, e_render };
CvMetric parse_cv_metric(const std::string& s);

/// Grid point with the lowest mean metric over the examples; the first point
/// wins ties. truth_tm are the tonemapped ground truths.
ItmoParams cross_validate(const std::vector<ItmoParams>& grid, const std::vector<LdrPanorama>& ldr,
                          const std::vector<FloatPanorama>& truth_tm, CvMetric metric,
                          const TransportMatrix* transport, const TonemapParams& tp = {});

struct Dataset;
struct MetricReport;

/// Baseline predictions over a labelled dataset: an iTMO when params is
/// given, otherwise the LDR itself read as linear HDR. Elevations come from
/// detect_sun.
MetricReport evaluate_baseline(const ItmoParams* params, const Dataset& data,
                               const TransportMatrix* transport, const TonemapParams& tp = {});

/// Recovers the 8-bit panorama stored in a sample's normalized input.
LdrPanorama ldr_from_input(const std::vector<float>& chw, int width, int height);

}  // namespace skyhdr
