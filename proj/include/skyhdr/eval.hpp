#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "skyhdr/net.hpp"
#include "skyhdr/pano.hpp"
#include "skyhdr/transport.hpp"

namespace skyhdr {

struct SampleMetrics {
    double e_hdr = 0.0;     ///< 100 x mean absolute error of tonemapped panoramas
    double e_theta = 0.0;   ///< |elevation error|, radians
    double e_sun = 0.0;     ///< |peak tonemapped intensity difference|
    double e_render = 0.0;  ///< RMS difference of the renders of the tonemapped top halves
};

/// Brightest pixel of a tonemapped panorama, taking the channel mean per pixel.
double peak_intensity(const FloatPanorama& tm);

/// Inputs already in the tonemapped domain. Without a transport matrix
/// e_render is reported as 0.
SampleMetrics metrics_tonemapped(const FloatPanorama& pred_tm, const FloatPanorama& truth_tm,
                                 double pred_theta, double truth_theta,
                                 const TransportMatrix* transport);
SampleMetrics metrics(const HdrPanorama& pred, const HdrPanorama& truth, double pred_theta,
                      double truth_theta, const TransportMatrix* transport,
                      const TonemapParams& tp = {});

/// Per-sample E_render for many pairs at once (one matrix product).
std::vector<double> render_rms_batch(const TransportMatrix& transport,
                                     const std::vector<FloatPanorama>& pred_tm,
                                     const std::vector<FloatPanorama>& truth_tm);

/// Linear-interpolated percentile, q in [0, 100].
double percentile(std::vector<double> values, double q);

struct MetricSummary {
    double aggregate = 0.0;  ///< mean for E_HDR, RMSE for the others
    double mean = 0.0;
    double p25 = 0.0, p50 = 0.0, p75 = 0.0;
};

struct MetricReport {
    std::vector<std::string> ids;
    std::vector<SampleMetrics> samples;
    MetricSummary e_hdr, e_theta, e_sun, e_render;
};

MetricReport make_report(std::vector<std::string> ids, std::vector<SampleMetrics> samples);
/// id,e_hdr,e_theta,e_sun,e_render per sample.
std::string report_csv(const MetricReport& r);
/// JSON summary of the aggregates and percentiles.
std::string report_summary_json(const MetricReport& r);

/// Tonemapped predictions against tonemapped truths; E_render uses batched renders.
MetricReport evaluate_predictions(std::vector<std::string> ids, const std::vector<FloatPanorama>& pred_tm,
                                  const std::vector<double>& pred_theta,
                                  const std::vector<FloatPanorama>& truth_tm,
                                  const std::vector<double>& truth_theta,
                                  const TransportMatrix* transport);

struct Dataset;
/// Runs the network over a labelled dataset.
MetricReport evaluate_model(const ModelParams& params, const Dataset& data, const TransportMatrix* transport);

/// Spearman rank correlation (average ranks for ties); nullopt when either
/// series is constant or shorter than 2.
std::optional<double> spearman(std::span<const double> a, std::span<const double> b);

struct TemporalResult {
    std::vector<double> predicted;  ///< peak tonemapped intensity per frame
    std::vector<double> truth;
    std::optional<double> correlation;
    std::string csv() const;
    /// "%.9g" of the correlation, or "n/a" when it is undefined.
    std::string correlation_text() const;
};

/// Independent per-frame inference over a sequence of sun-centred LDR frames.
TemporalResult temporal_eval(const ModelParams& params, const std::vector<LdrPanorama>& frames,
                             const std::vector<FloatPanorama>& truth_tm);

struct CorpusItem {
    std::string id;
    double intensity = 0.0;  ///< peak tonemapped intensity of the predicted HDR
    double elevation = 0.0;  ///< predicted sun elevation, radians
};

/// "bright" / "dim" map to the 75th / 25th intensity percentile of the
/// corpus, "pNN" to the NN-th percentile; anything else must parse as a value.
double resolve_intensity(const std::vector<CorpusItem>& corpus, const std::string& spec);

/// k nearest items under a weighted Euclidean distance of z-scored features,
/// ties broken by id. Independent of corpus order.
std::vector<std::string> match(const std::vector<CorpusItem>& corpus, double intensity,
                               double elevation, std::size_t k, double intensity_weight = 1.0,
                               double elevation_weight = 1.0);

}  // namespace skyhdr
