#include "skyhdr/itmo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "skyhdr/error.hpp"
#include "skyhdr/eval.hpp"
#include "skyhdr/parallel.hpp"
#include "skyhdr/sun_detect.hpp"
#include "skyhdr/training.hpp"

namespace skyhdr {

namespace {

double luminance(double r, double g, double b) { return 0.2126 * r + 0.7152 * g + 0.0722 * b; }

/// Equal inputs get equal outputs and larger inputs never get smaller ones:
/// groups equal luminances, then takes a running maximum in input order.
void enforce_monotone(const std::vector<double>& in, std::vector<double>& out) {
    std::vector<std::size_t> order(in.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return in[a] < in[b]; });
    double running = -std::numeric_limits<double>::infinity();
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        double m = running;
        while (j < order.size() && in[order[j]] == in[order[i]]) m = std::max(m, out[order[j++]]);
        for (std::size_t k = i; k < j; ++k) out[order[k]] = m;
        running = m;
        i = j;
    }
}

std::vector<double> expand_map(const LdrPanorama& ldr, double threshold, double sigma) {
    const int w = ldr.width(), h = ldr.height();
    std::vector<double> mask(std::size_t(w) * h, 0.0);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const int mx = std::max({ldr(r, c, 0), ldr(r, c, 1), ldr(r, c, 2)});
            mask[std::size_t(r) * w + c] = mx / 255.0 >= threshold ? 1.0 : 0.0;
        }
    std::vector<double> e = gaussian_blur(mask, w, h, sigma);
    const double peak = *std::max_element(e.begin(), e.end());
    if (peak > 0.0)
        for (double& v : e) v /= peak;
    return e;
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw UsageError(msg);
}

}  // namespace

ItmoOperator parse_itmo(const std::string& name) {
    if (name == "linear") return ItmoOperator::linear;
    if (name == "gamma") return ItmoOperator::gamma;
    if (name == "inverse-reinhard-expand") return ItmoOperator::inverse_reinhard;
    if (name == "threshold-expand") return ItmoOperator::threshold_expand;
    if (name == "two-segment") return ItmoOperator::two_segment;
    throw UsageError("unknown iTMO operator '" + name + "'");
}

std::string to_string(ItmoOperator op) {
    switch (op) {
        case ItmoOperator::linear: return "linear";
        case ItmoOperator::gamma: return "gamma";
        case ItmoOperator::inverse_reinhard: return "inverse-reinhard-expand";
        case ItmoOperator::threshold_expand: return "threshold-expand";
        case ItmoOperator::two_segment: return "two-segment";
    }
    throw UsageError("invalid iTMO operator id");
}

std::vector<ItmoOperator> all_itmos() {
    return {ItmoOperator::linear, ItmoOperator::gamma, ItmoOperator::inverse_reinhard,
            ItmoOperator::threshold_expand, ItmoOperator::two_segment};
}

void ItmoParams::validate() const {
    const auto& v = values;
    switch (op) {
        case ItmoOperator::linear:
            require(v.size() == 2 && v[0] >= 1.0 && (v[1] == 0.0 || v[1] == 1.0),
                    "linear expects {scale >= 1, linearize 0|1}");
            break;
        case ItmoOperator::gamma:
            require(v.size() == 1 && v[0] >= 1.0, "gamma expects {scale >= 1}");
            break;
        case ItmoOperator::inverse_reinhard:
        case ItmoOperator::threshold_expand:
            require(v.size() == 3 && v[0] >= 1.0 && v[1] > 0.0 && v[2] > 0.0 && v[2] <= 1.0,
                    to_string(op) + " expects {peak >= 1, sigma > 0, threshold in (0,1]}");
            break;
        case ItmoOperator::two_segment:
            require(v.size() == 2 && v[0] > 0.0 && v[0] < 1.0 && v[1] >= 1.0,
                    "two-segment expects {knee in (0,1), slope >= 1}");
            break;
        default: throw UsageError("invalid iTMO operator id");
    }
}

std::string ItmoParams::describe() const {
    std::ostringstream s;
    s << to_string(op) << "{";
    for (std::size_t i = 0; i < values.size(); ++i) s << (i ? "," : "") << values[i];
    s << "}";
    return s.str();
}

double inverse_reinhard(double l_d, double l_max) {
    l_d = std::clamp(l_d, 0.0, 1.0);
    const double w2 = l_max * l_max;
    return 0.5 * w2 * (l_d - 1.0 + std::sqrt((1.0 - l_d) * (1.0 - l_d) + 4.0 * l_d / w2));
}

double two_segment_lower(double l, double) { return l; }
double two_segment_upper(double l, double knee, double slope) { return knee + slope * (l - knee); }

std::vector<double> gaussian_blur(const std::vector<double>& field, int width, int height, double sigma) {
    if (field.size() != std::size_t(width) * height) throw DataError("blur field size mismatch");
    if (!(sigma > 0.0)) throw UsageError("blur sigma must be positive");
    const int rad = int(std::ceil(3.0 * sigma));
    std::vector<double> k(std::size_t(2 * rad + 1));
    double sum = 0.0;
    for (int i = -rad; i <= rad; ++i) sum += k[std::size_t(i + rad)] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (double& v : k) v /= sum;
    std::vector<double> tmp(field.size(), 0.0), out(field.size(), 0.0);
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) {
            double s = 0.0;
            for (int i = -rad; i <= rad; ++i)
                s += k[std::size_t(i + rad)] * field[std::size_t(r) * width + ((c + i) % width + width) % width];
            tmp[std::size_t(r) * width + c] = s;
        }
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) {
            double s = 0.0;
            for (int i = -rad; i <= rad; ++i)
                s += k[std::size_t(i + rad)] * tmp[std::size_t(std::clamp(r + i, 0, height - 1)) * width + c];
            out[std::size_t(r) * width + c] = s;
        }
    return out;
}

HdrPanorama itmo_apply(const LdrPanorama& ldr, const ItmoParams& params) {
    params.validate();
    const int w = ldr.width(), h = ldr.height();
    const auto& v = params.values;
    HdrPanorama out(w, h);

    if (params.op == ItmoOperator::linear || params.op == ItmoOperator::gamma) {
        const bool lin = params.op == ItmoOperator::gamma || v[1] == 1.0;
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c)
                for (int ch = 0; ch < 3; ++ch) {
                    const double q = ldr(r, c, ch) / 255.0;
                    out(r, c, ch) = float(v[0] * (lin ? std::pow(q, 2.2) : q));
                }
        return out;
    }

    // Luminance operators: expand L_d, then rescale the RGB triplet.
    std::vector<double> ld(std::size_t(w) * h), lo(ld.size());
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            ld[std::size_t(r) * w + c] = luminance(ldr(r, c, 0), ldr(r, c, 1), ldr(r, c, 2)) / 255.0;

    if (params.op == ItmoOperator::two_segment) {
        for (std::size_t i = 0; i < ld.size(); ++i)
            lo[i] = ld[i] <= v[0] ? two_segment_lower(ld[i], v[0]) : two_segment_upper(ld[i], v[0], v[1]);
    } else {
        const std::vector<double> e = expand_map(ldr, v[2], v[1]);
        for (std::size_t i = 0; i < ld.size(); ++i) {
            if (params.op == ItmoOperator::inverse_reinhard) {
                lo[i] = ld[i] + e[i] * (inverse_reinhard(ld[i], v[0]) - ld[i]);
            } else {
                // Boost confined to the neighbourhood of the saturated mask.
                const double boost = e[i] >= 0.1 ? e[i] : 0.0;
                lo[i] = ld[i] * (1.0 + (v[0] - 1.0) * boost);
            }
        }
        enforce_monotone(ld, lo);
    }

    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const std::size_t i = std::size_t(r) * w + c;
            const double k = ld[i] > 0.0 ? lo[i] / ld[i] : 0.0;
            for (int ch = 0; ch < 3; ++ch) out(r, c, ch) = float(k * ldr(r, c, ch) / 255.0);
        }
    return out;
}

std::vector<ItmoParams> itmo_grid(ItmoOperator op) {
    std::vector<ItmoParams> g;
    const std::vector<double> scales{1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024};
    const std::vector<double> peaks{10, 100, 1e3, 1e4, 1e5};
    const std::vector<double> sigmas{1, 2, 4, 8};
    const std::vector<double> thresholds{0.9, 0.98};
    switch (op) {
        case ItmoOperator::linear:
            for (double lin : {0.0, 1.0})
                for (double s : scales) g.push_back({op, {s, lin}});
            break;
        case ItmoOperator::gamma:
            for (double s : scales) g.push_back({op, {s}});
            break;
        case ItmoOperator::inverse_reinhard:
        case ItmoOperator::threshold_expand:
            for (double p : peaks)
                for (double s : sigmas)
                    for (double t : thresholds) g.push_back({op, {p, s, t}});
            break;
        case ItmoOperator::two_segment:
            for (double k : {0.5, 0.7, 0.9, 0.95, 0.98})
                for (double s : {10.0, 100.0, 1e3, 1e4, 1e5}) g.push_back({op, {k, s}});
            break;
    }
    return g;
}

CvMetric parse_cv_metric(const std::string& s) {
    if (s == "e_hdr") return CvMetric::e_hdr;
    if (s == "e_sun") return CvMetric::e_sun;
    if (s == "e_render") return CvMetric::e_render;
    throw UsageError("cross-validation metric must be e_hdr, e_sun or e_render");
}

ItmoParams cross_validate(const std::vector<ItmoParams>& grid, const std::vector<LdrPanorama>& ldr,
                          const std::vector<FloatPanorama>& truth_tm, CvMetric metric,
                          const TransportMatrix* transport, const TonemapParams& tp) {
    if (grid.empty()) throw UsageError("empty parameter grid");
    if (ldr.empty() || ldr.size() != truth_tm.size()) throw DataError("cross-validation needs paired examples");
    if (metric == CvMetric::e_render && !transport) throw UsageError("e_render needs a transport matrix");
    for (const auto& p : grid) p.validate();
    std::vector<double> score(grid.size(), 0.0);
    parallel_for(0, grid.size(), [&](std::size_t gi) {
        std::vector<FloatPanorama> preds;
        preds.reserve(ldr.size());
        for (const auto& l : ldr) preds.push_back(tonemap(itmo_apply(l, grid[gi]), tp));
        double s = 0.0;
        if (metric == CvMetric::e_render) {
            for (double e : render_rms_batch(*transport, preds, truth_tm)) s += e * e;
        } else {
            for (std::size_t i = 0; i < ldr.size(); ++i) {
                const SampleMetrics m = metrics_tonemapped(preds[i], truth_tm[i], 0.0, 0.0, nullptr);
                s += metric == CvMetric::e_hdr ? m.e_hdr : m.e_sun * m.e_sun;
            }
        }
        score[gi] = s;
    });
    std::size_t best = 0;
    for (std::size_t i = 1; i < grid.size(); ++i)
        if (score[i] < score[best]) best = i;
    return grid[best];
}

LdrPanorama ldr_from_input(const std::vector<float>& chw, int width, int height) {
    const FloatPanorama f = from_chw(chw, width, height);
    LdrPanorama out(width, height);
    for (std::size_t i = 0; i < f.values().size(); ++i)
        out.values()[i] = static_cast<std::uint8_t>(std::lround(std::clamp(f.values()[i] * 255.0f, 0.0f, 255.0f)));
    return out;
}

MetricReport evaluate_baseline(const ItmoParams* params, const Dataset& data,
                               const TransportMatrix* transport, const TonemapParams& tp) {
    if (data.empty()) throw DataError("cannot evaluate an empty dataset");
    const std::size_t n = data.size();
    std::vector<std::string> ids(n);
    std::vector<FloatPanorama> pred(n), truth(n);
    std::vector<double> pred_theta(n), truth_theta(n);
    parallel_for(0, n, [&](std::size_t i) {
        const Sample& s = data.samples[i];
        const LdrPanorama ldr = ldr_from_input(s.input, data.width, data.height);
        HdrPanorama hdr(data.width, data.height);
        if (params) {
            hdr = itmo_apply(ldr, *params);
        } else {
            for (std::size_t k = 0; k < hdr.values().size(); ++k) hdr.values()[k] = ldr.values()[k] / 255.0f;
        }
        ids[i] = s.id;
        pred[i] = tonemap(hdr, tp);
        truth[i] = from_chw(s.target_tm, data.width, data.height);
        truth_theta[i] = s.elevation;
        try {
            pred_theta[i] = detect_sun(ldr).elevation;
        } catch (const DataError&) {
            pred_theta[i] = 0.0;  // nothing saturated: no elevation cue
        }
    });
    return evaluate_predictions(std::move(ids), pred, pred_theta, truth, truth_theta, transport);
}

}  // namespace skyhdr
