#include "skyhdr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <json.hpp>

#include "skyhdr/error.hpp"
#include "skyhdr/training.hpp"

namespace skyhdr {

double peak_intensity(const FloatPanorama& tm) {
    double best = -std::numeric_limits<double>::infinity();
    for (int r = 0; r < tm.height(); ++r)
        for (int c = 0; c < tm.width(); ++c)
            best = std::max(best, (double(tm(r, c, 0)) + tm(r, c, 1) + tm(r, c, 2)) / 3.0);
    return best;
}

SampleMetrics metrics_tonemapped(const FloatPanorama& pred_tm, const FloatPanorama& truth_tm,
                                 double pred_theta, double truth_theta,
                                 const TransportMatrix* transport) {
    if (pred_tm.width() != truth_tm.width() || pred_tm.height() != truth_tm.height())
        throw DataError("prediction and ground truth differ in size");
    SampleMetrics m;
    double s = 0.0;
    const auto a = pred_tm.values(), b = truth_tm.values();
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(double(a[i]) - double(b[i]));
    m.e_hdr = 100.0 * s / double(a.size());
    m.e_theta = std::abs(pred_theta - truth_theta);
    m.e_sun = std::abs(peak_intensity(pred_tm) - peak_intensity(truth_tm));
    if (transport) {
        FloatPanorama diff(pred_tm.width(), pred_tm.height());
        for (std::size_t i = 0; i < a.size(); ++i) diff.values()[i] = a[i] - b[i];
        const FloatImage r = render(*transport, diff);
        double sq = 0.0;
        for (float v : r.values()) sq += double(v) * v;
        m.e_render = std::sqrt(sq / double(r.values().size()));
    }
    return m;
}

SampleMetrics metrics(const HdrPanorama& pred, const HdrPanorama& truth, double pred_theta,
                      double truth_theta, const TransportMatrix* transport, const TonemapParams& tp) {
    return metrics_tonemapped(tonemap(pred, tp), tonemap(truth, tp), pred_theta, truth_theta, transport);
}

std::vector<double> render_rms_batch(const TransportMatrix& transport,
                                     const std::vector<FloatPanorama>& pred_tm,
                                     const std::vector<FloatPanorama>& truth_tm) {
    if (pred_tm.size() != truth_tm.size()) throw DataError("render batch size mismatch");
    const std::size_t n = pred_tm.size();
    const int k = transport.cols();
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor> d(k, 3 * Eigen::Index(n));
    for (std::size_t i = 0; i < n; ++i) {
        if (pred_tm[i].width() != transport.pano_width || pred_tm[i].height() != transport.pano_height ||
            truth_tm[i].width() != transport.pano_width || truth_tm[i].height() != transport.pano_height)
            throw DataError("panorama size does not match the transport matrix");
        const auto a = pred_tm[i].values(), b = truth_tm[i].values();
        for (int j = 0; j < k; ++j)
            for (int ch = 0; ch < 3; ++ch)
                d(j, Eigen::Index(3 * i + ch)) = a[std::size_t(j) * 3 + ch] - b[std::size_t(j) * 3 + ch];
    }
    const Eigen::MatrixXf r = transport.weights * d;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double sq = r.middleCols(Eigen::Index(3 * i), 3).cast<double>().squaredNorm();
        out[i] = std::sqrt(sq / (3.0 * double(r.rows())));
    }
    return out;
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw DataError("percentile of an empty set");
    if (!(q >= 0.0 && q <= 100.0)) throw UsageError("percentile must lie in [0, 100]");
    std::sort(values.begin(), values.end());
    const double pos = q / 100.0 * double(values.size() - 1);
    const std::size_t lo = std::size_t(std::floor(pos));
    const std::size_t hi = std::min(values.size() - 1, lo + 1);
    return values[lo] + (pos - double(lo)) * (values[hi] - values[lo]);
}

namespace {

MetricSummary summarize(const std::vector<double>& v, bool rms) {
    MetricSummary s;
    double sum = 0.0, sq = 0.0;
    for (double x : v) {
        sum += x;
        sq += x * x;
    }
    s.mean = sum / double(v.size());
    s.aggregate = rms ? std::sqrt(sq / double(v.size())) : s.mean;
    s.p25 = percentile(v, 25);
    s.p50 = percentile(v, 50);
    s.p75 = percentile(v, 75);
    return s;
}

}  // namespace

MetricReport make_report(std::vector<std::string> ids, std::vector<SampleMetrics> samples) {
    if (samples.empty()) throw DataError("metric report needs at least one sample");
    if (ids.size() != samples.size()) throw UsageError("ids and samples differ in count");
    MetricReport r;
    r.ids = std::move(ids);
    r.samples = std::move(samples);
    std::vector<double> h, t, s, e;
    for (const auto& m : r.samples) {
        h.push_back(m.e_hdr);
        t.push_back(m.e_theta);
        s.push_back(m.e_sun);
        e.push_back(m.e_render);
    }
    r.e_hdr = summarize(h, false);
    r.e_theta = summarize(t, true);
    r.e_sun = summarize(s, true);
    r.e_render = summarize(e, true);
    return r;
}

std::string report_csv(const MetricReport& r) {
    std::string out = "id,e_hdr,e_theta,e_sun,e_render\n";
    char buf[512];
    for (std::size_t i = 0; i < r.samples.size(); ++i) {
        const auto& m = r.samples[i];
        std::snprintf(buf, sizeof buf, "%s,%.9g,%.9g,%.9g,%.9g\n", r.ids[i].c_str(), m.e_hdr, m.e_theta,
                      m.e_sun, m.e_render);
        out += buf;
    }
    return out;
}

std::string report_summary_json(const MetricReport& r) {
    auto one = [](const MetricSummary& s) {
        return nlohmann::ordered_json{{"aggregate", s.aggregate}, {"mean", s.mean},
                                      {"p25", s.p25},             {"p50", s.p50},
                                      {"p75", s.p75}};
    };
    nlohmann::ordered_json j;
    j["count"] = r.samples.size();
    j["e_hdr"] = one(r.e_hdr);
    j["e_theta"] = one(r.e_theta);
    j["e_sun"] = one(r.e_sun);
    j["e_render"] = one(r.e_render);
    return j.dump(2) + "\n";
}

MetricReport evaluate_predictions(std::vector<std::string> ids, const std::vector<FloatPanorama>& pred_tm,
                                  const std::vector<double>& pred_theta,
                                  const std::vector<FloatPanorama>& truth_tm,
                                  const std::vector<double>& truth_theta,
                                  const TransportMatrix* transport) {
    const std::size_t n = pred_tm.size();
    if (truth_tm.size() != n || pred_theta.size() != n || truth_theta.size() != n || ids.size() != n)
        throw DataError("evaluation inputs differ in count");
    std::vector<SampleMetrics> m(n);
    for (std::size_t i = 0; i < n; ++i)
        m[i] = metrics_tonemapped(pred_tm[i], truth_tm[i], pred_theta[i], truth_theta[i], nullptr);
    if (transport) {
        const std::size_t chunk = 64;
        for (std::size_t start = 0; start < n; start += chunk) {
            const std::size_t end = std::min(n, start + chunk);
            const std::vector<FloatPanorama> p(pred_tm.begin() + std::ptrdiff_t(start), pred_tm.begin() + std::ptrdiff_t(end));
            const std::vector<FloatPanorama> t(truth_tm.begin() + std::ptrdiff_t(start), truth_tm.begin() + std::ptrdiff_t(end));
            const auto e = render_rms_batch(*transport, p, t);
            for (std::size_t i = start; i < end; ++i) m[i].e_render = e[i - start];
        }
    }
    return make_report(std::move(ids), std::move(m));
}

MetricReport evaluate_model(const ModelParams& params, const Dataset& data, const TransportMatrix* transport) {
    if (data.empty()) throw DataError("cannot evaluate an empty dataset");
    std::vector<std::vector<float>> inputs;
    std::vector<std::string> ids;
    std::vector<FloatPanorama> truth;
    std::vector<double> truth_theta, pred_theta;
    for (const auto& s : data.samples) {
        if (s.target_tm.empty()) throw DataError("sample '" + s.id + "' has no HDR target");
        inputs.push_back(s.input);
        ids.push_back(s.id);
        truth.push_back(from_chw(s.target_tm, data.width, data.height));
        truth_theta.push_back(s.elevation);
    }
    std::vector<FloatPanorama> pred;
    for (auto& p : predict(params, inputs)) {
        pred.push_back(std::move(p.hdr_tm));
        pred_theta.push_back(p.elevation);
    }
    return evaluate_predictions(std::move(ids), pred, pred_theta, truth, truth_theta, transport);
}

namespace {

std::vector<double> ranks(std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = 0.5 * double(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

}  // namespace

std::optional<double> spearman(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DataError("series lengths differ");
    if (a.size() < 2) return std::nullopt;
    const auto ra = ranks(a), rb = ranks(b);
    const double n = double(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return std::nullopt;
    return sab / std::sqrt(saa * sbb);
}

std::string TemporalResult::csv() const {
    std::string s = "frame,predicted_sun,true_sun\n";
    char buf[256];
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g\n", i, predicted[i], truth[i]);
        s += buf;
    }
    return s;
}

std::string TemporalResult::correlation_text() const {
    if (!correlation) return "n/a";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", *correlation);
    return buf;
}

TemporalResult temporal_eval(const ModelParams& params, const std::vector<LdrPanorama>& frames,
                             const std::vector<FloatPanorama>& truth_tm) {
    if (frames.size() != truth_tm.size()) throw DataError("frames and ground truth differ in count");
    TemporalResult res;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        // One frame per call: inference is independent across the sequence.
        const auto pred = predict(params, {normalize_ldr(frames[i])});
        res.predicted.push_back(peak_intensity(pred[0].hdr_tm));
        res.truth.push_back(peak_intensity(truth_tm[i]));
    }
    res.correlation = spearman(res.predicted, res.truth);
    return res;
}

double resolve_intensity(const std::vector<CorpusItem>& corpus, const std::string& spec) {
    auto pct = [&](double q) {
        if (corpus.empty()) throw DataError("empty corpus");
        std::vector<double> v;
        for (const auto& c : corpus) v.push_back(c.intensity);
        return percentile(v, q);
    };
    if (spec == "bright") return pct(75);
    if (spec == "dim") return pct(25);
    try {
        std::size_t used = 0;
        if (!spec.empty() && spec[0] == 'p') {
            const double q = std::stod(spec.substr(1), &used);
            if (used + 1 == spec.size()) return pct(q);
        } else {
            const double v = std::stod(spec, &used);
            if (used == spec.size()) return v;
        }
    } catch (const std::logic_error&) {
    }
    throw UsageError("intensity target must be bright, dim, pNN or a number, got '" + spec + "'");
}

std::vector<std::string> match(const std::vector<CorpusItem>& corpus, double intensity,
                               double elevation, std::size_t k, double intensity_weight,
                               double elevation_weight) {
    if (k == 0) throw UsageError("k must be >= 1");
    if (corpus.empty()) throw DataError("empty corpus");
    std::vector<CorpusItem> items = corpus;
    // Canonical order makes the statistics independent of the input order.
    std::sort(items.begin(), items.end(), [](const CorpusItem& a, const CorpusItem& b) { return a.id < b.id; });
    auto stats = [&](auto get) {
        double m = 0, s = 0;
        for (const auto& it : items) m += get(it);
        m /= double(items.size());
        for (const auto& it : items) s += (get(it) - m) * (get(it) - m);
        s = std::sqrt(s / double(items.size()));
        return std::pair{m, s > 0.0 ? s : 1.0};
    };
    const auto [mi, si] = stats([](const CorpusItem& c) { return c.intensity; });
    const auto [me, se] = stats([](const CorpusItem& c) { return c.elevation; });
    std::vector<std::pair<double, std::string>> d;
    for (const auto& it : items) {
        const double di = (it.intensity - intensity) / si;
        const double de = (it.elevation - elevation) / se;
        d.emplace_back(std::sqrt(intensity_weight * di * di + elevation_weight * de * de), it.id);
    }
    std::sort(d.begin(), d.end());
    std::vector<std::string> out;
    for (std::size_t i = 0; i < std::min(k, d.size()); ++i) out.push_back(d[i].second);
    return out;
}

}  // namespace skyhdr
