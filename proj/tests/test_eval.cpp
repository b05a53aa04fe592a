#include <doctest.h>

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "skyhdr/eval.hpp"
#include "skyhdr/rng.hpp"

using namespace skyhdr;

namespace {

HdrPanorama random_hdr(std::uint64_t seed) {
    Rng r(seed);
    HdrPanorama p(128, 64);
    for (auto& v : p.values()) v = float(r.uniform(0, 2));
    for (int ch = 0; ch < 3; ++ch) p(10, 64, ch) = 5e4f;
    return p;
}

const TransportMatrix& small_t() {
    static const TransportMatrix t = [] {
        SceneSpec s;
        s.render_width = 8;
        s.render_height = 8;
        return build_transport(s);
    }();
    return t;
}

}  // namespace

TEST_CASE("metrics of identical and perturbed panoramas") {
    const HdrPanorama a = random_hdr(1);
    const SampleMetrics z = metrics(a, a, 0.4, 0.4, &small_t());
    CHECK(z.e_hdr == 0.0);
    CHECK(z.e_theta == 0.0);
    CHECK(z.e_sun == 0.0);
    CHECK(z.e_render == 0.0);

    HdrPanorama no_sun = a;
    for (int ch = 0; ch < 3; ++ch) no_sun(10, 64, ch) = 0.0f;
    const SampleMetrics s = metrics(no_sun, a, 0.4, 0.4, &small_t());
    CHECK(s.e_theta == 0.0);
    CHECK(s.e_sun == doctest::Approx(peak_intensity(tonemap(a)) - peak_intensity(tonemap(no_sun))));
    CHECK(peak_intensity(tonemap(a)) == doctest::Approx(tonemap_value(5e4)).epsilon(1e-6));

    const HdrPanorama b = random_hdr(2);
    const SampleMetrics ab = metrics(a, b, 0.1, 0.3, &small_t()), ba = metrics(b, a, 0.3, 0.1, &small_t());
    CHECK(ab.e_hdr == doctest::Approx(ba.e_hdr));
    CHECK(ab.e_sun == doctest::Approx(ba.e_sun));
    CHECK(ab.e_render == doctest::Approx(ba.e_render));
    CHECK(ab.e_theta == doctest::Approx(0.2));
    CHECK(ab.e_hdr > 0);

    HdrPanorama low = a;
    for (int r = 40; r < 64; ++r) low(r, 3, 1) += 1.0f;
    CHECK(metrics(low, a, 0, 0, &small_t()).e_render == 0.0);

    const auto batch = render_rms_batch(small_t(), {tonemap(a), tonemap(b)}, {tonemap(b), tonemap(b)});
    CHECK(batch[0] == doctest::Approx(ab.e_render).epsilon(1e-5));
    CHECK(batch[1] == 0.0);
}

TEST_CASE("aggregation and percentiles") {
    CHECK(percentile({1, 2, 3, 4}, 50) == doctest::Approx(2.5));
    CHECK(percentile({5}, 75) == 5);
    CHECK(percentile({4, 1, 3, 2}, 25) == doctest::Approx(1.75));
    CHECK_THROWS(percentile({}, 50));
    std::vector<SampleMetrics> s(2);
    s[0].e_theta = 0.1;
    s[1].e_theta = 0.3;
    s[0].e_hdr = 1.0;
    s[1].e_hdr = 3.0;
    const MetricReport r = make_report({"a", "b"}, s);
    CHECK(r.e_theta.aggregate == doctest::Approx(std::sqrt((0.01 + 0.09) / 2)));
    CHECK(r.e_hdr.aggregate == doctest::Approx(2.0));
    const std::string csv = report_csv(r);
    CHECK(csv.rfind("id,e_hdr,e_theta,e_sun,e_render\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    const auto j = nlohmann::json::parse(report_summary_json(r));
    CHECK(j["e_theta"]["aggregate"].get<double>() == doctest::Approx(r.e_theta.aggregate));
    CHECK(j["count"].get<int>() == 2);
}

TEST_CASE("spearman") {
    const std::vector<double> a{1, 2, 3, 4, 5}, c{2, 2, 2, 2, 2};
    CHECK(*spearman(a, a) == doctest::Approx(1.0));
    const std::vector<double> rev{5, 4, 3, 2, 1};
    CHECK(*spearman(a, rev) == doctest::Approx(-1.0));
    CHECK(!spearman(a, c).has_value());
    CHECK(!spearman(std::vector<double>{1}, std::vector<double>{1}).has_value());
    const std::vector<double> ties{1, 1, 2, 3, 4};
    CHECK(*spearman(ties, a) > 0.9);
    Rng r(4);
    double mean = 0;
    std::vector<double> sorted(40);
    for (int i = 0; i < 40; ++i) sorted[std::size_t(i)] = i;
    for (int k = 0; k < 200; ++k) {
        std::vector<double> sh = sorted;
        r.shuffle(sh);
        mean += *spearman(sh, sorted) / 200;
    }
    CHECK(std::abs(mean) < 0.05);
}

TEST_CASE("matching") {
    std::vector<CorpusItem> corpus;
    for (int i = 0; i < 10; ++i) corpus.push_back({"lo" + std::to_string(i), 0.1 + 0.01 * i, 0.2 + 0.01 * i});
    for (int i = 0; i < 10; ++i) corpus.push_back({"hi" + std::to_string(i), 0.9 + 0.01 * i, 1.0 + 0.01 * i});
    CHECK(match(corpus, 0.13, 0.23, 1) == std::vector<std::string>{"lo3"});
    for (const auto& id : match(corpus, 0.95, 1.05, 5)) CHECK(id.rfind("hi", 0) == 0);
    for (const auto& id : match(corpus, 0.1, 0.2, 10)) CHECK(id.rfind("lo", 0) == 0);
    const auto all = match(corpus, 0.5, 0.6, corpus.size());
    CHECK(all.size() == corpus.size());
    auto shuffled = corpus;
    Rng r(1);
    r.shuffle(shuffled);
    CHECK(match(shuffled, 0.5, 0.6, corpus.size()) == all);
    CHECK(match(shuffled, 0.95, 1.05, 3) == match(corpus, 0.95, 1.05, 3));
    CHECK(resolve_intensity(corpus, "bright") == doctest::Approx(percentile({0.1, 0.11, 0.12, 0.13, 0.14, 0.15, 0.16, 0.17, 0.18, 0.19, 0.9, 0.91, 0.92, 0.93, 0.94, 0.95, 0.96, 0.97, 0.98, 0.99}, 75)));
    CHECK(resolve_intensity(corpus, "p0") == doctest::Approx(0.1));
    CHECK(resolve_intensity(corpus, "0.42") == doctest::Approx(0.42));
    CHECK_THROWS_AS(resolve_intensity(corpus, "loud"), UsageError);
}

TEST_CASE("temporal degenerate cases") {
    std::vector<double> t{0.5, 0.5, 0.5};
    TemporalResult r;
    r.predicted = t;
    r.truth = t;
    r.correlation = spearman(r.predicted, r.truth);
    CHECK(!r.correlation);
    CHECK(r.correlation_text() == "n/a");
}
