#include <doctest.h>

#include <cmath>

#include "skyhdr/rng.hpp"
#include "skyhdr/training.hpp"

using namespace skyhdr;
using namespace skyhdr::ad;

namespace {

NetConfig tiny(bool disc = false) {
    NetConfig c;
    c.encoder_widths = {4, 6, 8, 8};
    c.latent_dim = 64;
    c.elevation_hidden = {6, 4};
    c.domain_hidden = 5;
    c.input_height = 32;
    c.input_width = 64;
    c.with_discriminator = disc;
    return c;
}

const TransportMatrix& tiny_t() {
    static const TransportMatrix t = [] {
        SceneSpec s;
        s.pano_width = 64;
        s.pano_height = 32;
        s.render_width = 8;
        s.render_height = 8;
        return build_transport(s);
    }();
    return t;
}

Dataset random_set(std::uint64_t seed, int n, int group0, bool labelled = true) {
    Rng r(seed);
    Dataset d;
    d.height = 32;
    d.width = 64;
    for (int i = 0; i < n; ++i) {
        Sample s;
        s.id = "s" + std::to_string(group0 + i);
        s.group = group0 + i;
        const double level = r.uniform(0.2, 0.8);
        s.input.resize(3 * 32 * 64);
        for (auto& v : s.input) v = float(std::min(1.0, level + r.uniform(-0.1, 0.1)));
        if (labelled) {
            s.target_tm.resize(s.input.size());
            for (std::size_t k = 0; k < s.input.size(); ++k) s.target_tm[k] = 0.5f * s.input[k] + 0.05f;
        }
        s.elevation = float(level);
        d.samples.push_back(std::move(s));
    }
    return d;
}

TrainConfig quick(int epochs, int batch) {
    TrainConfig c;
    c.epochs = epochs;
    c.batch_size = batch;
    c.patience = epochs;
    return c;
}

}  // namespace

TEST_CASE("plain loss evaluators") {
    const std::vector<float> y{0.1f, 0.2f, 0.3f}, t{0.1f, 0.2f, 0.3f}, o{0.6f, 0.7f, 0.8f};
    CHECK(loss_hdr(y, t) == 0.0);
    CHECK(loss_hdr(o, t) == doctest::Approx(0.5));
    CHECK(loss_theta(std::vector<double>{0.1}, std::vector<double>{0.0}) == doctest::Approx(0.01));
    CHECK(loss_theta(std::vector<double>{0.1, 0.5}, std::vector<double>{0.0, 0.2}) ==
          doctest::Approx((0.01 + 0.09) / 2));
    LossWeights w;
    CHECK(combine_losses(1.0, 0.5, 2.0, w) == doctest::Approx(1.25));
    CHECK(combine_losses(1.0, 0.5, 2.0, LossWeights{0.0, 0.0}) == 1.0);

    Rng r(2);
    std::vector<float> a(1000), b(1000);
    double naive = 0;
    for (int i = 0; i < 1000; ++i) {
        a[i] = float(r.uniform());
        b[i] = float(r.uniform());
        naive += std::abs(double(a[i]) - double(b[i]));
    }
    CHECK(std::abs(loss_hdr(a, b) - naive / 1000) < 1e-10);
}

TEST_CASE("tape losses agree with evaluators") {
    const TransportMatrix& tr = tiny_t();
    Rng r(4);
    Tensor<float> y({2, 3, 32, 64}), t({2, 3, 32, 64});
    for (auto& v : y.data) v = float(r.uniform());
    for (auto& v : t.data) v = float(r.uniform());
    Tape<float> tape;
    const MatrixRM<float>& m = tr.weights;
    const Var yv = tape.constant(y), tv = tape.constant(t);
    CHECK(tape.value(loss_hdr(tape, yv, tv)).data[0] == doctest::Approx(loss_hdr(y.data, t.data)).epsilon(1e-6));
    const double lr = tape.value(loss_render(tape, yv, tv, m, RenderLossDomain::tonemapped, {}, RenderLossForm::l2)).data[0];
    const std::size_t per = 3 * 32 * 64;
    double oracle = 0;
    for (int n = 0; n < 2; ++n)
        oracle += loss_render(from_chw({y.data.data() + n * per, per}, 64, 32),
                              from_chw({t.data.data() + n * per, per}, 64, 32), tr, RenderLossForm::l2);
    CHECK(lr == doctest::Approx(oracle / 2).epsilon(1e-5));
    const double lm = tape.value(loss_render(tape, yv, tv, m, RenderLossDomain::tonemapped, {}, RenderLossForm::mse)).data[0];
    double oracle_mse = 0;
    for (int n = 0; n < 2; ++n)
        oracle_mse += loss_render(from_chw({y.data.data() + n * per, per}, 64, 32),
                                  from_chw({t.data.data() + n * per, per}, 64, 32), tr, RenderLossForm::mse);
    CHECK(lm == doctest::Approx(oracle_mse / 2).epsilon(1e-5));
    const double lrms = tape.value(loss_render(tape, yv, tv, m, RenderLossDomain::tonemapped, {}, RenderLossForm::rms)).data[0];
    double oracle_rms = 0;
    for (int n = 0; n < 2; ++n)
        oracle_rms += loss_render(from_chw({y.data.data() + n * per, per}, 64, 32),
                                  from_chw({t.data.data() + n * per, per}, 64, 32), tr, RenderLossForm::rms);
    CHECK(lrms == doctest::Approx(oracle_rms / 2).epsilon(1e-5));
    CHECK(tape.value(loss_render(tape, yv, yv, m)).data[0] == 0.0f);
    // the bottom hemisphere is invisible to the render loss
    Tensor<float> low = y;
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c)
            for (int k = 16 * 64; k < 32 * 64; ++k) low.data[(n * 3 + c) * 32 * 64 + k] += 1.0f;
    CHECK(tape.value(loss_render(tape, tape.constant(low), yv, m)).data[0] == 0.0f);

    const Var th = tape.constant(Tensor<float>({2, 1}, {0.1f, 0.2f}));
    const auto terms = loss_all(tape, yv, tv, th, th, static_cast<const MatrixRM<float>*>(nullptr), LossWeights{});
    CHECK(tape.value(terms.render).data[0] == 0.0f);
    CHECK(tape.value(terms.all).data[0] == doctest::Approx(tape.value(terms.hdr).data[0]));
}

TEST_CASE("render domains") {
    CHECK(parse_render_domain("linear") == RenderLossDomain::linear);
    CHECK(to_string(parse_render_domain("tonemapped")) == "tonemapped");
    CHECK_THROWS_AS(parse_render_domain("log"), UsageError);
    CHECK(parse_render_form("mse") == RenderLossForm::mse);
    CHECK(to_string(parse_render_form("l2")) == "l2");
    CHECK(to_string(parse_render_form("rms")) == "rms");
    CHECK_THROWS_AS(parse_render_form("l1"), UsageError);
}

TEST_CASE("adam") {
    AdamConfig cfg;
    float w = 1.0f, g = 0.0f, m = 0.0f, v = 0.0f;
    adam_update(&w, &g, &m, &v, 1, 1, cfg);
    CHECK(w == 1.0f);
    g = 0.37f;
    adam_update(&w, &g, &m, &v, 1, 1, cfg);
    CHECK(1.0f - w == doctest::Approx(cfg.lr).epsilon(1e-4));
    cfg.lr = 0.1;
    float x = 0.0f;
    m = v = 0.0f;
    for (long t = 1; t <= 200; ++t) {
        float grad = 2.0f * (x - 3.0f);
        adam_update(&x, &grad, &m, &v, 1, t, cfg);
    }
    CHECK(std::abs(x - 3.0f) < 0.1f);
}

TEST_CASE("overfit smoke test") {
    const Dataset tr = random_set(1, 8, 0), va = random_set(2, 4, 100);
    TrainConfig cfg = quick(300, 8);
    cfg.adam.lr = 3e-3;
    const TrainResult res = train(init_params(tiny(), 1), tr, va, &tiny_t(), cfg);
    const double first = res.log.front().m.loss_all;
    double last = res.log[res.log.size() - 2].m.loss_all;
    CHECK(res.log[res.log.size() - 2].split == "train");
    CHECK(last < 0.1 * first);
}

TEST_CASE("determinism, early stopping and logs") {
    const Dataset tr = random_set(1, 12, 0), va = random_set(2, 4, 100);
    TrainConfig cfg = quick(3, 4);
    const TrainResult a = train(init_params(tiny(), 1), tr, va, &tiny_t(), cfg);
    const TrainResult b = train(init_params(tiny(), 1), tr, va, &tiny_t(), cfg);
    CHECK(training_log_csv(a.log) == training_log_csv(b.log));
    CHECK(a.best == b.best);
    CHECK(a.epochs_run == 3);
    CHECK(training_log_csv(a.log).rfind("epoch,split,loss_hdr,loss_theta,loss_render,loss_all,e_hdr,e_theta,e_sun,e_render\n", 0) == 0);

    cfg = quick(0, 4);
    const ModelParams init = init_params(tiny(), 1);
    const TrainResult none = fine_tune(init, tr, va, &tiny_t(), cfg);
    CHECK(none.best == init);
    CHECK(none.best_epoch == 0);

    cfg = quick(40, 4);
    cfg.patience = 0;
    cfg.adam.lr = 0.05;
    const TrainResult p0 = train(init, tr, va, &tiny_t(), cfg);
    double best = 1e300;
    int stop = 0;
    for (const auto& rec : p0.log) {
        if (rec.split != "val") continue;
        if (rec.m.loss_all < best) {
            best = rec.m.loss_all;
        } else {
            stop = rec.epoch;
            break;
        }
    }
    CHECK(p0.epochs_run == (stop ? stop : 40));
}

TEST_CASE("group disjointness") {
    const Dataset a = random_set(1, 4, 0), b = random_set(2, 4, 3);
    CHECK_THROWS_AS(check_disjoint_groups(a, b), DataError);
    CHECK_THROWS_AS(train(init_params(tiny(), 1), a, b, nullptr, quick(1, 2)), DataError);
    CHECK_NOTHROW(check_disjoint_groups(a, random_set(2, 4, 10)));
}

TEST_CASE("fine-tuning improves the target domain") {
    const Dataset src = random_set(1, 16, 0), src_val = random_set(2, 4, 100);
    Dataset tgt = random_set(3, 16, 200), tgt_val = random_set(4, 4, 300);
    for (Dataset* d : {&tgt, &tgt_val})
        for (auto& s : d->samples)
            for (std::size_t k = 0; k < s.input.size(); ++k) s.target_tm[k] = 0.9f * s.input[k];
    const TrainResult pre = train(init_params(tiny(), 1), src, src_val, &tiny_t(), quick(20, 8));
    TrainConfig ft = TrainConfig::fine_tune_defaults();
    CHECK(ft.adam.lr == doctest::Approx(1e-4));
    ft.adam.lr = 1e-3;
    ft.epochs = 20;
    ft.batch_size = 8;
    const TrainResult post = fine_tune(pre.best, tgt, tgt_val, &tiny_t(), ft);
    const double before = evaluate_split(pre.best, tgt_val, &tiny_t(), ft).loss_all;
    CHECK(post.best_val < before);
}

TEST_CASE("domain adaptation with zero reversal matches plain training") {
    const Dataset syn = random_set(1, 12, 0), va = random_set(2, 4, 100);
    const Dataset real = random_set(5, 10, 500, false);
    TrainConfig plain = quick(3, 2);
    const TrainResult a = train(init_params(tiny(true), 1), syn, va, &tiny_t(), plain);
    TrainConfig da = quick(3, 4);
    da.lambda_grl = 0.0;
    da.disc_lr = 0.0;
    const TrainResult b = train_domain_adapted(init_params(tiny(true), 1), syn, real, va, &tiny_t(), da);
    CHECK(training_log_csv(a.log) == training_log_csv(b.log));
    CHECK(a.best == b.best);

    da.lambda_grl = 1.0;
    da.disc_lr = -1.0;
    const TrainResult c = train_domain_adapted(init_params(tiny(true), 1), syn, real, va, &tiny_t(), da);
    CHECK(!(c.best == a.best));
    CHECK_THROWS_AS(train_domain_adapted(init_params(tiny(false), 1), syn, real, va, &tiny_t(), da), UsageError);
}

TEST_CASE("discriminator learns a colour difference") {
    // Frozen random encoder, two domains that differ in mean colour.
    NetConfig c = tiny(true);
    ModelParams p = init_params(c, 3);
    Dataset a = random_set(1, 16, 0), b = random_set(2, 16, 100);
    for (auto& s : a.samples)
        for (std::size_t k = 0; k < s.input.size() / 3; ++k) s.input[k] = 0.1f;
    for (auto& s : b.samples)
        for (std::size_t k = 0; k < s.input.size() / 3; ++k) s.input[k] = 0.9f;
    Tensor<float> x({32, 3, 32, 64});
    for (int i = 0; i < 32; ++i) {
        const auto& src = i < 16 ? a.samples[i].input : b.samples[i - 16].input;
        std::copy(src.begin(), src.end(), x.data.begin() + std::ptrdiff_t(i) * 3 * 32 * 64);
    }
    std::vector<int> labels(32, 0);
    std::fill(labels.begin() + 16, labels.end(), 1);
    AdamState st;
    AdamConfig ac;
    ac.lr = 1e-2;
    double acc = 0;
    for (int step = 0; step < 100; ++step) {
        Tape<float> t;
        auto bound = bind(t, p);
        const auto o = forward(t, bound, p, t.constant(x), Mode::infer);
        const Var logits = forward_domain(t, bound, p, o.latent, 1.0f);
        t.backward(t.softmax_xent(logits, labels));
        std::vector<Tensor<float>> grads;
        for (std::size_t k = 0; k < p.blocks.size(); ++k)
            grads.push_back(bound.vars[k].valid() && t.requires_grad(bound.vars[k]) ? t.grad(bound.vars[k])
                                                                                   : Tensor<float>());
        adam_step(p, grads, st, ac, [](const std::string& n) { return n.rfind("disc", 0) == 0 ? 1.0 : 0.0; });
        int right = 0;
        for (int i = 0; i < 32; ++i) right += (t.value(logits).data[2 * i + 1] > t.value(logits).data[2 * i]) == (i >= 16);
        acc = right / 32.0;
    }
    CHECK(acc > 0.5);
}
