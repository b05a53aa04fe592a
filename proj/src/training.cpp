#include "skyhdr/training.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>

#include "skyhdr/error.hpp"
#include "skyhdr/eval.hpp"
#include "skyhdr/pano_io.hpp"
#include "skyhdr/rng.hpp"

namespace skyhdr {

using ad::Mode;
using ad::Tape;
using ad::Tensor;
using ad::Var;

void LossWeights::validate() const {
    if (!(lambda_theta >= 0.0) || !(lambda_render >= 0.0))
        throw UsageError("loss weights must be non-negative");
}

RenderLossDomain parse_render_domain(const std::string& s) {
    if (s == "tonemapped") return RenderLossDomain::tonemapped;
    if (s == "linear") return RenderLossDomain::linear;
    throw UsageError("render loss domain must be 'tonemapped' or 'linear', got '" + s + "'");
}

std::string to_string(RenderLossDomain d) {
    return d == RenderLossDomain::tonemapped ? "tonemapped" : "linear";
}

RenderLossForm parse_render_form(const std::string& s) {
    if (s == "l2") return RenderLossForm::l2;
    if (s == "rms") return RenderLossForm::rms;
    if (s == "mse") return RenderLossForm::mse;
    throw UsageError("render loss form must be l2, rms or mse, got '" + s + "'");
}

std::string to_string(RenderLossForm f) {
    switch (f) {
        case RenderLossForm::l2: return "l2";
        case RenderLossForm::rms: return "rms";
        case RenderLossForm::mse: return "mse";
    }
    return "?";
}

bool Dataset::labelled() const {
    for (const auto& s : samples)
        if (s.target_tm.empty()) return false;
    return true;
}

std::vector<float> to_chw(const FloatImage& img) {
    const int w = img.width(), h = img.height();
    std::vector<float> out(std::size_t(3) * w * h);
    for (int c = 0; c < 3; ++c)
        for (int r = 0; r < h; ++r)
            for (int x = 0; x < w; ++x) out[(std::size_t(c) * h + r) * w + x] = img(r, x, c);
    return out;
}

FloatPanorama from_chw(std::span<const float> chw, int width, int height) {
    if (chw.size() != std::size_t(3) * width * height) throw DataError("CHW buffer size mismatch");
    FloatPanorama out(width, height);
    for (int c = 0; c < 3; ++c)
        for (int r = 0; r < height; ++r)
            for (int x = 0; x < width; ++x)
                out(r, x, c) = chw[(std::size_t(c) * height + r) * width + x];
    return out;
}

std::vector<float> normalize_ldr(const LdrPanorama& ldr) {
    FloatImage f(ldr.width(), ldr.height());
    auto src = ldr.values();
    auto dst = f.values();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = float(src[i]) / 255.0f;
    return to_chw(f);
}

Sample make_sample(const LdrPanorama& ldr, const HdrPanorama& hdr, double elevation,
                   std::string id, int group, const TonemapParams& tp) {
    if (ldr.width() != hdr.width() || ldr.height() != hdr.height())
        throw DataError("LDR and HDR panoramas differ in size");
    Sample s;
    s.id = std::move(id);
    s.group = group;
    s.input = normalize_ldr(ldr);
    s.target_tm = to_chw(tonemap(hdr, tp));
    s.elevation = float(elevation);
    return s;
}

// ---------------------------------------------------------------- losses

template <typename T>
Var loss_hdr(Tape<T>& tape, Var y, Var t) {
    return tape.l1(y, t);
}

template <typename T>
Var loss_theta(Tape<T>& tape, Var y, Var t) {
    return tape.mse(y, t);
}

namespace {

template <typename T>
Var render_residual(Tape<T>& tape, Var y, Var t, const ad::MatrixRM<T>& transport,
                    RenderLossDomain domain, const TonemapParams& tp) {
    const int h = tape.value(y).dim(2);
    Var yt = tape.slice_rows(y, 0, h / 2);
    Var tt = tape.slice_rows(t, 0, h / 2);
    if (domain == RenderLossDomain::linear) {
        yt = tape.power_scaled(yt, T(tp.alpha), T(tp.gamma));
        tt = tape.power_scaled(tt, T(tp.alpha), T(tp.gamma));
    }
    return tape.matmul_const(tape.sub(yt, tt), transport);
}

template <typename T>
Var reduce_render(Tape<T>& tape, Var r, RenderLossForm form) {
    const Var zero = tape.constant(Tensor<T>(tape.value(r).shape));
    if (form == RenderLossForm::mse) return tape.mse(r, zero);
    const Var n = tape.l2_norm(r, zero);
    if (form == RenderLossForm::l2) return n;
    const auto& v = tape.value(r);
    return tape.scale(n, T(1.0 / std::sqrt(double(v.size() / std::size_t(v.dim(0))))));
}

}  // namespace

template <typename T>
Var loss_render(Tape<T>& tape, Var y, Var t, const ad::MatrixRM<T>& transport,
                RenderLossDomain domain, const TonemapParams& tp, RenderLossForm form) {
    return reduce_render(tape, render_residual(tape, y, t, transport, domain, tp), form);
}

template <typename T>
LossTerms<T> loss_all(Tape<T>& tape, Var y_hdr, Var t_hdr, Var y_theta, Var t_theta,
                      const ad::MatrixRM<T>* transport, const LossWeights& w,
                      RenderLossDomain domain, const TonemapParams& tp, RenderLossForm form) {
    LossTerms<T> l;
    l.hdr = loss_hdr(tape, y_hdr, t_hdr);
    l.theta = loss_theta(tape, y_theta, t_theta);
    if (transport) {
        l.render_residual = render_residual(tape, y_hdr, t_hdr, *transport, domain, tp);
        l.render = reduce_render(tape, l.render_residual, form);
    } else {
        l.render = tape.constant(Tensor<T>({1}));
    }
    l.all = tape.add(tape.add(l.hdr, tape.scale(l.theta, T(w.lambda_theta))),
                     tape.scale(l.render, T(w.lambda_render)));
    return l;
}

#define SKYHDR_INSTANTIATE_LOSSES(T)                                                            \
    template Var loss_hdr(Tape<T>&, Var, Var);                                                  \
    template Var loss_theta(Tape<T>&, Var, Var);                                                \
    template Var loss_render(Tape<T>&, Var, Var, const ad::MatrixRM<T>&, RenderLossDomain,      \
                             const TonemapParams&, RenderLossForm);                             \
    template LossTerms<T> loss_all(Tape<T>&, Var, Var, Var, Var, const ad::MatrixRM<T>*,        \
                                   const LossWeights&, RenderLossDomain, const TonemapParams&,  \
                                   RenderLossForm);
SKYHDR_INSTANTIATE_LOSSES(float)
SKYHDR_INSTANTIATE_LOSSES(double)
#undef SKYHDR_INSTANTIATE_LOSSES

double loss_hdr(std::span<const float> y, std::span<const float> t) {
    if (y.size() != t.size() || y.empty()) throw DataError("loss_hdr size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += std::abs(double(y[i]) - double(t[i]));
    return s / double(y.size());
}

double loss_theta(std::span<const double> y, std::span<const double> t) {
    if (y.size() != t.size() || y.empty()) throw DataError("loss_theta size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - t[i]) * (y[i] - t[i]);
    return s / double(y.size());
}

double loss_render(const FloatPanorama& y_tm, const FloatPanorama& t_tm, const TransportMatrix& tr,
                   RenderLossForm form) {
    const FloatImage a = render(tr, y_tm);
    const FloatImage b = render(tr, t_tm);
    double s = 0.0;
    for (std::size_t i = 0; i < a.values().size(); ++i) {
        const double d = double(a.values()[i]) - double(b.values()[i]);
        s += d * d;
    }
    const double m = double(a.values().size());
    switch (form) {
        case RenderLossForm::l2: return std::sqrt(s);
        case RenderLossForm::rms: return std::sqrt(s / m);
        case RenderLossForm::mse: break;
    }
    return s / m;
}

double combine_losses(double hdr, double theta, double render, const LossWeights& w) {
    return hdr + w.lambda_theta * theta + w.lambda_render * render;
}

// ---------------------------------------------------------------- Adam

void adam_update(float* w, const float* g, float* m, float* v, std::size_t n, long t,
                 const AdamConfig& cfg) {
    const double c1 = 1.0 - std::pow(cfg.beta1, double(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, double(t));
    for (std::size_t i = 0; i < n; ++i) {
        const double gi = g[i];
        const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
        const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
        m[i] = float(mi);
        v[i] = float(vi);
        w[i] = float(w[i] - cfg.lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps));
    }
}

void adam_step(ModelParams& params, const std::vector<Tensor<float>>& grads, AdamState& state,
               const AdamConfig& cfg, const std::function<double(const std::string&)>& lr_scale) {
    if (grads.size() != params.blocks.size()) throw UsageError("gradient list does not match parameters");
    if (state.m.empty()) {
        for (const auto& b : params.blocks) {
            state.m.emplace_back(b.trainable ? b.value.size() : 0, 0.0f);
            state.v.emplace_back(b.trainable ? b.value.size() : 0, 0.0f);
        }
    }
    ++state.step;
    for (std::size_t i = 0; i < params.blocks.size(); ++i) {
        auto& b = params.blocks[i];
        if (!b.trainable) continue;
        if (grads[i].size() != b.value.size())
            throw UsageError("missing gradient for block '" + b.name + "'");
        AdamConfig c = cfg;
        if (lr_scale) c.lr *= lr_scale(b.name);
        if (c.lr == 0.0) continue;
        adam_update(b.value.data.data(), grads[i].data.data(), state.m[i].data(),
                    state.v[i].data(), b.value.size(), state.step, c);
    }
}

// ---------------------------------------------------------------- training

void TrainConfig::validate() const {
    if (batch_size < 1) throw UsageError("minibatch size must be >= 1");
    if (!(adam.lr > 0.0)) throw UsageError("learning rate must be > 0");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0))
        throw UsageError("Adam betas must lie in [0, 1)");
    if (!(adam.eps > 0.0)) throw UsageError("Adam epsilon must be > 0");
    if (epochs < 0) throw UsageError("epoch budget must be >= 0");
    if (patience < 0) throw UsageError("patience must be >= 0");
    if (!(lambda_grl >= 0.0)) throw UsageError("gradient reversal weight must be >= 0");
    weights.validate();
    tonemap.validate();
}

TrainConfig TrainConfig::fine_tune_defaults() {
    TrainConfig c;
    c.adam.lr = 1e-4;
    return c;
}

void check_disjoint_groups(const Dataset& a, const Dataset& b) {
    std::set<int> ga;
    for (const auto& s : a.samples) ga.insert(s.group);
    for (const auto& s : b.samples)
        if (ga.count(s.group))
            throw DataError("scene group " + std::to_string(s.group) +
                            " appears in both training and validation data");
}

namespace {

constexpr std::uint64_t kShuffleStream = 10;
constexpr std::uint64_t kRealStream = 11;

Tensor<float> gather_inputs(const Dataset& d, std::span<const std::size_t> idx) {
    const std::size_t per = std::size_t(3) * d.height * d.width;
    Tensor<float> t({int(idx.size()), 3, d.height, d.width});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto& src = d.samples[idx[i]].input;
        if (src.size() != per) throw DataError("sample '" + d.samples[idx[i]].id + "' has wrong size");
        std::copy(src.begin(), src.end(), t.data.begin() + std::ptrdiff_t(i * per));
    }
    return t;
}

Tensor<float> gather_targets(const Dataset& d, std::span<const std::size_t> idx) {
    const std::size_t per = std::size_t(3) * d.height * d.width;
    Tensor<float> t({int(idx.size()), 3, d.height, d.width});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto& src = d.samples[idx[i]].target_tm;
        if (src.size() != per) throw DataError("sample '" + d.samples[idx[i]].id + "' has no HDR target");
        std::copy(src.begin(), src.end(), t.data.begin() + std::ptrdiff_t(i * per));
    }
    return t;
}

Tensor<float> gather_elevations(const Dataset& d, std::span<const std::size_t> idx) {
    Tensor<float> t({int(idx.size()), 1});
    for (std::size_t i = 0; i < idx.size(); ++i) t.data[i] = d.samples[idx[i]].elevation;
    return t;
}

double peak_of_chw(const float* chw, int h, int w) {
    const std::size_t plane = std::size_t(h) * w;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < plane; ++p)
        best = std::max(best, (double(chw[p]) + chw[p + plane] + chw[p + 2 * plane]) / 3.0);
    return best;
}

struct Accum {
    double n = 0, hdr = 0, theta = 0, render = 0, all = 0, sun_sq = 0, render_sq = 0;
};

void check_finite(double v, int epoch, std::size_t batch) {
    if (!std::isfinite(v))
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch));
}

std::vector<Tensor<float>> collect_grads(const Tape<float>& tape, const Bound<float>& b) {
    std::vector<Tensor<float>> g(b.vars.size());
    for (std::size_t i = 0; i < b.vars.size(); ++i)
        if (b.vars[i].valid()) g[i] = tape.grad(b.vars[i]);
    return g;
}

bool is_disc(const std::string& name) { return name.rfind("disc", 0) == 0; }

/// Task forward + losses on one labelled batch; accumulates statistics.
LossTerms<float> task_losses(Tape<float>& tape, Bound<float>& bound, const ModelParams& p,
                             const Dataset& d, std::span<const std::size_t> idx,
                             const TransportMatrix* tr, const TrainConfig& cfg, Accum& acc,
                             NetOutputs<float>* outputs = nullptr) {
    const Var x = tape.constant(gather_inputs(d, idx));
    auto out = forward(tape, bound, p, x, Mode::train);
    const Var t = tape.constant(gather_targets(d, idx));
    const Var th = tape.constant(gather_elevations(d, idx));
    auto l = loss_all(tape, out.hdr, t, out.elevation, th, tr ? &tr->weights : nullptr,
                      cfg.weights, cfg.render_domain, cfg.tonemap, cfg.render_form);
    const double n = double(idx.size());
    acc.n += n;
    acc.hdr += n * tape.value(l.hdr).data[0];
    acc.theta += n * tape.value(l.theta).data[0];
    acc.render += n * tape.value(l.render).data[0];
    acc.all += n * tape.value(l.all).data[0];
    const std::size_t per = std::size_t(3) * d.height * d.width;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const double dp = peak_of_chw(tape.value(out.hdr).data.data() + i * per, d.height, d.width) -
                          peak_of_chw(tape.value(t).data.data() + i * per, d.height, d.width);
        acc.sun_sq += dp * dp;
    }
    if (tr && cfg.render_domain == RenderLossDomain::tonemapped) {
        const auto& r = tape.value(l.render_residual).data;
        const std::size_t m = r.size() / idx.size();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            double s = 0.0;
            for (std::size_t k = 0; k < m; ++k) s += double(r[i * m + k]) * double(r[i * m + k]);
            acc.render_sq += s / double(m);
        }
    } else if (tr) {
        std::vector<FloatPanorama> yp, tp;
        for (std::size_t i = 0; i < idx.size(); ++i) {
            yp.push_back(from_chw({tape.value(out.hdr).data.data() + i * per, per}, d.width, d.height));
            tp.push_back(from_chw({tape.value(t).data.data() + i * per, per}, d.width, d.height));
        }
        for (double e : render_rms_batch(*tr, yp, tp)) acc.render_sq += e * e;
    }
    if (outputs) *outputs = out;
    return l;
}

SplitMetrics finish(const Accum& a) {
    SplitMetrics m;
    m.loss_hdr = a.hdr / a.n;
    m.loss_theta = a.theta / a.n;
    m.loss_render = a.render / a.n;
    m.loss_all = a.all / a.n;
    m.e_hdr = 100.0 * m.loss_hdr;
    m.e_theta = std::sqrt(m.loss_theta);
    m.e_sun = std::sqrt(a.sun_sq / a.n);
    m.e_render = std::sqrt(a.render_sq / a.n);
    return m;
}

void require_trainable(const Dataset& train_set, const Dataset& val_set, const ModelParams& p) {
    if (train_set.empty()) throw DataError("training set is empty");
    if (val_set.empty()) throw DataError("validation set is empty");
    if (!train_set.labelled() || !val_set.labelled())
        throw DataError("training and validation samples need HDR targets");
    if (train_set.height != p.config.input_height || train_set.width != p.config.input_width)
        throw DataError("dataset resolution does not match the network input");
    check_disjoint_groups(train_set, val_set);
}

/// Shared epoch driver. step(order_slice, epoch, batch_index, acc) performs
/// one optimizer step.
template <typename Step>
TrainResult run_epochs(const ModelParams& init, const Dataset& train_set, const Dataset& val_set,
                       const TransportMatrix* tr, const TrainConfig& cfg, int batch,
                       const EpochCallback& on_epoch, ModelParams& live, Step&& step) {
    TrainResult res;
    res.best = init;
    res.best_val = std::numeric_limits<double>::infinity();
    Rng shuffle_rng = Rng::stream(cfg.seed, kShuffleStream);
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    int stale = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        Accum acc;
        std::size_t b = 0;
        for (std::size_t start = 0; start < order.size(); start += std::size_t(batch), ++b) {
            const std::size_t end = std::min(order.size(), start + std::size_t(batch));
            step(std::span<const std::size_t>(order.data() + start, end - start), epoch, b, acc);
        }
        EpochRecord tr_rec{epoch, "train", finish(acc)};
        EpochRecord val_rec{epoch, "val", evaluate_split(live, val_set, tr, cfg)};
        check_finite(val_rec.m.loss_all, epoch, b);
        res.log.push_back(tr_rec);
        res.log.push_back(val_rec);
        res.epochs_run = epoch;
        if (on_epoch) {
            on_epoch(tr_rec);
            on_epoch(val_rec);
        }
        if (val_rec.m.loss_all < res.best_val) {
            res.best_val = val_rec.m.loss_all;
            res.best_epoch = epoch;
            res.best = live;
            stale = 0;
        } else if (++stale > cfg.patience) {
            break;
        }
    }
    if (res.best_epoch == 0) res.best_val = evaluate_split(init, val_set, tr, cfg).loss_all;
    return res;
}

}  // namespace

SplitMetrics evaluate_split(const ModelParams& params, const Dataset& data,
                            const TransportMatrix* transport, const TrainConfig& cfg) {
    if (data.empty()) throw DataError("cannot evaluate an empty dataset");
    const int chunk = 32;
    Accum acc;
    double render_sq = 0.0;
    for (std::size_t start = 0; start < data.size(); start += chunk) {
        const std::size_t end = std::min(data.size(), start + chunk);
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < end; ++i) idx.push_back(i);
        Tape<float> tape;
        Bound<float> bound = bind(tape, params);
        const Var x = tape.constant(gather_inputs(data, idx));
        const auto out = forward(tape, bound, params, x, Mode::infer);
        const std::size_t per = std::size_t(3) * data.height * data.width;
        const auto& yv = tape.value(out.hdr).data;
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const Sample& s = data.samples[idx[i]];
            if (s.target_tm.size() != per) throw DataError("sample '" + s.id + "' has no HDR target");
            const std::span<const float> y(yv.data() + i * per, per);
            const double dt = double(tape.value(out.elevation).data[i]) - double(s.elevation);
            acc.n += 1;
            acc.hdr += loss_hdr(y, s.target_tm);
            acc.theta += dt * dt;
            const double dp = peak_of_chw(y.data(), data.height, data.width) -
                              peak_of_chw(s.target_tm.data(), data.height, data.width);
            acc.sun_sq += dp * dp;
            if (transport) {
                FloatPanorama yp = from_chw(y, data.width, data.height);
                FloatPanorama tp = from_chw(s.target_tm, data.width, data.height);
                if (cfg.render_domain == RenderLossDomain::linear) {
                    const HdrPanorama yl = inverse_tonemap(yp, cfg.tonemap);
                    const HdrPanorama tl = inverse_tonemap(tp, cfg.tonemap);
                    acc.render += loss_render(FloatPanorama(yl), FloatPanorama(tl), *transport, cfg.render_form);
                    render_sq += std::pow(metrics_tonemapped(yp, tp, 0, 0, transport).e_render, 2);
                } else {
                    const double l = loss_render(yp, tp, *transport, RenderLossForm::mse);
                    acc.render += cfg.render_form == RenderLossForm::mse  ? l
                                  : cfg.render_form == RenderLossForm::rms ? std::sqrt(l)
                                                                           : std::sqrt(l * 3.0 * double(transport->rows()));
                    render_sq += l;
                }
            }
        }
    }
    acc.all = combine_losses(acc.hdr, acc.theta, acc.render, cfg.weights);
    SplitMetrics m = finish(acc);
    m.e_render = std::sqrt(render_sq / acc.n);
    return m;
}

TrainResult train(const ModelParams& init, const Dataset& train_set, const Dataset& val_set,
                  const TransportMatrix* transport, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
    cfg.validate();
    require_trainable(train_set, val_set, init);
    ModelParams live = init;
    AdamState adam;
    const auto lr_scale = [](const std::string& name) { return is_disc(name) ? 0.0 : 1.0; };
    return run_epochs(init, train_set, val_set, transport, cfg, cfg.batch_size, on_epoch, live,
                      [&](std::span<const std::size_t> idx, int epoch, std::size_t b, Accum& acc) {
                          Tape<float> tape;
                          Bound<float> bound = bind(tape, live);
                          const auto l = task_losses(tape, bound, live, train_set, idx, transport,
                                                     cfg, acc);
                          check_finite(tape.value(l.all).data[0], epoch, b);
                          tape.backward(l.all);
                          adam_step(live, collect_grads(tape, bound), adam, cfg.adam, lr_scale);
                          write_back_stats(live, bound);
                      });
}

TrainResult fine_tune(const ModelParams& init, const Dataset& train_set, const Dataset& val_set,
                      const TransportMatrix* transport, const TrainConfig& cfg,
                      const EpochCallback& on_epoch) {
    return train(init, train_set, val_set, transport, cfg, on_epoch);
}

TrainResult train_domain_adapted(const ModelParams& init, const Dataset& synthetic,
                                 const Dataset& real, const Dataset& val_set,
                                 const TransportMatrix* transport, const TrainConfig& cfg,
                                 const EpochCallback& on_epoch) {
    cfg.validate();
    require_trainable(synthetic, val_set, init);
    if (!init.config.with_discriminator)
        throw UsageError("domain adaptation needs a network with a discriminator");
    if (real.empty()) throw DataError("real (unlabelled) set is empty");
    if (cfg.batch_size < 2) throw UsageError("domain adaptation needs a minibatch of at least 2");
    const int half = cfg.batch_size / 2;
    ModelParams live = init;
    AdamState adam;
    const double disc_scale = cfg.disc_lr < 0.0 ? 1.0 : cfg.disc_lr / cfg.adam.lr;
    const auto lr_scale = [disc_scale](const std::string& name) {
        return is_disc(name) ? disc_scale : 1.0;
    };
    Rng real_rng = Rng::stream(cfg.seed, kRealStream);
    std::vector<std::size_t> real_order(real.size());
    for (std::size_t i = 0; i < real_order.size(); ++i) real_order[i] = i;
    real_rng.shuffle(real_order);
    std::size_t real_pos = 0;

    return run_epochs(
        init, synthetic, val_set, transport, cfg, half, on_epoch, live,
        [&](std::span<const std::size_t> idx, int epoch, std::size_t b, Accum& acc) {
            std::vector<std::size_t> ridx;
            while (ridx.size() < idx.size()) {
                if (real_pos == real_order.size()) {
                    real_rng.shuffle(real_order);
                    real_pos = 0;
                }
                ridx.push_back(real_order[real_pos++]);
            }
            Tape<float> tape;
            Bound<float> bound = bind(tape, live);
            NetOutputs<float> syn;
            const auto l = task_losses(tape, bound, live, synthetic, idx, transport, cfg, acc, &syn);
            // The real half must not move the running statistics.
            bound.update_stats = false;
            const Var xr = tape.constant(gather_inputs(real, ridx));
            const auto rout = forward(tape, bound, live, xr, Mode::train);
            bound.update_stats = true;
            const float lam = float(cfg.lambda_grl);
            const Var ls = tape.softmax_xent(forward_domain(tape, bound, live, syn.latent, lam),
                                             std::vector<int>(idx.size(), 0));
            const Var lr = tape.softmax_xent(forward_domain(tape, bound, live, rout.latent, lam),
                                             std::vector<int>(ridx.size(), 1));
            const Var dom = tape.scale(tape.add(ls, lr), 0.5f);
            const Var total = tape.add(l.all, dom);
            check_finite(tape.value(total).data[0], epoch, b);
            tape.backward(total);
            adam_step(live, collect_grads(tape, bound), adam, cfg.adam, lr_scale);
            write_back_stats(live, bound);
        });
}

std::string training_log_csv(const std::vector<EpochRecord>& log) {
    std::string s = "epoch,split,loss_hdr,loss_theta,loss_render,loss_all,e_hdr,e_theta,e_sun,e_render\n";
    char buf[512];
    for (const auto& r : log) {
        const auto& m = r.m;
        std::snprintf(buf, sizeof buf, "%d,%s,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.epoch,
                      r.split.c_str(), m.loss_hdr, m.loss_theta, m.loss_render, m.loss_all, m.e_hdr,
                      m.e_theta, m.e_sun, m.e_render);
        s += buf;
    }
    return s;
}

void write_training_log(const std::filesystem::path& path, const std::vector<EpochRecord>& log) {
    write_file_atomic(path, training_log_csv(log));
}

std::vector<Prediction> predict(const ModelParams& params,
                                const std::vector<std::vector<float>>& inputs) {
    const int h = params.config.input_height, w = params.config.input_width;
    const std::size_t per = std::size_t(3) * h * w;
    std::vector<Prediction> out;
    const std::size_t chunk = 32;
    for (std::size_t start = 0; start < inputs.size(); start += chunk) {
        const std::size_t end = std::min(inputs.size(), start + chunk);
        Tensor<float> x({int(end - start), 3, h, w});
        for (std::size_t i = start; i < end; ++i) {
            if (inputs[i].size() != per) throw DataError("input has the wrong size for this network");
            std::copy(inputs[i].begin(), inputs[i].end(),
                      x.data.begin() + std::ptrdiff_t((i - start) * per));
        }
        Tape<float> tape;
        Bound<float> bound = bind(tape, params);
        const auto res = forward(tape, bound, params, tape.constant(std::move(x)), Mode::infer);
        const auto& yv = tape.value(res.hdr).data;
        for (std::size_t i = 0; i < end - start; ++i) {
            Prediction p;
            p.hdr_tm = from_chw(std::span<const float>(yv.data() + i * per, per), w, h);
            p.elevation = tape.value(res.elevation).data[i];
            out.push_back(std::move(p));
        }
    }
    return out;
}

}  // namespace skyhdr
