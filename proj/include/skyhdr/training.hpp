#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "skyhdr/autodiff.hpp"
#include "skyhdr/net.hpp"
#include "skyhdr/pano.hpp"
#include "skyhdr/transport.hpp"

namespace skyhdr {

struct LossWeights {
    double lambda_theta = 0.1;
    double lambda_render = 0.1;
    void validate() const;
};

enum class RenderLossDomain { tonemapped, linear };
RenderLossDomain parse_render_domain(const std::string& s);
std::string to_string(RenderLossDomain d);

/// l2: batch mean of per-sample Euclidean norms of the render difference.
/// rms: the same norm divided by sqrt(render values per sample).
/// mse: mean squared render difference.
enum class RenderLossForm { l2, rms, mse };
RenderLossForm parse_render_form(const std::string& s);
std::string to_string(RenderLossForm f);

/// One training example in network layout (CHW, float).
struct Sample {
    std::string id;
    int group = 0;
    std::vector<float> input;      ///< LDR codes / 255, sun-centred
    std::vector<float> target_tm;  ///< tonemapped HDR; empty for unlabelled data
    float elevation = 0.0f;        ///< radians
};

struct Dataset {
    int height = 64;
    int width = 128;
    std::vector<Sample> samples;

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }
    bool labelled() const;
};

std::vector<float> to_chw(const FloatImage& img);
FloatPanorama from_chw(std::span<const float> chw, int width, int height);
std::vector<float> normalize_ldr(const LdrPanorama& ldr);
Sample make_sample(const LdrPanorama& ldr, const HdrPanorama& hdr, double elevation,
                   std::string id, int group, const TonemapParams& tp = {});

// Tape-level losses. Predictions and targets are (N,3,H,W) tonemapped values.
template <typename T>
ad::Var loss_hdr(ad::Tape<T>& tape, ad::Var y, ad::Var t);
template <typename T>
ad::Var loss_theta(ad::Tape<T>& tape, ad::Var y, ad::Var t);
/// Difference of the renders of the top halves, reduced per RenderLossForm.
template <typename T>
ad::Var loss_render(ad::Tape<T>& tape, ad::Var y, ad::Var t, const ad::MatrixRM<T>& transport,
                    RenderLossDomain domain = RenderLossDomain::tonemapped,
                    const TonemapParams& tp = {}, RenderLossForm form = RenderLossForm::mse);

template <typename T>
struct LossTerms {
    ad::Var hdr, theta, render, all;
    ad::Var render_residual;  // T * (y - t) on the top half, (N, ...); invalid without T
};
/// hdr + lambda_theta * theta + lambda_render * render. Without a transport
/// matrix the render term is a constant zero.
template <typename T>
LossTerms<T> loss_all(ad::Tape<T>& tape, ad::Var y_hdr, ad::Var t_hdr, ad::Var y_theta,
                      ad::Var t_theta, const ad::MatrixRM<T>* transport, const LossWeights& w,
                      RenderLossDomain domain = RenderLossDomain::tonemapped,
                      const TonemapParams& tp = {}, RenderLossForm form = RenderLossForm::mse);

// Plain evaluators of the same quantities.
double loss_hdr(std::span<const float> y, std::span<const float> t);
double loss_theta(std::span<const double> y, std::span<const double> t);
/// Single sample.
double loss_render(const FloatPanorama& y_tm, const FloatPanorama& t_tm, const TransportMatrix& tr,
                   RenderLossForm form = RenderLossForm::mse);
double combine_losses(double hdr, double theta, double render, const LossWeights& w);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<std::vector<float>> m, v;  ///< per block
    long step = 0;
};

/// Bias-corrected Adam update of n scalars, step t >= 1.
void adam_update(float* w, const float* g, float* m, float* v, std::size_t n, long t,
                 const AdamConfig& cfg);
/// One step over every trainable block; lr_scale(block name) multiplies the
/// learning rate (0 freezes the block).
void adam_step(ModelParams& params, const std::vector<ad::Tensor<float>>& grads, AdamState& state,
               const AdamConfig& cfg,
               const std::function<double(const std::string&)>& lr_scale = {});

struct TrainConfig {
    int batch_size = 32;
    AdamConfig adam{};
    int epochs = 100;
    int patience = 10;
    LossWeights weights{};
    RenderLossDomain render_domain = RenderLossDomain::tonemapped;
    RenderLossForm render_form = RenderLossForm::mse;
    double lambda_grl = 1.0;
    double disc_lr = -1.0;  ///< negative: same as adam.lr
    std::uint64_t seed = 1;
    TonemapParams tonemap{};

    void validate() const;
    static TrainConfig fine_tune_defaults();
};

struct SplitMetrics {
    double loss_hdr = 0, loss_theta = 0, loss_render = 0, loss_all = 0;
    double e_hdr = 0, e_theta = 0, e_sun = 0, e_render = 0;
};

struct EpochRecord {
    int epoch = 0;
    std::string split;
    SplitMetrics m;
};

struct TrainResult {
    ModelParams best;
    int best_epoch = 0;  ///< 0 means the initial parameters were never beaten
    double best_val = 0.0;
    int epochs_run = 0;
    std::vector<EpochRecord> log;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Inference-mode losses and metrics over a labelled dataset.
SplitMetrics evaluate_split(const ModelParams& params, const Dataset& data,
                            const TransportMatrix* transport, const TrainConfig& cfg);

/// Shuffled minibatch Adam with validation early stopping on loss_all.
/// Returns the best-validation parameters.
TrainResult train(const ModelParams& init, const Dataset& train_set, const Dataset& val_set,
                  const TransportMatrix* transport, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

/// train() starting from existing parameters; use TrainConfig::fine_tune_defaults().
TrainResult fine_tune(const ModelParams& init, const Dataset& train_set, const Dataset& val_set,
                      const TransportMatrix* transport, const TrainConfig& cfg,
                      const EpochCallback& on_epoch = {});

/// Each minibatch holds batch_size/2 labelled synthetic and batch_size/2
/// unlabelled real samples. Task losses use the synthetic half; the domain
/// classifier sees both and feeds the encoder through gradient reversal.
TrainResult train_domain_adapted(const ModelParams& init, const Dataset& synthetic,
                                 const Dataset& real, const Dataset& val_set,
                                 const TransportMatrix* transport, const TrainConfig& cfg,
                                 const EpochCallback& on_epoch = {});

void check_disjoint_groups(const Dataset& a, const Dataset& b);

std::string training_log_csv(const std::vector<EpochRecord>& log);
void write_training_log(const std::filesystem::path& path, const std::vector<EpochRecord>& log);

/// Runs the network on one normalized LDR input (inference mode).
struct Prediction {
    FloatPanorama hdr_tm;
    double elevation = 0.0;
};
std::vector<Prediction> predict(const ModelParams& params, const std::vector<std::vector<float>>& inputs);

}  // namespace skyhdr
