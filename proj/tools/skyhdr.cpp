// Command-line front end: dataset generation, training, inference and evaluation.
#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include <json.hpp>

#include "skyhdr/config.hpp"
#include "skyhdr/datagen.hpp"
#include "skyhdr/error.hpp"
#include "skyhdr/eval.hpp"
#include "skyhdr/gradcheck.hpp"
#include "skyhdr/itmo.hpp"
#include "skyhdr/net.hpp"
#include "skyhdr/pano_io.hpp"
#include "skyhdr/parallel.hpp"
#include "skyhdr/sun_detect.hpp"
#include "skyhdr/training.hpp"
#include "skyhdr/transport.hpp"

namespace fs = std::filesystem;
using namespace skyhdr;

namespace {

struct Common {
    std::string config_file;
    std::vector<std::string> overrides;
    std::string profile = "desk";
    long long seed = -1;
    int threads = -1;
    std::string out;
};

void add_common(CLI::App* cmd, Common& c, const std::string& keys_help) {
    cmd->add_option("--config", c.config_file, "config file (section.key = value lines)");
    cmd->add_option("--set", c.overrides, "override a config key: key=value (repeatable)");
    cmd->add_option("--profile", c.profile, "base profile: desk | paper")->capture_default_str();
    cmd->add_option("--seed", c.seed, "random seed (overrides run.seed)");
    cmd->add_option("--threads", c.threads, "worker thread cap (overrides run.threads)");
    cmd->footer(keys_help);
}

Config resolve(const Common& c) {
    Config cfg = Config::standard();
    cfg.apply_profile(c.profile);
    if (!c.config_file.empty()) cfg.load_file(c.config_file);
    for (const auto& o : c.overrides) cfg.set_override(o);
    if (c.seed >= 0) cfg.set("run.seed", std::to_string(c.seed));
    if (c.threads >= 0) cfg.set("run.threads", std::to_string(c.threads));
    if (cfg.get_int("run.threads") < 0) throw UsageError("run.threads must be >= 0");
    set_thread_limit(unsigned(cfg.get_int("run.threads")));
    return cfg;
}

TonemapParams tonemap_params(const Config& cfg) {
    TonemapParams tp;
    tp.alpha = cfg.get_double("tonemap.alpha");
    tp.gamma = cfg.get_double("tonemap.gamma");
    tp.validate();
    return tp;
}

NetConfig net_config(const Config& cfg, bool discriminator) {
    NetConfig n;
    const auto w = cfg.get_ints("net.encoder_widths");
    const auto k = cfg.get_ints("net.kernels");
    if (w.size() != 4 || k.size() != 4) throw UsageError("net.encoder_widths and net.kernels need four entries");
    std::copy(w.begin(), w.end(), n.encoder_widths.begin());
    std::copy(k.begin(), k.end(), n.encoder_kernels.begin());
    n.latent_dim = cfg.get_int("net.latent");
    n.elevation_hidden = cfg.get_ints("net.elevation_hidden");
    n.domain_hidden = cfg.get_int("net.domain_hidden");
    n.with_discriminator = discriminator;
    n.validate();
    return n;
}

TrainConfig train_config(const Config& cfg) {
    TrainConfig t;
    t.batch_size = cfg.get_int("train.batch_size");
    t.adam.lr = cfg.get_double("train.lr");
    t.adam.beta1 = cfg.get_double("train.beta1");
    t.adam.beta2 = cfg.get_double("train.beta2");
    t.adam.eps = cfg.get_double("train.eps");
    t.epochs = cfg.get_int("train.epochs");
    t.patience = cfg.get_int("train.patience");
    t.weights.lambda_theta = cfg.get_double("train.lambda_theta");
    t.weights.lambda_render = cfg.get_double("train.lambda_render");
    t.render_domain = parse_render_domain(cfg.get("train.render_loss_domain"));
    t.render_form = parse_render_form(cfg.get("train.render_loss_form"));
    t.lambda_grl = cfg.get_double("train.lambda_grl");
    t.disc_lr = cfg.get_double("train.disc_lr");
    t.seed = cfg.get_u64("run.seed");
    t.tonemap = tonemap_params(cfg);
    t.validate();
    return t;
}

GenConfig gen_config(const Config& cfg) {
    GenConfig g;
    g.scenes = cfg.get_int("data.scenes");
    g.samples_per_scene = cfg.get_int("data.samples_per_scene");
    const auto f = cfg.get_doubles("data.fractions");
    if (f.size() != 3) throw UsageError("data.fractions needs three entries");
    g.fractions = {f[0], f[1], f[2]};
    g.seed = cfg.get_u64("run.seed");
    g.random_crf = cfg.get_bool("data.random_crf");
    g.hue_sigma = cfg.get_double("data.hue_sigma");
    g.sat_sigma = cfg.get_double("data.sat_sigma");
    g.max_occluders = cfg.get_int("data.max_occluders");
    g.min_saturation = cfg.get_double("data.min_saturation");
    g.validate();
    return g;
}

TransportMatrix transport(const Config& cfg) {
    SceneSpec spec;
    spec.albedo = cfg.get_double("scene.albedo");
    spec.spike_count = cfg.get_int("scene.spike_count");
    return load_or_build_transport(cfg.get("transport.cache"), spec);
}

void log_epoch(const EpochRecord& r) {
    std::fprintf(stderr, "epoch %3d %-5s loss_all %.6f  hdr %.6f  theta %.6f  render %.6f\n", r.epoch,
                 r.split.c_str(), r.m.loss_all, r.m.loss_hdr, r.m.loss_theta, r.m.loss_render);
}

void finish_training(const TrainResult& res, const fs::path& out) {
    fs::create_directories(out);
    save_checkpoint(res.best, out / "model.ckpt");
    write_training_log(out / "train_log.csv", res.log);
    std::printf("best_epoch %d\nbest_val_loss_all %.9g\n", res.best_epoch, res.best_val);
}

void write_report(const MetricReport& r, const fs::path& out) {
    fs::create_directories(out);
    write_file_atomic(out / "metrics.csv", report_csv(r));
    write_file_atomic(out / "summary.json", report_summary_json(r));
    std::printf("E_HDR %.6g  E_theta %.6g  E_sun %.6g  E_render %.6g\n", r.e_hdr.aggregate,
                r.e_theta.aggregate, r.e_sun.aggregate, r.e_render.aggregate);
}

std::vector<fs::path> sorted_files(const fs::path& dir, const std::string& ext) {
    std::vector<fs::path> v;
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ext) v.push_back(e.path());
    std::sort(v.begin(), v.end());
    return v;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"skyhdr: HDR outdoor panoramas from single LDR panoramas"};
    app.require_subcommand(1);
    const std::string keys = "\n" + Config::standard().describe_keys();

    Common c;
    std::string data, real, checkpoint, input, split = "test", baseline, pred_dir, truth_dir, day_dir, sky;
    std::string intensity = "bright";
    double elevation_deg = 30.0;
    std::size_t k = 5;
    bool day = false;

    auto* gen = app.add_subcommand("gen", "generate a dataset (or a day sequence with --day)");
    add_common(gen, c, keys);
    gen->add_option("--out", c.out, "output directory")->required();
    gen->add_flag("--day", day, "generate a single-day sequence instead of a dataset");

    auto* train = app.add_subcommand("train", "train from scratch");
    add_common(train, c, keys);
    train->add_option("--data", data, "dataset manifest")->required();
    train->add_option("--out", c.out, "output directory")->required();

    auto* finetune = app.add_subcommand("finetune", "continue training a checkpoint");
    add_common(finetune, c, keys);
    finetune->add_option("--checkpoint", checkpoint, "input checkpoint")->required();
    finetune->add_option("--data", data, "dataset manifest")->required();
    finetune->add_option("--out", c.out, "output directory")->required();

    auto* train_da = app.add_subcommand("train-da", "train with domain adaptation");
    add_common(train_da, c, keys);
    train_da->add_option("--data", data, "labelled synthetic dataset manifest")->required();
    train_da->add_option("--real", real, "manifest whose training-split LDRs form the unlabelled set")->required();
    train_da->add_option("--out", c.out, "output directory")->required();

    auto* infer = app.add_subcommand("infer", "predict an HDR panorama from an LDR panorama");
    add_common(infer, c, keys);
    infer->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    infer->add_option("--input", input, "LDR panorama (PPM)")->required();
    infer->add_option("--out", c.out, "output HDR panorama (PFM)")->required();

    auto* eval = app.add_subcommand("eval", "metric reports");
    add_common(eval, c, keys);
    eval->add_option("--out", c.out, "output directory")->required();
    eval->add_option("--checkpoint", checkpoint, "model checkpoint");
    eval->add_option("--data", data, "dataset manifest");
    eval->add_option("--split", split, "train | val | test | all")->capture_default_str();
    eval->add_option("--baseline", baseline,
                     "ldr | linear | gamma | inverse-reinhard-expand | threshold-expand | two-segment");
    eval->add_option("--pred", pred_dir, "directory of predicted PFMs");
    eval->add_option("--truth", truth_dir, "directory of ground-truth PFMs (same file names)");
    eval->add_option("--day", day_dir, "day sequence directory (temporal evaluation)");

    auto* rend = app.add_subcommand("render", "render the transport scene lit by a panorama");
    add_common(rend, c, keys);
    rend->add_option("--sky", sky, "HDR panorama (PFM)")->required();
    rend->add_option("--out", c.out, "output image (PFM)")->required();

    auto* mtch = app.add_subcommand("match", "retrieve panoramas by sun intensity and elevation");
    add_common(mtch, c, keys);
    mtch->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    mtch->add_option("--data", data, "corpus manifest")->required();
    mtch->add_option("--split", split, "train | val | test | all")->capture_default_str();
    mtch->add_option("--intensity", intensity, "bright | dim | pNN | value")->capture_default_str();
    mtch->add_option("--elevation", elevation_deg, "target sun elevation, degrees")->capture_default_str();
    mtch->add_option("--k", k, "number of results")->capture_default_str();
    mtch->add_option("--out", c.out, "also write the ids to this file");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every autodiff op");
    add_common(gc, c, keys);

    auto* bt = app.add_subcommand("build-transport", "build and cache the transport matrix");
    add_common(bt, c, keys);
    bt->add_option("--out", c.out, "cache file (overrides transport.cache)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (bt->parsed() && !c.out.empty()) c.overrides.push_back("transport.cache=" + c.out);
        const Config cfg = resolve(c);
        const TonemapParams tp = tonemap_params(cfg);

        if (gen->parsed()) {
            if (day) {
                const fs::path out = c.out;
                fs::create_directories(out / "hdr");
                fs::create_directories(out / "ldr");
                const auto frames = gen_day_sequence(cfg.get_u64("run.seed"), cfg.get_int("data.day_frames"));
                std::string csv = "frame,sun_elevation,sun_azimuth,hdr_path,ldr_path\n";
                for (std::size_t i = 0; i < frames.size(); ++i) {
                    char name[32];
                    std::snprintf(name, sizeof name, "frame_%03zu", i);
                    write_pfm(out / "hdr" / (std::string(name) + ".pfm"), frames[i].hdr);
                    write_ppm(out / "ldr" / (std::string(name) + ".ppm"), frames[i].ldr);
                    csv += std::to_string(i) + "," + fmt(frames[i].sun.elevation) + "," + fmt(frames[i].sun.azimuth) +
                           ",hdr/" + name + ".pfm,ldr/" + name + ".ppm\n";
                }
                write_file_atomic(out / "day.csv", csv);
                std::printf("frames %zu\n", frames.size());
            } else {
                const Manifest m = build_dataset(gen_config(cfg), c.out);
                std::printf("samples %zu\n", m.rows.size());
            }
        } else if (train->parsed() || train_da->parsed()) {
            const bool da = train_da->parsed();
            const TrainConfig tc = train_config(cfg);
            const Dataset tr = load_dataset(data, "train", tp);
            const Dataset va = load_dataset(data, "val", tp);
            const TransportMatrix t = transport(cfg);
            const ModelParams init = init_params(net_config(cfg, da), tc.seed);
            TrainResult res;
            if (da) {
                Dataset rl = load_dataset(real, "train", tp);
                for (auto& s : rl.samples) s.target_tm.clear();
                res = train_domain_adapted(init, tr, rl, va, &t, tc, log_epoch);
            } else {
                res = skyhdr::train(init, tr, va, &t, tc, log_epoch);
            }
            finish_training(res, c.out);
        } else if (finetune->parsed()) {
            TrainConfig tc = train_config(cfg);
            tc.adam.lr = cfg.get_double("finetune.lr");
            tc.validate();
            const ModelParams init = load_checkpoint(checkpoint);
            const TransportMatrix t = transport(cfg);
            const TrainResult res = fine_tune(init, load_dataset(data, "train", tp), load_dataset(data, "val", tp),
                                              &t, tc, log_epoch);
            finish_training(res, c.out);
        } else if (infer->parsed()) {
            const ModelParams p = load_checkpoint(checkpoint);
            const LdrPanorama ldr(read_ppm(input));
            const SunAlignment al = align_sun_center(ldr);
            const auto pred = predict(p, {normalize_ldr(al.panorama)});
            const HdrPanorama hdr = rotate_azimuth(inverse_tonemap(pred[0].hdr_tm, tp), -al.shift);
            write_pfm(c.out, hdr);
            std::printf("sun_elevation %.9g\n", pred[0].elevation);
        } else if (eval->parsed()) {
            const fs::path out = c.out;
            if (!day_dir.empty()) {
                if (checkpoint.empty()) throw UsageError("temporal evaluation needs --checkpoint");
                const ModelParams p = load_checkpoint(checkpoint);
                std::vector<LdrPanorama> frames;
                std::vector<FloatPanorama> truth;
                for (const auto& f : sorted_files(fs::path(day_dir) / "ldr", ".ppm")) {
                    frames.emplace_back(read_ppm(f));
                    const fs::path h = fs::path(day_dir) / "hdr" / (f.stem().string() + ".pfm");
                    truth.push_back(tonemap(HdrPanorama(read_pfm(h)), tp));
                }
                const TemporalResult r = temporal_eval(p, frames, truth);
                fs::create_directories(out);
                write_file_atomic(out / "temporal.csv", r.csv());
                nlohmann::ordered_json j;
                j["frames"] = r.predicted.size();
                if (r.correlation) j["spearman"] = *r.correlation;
                else j["spearman"] = r.correlation_text();
                write_file_atomic(out / "summary.json", j.dump(2) + "\n");
                std::printf("spearman %s\n", r.correlation_text().c_str());
            } else if (!pred_dir.empty() || !truth_dir.empty()) {
                if (pred_dir.empty() || truth_dir.empty()) throw UsageError("--pred and --truth go together");
                std::vector<std::string> ids;
                std::vector<FloatPanorama> pr, tr;
                for (const auto& f : sorted_files(pred_dir, ".pfm")) {
                    ids.push_back(f.stem().string());
                    pr.push_back(tonemap(HdrPanorama(read_pfm(f)), tp));
                    tr.push_back(tonemap(HdrPanorama(read_pfm(fs::path(truth_dir) / f.filename())), tp));
                }
                if (ids.empty()) throw DataError("no .pfm files in " + pred_dir);
                const std::vector<double> zero(ids.size(), 0.0);
                const TransportMatrix t = transport(cfg);
                write_report(evaluate_predictions(ids, pr, zero, tr, zero, &t), out);
            } else {
                if (data.empty()) throw UsageError("eval needs --data, --pred/--truth or --day");
                const Dataset d = load_dataset(data, split, tp);
                if (d.empty()) throw DataError("split '" + split + "' is empty");
                const TransportMatrix t = transport(cfg);
                if (!checkpoint.empty()) {
                    write_report(evaluate_model(load_checkpoint(checkpoint), d, &t), out);
                } else if (baseline == "ldr") {
                    write_report(evaluate_baseline(nullptr, d, &t, tp), out);
                } else if (!baseline.empty()) {
                    const ItmoOperator op = parse_itmo(baseline);
                    const Dataset trn = load_dataset(data, "train", tp);
                    std::vector<LdrPanorama> ldr;
                    std::vector<FloatPanorama> truth;
                    const std::size_t n = std::min(trn.size(), std::size_t(cfg.get_int("eval.cv_samples")));
                    for (std::size_t i = 0; i < n; ++i) {
                        const auto& s = trn.samples[i * trn.size() / n];
                        ldr.push_back(ldr_from_input(s.input, trn.width, trn.height));
                        truth.push_back(from_chw(s.target_tm, trn.width, trn.height));
                    }
                    const ItmoParams best = cross_validate(itmo_grid(op), ldr, truth,
                                                           parse_cv_metric(cfg.get("eval.cv_metric")), &t, tp);
                    std::printf("cross-validated %s\n", best.describe().c_str());
                    write_report(evaluate_baseline(&best, d, &t, tp), out);
                } else {
                    throw UsageError("eval on a dataset needs --checkpoint or --baseline");
                }
            }
        } else if (rend->parsed()) {
            const TransportMatrix t = transport(cfg);
            write_pfm(c.out, render(t, FloatPanorama(read_pfm(sky))));
        } else if (mtch->parsed()) {
            const ModelParams p = load_checkpoint(checkpoint);
            const Dataset d = load_dataset(data, split, tp);
            std::vector<std::vector<float>> inputs;
            for (const auto& s : d.samples) inputs.push_back(s.input);
            const auto preds = predict(p, inputs);
            std::vector<CorpusItem> corpus;
            for (std::size_t i = 0; i < preds.size(); ++i)
                corpus.push_back({d.samples[i].id, peak_intensity(preds[i].hdr_tm), preds[i].elevation});
            const auto ids = match(corpus, resolve_intensity(corpus, intensity), elevation_deg * M_PI / 180.0, k,
                                   cfg.get_double("match.intensity_weight"),
                                   cfg.get_double("match.elevation_weight"));
            std::string text;
            for (const auto& id : ids) text += id + "\n";
            std::fputs(text.c_str(), stdout);
            if (!c.out.empty()) write_file_atomic(c.out, text);
        } else if (gc->parsed()) {
            const auto res = run_gradcheck_suite(cfg.get_u64("run.seed"));
            std::fputs(format_gradcheck(res).c_str(), stdout);
            for (const auto& r : res)
                if (!r.passed) return 3;
        } else if (bt->parsed()) {
            const TransportMatrix t = transport(cfg);
            std::printf("transport %dx%d -> %s\n", t.rows(), t.cols(), cfg.get("transport.cache").c_str());
        }
        return 0;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
