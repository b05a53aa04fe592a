#include "skyhdr/config.hpp"

#include <sstream>

#include "skyhdr/error.hpp"
#include "skyhdr/pano_io.hpp"

namespace skyhdr {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

}  // namespace

Config::Config(std::vector<ConfigKey> schema) : schema_(std::move(schema)) {
    for (const auto& k : schema_) values_[k.name] = k.default_value;
}

Config Config::standard() {
    return Config({
        {"run.seed", "1", "master random seed"},
        {"run.threads", "0", "worker threads (0 = all cores)"},
        {"data.scenes", "60", "scene groups to generate"},
        {"data.samples_per_scene", "4", "base samples per scene group (each augmented x6)"},
        {"data.fractions", "0.69,0.15,0.16", "train,val,test fractions of scene groups"},
        {"data.random_crf", "true", "draw camera response curves at random (else gamma 2.2)"},
        {"data.hue_sigma", "10", "std. dev. of the hue shift, degrees"},
        {"data.sat_sigma", "0.1", "std. dev. of the saturation shift"},
        {"data.max_occluders", "6", "maximum building walls per scene"},
        {"data.min_saturation", "0.005", "minimum saturated LDR fraction per sample"},
        {"data.day_frames", "40", "frames in a generated day sequence"},
        {"net.encoder_widths", "64,128,256,256", "encoder channel widths (decoder mirrors)"},
        {"net.kernels", "5,5,3,3", "encoder kernel sizes"},
        {"net.latent", "64", "latent dimension"},
        {"net.elevation_hidden", "32,16", "hidden widths of the elevation head"},
        {"net.domain_hidden", "32", "hidden width of the domain classifier"},
        {"train.batch_size", "32", "minibatch size"},
        {"train.lr", "0.001", "Adam learning rate"},
        {"train.beta1", "0.9", "Adam beta1"},
        {"train.beta2", "0.999", "Adam beta2"},
        {"train.eps", "1e-8", "Adam epsilon"},
        {"train.epochs", "100", "epoch budget"},
        {"train.patience", "10", "epochs without validation improvement before stopping"},
        {"train.lambda_theta", "0.1", "weight of the elevation loss"},
        {"train.lambda_render", "0.1", "weight of the render loss"},
        {"train.render_loss_domain", "tonemapped", "tonemapped | linear"},
        {"train.render_loss_form", "mse", "mse | l2 (per-sample norm) | rms (norm / sqrt(size))"},
        {"train.lambda_grl", "1.0", "gradient reversal weight (domain adaptation)"},
        {"train.disc_lr", "-1", "discriminator learning rate (negative = train.lr)"},
        {"finetune.lr", "0.0001", "learning rate for fine-tuning"},
        {"tonemap.alpha", "0.0333333333333333333", "tonemap scale"},
        {"tonemap.gamma", "2.2", "tonemap gamma"},
        {"transport.cache", "transport.bin", "transport matrix cache file"},
        {"scene.albedo", "1.0", "albedo of the transport scene"},
        {"scene.spike_count", "14", "spikes on the transport object"},
        {"eval.cv_metric", "e_render", "metric for iTMO cross-validation: e_hdr | e_sun | e_render"},
        {"eval.cv_samples", "96", "training samples used for iTMO cross-validation"},
        {"match.intensity_weight", "1.0", "weight of the intensity feature"},
        {"match.elevation_weight", "1.0", "weight of the elevation feature"},
    });
}

bool Config::has_key(const std::string& key) const { return values_.count(key) != 0; }

void Config::set(const std::string& key, const std::string& value) {
    if (!has_key(key)) throw UsageError("unknown config key '" + key + "'");
    values_[key] = value;
}

void Config::set_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw UsageError("override must look like key=value: '" + assignment + "'");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void Config::load_text(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw UsageError(origin + ":" + std::to_string(n) + ": expected 'key = value'");
        const std::string key = trim(t.substr(0, eq));
        if (!has_key(key))
            throw UsageError(origin + ":" + std::to_string(n) + ": unknown config key '" + key + "'");
        values_[key] = trim(t.substr(eq + 1));
    }
}

void Config::load_file(const std::string& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const DataError&) {
        throw UsageError("cannot read config file '" + path + "'");
    }
    load_text(text, path);
}

void Config::apply_profile(const std::string& name) {
    if (name == "desk") return;
    if (name == "paper") {
        set("train.batch_size", "128");
        set("train.epochs", "500");
        return;
    }
    throw UsageError("unknown profile '" + name + "' (desk | paper)");
}

std::string Config::get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw UsageError("unknown config key '" + key + "'");
    return it->second;
}

int Config::get_int(const std::string& key) const {
    const std::string v = get(key);
    try {
        std::size_t used = 0;
        const int r = std::stoi(v, &used);
        if (used == v.size()) return r;
    } catch (const std::logic_error&) {
    }
    throw UsageError("config key '" + key + "' expects an integer, got '" + v + "'");
}

std::uint64_t Config::get_u64(const std::string& key) const {
    const std::string v = get(key);
    try {
        std::size_t used = 0;
        if (!v.empty() && v[0] != '-') {
            const auto r = std::stoull(v, &used);
            if (used == v.size()) return r;
        }
    } catch (const std::logic_error&) {
    }
    throw UsageError("config key '" + key + "' expects a non-negative integer, got '" + v + "'");
}

double Config::get_double(const std::string& key) const {
    const std::string v = get(key);
    try {
        std::size_t used = 0;
        const double r = std::stod(v, &used);
        if (used == v.size()) return r;
    } catch (const std::logic_error&) {
    }
    throw UsageError("config key '" + key + "' expects a number, got '" + v + "'");
}

bool Config::get_bool(const std::string& key) const {
    const std::string v = get(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw UsageError("config key '" + key + "' expects true/false, got '" + v + "'");
}

std::vector<int> Config::get_ints(const std::string& key) const {
    std::vector<int> out;
    for (const auto& s : split_list(get(key))) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoi(s, &used));
            if (used != s.size()) throw std::invalid_argument(s);
        } catch (const std::logic_error&) {
            throw UsageError("config key '" + key + "' expects a list of integers");
        }
    }
    return out;
}

std::vector<double> Config::get_doubles(const std::string& key) const {
    std::vector<double> out;
    for (const auto& s : split_list(get(key))) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(s, &used));
            if (used != s.size()) throw std::invalid_argument(s);
        } catch (const std::logic_error&) {
            throw UsageError("config key '" + key + "' expects a list of numbers");
        }
    }
    return out;
}

std::string Config::dump() const {
    std::string s;
    for (const auto& k : schema_) s += k.name + " = " + values_.at(k.name) + "\n";
    return s;
}

std::string Config::describe_keys() const {
    std::string s = "Config keys (default):\n";
    for (const auto& k : schema_) s += "  " + k.name + " = " + k.default_value + "\n      " + k.help + "\n";
    return s;
}

}  // namespace skyhdr
