#include "skyhdr/net.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "skyhdr/error.hpp"
#include "skyhdr/pano_io.hpp"
#include "skyhdr/rng.hpp"

namespace skyhdr {

namespace {

constexpr char kCheckpointMagic[8] = {'S', 'K', 'Y', 'H', 'D', 'R', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<int> parse_ints(std::string_view s, char sep) {
    std::vector<int> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        const std::size_t next = std::min(s.find(sep, pos), s.size());
        const std::string tok(s.substr(pos, next - pos));
        try {
            std::size_t used = 0;
            out.push_back(std::stoi(tok, &used));
            if (used != tok.size()) throw 0;
        } catch (...) {
            throw DataError("bad integer '" + tok + "' in network config");
        }
        pos = next + 1;
    }
    return out;
}

std::string join(const auto& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::string layer(const char* prefix, int i) { return prefix + std::to_string(i); }

}  // namespace

void NetConfig::validate() const {
    if (latent_dim != 64) throw UsageError("latent dimension must be 64");
    for (int i = 0; i < 4; ++i) {
        if (encoder_widths[std::size_t(i)] < 1) throw UsageError("encoder widths must be positive");
        if (encoder_kernels[std::size_t(i)] < 1) throw UsageError("kernel sizes must be positive");
    }
    if (input_height % 16 != 0 || input_width % 16 != 0)
        throw UsageError("input size must be divisible by 16");
    for (int h : elevation_hidden)
        if (h < 1) throw UsageError("elevation head widths must be positive");
    if (domain_hidden < 1) throw UsageError("domain head width must be positive");
}

std::string NetConfig::describe() const {
    std::ostringstream ss;
    ss << "enc=" << join(encoder_widths) << ";k=" << join(encoder_kernels)
       << ";latent=" << latent_dim << ";elev=" << join(elevation_hidden)
       << ";disc_hidden=" << domain_hidden << ";input=" << input_height << "x" << input_width
       << ";disc=" << (with_discriminator ? 1 : 0);
    return ss.str();
}

NetConfig NetConfig::parse(std::string_view text) {
    NetConfig c;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t end = std::min(text.find(';', pos), text.size());
        const std::string_view item = text.substr(pos, end - pos);
        const std::size_t eq = item.find('=');
        if (eq == std::string_view::npos) throw DataError("bad network config item");
        const std::string_view key = item.substr(0, eq);
        const std::string_view val = item.substr(eq + 1);
        if (key == "enc" || key == "k") {
            const auto v = parse_ints(val, ',');
            if (v.size() != 4) throw DataError("network config needs four encoder layers");
            auto& dst = key == "enc" ? c.encoder_widths : c.encoder_kernels;
            std::copy(v.begin(), v.end(), dst.begin());
        } else if (key == "latent") {
            c.latent_dim = parse_ints(val, ',').at(0);
        } else if (key == "elev") {
            c.elevation_hidden = val.empty() ? std::vector<int>{} : parse_ints(val, ',');
        } else if (key == "disc_hidden") {
            c.domain_hidden = parse_ints(val, ',').at(0);
        } else if (key == "input") {
            const auto v = parse_ints(val, 'x');
            if (v.size() != 2) throw DataError("bad input size in network config");
            c.input_height = v[0];
            c.input_width = v[1];
        } else if (key == "disc") {
            c.with_discriminator = parse_ints(val, ',').at(0) != 0;
        } else {
            throw DataError("unknown network config key '" + std::string(key) + "'");
        }
        pos = end + 1;
    }
    c.validate();
    return c;
}

std::uint64_t NetConfig::hash() const {
    const std::string s = describe();
    return fnv1a(s.data(), s.size());
}

int ModelParams::index(std::string_view name) const {
    for (std::size_t i = 0; i < blocks.size(); ++i)
        if (blocks[i].name == name) return int(i);
    return -1;
}

const ParamBlock& ModelParams::get(std::string_view name) const {
    const int i = index(name);
    if (i < 0) throw DataError("missing parameter block '" + std::string(name) + "'");
    return blocks[std::size_t(i)];
}

ParamBlock& ModelParams::get(std::string_view name) {
    return const_cast<ParamBlock&>(static_cast<const ModelParams&>(*this).get(name));
}

std::size_t ModelParams::trainable_scalars() const {
    std::size_t n = 0;
    for (const auto& b : blocks)
        if (b.trainable) n += b.value.size();
    return n;
}

bool ModelParams::operator==(const ModelParams& other) const {
    if (config.describe() != other.config.describe() || blocks.size() != other.blocks.size())
        return false;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto& a = blocks[i];
        const auto& b = other.blocks[i];
        if (a.name != b.name || a.trainable != b.trainable || a.value.shape != b.value.shape)
            return false;
        // Bitwise comparison (distinguishes -0.0 and NaN payloads).
        if (std::memcmp(a.value.data.data(), b.value.data.data(), a.value.size() * sizeof(float)))
            return false;
    }
    return true;
}

std::size_t parameter_count(const NetConfig& cfg) {
    cfg.validate();
    const auto& w = cfg.encoder_widths;
    const auto& k = cfg.encoder_kernels;
    const std::size_t flat = std::size_t(w[3]) * cfg.bottleneck_height() * cfg.bottleneck_width();
    std::size_t n = 0;
    int in = 3;
    for (int i = 0; i < 4; ++i) {
        n += std::size_t(in) * w[i] * k[i] * k[i] + 3 * std::size_t(w[i]);  // conv + bias + bn
        in = w[i];
    }
    n += flat * cfg.latent_dim + cfg.latent_dim;  // latent
    n += std::size_t(cfg.latent_dim) * flat + flat;  // decoder FC
    for (int j = 0; j < 4; ++j) {
        const int src = w[std::size_t(3 - j)];
        const int dst = j < 3 ? w[std::size_t(2 - j)] : 3;
        const int kk = k[std::size_t(3 - j)];
        n += std::size_t(src) * dst * kk * kk + dst + (j < 3 ? 2 * std::size_t(dst) : 0);
    }
    int prev = cfg.latent_dim;
    for (int h : cfg.elevation_hidden) {
        n += std::size_t(prev) * h + h;
        prev = h;
    }
    n += std::size_t(prev) + 1;
    if (cfg.with_discriminator)
        n += std::size_t(cfg.latent_dim) * cfg.domain_hidden + cfg.domain_hidden +
             std::size_t(cfg.domain_hidden) * 2 + 2;
    return n;
}

ModelParams init_params(const NetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelParams p;
    p.config = cfg;
    Rng rng = Rng::stream(seed, 1);
    Rng disc_rng = Rng::stream(seed, 2);

    auto weights = [](Rng& r, ad::Shape shape, int fan_in) {
        ad::Tensor<float> t(std::move(shape));
        const double limit = std::sqrt(6.0 / fan_in);
        for (float& v : t.data) v = float(r.uniform(-limit, limit));
        return t;
    };
    auto add = [&p](std::string name, ad::Tensor<float> t, bool trainable = true) {
        p.blocks.push_back({std::move(name), std::move(t), trainable});
    };
    auto add_bn = [&](const std::string& prefix, int c) {
        add(prefix + ".bn.scale", ad::Tensor<float>({c}, 1.0f));
        add(prefix + ".bn.shift", ad::Tensor<float>({c}, 0.0f));
        add(prefix + ".bn.mean", ad::Tensor<float>({c}, 0.0f), false);
        add(prefix + ".bn.var", ad::Tensor<float>({c}, 1.0f), false);
    };

    const auto& w = cfg.encoder_widths;
    const auto& k = cfg.encoder_kernels;
    int in = 3;
    for (int i = 0; i < 4; ++i) {
        const std::string name = layer("enc", i + 1);
        add(name + ".w", weights(rng, {w[i], in, k[i], k[i]}, in * k[i] * k[i]));
        add(name + ".b", ad::Tensor<float>({w[i]}));
        add_bn(name, w[i]);
        in = w[i];
    }
    const int flat = w[3] * cfg.bottleneck_height() * cfg.bottleneck_width();
    add("latent.w", weights(rng, {cfg.latent_dim, flat}, flat));
    add("latent.b", ad::Tensor<float>({cfg.latent_dim}));
    add("dec_fc.w", weights(rng, {flat, cfg.latent_dim}, cfg.latent_dim));
    add("dec_fc.b", ad::Tensor<float>({flat}));
    for (int j = 0; j < 4; ++j) {
        const int src = w[std::size_t(3 - j)];
        const int dst = j < 3 ? w[std::size_t(2 - j)] : 3;
        const int kk = k[std::size_t(3 - j)];
        const std::string name = layer("dec", j + 1);
        // Fan-in of a stride-2 transposed conv is about src * k^2 / 4.
        add(name + ".w", weights(rng, {src, dst, kk, kk}, std::max(1, src * kk * kk / 4)));
        add(name + ".b", ad::Tensor<float>({dst}, j < 3 ? 0.0f : -3.0f));
        if (j < 3) add_bn(name, dst);
    }
    int prev = cfg.latent_dim;
    for (std::size_t i = 0; i < cfg.elevation_hidden.size(); ++i) {
        const int h = cfg.elevation_hidden[i];
        const std::string name = layer("elev", int(i) + 1);
        add(name + ".w", weights(rng, {h, prev}, prev));
        add(name + ".b", ad::Tensor<float>({h}));
        prev = h;
    }
    const std::string last = layer("elev", int(cfg.elevation_hidden.size()) + 1);
    add(last + ".w", weights(rng, {1, prev}, prev));
    add(last + ".b", ad::Tensor<float>({1}));

    if (cfg.with_discriminator) {
        add("disc1.w", weights(disc_rng, {cfg.domain_hidden, cfg.latent_dim}, cfg.latent_dim));
        add("disc1.b", ad::Tensor<float>({cfg.domain_hidden}));
        add("disc2.w", weights(disc_rng, {2, cfg.domain_hidden}, cfg.domain_hidden));
        add("disc2.b", ad::Tensor<float>({2}));
    }
    return p;
}

template <typename T>
Bound<T> bind(ad::Tape<T>& tape, const ModelParams& params) {
    Bound<T> b;
    b.vars.resize(params.blocks.size());
    b.stats.resize(params.blocks.size());
    for (std::size_t i = 0; i < params.blocks.size(); ++i) {
        const auto& blk = params.blocks[i];
        if (blk.trainable) b.vars[i] = tape.parameter(blk.value.template cast<T>());
        else b.stats[i] = blk.value.template cast<T>();
    }
    return b;
}

template Bound<float> bind(ad::Tape<float>&, const ModelParams&);
template Bound<double> bind(ad::Tape<double>&, const ModelParams&);

void write_back_stats(ModelParams& params, const Bound<float>& bound) {
    for (std::size_t i = 0; i < params.blocks.size(); ++i)
        if (!params.blocks[i].trainable) params.blocks[i].value = bound.stats[i];
}

namespace {

template <typename T>
struct Ctx {
    ad::Tape<T>& tape;
    Bound<T>& bound;
    const ModelParams& params;
    ad::Mode mode;

    ad::Var var(const std::string& name) const {
        const int i = params.index(name);
        if (i < 0 || !bound.vars[std::size_t(i)].valid())
            throw UsageError("parameter '" + name + "' is not bound");
        return bound.vars[std::size_t(i)];
    }

    ad::Var bn(ad::Var x, const std::string& prefix) {
        ad::BatchNormState<T> st;
        st.running_mean = &bound.stats[std::size_t(params.index(prefix + ".bn.mean"))];
        st.running_var = &bound.stats[std::size_t(params.index(prefix + ".bn.var"))];
        st.update = bound.update_stats;
        return tape.batchnorm(x, var(prefix + ".bn.scale"), var(prefix + ".bn.shift"), st, mode);
    }

    ad::Var fc(ad::Var x, const std::string& prefix) {
        return tape.linear(x, var(prefix + ".w"), var(prefix + ".b"));
    }
};

}  // namespace

template <typename T>
NetOutputs<T> forward(ad::Tape<T>& tape, Bound<T>& bound, const ModelParams& params,
                      ad::Var input, ad::Mode mode) {
    const NetConfig& cfg = params.config;
    const auto& xs = tape.value(input).shape;
    if (xs.size() != 4 || xs[1] != 3 || xs[2] != cfg.input_height || xs[3] != cfg.input_width)
        throw DataError("network input must be (N,3," + std::to_string(cfg.input_height) + "," +
                        std::to_string(cfg.input_width) + "), got " + ad::shape_str(xs));
    Ctx<T> c{tape, bound, params, mode};
    NetOutputs<T> out;
    const int n = xs[0];

    ad::Var h = input;
    for (int i = 0; i < 4; ++i) {
        const std::string name = layer("enc", i + 1);
        h = tape.conv2d(h, c.var(name + ".w"), c.var(name + ".b"), 2);
        h = tape.elu(c.bn(h, name));
        out.encoder[std::size_t(i)] = h;
    }
    const int bh = cfg.bottleneck_height(), bw = cfg.bottleneck_width();
    const int w4 = cfg.encoder_widths[3];
    out.latent = c.fc(tape.reshape(h, {n, w4 * bh * bw}), "latent");

    ad::Var d = tape.reshape(tape.elu(c.fc(out.latent, "dec_fc")), {n, w4, bh, bw});
    for (int j = 0; j < 4; ++j) {
        out.decoder_pre_skip[std::size_t(j)] = d;
        d = tape.add(d, out.encoder[std::size_t(3 - j)]);
        out.decoder_input[std::size_t(j)] = d;
        const std::string name = layer("dec", j + 1);
        d = tape.conv_transpose2d(d, c.var(name + ".w"), c.var(name + ".b"), 2);
        if (j < 3) d = tape.elu(c.bn(d, name));
    }
    out.hdr = tape.add_scalar(tape.elu(d), T(1));

    ad::Var e = out.latent;
    const std::size_t depth = cfg.elevation_hidden.size();
    for (std::size_t i = 0; i < depth; ++i) e = tape.elu(c.fc(e, layer("elev", int(i) + 1)));
    out.elevation = c.fc(e, layer("elev", int(depth) + 1));
    return out;
}

template NetOutputs<float> forward(ad::Tape<float>&, Bound<float>&, const ModelParams&, ad::Var,
                                   ad::Mode);
template NetOutputs<double> forward(ad::Tape<double>&, Bound<double>&, const ModelParams&, ad::Var,
                                    ad::Mode);

template <typename T>
ad::Var forward_domain(ad::Tape<T>& tape, Bound<T>& bound, const ModelParams& params,
                       ad::Var latent, T lambda_grl) {
    if (!params.config.with_discriminator)
        throw UsageError("network was configured without a domain discriminator");
    Ctx<T> c{tape, bound, params, ad::Mode::train};
    ad::Var h = tape.gradient_reversal(latent, lambda_grl);
    h = tape.elu(c.fc(h, "disc1"));
    return c.fc(h, "disc2");
}

template ad::Var forward_domain(ad::Tape<float>&, Bound<float>&, const ModelParams&, ad::Var,
                                float);
template ad::Var forward_domain(ad::Tape<double>&, Bound<double>&, const ModelParams&, ad::Var,
                                double);

std::string encode_checkpoint(const ModelParams& params) {
    ByteWriter w;
    w.put_bytes(std::string_view(kCheckpointMagic, 8));
    w.put<std::uint32_t>(kCheckpointVersion);
    w.put<std::uint64_t>(params.config.hash());
    const std::string desc = params.config.describe();
    w.put<std::uint32_t>(std::uint32_t(desc.size()));
    w.put_bytes(desc);
    w.put<std::uint32_t>(std::uint32_t(params.blocks.size()));
    for (const auto& b : params.blocks) {
        w.put<std::uint32_t>(std::uint32_t(b.name.size()));
        w.put_bytes(b.name);
        w.put<std::uint8_t>(b.trainable ? 1 : 0);
        w.put<std::uint32_t>(std::uint32_t(b.value.shape.size()));
        for (int d : b.value.shape) w.put<std::uint32_t>(std::uint32_t(d));
        for (float v : b.value.data) w.put<float>(v);
    }
    return w.bytes();
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
    write_file_atomic(path, encode_checkpoint(params));
}

ModelParams decode_checkpoint(std::string_view bytes) {
    ByteReader rd(bytes);
    if (rd.get_bytes(8) != std::string_view(kCheckpointMagic, 8))
        throw DataError("not a checkpoint file");
    if (rd.get<std::uint32_t>() != kCheckpointVersion)
        throw DataError("unsupported checkpoint version");
    const auto hash = rd.get<std::uint64_t>();
    const auto desc_len = rd.get<std::uint32_t>();
    ModelParams p;
    p.config = NetConfig::parse(rd.get_bytes(desc_len));
    if (p.config.hash() != hash) throw DataError("checkpoint config hash does not match its config");
    const auto count = rd.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        ParamBlock b;
        b.name = std::string(rd.get_bytes(rd.get<std::uint32_t>()));
        b.trainable = rd.get<std::uint8_t>() != 0;
        const auto rank = rd.get<std::uint32_t>();
        if (rank > 8) throw DataError("corrupt checkpoint (rank)");
        for (std::uint32_t r = 0; r < rank; ++r) b.value.shape.push_back(int(rd.get<std::uint32_t>()));
        const std::size_t n = ad::numel(b.value.shape);
        if (n * 4 > rd.remaining()) throw DataError("unexpected end of file (truncated?)");
        b.value.data.resize(n);
        for (float& v : b.value.data) v = rd.get<float>();
        p.blocks.push_back(std::move(b));
    }
    if (rd.remaining() != 0) throw DataError("trailing bytes after checkpoint payload");
    // Structural check against the declared architecture.
    const ModelParams ref = init_params(p.config, 0);
    if (ref.blocks.size() != p.blocks.size()) throw DataError("checkpoint block count mismatch");
    for (std::size_t i = 0; i < ref.blocks.size(); ++i)
        if (ref.blocks[i].name != p.blocks[i].name || ref.blocks[i].value.shape != p.blocks[i].value.shape)
            throw DataError("checkpoint block '" + p.blocks[i].name + "' does not fit the config");
    return p;
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(read_file(path));
}

ModelParams load_checkpoint(const std::filesystem::path& path, const NetConfig& expected) {
    const std::string bytes = read_file(path);
    ByteReader rd(bytes);
    if (rd.get_bytes(8) != std::string_view(kCheckpointMagic, 8))
        throw DataError("not a checkpoint file");
    rd.get<std::uint32_t>();
    if (rd.get<std::uint64_t>() != expected.hash())
        throw DataError("checkpoint was written for a different network config (" +
                        expected.describe() + " expected)");
    return decode_checkpoint(bytes);
}

}  // namespace skyhdr
