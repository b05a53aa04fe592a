#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "skyhdr/net.hpp"
#include "skyhdr/pano_io.hpp"
#include "skyhdr/rng.hpp"

using namespace skyhdr;
using namespace skyhdr::ad;

namespace {

NetConfig small() {
    NetConfig c;
    c.encoder_widths = {4, 6, 8, 8};
    c.latent_dim = 64;
    c.elevation_hidden = {6, 4};
    c.domain_hidden = 5;
    c.input_height = 32;
    c.input_width = 64;
    return c;
}

Tensor<float> random_input(Rng& r, int n, const NetConfig& c) {
    Tensor<float> t({n, 3, c.input_height, c.input_width});
    for (auto& v : t.data) v = float(r.uniform());
    return t;
}

}  // namespace

TEST_CASE("config text round trip and validation") {
    const NetConfig c = small();
    const NetConfig p = NetConfig::parse(c.describe());
    CHECK(p.describe() == c.describe());
    CHECK(p.hash() == c.hash());
    NetConfig bad = c;
    bad.input_height = 30;
    CHECK_THROWS_AS(bad.validate(), UsageError);
    CHECK_THROWS_AS(NetConfig::parse("enc=1,2"), DataError);
    NetConfig d;
    d.with_discriminator = true;
    CHECK(d.hash() != NetConfig{}.hash());
}

TEST_CASE("parameter count matches init") {
    for (bool disc : {false, true}) {
        NetConfig c = small();
        c.with_discriminator = disc;
        const ModelParams p = init_params(c, 1);
        CHECK(p.trainable_scalars() == parameter_count(c));
        CHECK((p.index("disc1.w") >= 0) == disc);
    }
    NetConfig full;
    CHECK(parameter_count(full) == 3251588);
    CHECK(init_params(full, 1).trainable_scalars() == 3251588);
    full.with_discriminator = true;
    CHECK(parameter_count(full) == 3251588 + 64 * 32 + 32 + 32 * 2 + 2);
    CHECK(init_params(small(), 3) == init_params(small(), 3));
    CHECK(!(init_params(small(), 3) == init_params(small(), 4)));
}

TEST_CASE("forward contract") {
    const NetConfig c = small();
    const ModelParams p = init_params(c, 2);
    Rng r(1);
    const auto x = random_input(r, 3, c);
    for (Mode m : {Mode::train, Mode::infer}) {
        Tape<float> t1, t2;
        auto b1 = bind(t1, p), b2 = bind(t2, p);
        const auto o1 = forward(t1, b1, p, t1.constant(x), m);
        const auto o2 = forward(t2, b2, p, t2.constant(x), m);
        CHECK(t1.value(o1.hdr).shape == Shape{3, 3, 32, 64});
        CHECK(t1.value(o1.elevation).shape == Shape{3, 1});
        CHECK(t1.value(o1.latent).shape == Shape{3, 64});
        for (float v : t1.value(o1.hdr).data) CHECK(v >= 0.0f);
        CHECK(std::memcmp(t1.value(o1.hdr).data.data(), t2.value(o2.hdr).data.data(),
                          t1.value(o1.hdr).size() * sizeof(float)) == 0);
        for (int i = 0; i < 4; ++i)
            CHECK(t1.value(o1.decoder_input[i]).shape == t1.value(o1.decoder_pre_skip[i]).shape);
    }
}

TEST_CASE("running statistics") {
    const NetConfig c = small();
    ModelParams p = init_params(c, 2);
    Rng r(1);
    const auto x = random_input(r, 4, c);
    const ModelParams before = p;
    {
        Tape<float> t;
        auto b = bind(t, p);
        b.update_stats = false;
        forward(t, b, p, t.constant(x), Mode::train);
        write_back_stats(p, b);
    }
    CHECK(p == before);
    Tape<float> t;
    auto b = bind(t, p);
    forward(t, b, p, t.constant(x), Mode::train);
    write_back_stats(p, b);
    CHECK(!(p.get("enc1.bn.mean").value.data == before.get("enc1.bn.mean").value.data));
}

TEST_CASE("domain head") {
    NetConfig c = small();
    c.with_discriminator = true;
    const ModelParams p = init_params(c, 5);
    Rng r(2);
    const auto x = random_input(r, 2, c);
    auto run = [&](float lambda, bool reverse, std::vector<float>* logits) {
        Tape<float> t;
        auto b = bind(t, p);
        const auto o = forward(t, b, p, t.constant(x), Mode::train);
        Var l = reverse ? forward_domain(t, b, p, o.latent, lambda) : o.latent;
        if (!reverse) {
            // same head without the reversal
            l = t.linear(l, b.vars[std::size_t(p.index("disc1.w"))], b.vars[std::size_t(p.index("disc1.b"))]);
            l = t.linear(t.elu(l), b.vars[std::size_t(p.index("disc2.w"))], b.vars[std::size_t(p.index("disc2.b"))]);
        }
        if (logits) *logits = t.value(l).data;
        t.backward(t.softmax_xent(l, {0, 1}));
        return t.grad(b.vars[std::size_t(p.index("enc1.w"))]).data;
    };
    std::vector<float> l1, l0, lp;
    const auto g_rev = run(1.0f, true, &l1);
    run(0.0f, true, &l0);
    const auto g_plain = run(0.0f, false, &lp);
    CHECK(l1 == l0);
    CHECK(l1 == lp);
    for (std::size_t i = 0; i < g_rev.size(); ++i) CHECK(g_rev[i] == -g_plain[i]);

    Tape<float> t;
    auto b = bind(t, p);
    const Var z = forward_domain(t, b, p, t.constant(Tensor<float>({1, 64}, 0.0f)), 1.0f);
    CHECK(t.value(z).shape == Shape{1, 2});
}

TEST_CASE("checkpoint round trip and errors") {
    const auto dir = std::filesystem::temp_directory_path() / "skyhdr_test_ckpt";
    std::filesystem::create_directories(dir);
    ModelParams p = init_params(small(), 9);
    Rng r(3);
    for (auto& b : p.blocks)
        for (auto& v : b.value.data) v = float(r.normal());
    save_checkpoint(p, dir / "m.ckpt");
    CHECK(load_checkpoint(dir / "m.ckpt") == p);
    CHECK(load_checkpoint(dir / "m.ckpt", small()) == p);
    NetConfig other = small();
    other.elevation_hidden = {7};
    CHECK_THROWS_AS(load_checkpoint(dir / "m.ckpt", other), DataError);
    const std::string bytes = encode_checkpoint(p);
    CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 1)), DataError);
    CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), DataError);
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad), DataError);
    std::filesystem::remove_all(dir);
}
