#include <doctest.h>

#include <cmath>

#include "skyhdr/autodiff.hpp"
#include "skyhdr/gradcheck.hpp"
#include "skyhdr/rng.hpp"

using namespace skyhdr;
using namespace skyhdr::ad;

namespace {

template <typename T>
Tensor<T> rnd(Rng& r, Shape s, double lo = -1, double hi = 1) {
    Tensor<T> t(std::move(s));
    for (auto& v : t.data) v = T(r.uniform(lo, hi));
    return t;
}

double inner(const Tensor<double>& a, const Tensor<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

}  // namespace

TEST_CASE("conv2d matches direct summation") {
    Rng r(1);
    for (int stride : {1, 2})
        for (int k : {1, 3, 5}) {
            const int n = 2, ci = 2, co = 3, h = 6, w = 8;
            Tape<double> tape;
            const auto x = rnd<double>(r, {n, ci, h, w}), wt = rnd<double>(r, {co, ci, k, k}),
                       b = rnd<double>(r, {co});
            const Var y = tape.conv2d(tape.constant(x), tape.constant(wt), tape.constant(b), stride);
            const ConvGeometry g = conv_geometry(n, ci, h, w, co, k, stride);
            CHECK(g.out_h == (h + stride - 1) / stride);
            CHECK(g.out_w == (w + stride - 1) / stride);
            const auto& out = tape.value(y);
            CHECK(out.shape == Shape{n, co, g.out_h, g.out_w});
            double worst = 0;
            for (int in = 0; in < n; ++in)
                for (int o = 0; o < co; ++o)
                    for (int oy = 0; oy < g.out_h; ++oy)
                        for (int ox = 0; ox < g.out_w; ++ox) {
                            double s = b.data[o];
                            for (int c = 0; c < ci; ++c)
                                for (int ky = 0; ky < k; ++ky)
                                    for (int kx = 0; kx < k; ++kx) {
                                        const int iy = oy * stride - g.pad_top + ky, ix = ox * stride - g.pad_left + kx;
                                        if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                                        s += x.data[((in * ci + c) * h + iy) * w + ix] *
                                             wt.data[((o * ci + c) * k + ky) * k + kx];
                                    }
                            const double got = out.data[((in * co + o) * g.out_h + oy) * g.out_w + ox];
                            worst = std::max(worst, std::abs(got - s));
                        }
            CHECK(worst < 1e-10);
        }
}

TEST_CASE("conv2d trivial cases") {
    Rng r(2);
    Tape<double> tape;
    const auto x = rnd<double>(r, {1, 1, 4, 5});
    Tensor<double> w({1, 1, 1, 1}, 1.0), b({1}, 0.0);
    const Var y = tape.conv2d(tape.constant(x), tape.constant(w), tape.constant(b), 1);
    CHECK(tape.value(y).data == x.data);
    Tensor<double> zero({1, 2, 4, 4}, 0.0);
    const Var z = tape.conv2d(tape.constant(zero), tape.constant(rnd<double>(r, {3, 2, 3, 3})),
                              tape.constant(Tensor<double>({3}, {0.5, -1.0, 2.0})), 2);
    for (std::size_t i = 0; i < tape.value(z).size(); ++i)
        CHECK(tape.value(z).data[i] == std::array{0.5, -1.0, 2.0}[i / 4]);
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
    Rng r(3);
    for (int k : {3, 5}) {
        const int n = 2, ci = 3, co = 2, h = 6, w = 8;
        Tape<double> tape;
        const auto x = rnd<double>(r, {n, ci, h, w}), wt = rnd<double>(r, {co, ci, k, k});
        const Tensor<double> zb({co}, 0.0), zbt({ci}, 0.0);
        const Var y = tape.conv2d(tape.constant(x), tape.constant(wt), tape.constant(zb), 2);
        const auto u = rnd<double>(r, tape.value(y).shape);
        const Var xt = tape.conv_transpose2d(tape.constant(u), tape.constant(wt), tape.constant(zbt), 2);
        CHECK(tape.value(xt).shape == x.shape);
        CHECK(std::abs(inner(tape.value(y), u) - inner(x, tape.value(xt))) < 1e-8);
    }
    // zero input gives the bias; a delta scatters the kernel
    Tape<double> tape;
    Tensor<double> delta({1, 1, 3, 3}, 0.0);
    delta.data[4] = 1.0;
    const auto wt = rnd<double>(r, {1, 1, 3, 3});
    const Var y = tape.conv_transpose2d(tape.constant(delta), tape.constant(wt),
                                        tape.constant(Tensor<double>({1}, {0.25})), 2);
    const auto& v = tape.value(y);
    CHECK(v.shape == Shape{1, 1, 6, 6});
    double mass = 0;
    for (double e : v.data) mass += e - 0.25;
    double ksum = 0;
    for (double e : wt.data) ksum += e;
    CHECK(mass == doctest::Approx(ksum));
    Tape<double> t2;
    const Var z = t2.conv_transpose2d(t2.constant(Tensor<double>({1, 1, 2, 2}, 0.0)), t2.constant(wt),
                                      t2.constant(Tensor<double>({1}, {0.7})), 2);
    for (double e : t2.value(z).data) CHECK(e == 0.7);
}

TEST_CASE("batchnorm trivial cases") {
    Rng r(4);
    Tensor<double> rm({2}, 0.0), rv({2}, 1.0);
    BatchNormState<double> st{&rm, &rv, false};
    Tape<double> tape;
    Tensor<double> flat({3, 2, 2, 2}, 4.0);
    const Var y = tape.batchnorm(tape.constant(flat), tape.constant(Tensor<double>({2}, {1.5, 2.0})),
                                 tape.constant(Tensor<double>({2}, {0.1, -0.3})), st, Mode::train);
    for (std::size_t i = 0; i < tape.value(y).size(); ++i)
        CHECK(tape.value(y).data[i] == doctest::Approx((i / 4) % 2 ? -0.3 : 0.1));
    Tensor<double> norm({4, 1, 1, 1}, std::vector<double>{1, -1, 1, -1});
    Tensor<double> m1({1}, 0.0), v1({1}, 1.0);
    BatchNormState<double> s1{&m1, &v1, true};
    const Var z = tape.batchnorm(tape.constant(norm), tape.constant(Tensor<double>({1}, 1.0)),
                                 tape.constant(Tensor<double>({1}, 0.0)), s1, Mode::train);
    for (std::size_t i = 0; i < 4; ++i) CHECK(tape.value(z).data[i] == doctest::Approx(norm.data[i]).epsilon(1e-4));
    CHECK(m1.data[0] == doctest::Approx(0.0));
}

TEST_CASE("pointwise ops and losses") {
    Tape<double> tape;
    const Var x = tape.constant(Tensor<double>({3}, {0.0, 1.0, -50.0}));
    const auto& e = tape.value(tape.elu(x));
    CHECK(e.data[0] == 0.0);
    CHECK(e.data[1] == 1.0);
    CHECK(e.data[2] == doctest::Approx(-1.0));
    CHECK(tape.value(tape.l1(x, x)).data[0] == 0.0);
    CHECK(tape.value(tape.mse(x, x)).data[0] == 0.0);
    const Var logits = tape.constant(Tensor<double>({2, 2}, 0.0));
    CHECK(tape.value(tape.softmax_xent(logits, {0, 1})).data[0] == doctest::Approx(std::log(2.0)));
    CHECK_THROWS(tape.softmax_xent(logits, {0, 2}));
    CHECK_THROWS(tape.add(x, logits));
}

TEST_CASE("gradient reversal") {
    Rng r(5);
    const auto x = rnd<double>(r, {4, 3});
    {
        Tape<double> tape;
        const Var p = tape.parameter(x);
        const Var g = tape.gradient_reversal(p, 1.0);
        CHECK(tape.value(g).data == x.data);
        const Var s = tape.l1(tape.add_scalar(g, 10.0), tape.constant(Tensor<double>({4, 3}, 0.0)));
        tape.backward(tape.scale(s, 12.0));
        for (double v : tape.grad(p).data) CHECK(v == doctest::Approx(-1.0));
    }
    const auto w = rnd<double>(r, {2, 3}), b = rnd<double>(r, {2});
    const auto target = rnd<double>(r, {4, 2});
    auto run = [&](bool reverse, double lambda) {
        Tape<double> tape;
        const Var p = tape.parameter(x);
        const Var h = reverse ? tape.gradient_reversal(p, lambda) : p;
        tape.backward(tape.mse(tape.linear(h, tape.parameter(w), tape.parameter(b)), tape.constant(target)));
        return tape.grad(p).data;
    };
    const auto plain = run(false, 0), rev = run(true, 0.6);
    for (std::size_t i = 0; i < plain.size(); ++i) CHECK(rev[i] == doctest::Approx(-0.6 * plain[i]).epsilon(1e-12));
}

TEST_CASE("gradient check suite") {
    const auto res = run_gradcheck_suite(7, 20, 1e-3);
    CHECK(res.size() >= 19);
    for (const auto& r : res) {
        INFO(r.op);
        CHECK(r.instances >= 20);
        CHECK(r.passed);
    }
}

TEST_CASE("backward runs once") {
    Tape<double> tape;
    const Var p = tape.parameter(Tensor<double>({2}, 1.0));
    const Var l = tape.mse(p, tape.constant(Tensor<double>({2}, 0.0)));
    tape.backward(l);
    CHECK_THROWS(tape.backward(l));
}
