#include "skyhdr/gradcheck.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>

#include "skyhdr/autodiff.hpp"
#include "skyhdr/rng.hpp"

namespace skyhdr {

namespace {

using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;
using T = double;

using Builder = std::function<Var(Tape<T>&, const std::vector<Var>&)>;

Tensor<T> random_tensor(Rng& rng, Shape s, double lo = -1.0, double hi = 1.0) {
    Tensor<T> t(std::move(s));
    for (T& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

/// Values bounded away from zero, for ops with a kink there.
Tensor<T> away_from_zero(Rng& rng, Shape s) {
    Tensor<T> t(std::move(s));
    for (T& v : t.data) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.05, 1.0);
    return t;
}

double evaluate(const std::vector<Tensor<T>>& inputs, const Builder& build) {
    Tape<T> tape;
    std::vector<Var> vars;
    for (const auto& in : inputs) vars.push_back(tape.parameter(in));
    return tape.value(build(tape, vars)).data.at(0);
}

/// Max relative error over (a sample of) all input coordinates.
/// grad_factor: expected ratio of analytic to finite-difference gradient (-λ for gradient reversal).
double check_instance(Rng& rng, std::vector<Tensor<T>> inputs, const Builder& build, double grad_factor) {
    Tape<T> tape;
    std::vector<Var> vars;
    for (const auto& in : inputs) vars.push_back(tape.parameter(in));
    const Var loss = build(tape, vars);
    tape.backward(loss);
    std::vector<Tensor<T>> grads;
    double scale = 0.0;
    for (const Var v : vars) {
        grads.push_back(tape.grad(v));
        for (T g : grads.back().data) scale = std::max(scale, std::abs(g));
    }
    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const std::size_t n = inputs[k].size();
        const std::size_t probes = std::min<std::size_t>(n, 24);
        for (std::size_t p = 0; p < probes; ++p) {
            const std::size_t i = n <= 24 ? p : std::size_t(rng.index(n));
            const T orig = inputs[k].data[i];
            inputs[k].data[i] = orig + h;
            const double fp = evaluate(inputs, build);
            inputs[k].data[i] = orig - h;
            const double fm = evaluate(inputs, build);
            inputs[k].data[i] = orig;
            const double num = grad_factor * (fp - fm) / (2.0 * h);
            const double ana = grads[k].data[i];
            const double denom = std::max({std::abs(ana), std::abs(num), 1e-3 * scale, 1e-12});
            worst = std::max(worst, std::abs(ana - num) / denom);
        }
    }
    return worst;
}

struct Case {
    std::string name;
    std::function<std::pair<std::vector<Tensor<T>>, Builder>(Rng&)> make;
    double grad_factor = 1.0;
};

/// Reduces a tensor to a scalar with a non-trivial gradient.
Var reduce(Tape<T>& tape, Var x, Rng& rng) {
    return tape.mse(x, tape.constant(random_tensor(rng, tape.value(x).shape)));
}

std::vector<Case> cases() {
    std::vector<Case> c;
    auto rnd = [](Rng& r, int lo, int hi) { return lo + int(r.index(std::uint64_t(hi - lo + 1))); };

    c.push_back({"conv2d", [rnd](Rng& r) {
        const int n = rnd(r, 1, 2), ci = rnd(r, 1, 3), co = rnd(r, 1, 3), k = rnd(r, 1, 5);
        const int h = rnd(r, 3, 7), w = rnd(r, 3, 8), s = rnd(r, 1, 2);
        auto seed = r.bits();
        std::vector<Tensor<T>> in{random_tensor(r, {n, ci, h, w}), random_tensor(r, {co, ci, k, k}),
                                  random_tensor(r, {co})};
        return std::pair{in, Builder([s, seed](Tape<T>& t, const std::vector<Var>& v) {
                             Rng rr(seed);
                             return reduce(t, t.conv2d(v[0], v[1], v[2], s), rr);
                         })};
    }});
    c.push_back({"conv_transpose2d", [rnd](Rng& r) {
        const int n = rnd(r, 1, 2), ci = rnd(r, 1, 3), co = rnd(r, 1, 3), k = rnd(r, 1, 5);
        const int h = rnd(r, 2, 5), w = rnd(r, 2, 6), s = rnd(r, 1, 2);
        auto seed = r.bits();
        std::vector<Tensor<T>> in{random_tensor(r, {n, ci, h, w}), random_tensor(r, {ci, co, k, k}),
                                  random_tensor(r, {co})};
        return std::pair{in, Builder([s, seed](Tape<T>& t, const std::vector<Var>& v) {
                             Rng rr(seed);
                             return reduce(t, t.conv_transpose2d(v[0], v[1], v[2], s), rr);
                         })};
    }});
    for (const bool train : {true, false}) {
        c.push_back({train ? "batchnorm(train)" : "batchnorm(infer)", [rnd, train](Rng& r) {
            const int n = rnd(r, 2, 3), ch = rnd(r, 1, 3), h = rnd(r, 1, 3), w = rnd(r, 2, 4);
            auto seed = r.bits();
            Tensor<T> rm = random_tensor(r, {ch}, -0.5, 0.5);
            Tensor<T> rv = random_tensor(r, {ch}, 0.5, 1.5);
            std::vector<Tensor<T>> in{random_tensor(r, {n, ch, h, w}), random_tensor(r, {ch}, 0.5, 1.5),
                                      random_tensor(r, {ch})};
            return std::pair{in, Builder([=](Tape<T>& t, const std::vector<Var>& v) mutable {
                                 Rng rr(seed);
                                 ad::BatchNormState<T> st;
                                 st.running_mean = &rm;
                                 st.running_var = &rv;
                                 st.update = false;
                                 return reduce(t, t.batchnorm(v[0], v[1], v[2], st,
                                                              train ? ad::Mode::train : ad::Mode::infer),
                                               rr);
                             })};
        }});
    }
    c.push_back({"linear", [rnd](Rng& r) {
        const int n = rnd(r, 1, 4), fi = rnd(r, 1, 6), fo = rnd(r, 1, 5);
        auto seed = r.bits();
        std::vector<Tensor<T>> in{random_tensor(r, {n, fi}), random_tensor(r, {fo, fi}), random_tensor(r, {fo})};
        return std::pair{in, Builder([seed](Tape<T>& t, const std::vector<Var>& v) {
                             Rng rr(seed);
                             return reduce(t, t.linear(v[0], v[1], v[2]), rr);
                         })};
    }});
    auto unary = [&c, rnd](std::string name, std::function<Var(Tape<T>&, Var)> op, bool kink) {
        c.push_back({name, [rnd, op, kink](Rng& r) {
            const Shape s{rnd(r, 1, 2), rnd(r, 1, 3), rnd(r, 2, 4), rnd(r, 2, 4)};
            auto seed = r.bits();
            std::vector<Tensor<T>> in{kink ? away_from_zero(r, s) : random_tensor(r, s)};
            return std::pair{in, Builder([op, seed](Tape<T>& t, const std::vector<Var>& v) {
                                 Rng rr(seed);
                                 return reduce(t, op(t, v[0]), rr);
                             })};
        }});
    };
    unary("elu", [](Tape<T>& t, Var x) { return t.elu(x); }, true);
    unary("scale", [](Tape<T>& t, Var x) { return t.scale(x, -1.7); }, false);
    unary("add_scalar", [](Tape<T>& t, Var x) { return t.add_scalar(x, 0.3); }, false);
    unary("power_scaled", [](Tape<T>& t, Var x) { return t.power_scaled(t.add_scalar(t.scale(x, 0.4), 0.6), 1.0 / 30.0, 2.2); }, false);
    unary("reshape", [](Tape<T>& t, Var x) {
        const auto& s = t.value(x).shape;
        return t.reshape(x, {s[0], int(t.value(x).size()) / s[0]});
    }, false);
    unary("slice_rows", [](Tape<T>& t, Var x) { return t.slice_rows(x, 1, t.value(x).dim(2)); }, false);
    unary("gradient_reversal", [](Tape<T>& t, Var x) { return t.gradient_reversal(x, 0.7); }, false);
    c.back().grad_factor = -0.7;
    c.push_back({"slice_batch", [rnd](Rng& r) {
        const Shape s{rnd(r, 2, 4), rnd(r, 1, 3), 2, 3};
        auto seed = r.bits();
        std::vector<Tensor<T>> in{random_tensor(r, s)};
        return std::pair{in, Builder([seed](Tape<T>& t, const std::vector<Var>& v) {
                             Rng rr(seed);
                             return reduce(t, t.slice_batch(v[0], 1, t.value(v[0]).dim(0)), rr);
                         })};
    }});
    for (const bool subtract : {false, true}) {
        c.push_back({subtract ? "sub" : "add", [rnd, subtract](Rng& r) {
            const Shape s{rnd(r, 1, 2), rnd(r, 1, 3), 2, rnd(r, 2, 4)};
            auto seed = r.bits();
            std::vector<Tensor<T>> in{random_tensor(r, s), random_tensor(r, s)};
            return std::pair{in, Builder([seed, subtract](Tape<T>& t, const std::vector<Var>& v) {
                                 Rng rr(seed);
                                 return reduce(t, subtract ? t.sub(v[0], v[1]) : t.add(v[0], v[1]), rr);
                             })};
        }});
    }
    c.push_back({"matmul_const", [rnd](Rng& r) {
        const int n = rnd(r, 1, 2), ch = rnd(r, 1, 3), k = rnd(r, 2, 6), m = rnd(r, 1, 5);
        auto seed = r.bits();
        auto mat = std::make_shared<ad::MatrixRM<T>>(m, k);
        for (Eigen::Index i = 0; i < mat->size(); ++i) mat->data()[i] = r.uniform(-1.0, 1.0);
        std::vector<Tensor<T>> in{random_tensor(r, {n, ch, k})};
        return std::pair{in, Builder([seed, mat](Tape<T>& t, const std::vector<Var>& v) {
                             Rng rr(seed);
                             return reduce(t, t.matmul_const(v[0], *mat), rr);
                         })};
    }});
    c.push_back({"l1", [rnd](Rng& r) {
        const Shape s{rnd(r, 1, 3), rnd(r, 1, 3), 2, 2};
        Tensor<T> a = random_tensor(r, s);
        Tensor<T> b = a;
        // Keep |a - b| away from the kink.
        for (std::size_t i = 0; i < b.size(); ++i)
            b.data[i] += (r.uniform() < 0.5 ? -1.0 : 1.0) * r.uniform(0.05, 1.0);
        return std::pair{std::vector<Tensor<T>>{a, b},
                         Builder([](Tape<T>& t, const std::vector<Var>& v) { return t.l1(v[0], v[1]); })};
    }});
    c.push_back({"mse", [rnd](Rng& r) {
        const Shape s{rnd(r, 1, 3), rnd(r, 1, 4)};
        return std::pair{std::vector<Tensor<T>>{random_tensor(r, s), random_tensor(r, s)},
                         Builder([](Tape<T>& t, const std::vector<Var>& v) { return t.mse(v[0], v[1]); })};
    }});
    c.push_back({"l2_norm", [rnd](Rng& r) {
        const Shape s{rnd(r, 1, 3), rnd(r, 1, 3), 3};
        return std::pair{std::vector<Tensor<T>>{random_tensor(r, s), random_tensor(r, s)},
                         Builder([](Tape<T>& t, const std::vector<Var>& v) { return t.l2_norm(v[0], v[1]); })};
    }});
    c.push_back({"softmax_xent", [rnd](Rng& r) {
        const int n = rnd(r, 1, 4), k = rnd(r, 2, 4);
        std::vector<int> labels;
        for (int i = 0; i < n; ++i) labels.push_back(int(r.index(std::uint64_t(k))));
        return std::pair{std::vector<Tensor<T>>{random_tensor(r, {n, k}, -2.0, 2.0)},
                         Builder([labels](Tape<T>& t, const std::vector<Var>& v) {
                             return t.softmax_xent(v[0], labels);
                         })};
    }});
    return c;
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed, int instances, double tolerance) {
    std::vector<GradCheckResult> out;
    std::uint64_t id = 0;
    for (const auto& cs : cases()) {
        Rng rng = Rng::stream(seed, ++id);
        GradCheckResult res;
        res.op = cs.name;
        for (int i = 0; i < instances; ++i) {
            auto [inputs, build] = cs.make(rng);
            res.max_rel_error = std::max(res.max_rel_error, check_instance(rng, std::move(inputs), build, cs.grad_factor));
            ++res.instances;
        }
        res.passed = res.max_rel_error < tolerance;
        out.push_back(res);
    }
    return out;
}

std::string format_gradcheck(const std::vector<GradCheckResult>& results) {
    std::string s = "op                   instances  max_rel_err  result\n";
    char buf[256];
    for (const auto& r : results) {
        std::snprintf(buf, sizeof buf, "%-20s %9d  %11.3e  %s\n", r.op.c_str(), r.instances, r.max_rel_error,
                      r.passed ? "pass" : "FAIL");
        s += buf;
    }
    return s;
}

}  // namespace skyhdr
