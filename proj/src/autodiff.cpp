#include "skyhdr/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "skyhdr/error.hpp"

namespace skyhdr::ad {

std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) {
        if (d < 0) throw UsageError("negative tensor dimension");
        n *= std::size_t(d);
    }
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream ss;
    ss << "(";
    for (std::size_t i = 0; i < s.size(); ++i) ss << (i ? "," : "") << s[i];
    ss << ")";
    return ss.str();
}

template <typename T>
Tensor<T>::Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != numel(shape))
        throw UsageError("tensor data size does not match shape " + shape_str(shape));
}

template struct Tensor<float>;
template struct Tensor<double>;

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw UsageError("autodiff: " + what);
}

template <typename T>
using MapM = Eigen::Map<MatrixRM<T>>;
template <typename T>
using CMapM = Eigen::Map<const MatrixRM<T>>;

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
    const int k = g.kernel;
    const int hw = g.out_h * g.out_w;
    for (int ci = 0; ci < g.in_channels; ++ci)
        for (int kh = 0; kh < k; ++kh)
            for (int kw = 0; kw < k; ++kw) {
                T* row = cols + std::size_t((ci * k + kh) * k + kw) * hw;
                const T* plane = x + std::size_t(ci) * g.in_h * g.in_w;
                for (int oh = 0; oh < g.out_h; ++oh) {
                    const int ih = oh * g.stride - g.pad_top + kh;
                    T* dst = row + oh * g.out_w;
                    if (ih < 0 || ih >= g.in_h) {
                        std::fill(dst, dst + g.out_w, T(0));
                        continue;
                    }
                    const T* src = plane + std::size_t(ih) * g.in_w;
                    for (int ow = 0; ow < g.out_w; ++ow) {
                        const int iw = ow * g.stride - g.pad_left + kw;
                        dst[ow] = (iw >= 0 && iw < g.in_w) ? src[iw] : T(0);
                    }
                }
            }
}

template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* x) {
    const int k = g.kernel;
    const int hw = g.out_h * g.out_w;
    for (int ci = 0; ci < g.in_channels; ++ci)
        for (int kh = 0; kh < k; ++kh)
            for (int kw = 0; kw < k; ++kw) {
                const T* row = cols + std::size_t((ci * k + kh) * k + kw) * hw;
                T* plane = x + std::size_t(ci) * g.in_h * g.in_w;
                for (int oh = 0; oh < g.out_h; ++oh) {
                    const int ih = oh * g.stride - g.pad_top + kh;
                    if (ih < 0 || ih >= g.in_h) continue;
                    T* dst = plane + std::size_t(ih) * g.in_w;
                    const T* src = row + oh * g.out_w;
                    for (int ow = 0; ow < g.out_w; ++ow) {
                        const int iw = ow * g.stride - g.pad_left + kw;
                        if (iw >= 0 && iw < g.in_w) dst[iw] += src[ow];
                    }
                }
            }
}

}  // namespace

ConvGeometry conv_geometry(int batch, int in_channels, int in_h, int in_w, int out_channels,
                           int kernel, int stride) {
    require(kernel >= 1 && stride >= 1, "kernel and stride must be positive");
    ConvGeometry g;
    g.batch = batch;
    g.in_channels = in_channels;
    g.in_h = in_h;
    g.in_w = in_w;
    g.out_channels = out_channels;
    g.kernel = kernel;
    g.stride = stride;
    g.out_h = (in_h + stride - 1) / stride;
    g.out_w = (in_w + stride - 1) / stride;
    g.pad_top = std::max((g.out_h - 1) * stride + kernel - in_h, 0) / 2;
    g.pad_left = std::max((g.out_w - 1) * stride + kernel - in_w, 0) / 2;
    return g;
}

template <typename T>
void conv_forward(const T* x, const T* w, const ConvGeometry& g, T* y) {
    const int ckk = g.in_channels * g.kernel * g.kernel;
    const int hw = g.out_h * g.out_w;
    std::vector<T> cols(std::size_t(ckk) * hw);
    CMapM<T> wm(w, g.out_channels, ckk);
    for (int n = 0; n < g.batch; ++n) {
        im2col(x + std::size_t(n) * g.in_channels * g.in_h * g.in_w, g, cols.data());
        MapM<T> ym(y + std::size_t(n) * g.out_channels * hw, g.out_channels, hw);
        ym.noalias() = wm * CMapM<T>(cols.data(), ckk, hw);
    }
}

template <typename T>
void conv_backward_input(const T* gy, const T* w, const ConvGeometry& g, T* gx) {
    const int ckk = g.in_channels * g.kernel * g.kernel;
    const int hw = g.out_h * g.out_w;
    std::vector<T> cols(std::size_t(ckk) * hw);
    CMapM<T> wm(w, g.out_channels, ckk);
    for (int n = 0; n < g.batch; ++n) {
        MapM<T> cm(cols.data(), ckk, hw);
        cm.noalias() = wm.transpose() * CMapM<T>(gy + std::size_t(n) * g.out_channels * hw,
                                                 g.out_channels, hw);
        col2im(cols.data(), g, gx + std::size_t(n) * g.in_channels * g.in_h * g.in_w);
    }
}

template <typename T>
void conv_backward_weight(const T* gy, const T* x, const ConvGeometry& g, T* gw) {
    const int ckk = g.in_channels * g.kernel * g.kernel;
    const int hw = g.out_h * g.out_w;
    std::vector<T> cols(std::size_t(ckk) * hw);
    MapM<T> gwm(gw, g.out_channels, ckk);
    for (int n = 0; n < g.batch; ++n) {
        im2col(x + std::size_t(n) * g.in_channels * g.in_h * g.in_w, g, cols.data());
        gwm.noalias() += CMapM<T>(gy + std::size_t(n) * g.out_channels * hw, g.out_channels, hw) *
                         CMapM<T>(cols.data(), ckk, hw).transpose();
    }
}

template void conv_forward<float>(const float*, const float*, const ConvGeometry&, float*);
template void conv_forward<double>(const double*, const double*, const ConvGeometry&, double*);
template void conv_backward_input<float>(const float*, const float*, const ConvGeometry&, float*);
template void conv_backward_input<double>(const double*, const double*, const ConvGeometry&,
                                          double*);
template void conv_backward_weight<float>(const float*, const float*, const ConvGeometry&, float*);
template void conv_backward_weight<double>(const double*, const double*, const ConvGeometry&,
                                           double*);

// ---------------------------------------------------------------------------

template <typename T>
Var Tape<T>::push(Tensor<T> value, bool requires_grad, std::function<void()> backward) {
    require(!backward_done_, "tape already differentiated; record a new tape");
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{int(nodes_.size()) - 1};
}

template <typename T>
Var Tape<T>::constant(Tensor<T> value) {
    return push(std::move(value), false);
}

template <typename T>
Var Tape<T>::parameter(Tensor<T> value) {
    return push(std::move(value), true);
}

template <typename T>
Var Tape<T>::conv2d(Var x, Var w, Var b, int stride) {
    const auto& xs = value(x).shape;
    const auto& ws = value(w).shape;
    require(xs.size() == 4 && ws.size() == 4 && ws[2] == ws[3] && ws[1] == xs[1],
            "conv2d shape mismatch: x" + shape_str(xs) + " w" + shape_str(ws));
    require(value(b).size() == std::size_t(ws[0]), "conv2d bias size mismatch");
    const ConvGeometry g = conv_geometry(xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], stride);
    Tensor<T> y({g.batch, g.out_channels, g.out_h, g.out_w});
    conv_forward(value(x).data.data(), value(w).data.data(), g, y.data.data());
    const auto& bias = value(b).data;
    const std::size_t hw = std::size_t(g.out_h) * g.out_w;
    for (int n = 0; n < g.batch; ++n)
        for (int c = 0; c < g.out_channels; ++c) {
            T* p = y.data.data() + (std::size_t(n) * g.out_channels + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) p[i] += bias[std::size_t(c)];
        }
    const Var out{int(nodes_.size())};
    return push(std::move(y), rg(x) || rg(w) || rg(b), [this, x, w, b, out, g, hw] {
        const T* gy = gref(out).data();
        if (rg(x)) conv_backward_input(gy, value(w).data.data(), g, gref(x).data());
        if (rg(w)) conv_backward_weight(gy, value(x).data.data(), g, gref(w).data());
        if (rg(b)) {
            auto& gb = gref(b);
            for (int c = 0; c < g.out_channels; ++c) {
                double s = 0.0;
                for (int n = 0; n < g.batch; ++n) {
                    const T* p = gy + (std::size_t(n) * g.out_channels + c) * hw;
                    for (std::size_t i = 0; i < hw; ++i) s += p[i];
                }
                gb[std::size_t(c)] += T(s);
            }
        }
    });
}

template <typename T>
Var Tape<T>::conv_transpose2d(Var x, Var w, Var b, int stride) {
    const auto& xs = value(x).shape;
    const auto& ws = value(w).shape;
    require(xs.size() == 4 && ws.size() == 4 && ws[2] == ws[3] && ws[0] == xs[1],
            "conv_transpose2d shape mismatch: x" + shape_str(xs) + " w" + shape_str(ws));
    require(value(b).size() == std::size_t(ws[1]), "conv_transpose2d bias size mismatch");
    // Geometry of the adjoint convolution: output space -> input space.
    const ConvGeometry g =
        conv_geometry(xs[0], ws[1], xs[2] * stride, xs[3] * stride, ws[0], ws[2], stride);
    require(g.out_h == xs[2] && g.out_w == xs[3], "conv_transpose2d geometry does not close");
    Tensor<T> y({g.batch, g.in_channels, g.in_h, g.in_w});
    conv_backward_input(value(x).data.data(), value(w).data.data(), g, y.data.data());
    const auto& bias = value(b).data;
    const std::size_t hw = std::size_t(g.in_h) * g.in_w;
    for (int n = 0; n < g.batch; ++n)
        for (int c = 0; c < g.in_channels; ++c) {
            T* p = y.data.data() + (std::size_t(n) * g.in_channels + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) p[i] += bias[std::size_t(c)];
        }
    const Var out{int(nodes_.size())};
    return push(std::move(y), rg(x) || rg(w) || rg(b), [this, x, w, b, out, g, hw] {
        const T* gy = gref(out).data();
        if (rg(x)) {
            std::vector<T> tmp(value(x).size());
            conv_forward(gy, value(w).data.data(), g, tmp.data());
            auto& gx = gref(x);
            for (std::size_t i = 0; i < tmp.size(); ++i) gx[i] += tmp[i];
        }
        if (rg(w)) conv_backward_weight(value(x).data.data(), gy, g, gref(w).data());
        if (rg(b)) {
            auto& gb = gref(b);
            for (int c = 0; c < g.in_channels; ++c) {
                double s = 0.0;
                for (int n = 0; n < g.batch; ++n) {
                    const T* p = gy + (std::size_t(n) * g.in_channels + c) * hw;
                    for (std::size_t i = 0; i < hw; ++i) s += p[i];
                }
                gb[std::size_t(c)] += T(s);
            }
        }
    });
}

template <typename T>
Var Tape<T>::batchnorm(Var x, Var scale, Var shift, BatchNormState<T> state, Mode mode) {
    const auto& xs = value(x).shape;
    require(xs.size() >= 2, "batchnorm needs at least (N,C)");
    const int batch = xs[0];
    const int channels = xs[1];
    std::size_t spatial = 1;
    for (std::size_t i = 2; i < xs.size(); ++i) spatial *= std::size_t(xs[i]);
    require(value(scale).size() == std::size_t(channels) &&
                value(shift).size() == std::size_t(channels),
            "batchnorm scale/shift size mismatch");
    require(state.running_mean && state.running_var &&
                state.running_mean->size() == std::size_t(channels) &&
                state.running_var->size() == std::size_t(channels),
            "batchnorm running statistics missing or mis-sized");
    const double count = double(batch) * double(spatial);
    const auto& xv = value(x).data;
    const auto& gamma = value(scale).data;
    const auto& beta = value(shift).data;

    Tensor<T> y(xs);
    Tensor<T> xhat(xs);
    std::vector<double> inv_std(static_cast<std::size_t>(channels));
    for (int c = 0; c < channels; ++c) {
        double mean, var;
        if (mode == Mode::train) {
            double s = 0.0;
            for (int n = 0; n < batch; ++n) {
                const T* p = xv.data() + (std::size_t(n) * channels + c) * spatial;
                for (std::size_t i = 0; i < spatial; ++i) s += p[i];
            }
            mean = s / count;
            double ss = 0.0;
            for (int n = 0; n < batch; ++n) {
                const T* p = xv.data() + (std::size_t(n) * channels + c) * spatial;
                for (std::size_t i = 0; i < spatial; ++i) ss += (p[i] - mean) * (p[i] - mean);
            }
            var = ss / count;
            if (state.update) {
                const double m = state.momentum;
                auto& rm = state.running_mean->data[std::size_t(c)];
                auto& rv = state.running_var->data[std::size_t(c)];
                const double unbiased = count > 1.0 ? var * count / (count - 1.0) : var;
                rm = T(m * rm + (1.0 - m) * mean);
                rv = T(m * rv + (1.0 - m) * unbiased);
            }
        } else {
            mean = state.running_mean->data[std::size_t(c)];
            var = state.running_var->data[std::size_t(c)];
        }
        const double is = 1.0 / std::sqrt(var + state.eps);
        inv_std[std::size_t(c)] = is;
        for (int n = 0; n < batch; ++n) {
            const std::size_t off = (std::size_t(n) * channels + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
                const double h = (xv[off + i] - mean) * is;
                xhat.data[off + i] = T(h);
                y.data[off + i] = T(gamma[std::size_t(c)] * h + beta[std::size_t(c)]);
            }
        }
    }
    const Var out{int(nodes_.size())};
    return push(std::move(y), rg(x) || rg(scale) || rg(shift),
                [this, x, scale, shift, out, mode, batch, channels, spatial, count,
                 xhat = std::move(xhat), inv_std = std::move(inv_std)] {
                    const auto& gy = gref(out);
                    const auto& gamma = value(scale).data;
                    for (int c = 0; c < channels; ++c) {
                        double sg = 0.0, sgx = 0.0;
                        for (int n = 0; n < batch; ++n) {
                            const std::size_t off = (std::size_t(n) * channels + c) * spatial;
                            for (std::size_t i = 0; i < spatial; ++i) {
                                sg += gy[off + i];
                                sgx += double(gy[off + i]) * xhat.data[off + i];
                            }
                        }
                        if (rg(scale)) gref(scale)[std::size_t(c)] += T(sgx);
                        if (rg(shift)) gref(shift)[std::size_t(c)] += T(sg);
                        if (!rg(x)) continue;
                        auto& gx = gref(x);
                        const double k = gamma[std::size_t(c)] * inv_std[std::size_t(c)];
                        for (int n = 0; n < batch; ++n) {
                            const std::size_t off = (std::size_t(n) * channels + c) * spatial;
                            for (std::size_t i = 0; i < spatial; ++i) {
                                if (mode == Mode::train)
                                    gx[off + i] += T(k * (gy[off + i] - sg / count -
                                                          xhat.data[off + i] * sgx / count));
                                else
                                    gx[off + i] += T(k * gy[off + i]);
                            }
                        }
                    }
                });
}

template <typename T>
Var Tape<T>::linear(Var x, Var w, Var b) {
    const auto& xs = value(x).shape;
    const auto& ws = value(w).shape;
    require(xs.size() == 2 && ws.size() == 2 && ws[1] == xs[1],
            "linear shape mismatch: x" + shape_str(xs) + " w" + shape_str(ws));
    require(value(b).size() == std::size_t(ws[0]), "linear bias size mismatch");
    const int n = xs[0], fi = xs[1], fo = ws[0];
    Tensor<T> y({n, fo});
    MapM<T> ym(y.data.data(), n, fo);
    ym.noalias() = CMapM<T>(value(x).data.data(), n, fi) *
                   CMapM<T>(value(w).data.data(), fo, fi).transpose();
    for (int i = 0; i < n; ++i)
        for (int o = 0; o < fo; ++o) ym(i, o) += value(b).data[std::size_t(o)];
    const Var out{int(nodes_.size())};
    return push(std::move(y), rg(x) || rg(w) || rg(b), [this, x, w, b, out, n, fi, fo] {
        CMapM<T> gy(gref(out).data(), n, fo);
        if (rg(x))
            MapM<T>(gref(x).data(), n, fi).noalias() +=
                gy * CMapM<T>(value(w).data.data(), fo, fi);
        if (rg(w))
            MapM<T>(gref(w).data(), fo, fi).noalias() +=
                gy.transpose() * CMapM<T>(value(x).data.data(), n, fi);
        if (rg(b)) {
            auto& gb = gref(b);
            for (int o = 0; o < fo; ++o) {
                double s = 0.0;
                for (int i = 0; i < n; ++i) s += gy(i, o);
                gb[std::size_t(o)] += T(s);
            }
        }
    });
}

template <typename T>
Var Tape<T>::elu(Var x) {
    Tensor<T> y(value(x).shape);
    const auto& xv = value(x).data;
    for (std::size_t i = 0; i < xv.size(); ++i)
        y.data[i] = xv[i] > T(0) ? xv[i] : T(std::expm1(double(xv[i])));
    const Var out{int(nodes_.size())};
    return push(std::move(y), rg(x), [this, x, out] {
        const auto& xv = value(x).data;
        const auto& yv = value(out).data;
        const auto& gy = gref(out);
        auto& gx = gref(x);
        for (std::size_t i = 0; i < xv.size(); ++i)
            gx[i] += xv[i] > T(0) ? gy[i] : gy[i] * (yv[i] + T(1));
    });
}

template <typename T>
Var Tape<T>::add(Var x, Var y) {
    require(value(x).shape == value(y).shape, "add shape mismatch " + shape_str(value(x).shape) +
                                                  " vs " + shape_str(value(y).shape));
    Tensor<T> z(value(x).shape);
    for (std::size_t i = 0; i < z.size(); ++i) z.data[i] = value(x).data[i] + value(y).data[i];
    const Var out{int(nodes_.size())};
    return push(std::move(z), rg(x) || rg(y), [this, x, y, out] {
        const auto& gz = gref(out);
        if (rg(x)) {
            auto& gx = gref(x);
            for (std::size_t i = 0; i < gz.size(); ++i) gx[i] += gz[i];
        }
        if (rg(y)) {
            auto& gy = gref(y);
            for (std::size_t i = 0; i < gz.size(); ++i) gy[i] += gz[i];
        }
    });
}

template <typename T>
Var Tape<T>::sub(Var x, Var y) {
    require(value(x).shape == value(y).shape, "sub shape mismatch");
    Tensor<T> z(value(x).shape);
    for (std::size_t i = 0; i < z.size(); ++i) z.data[i] = value(x).data[i] - value(y).data[i];
    const Var out{int(nodes_.size())};
    return push(std::move(z), rg(x) || rg(y), [this, x, y, out] {
        const auto& gz = gref(out);
        if (rg(x)) {
            auto& gx = gref(x);
            for (std::size_t i = 0; i < gz.size(); ++i) gx[i] += gz[i];
        }
        if (rg(y)) {
            auto& gy = gref(y);
            for (std::size_t i = 0; i < gz.size(); ++i) gy[i] -= gz[i];
        }
    });
}

template <typename T>
Var Tape<T>::scale(Var x, T s) {
    Tensor<T> y(value(x).shape);
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] = s * value(x).data[i];
    const Var out{int(nodes_.size())};
    return push(std::move(y), rg(x), [this, x, out, s] {
        const auto& gy = gref(out);
        auto& gx = gref(x);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += s * gy[i];
    });
}

template <typename T>
Var Tape<T>::add_scalar(Var x, T s) {
    Tensor<T> y(value(x).shape);
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] = value(x).data[i] + s;
    const Var out{int(nodes_.size())};
    return push(std::move(y), rg(x), [this, x, out] {
        const auto& gy = gref(out);
        auto& gx = gref(x);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    });
}

template <typename T>
Var Tape<T>::power_scaled(Var x, T alpha, T gamma) {
    require(alpha > T(0) && gamma > T(0), "power_scaled needs alpha, gamma > 0");
    Tensor<T> y(value(x).shape);
    const auto& xv = value(x).data;
    for (std::size_t i = 0; i < y.size(); ++i)
        y.data[i] = T(std::pow(std::max(double(xv[i]), 0.0) / alpha, double(gamma)));
    const Var out{int(nodes_.size())};
    return push(std::move(y), rg(x), [this, x, out, alpha, gamma] {
        const auto& xv = value(x).data;
        const auto& gy = gref(out);
        auto& gx = gref(x);
        for (std::size_t i = 0; i < gy.size(); ++i) {
            if (xv[i] <= T(0)) continue;
            const double d = double(gamma) / alpha *
                             std::pow(double(xv[i]) / alpha, double(gamma) - 1.0);
            gx[i] += T(d * gy[i]);
        }
    });
}

template <typename T>
Var Tape<T>::reshape(Var x, Shape shape) {
    require(numel(shape) == value(x).size(),
            "reshape " + shape_str(value(x).shape) + " -> " + shape_str(shape));
    Tensor<T> y(std::move(shape), value(x).data);
    const Var out{int(nodes_.size())};
    return push(std::move(y), rg(x), [this, x, out] {
        const auto& gy = gref(out);
        auto& gx = gref(x);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    });
}

template <typename T>
Var Tape<T>::slice_rows(Var x, int begin, int end) {
    const auto& xs = value(x).shape;
    require(xs.size() == 4 && 0 <= begin && begin < end && end <= xs[2], "slice_rows bounds");
    const int n = xs[0], c = xs[1], h = xs[2], w = xs[3], rows = end - begin;
    Tensor<T> y({n, c, rows, w});
    const std::size_t plane_in = std::size_t(h) * w;
    const std::size_t plane_out = std::size_t(rows) * w;
    for (int p = 0; p < n * c; ++p) {
        const T* src = value(x).data.data() + std::size_t(p) * plane_in + std::size_t(begin) * w;
        std::copy(src, src + plane_out, y.data.data() + std::size_t(p) * plane_out);
    }
    const Var out{int(nodes_.size())};
    return push(std::move(y), rg(x), [this, x, out, n, c, begin, plane_in, plane_out, w] {
        const auto& gy = gref(out);
        auto& gx = gref(x);
        for (int p = 0; p < n * c; ++p) {
            T* dst = gx.data() + std::size_t(p) * plane_in + std::size_t(begin) * w;
            const T* src = gy.data() + std::size_t(p) * plane_out;
            for (std::size_t i = 0; i < plane_out; ++i) dst[i] += src[i];
        }
    });
}

template <typename T>
Var Tape<T>::slice_batch(Var x, int begin, int end) {
    const auto& xs = value(x).shape;
    require(!xs.empty() && 0 <= begin && begin < end && end <= xs[0], "slice_batch bounds");
    Shape ys = xs;
    ys[0] = end - begin;
    const std::size_t per = value(x).size() / std::size_t(xs[0]);
    Tensor<T> y(ys);
    std::copy(value(x).data.begin() + std::ptrdiff_t(per * begin),
              value(x).data.begin() + std::ptrdiff_t(per * end), y.data.begin());
    const Var out{int(nodes_.size())};
    return push(std::move(y), rg(x), [this, x, out, per, begin] {
        const auto& gy = gref(out);
        auto& gx = gref(x);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[per * std::size_t(begin) + i] += gy[i];
    });
}

template <typename T>
Var Tape<T>::gradient_reversal(Var x, T lambda) {
    Tensor<T> y = value(x);
    const Var out{int(nodes_.size())};
    return push(std::move(y), rg(x), [this, x, out, lambda] {
        const auto& gy = gref(out);
        auto& gx = gref(x);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += -lambda * gy[i];
    });
}

template <typename T>
Var Tape<T>::matmul_const(Var x, const MatrixRM<T>& m) {
    const auto& xs = value(x).shape;
    require(xs.size() >= 2, "matmul_const needs (N,C,...)");
    const std::size_t k = value(x).size() / (std::size_t(xs[0]) * xs[1]);
    require(k == std::size_t(m.cols()), "matmul_const inner dimension mismatch");
    const int rows_in = xs[0] * xs[1];
    Tensor<T> y({xs[0], xs[1], int(m.rows())});
    MapM<T>(y.data.data(), rows_in, m.rows()).noalias() =
        CMapM<T>(value(x).data.data(), rows_in, Eigen::Index(k)) * m.transpose();
    const Var out{int(nodes_.size())};
    const MatrixRM<T>* mp = &m;
    return push(std::move(y), rg(x), [this, x, out, mp, rows_in, k] {
        MapM<T>(gref(x).data(), rows_in, Eigen::Index(k)).noalias() +=
            CMapM<T>(gref(out).data(), rows_in, mp->rows()) * (*mp);
    });
}

template <typename T>
Var Tape<T>::l1(Var x, Var target) {
    require(value(x).shape == value(target).shape, "l1 shape mismatch");
    const auto& xv = value(x).data;
    const auto& tv = value(target).data;
    double s = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) s += std::abs(double(xv[i]) - double(tv[i]));
    const double count = double(xv.size());
    const Var out{int(nodes_.size())};
    return push(Tensor<T>({1}, {T(s / count)}), rg(x) || rg(target),
                [this, x, target, out, count] {
                    const auto& xv = value(x).data;
                    const auto& tv = value(target).data;
                    const double go = gref(out)[0] / count;
                    for (std::size_t i = 0; i < xv.size(); ++i) {
                        const double d = double(xv[i]) - double(tv[i]);
                        const double sgn = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                        if (rg(x)) gref(x)[i] += T(go * sgn);
                        if (rg(target)) gref(target)[i] -= T(go * sgn);
                    }
                });
}

template <typename T>
Var Tape<T>::mse(Var x, Var target) {
    require(value(x).shape == value(target).shape, "mse shape mismatch");
    const auto& xv = value(x).data;
    const auto& tv = value(target).data;
    double s = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) {
        const double d = double(xv[i]) - double(tv[i]);
        s += d * d;
    }
    const double count = double(xv.size());
    const Var out{int(nodes_.size())};
    return push(Tensor<T>({1}, {T(s / count)}), rg(x) || rg(target),
                [this, x, target, out, count] {
                    const auto& xv = value(x).data;
                    const auto& tv = value(target).data;
                    const double go = 2.0 * gref(out)[0] / count;
                    for (std::size_t i = 0; i < xv.size(); ++i) {
                        const double d = double(xv[i]) - double(tv[i]);
                        if (rg(x)) gref(x)[i] += T(go * d);
                        if (rg(target)) gref(target)[i] -= T(go * d);
                    }
                });
}

template <typename T>
Var Tape<T>::l2_norm(Var x, Var target) {
    require(value(x).shape == value(target).shape && !value(x).shape.empty(), "l2_norm shape mismatch");
    const auto& xv = value(x).data;
    const auto& tv = value(target).data;
    const int n = value(x).shape[0];
    const std::size_t per = xv.size() / std::size_t(n);
    std::vector<double> norms(std::size_t(n), 0.0);
    double total = 0.0;
    for (int b = 0; b < n; ++b) {
        double s = 0.0;
        for (std::size_t i = std::size_t(b) * per; i < std::size_t(b + 1) * per; ++i) {
            const double d = double(xv[i]) - double(tv[i]);
            s += d * d;
        }
        norms[std::size_t(b)] = std::sqrt(s);
        total += norms[std::size_t(b)];
    }
    const Var out{int(nodes_.size())};
    return push(Tensor<T>({1}, {T(total / n)}), rg(x) || rg(target),
                [this, x, target, out, n, per, norms] {
                    const auto& xv = value(x).data;
                    const auto& tv = value(target).data;
                    const double go = double(gref(out)[0]) / n;
                    for (int b = 0; b < n; ++b) {
                        const double len = norms[std::size_t(b)];
                        if (len == 0.0) continue;
                        for (std::size_t i = std::size_t(b) * per; i < std::size_t(b + 1) * per; ++i) {
                            const double g = go * (double(xv[i]) - double(tv[i])) / len;
                            if (rg(x)) gref(x)[i] += T(g);
                            if (rg(target)) gref(target)[i] -= T(g);
                        }
                    }
                });
}

template <typename T>
Var Tape<T>::softmax_xent(Var logits, std::vector<int> labels) {
    const auto& ls = value(logits).shape;
    require(ls.size() == 2 && labels.size() == std::size_t(ls[0]), "softmax_xent shape mismatch");
    const int n = ls[0], k = ls[1];
    const auto& lv = value(logits).data;
    std::vector<double> prob(lv.size());
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        require(labels[std::size_t(i)] >= 0 && labels[std::size_t(i)] < k, "label out of range");
        const T* row = lv.data() + std::size_t(i) * k;
        double mx = row[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, double(row[j]));
        double z = 0.0;
        for (int j = 0; j < k; ++j) z += std::exp(double(row[j]) - mx);
        for (int j = 0; j < k; ++j)
            prob[std::size_t(i) * k + j] = std::exp(double(row[j]) - mx) / z;
        total += mx + std::log(z) - double(row[labels[std::size_t(i)]]);
    }
    const Var out{int(nodes_.size())};
    return push(Tensor<T>({1}, {T(total / n)}), rg(logits),
                [this, logits, out, n, k, labels = std::move(labels), prob = std::move(prob)] {
                    const double go = gref(out)[0] / n;
                    auto& gl = gref(logits);
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < k; ++j) {
                            const std::size_t idx = std::size_t(i) * k + j;
                            const double onehot = j == labels[std::size_t(i)] ? 1.0 : 0.0;
                            gl[idx] += T(go * (prob[idx] - onehot));
                        }
                });
}

template <typename T>
void Tape<T>::backward(Var loss) {
    require(!backward_done_, "backward() may only run once per tape");
    require(value(loss).size() == 1, "backward() needs a scalar loss");
    for (auto& n : nodes_)
        if (n.requires_grad) n.grad = Tensor<T>(n.value.shape);
    backward_done_ = true;
    if (!rg(loss)) return;
    node(loss).grad.data[0] = T(1);
    for (int i = loss.id; i >= 0; --i) {
        auto& n = nodes_[std::size_t(i)];
        if (n.requires_grad && n.backward) n.backward();
    }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace skyhdr::ad
