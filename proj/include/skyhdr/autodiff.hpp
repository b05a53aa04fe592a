#pragma once

// Minimal tape-based reverse-mode differentiation, specialised to the
// operator set of the panorama autoencoder. Instantiated for float (training)
// and double (gradient checks).

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace skyhdr::ad {

using Shape = std::vector<int>;

std::size_t numel(const Shape& s);
std::string shape_str(const Shape& s);

template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(Shape s, T fill = T{}) : shape(std::move(s)), data(numel(shape), fill) {}
    Tensor(Shape s, std::vector<T> values);

    std::size_t size() const { return data.size(); }
    int dim(std::size_t i) const { return shape.at(i); }
    int rank() const { return int(shape.size()); }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.assign(data.begin(), data.end());
        return out;
    }
};

template <typename T>
using MatrixRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Handle to a node on a Tape.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

enum class Mode { train, infer };

/// Running statistics owned by the caller. In train mode with update set, the
/// op blends batch statistics in: stat = momentum * stat + (1 - momentum) * batch.
template <typename T>
struct BatchNormState {
    Tensor<T>* running_mean = nullptr;
    Tensor<T>* running_var = nullptr;
    bool update = true;
    double momentum = 0.9;
    double eps = 1e-5;
};

template <typename T>
class Tape {
public:
    Var constant(Tensor<T> value);
    Var parameter(Tensor<T> value);

    const Tensor<T>& value(Var v) const { return nodes_.at(std::size_t(v.id)).value; }
    /// Gradient after backward(); empty for nodes that do not require grad.
    const Tensor<T>& grad(Var v) const { return nodes_.at(std::size_t(v.id)).grad; }
    bool requires_grad(Var v) const { return nodes_.at(std::size_t(v.id)).requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    /// x: (N,Ci,H,W), w: (Co,Ci,K,K), b: (Co). "Same" padding: output is
    /// ceil(H/stride) x ceil(W/stride), padding split with the extra row/column
    /// at the bottom/right.
    Var conv2d(Var x, Var w, Var b, int stride = 2);
    /// x: (N,Ci,H,W), w: (Ci,Co,K,K), b: (Co). Output (N,Co,H*stride,W*stride);
    /// the forward pass is the input-adjoint of conv2d with the same weights.
    Var conv_transpose2d(Var x, Var w, Var b, int stride = 2);
    /// Per-channel normalisation over every axis except 1.
    Var batchnorm(Var x, Var scale, Var shift, BatchNormState<T> state, Mode mode);
    /// x: (N,F), w: (Fo,F), b: (Fo).
    Var linear(Var x, Var w, Var b);
    Var elu(Var x);
    Var add(Var x, Var y);
    Var sub(Var x, Var y);
    Var scale(Var x, T s);
    Var add_scalar(Var x, T s);
    /// (max(x,0) / alpha)^gamma elementwise.
    Var power_scaled(Var x, T alpha, T gamma);
    Var reshape(Var x, Shape shape);
    /// Rows [begin, end) of an (N,C,H,W) tensor.
    Var slice_rows(Var x, int begin, int end);
    /// Batch entries [begin, end).
    Var slice_batch(Var x, int begin, int end);
    /// Identity forward, gradient scaled by -lambda.
    Var gradient_reversal(Var x, T lambda);
    /// Treats x as (N, C, K) with K = m.cols() and returns (N, C, m.rows()),
    /// y[n,c,:] = m * x[n,c,:]. The matrix must outlive the tape.
    Var matmul_const(Var x, const MatrixRM<T>& m);

    /// Mean absolute difference (scalar).
    Var l1(Var x, Var target);
    /// Mean squared difference (scalar).
    Var mse(Var x, Var target);
    /// Batch mean of the per-sample Euclidean norms of x - target, with the
    /// batch along dimension 0. A sample with zero difference gets zero gradient.
    Var l2_norm(Var x, Var target);
    /// Mean softmax cross-entropy of (N,K) logits against class labels.
    Var softmax_xent(Var logits, std::vector<int> labels);

    /// Seeds d(loss)/d(loss) = 1 and runs the recorded backward functions in
    /// reverse creation order.
    void backward(Var loss);

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool requires_grad = false;
        std::function<void()> backward;
    };

    Var push(Tensor<T> value, bool requires_grad, std::function<void()> backward = {});
    Node& node(Var v) { return nodes_.at(std::size_t(v.id)); }
    bool rg(Var v) const { return nodes_.at(std::size_t(v.id)).requires_grad; }
    std::vector<T>& gref(Var v) { return nodes_[std::size_t(v.id)].grad.data; }

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

extern template class Tape<float>;
extern template class Tape<double>;

// Raw convolution kernels, exposed for the gradient-check tool and tests.
struct ConvGeometry {
    int batch = 0, in_channels = 0, in_h = 0, in_w = 0;
    int out_channels = 0, kernel = 0, stride = 1;
    int out_h = 0, out_w = 0, pad_top = 0, pad_left = 0;
};
ConvGeometry conv_geometry(int batch, int in_channels, int in_h, int in_w, int out_channels,
                           int kernel, int stride);

template <typename T>
void conv_forward(const T* x, const T* w, const ConvGeometry& g, T* y);
template <typename T>
void conv_backward_input(const T* gy, const T* w, const ConvGeometry& g, T* gx);
template <typename T>
void conv_backward_weight(const T* gy, const T* x, const ConvGeometry& g, T* gw);

}  // namespace skyhdr::ad
