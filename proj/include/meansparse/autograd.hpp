#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "meansparse/tensor.hpp"

namespace meansparse {

using NodeId = std::uint32_t;

enum class OpKind : std::uint8_t {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    MatMul,
    Linear,
    Conv2d,
    AvgPool2d,
    GlobalAvgPool,
    Relu,
    Gelu,
    Silu,
    Elu,
    PSilu,
    PSSilu,
    Softmax,
    CrossEntropy,
    KlDivergence,
    Dlr,
    Sum,
    Mean,
    SumAxis,
    MeanAxis,
    Reshape,
    BatchNormTrain,
    BatchNormEval,
    ChannelAffine,
    MeanSparse,
    Slice,
    Transpose,
};

std::string_view op_name(OpKind kind);

enum class Reduction { Sum, Mean };

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
   public:
    Var() = default;
    Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;
    NodeId id() const noexcept { return id_; }
    Tape& tape() const { return *tape_; }
    bool valid() const noexcept { return tape_ != nullptr; }

   private:
    Tape* tape_ = nullptr;
    NodeId id_ = 0;
};

// Receives the node's upstream gradient and pushes contributions into the
// gradient buffers of the node's inputs.
using BackwardFn = std::function<void(Tape&, std::span<const double>)>;

struct TapeNode {
    OpKind kind = OpKind::Leaf;
    std::vector<NodeId> inputs;
    Tensor value;
    bool requires_grad = false;
    Tensor* sink = nullptr;  // bound leaf: gradient destination
    BackwardFn backward;
};

// Wengert list for reverse-mode differentiation. Node ids increase in
// creation order; backward visits them in reverse, so accumulation order is
// fixed. A tape is single-threaded; parallel work uses one tape per worker.
class Tape {
   public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaf bound to an external tensor. If the tensor requires grad, backward
    // accumulates into its gradient buffer; the tensor must outlive backward().
    Var leaf(Tensor& tensor);
    // Owned leaf; its gradient is read back with grad().
    Var input(Tensor value, bool requires_grad = false);
    Var constant(Tensor value) { return input(std::move(value), false); }

    // Appends an op node. The backward rule is kept only when some input
    // requires grad. Throws NumericError if the value is not finite.
    Var record(OpKind kind, std::vector<NodeId> inputs, Tensor value, BackwardFn backward);

    void backward(Var loss);

    // d(loss)/d(v) after backward(); zeros when v received no gradient.
    Tensor grad(Var v) const;

    bool needs_grad(NodeId id) const { return nodes_[id].requires_grad; }
    std::span<double> grad_buffer(NodeId id);
    const TapeNode& node(NodeId id) const { return nodes_[id]; }
    std::size_t size() const noexcept { return nodes_.size(); }

   private:
    std::deque<TapeNode> nodes_;
    std::vector<std::vector<double>> grads_;
};

// Arithmetic. Operands must have equal shapes, or one of them is a single
// element (scalar broadcast).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

Var matmul(Var a, Var b);                       // [m,k] x [k,n]
Var linear(Var x, Var weight, Var bias);        // x[N,D] W[K,D] b[K] -> [N,K]
Var conv2d(Var x, Var weight, std::size_t stride, std::size_t pad);  // NCHW, OIhw
Var avg_pool2d(Var x, std::size_t kernel, std::size_t stride);
Var global_avg_pool(Var x);                     // [N,C,H,W] -> [N,C]

Var relu(Var x);
Var gelu(Var x);                                // exact: x * Phi(x)
Var silu(Var x);
Var elu(Var x);                                 // alpha = 1
Var psilu(Var x, Var beta);                     // x * sigmoid(beta x)
Var pssilu(Var x, Var beta, Var shift);         // x * (sigmoid(beta x) - s) / (1 - s)

Var softmax(Var x);                             // along the last axis of [N,K]
Var cross_entropy(Var logits, std::span<const int> labels, Reduction reduction = Reduction::Mean);
// sum/mean over rows of KL(softmax(p_logits) || softmax(q_logits))
Var kl_divergence(Var p_logits, Var q_logits, Reduction reduction = Reduction::Mean);
// Difference-of-logits-ratio loss; needs at least 3 classes.
Var dlr_loss(Var logits, std::span<const int> labels, Reduction reduction = Reduction::Mean);

Var sum(Var x);
Var mean(Var x);
Var sum_axis(Var x, std::size_t axis);
Var mean_axis(Var x, std::size_t axis);
Var reshape(Var x, Shape shape);
// count consecutive elements of the flattened input, starting at begin.
Var slice(Var x, std::size_t begin, std::size_t count);
Var transpose(Var x);  // [m,n] -> [n,m]

// Batch statistics over N (and H, W); writes the biased batch variance.
Var batch_norm_train(Var x, Var gamma, Var beta, double eps, std::vector<double>* batch_mean,
                     std::vector<double>* batch_var);
Var batch_norm_eval(Var x, Var gamma, Var beta, std::span<const double> running_mean,
                    std::span<const double> running_var, double eps);
// y = scale_c * x + shift_c with constant coefficients.
Var channel_affine(Var x, std::span<const double> scale, std::span<const double> shift);

// Scalar helpers shared with tests and layers.
double sigmoid(double x);
double gelu_value(double x);

}  // namespace meansparse
