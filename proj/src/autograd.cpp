#include "meansparse/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "meansparse/error.hpp"
#include "meansparse/kernels.hpp"

namespace meansparse {

std::string_view op_name(OpKind kind) {
    switch (kind) {
        case OpKind::Leaf: return "leaf";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::Scale: return "scale";
        case OpKind::AddScalar: return "add_scalar";
        case OpKind::MatMul: return "matmul";
        case OpKind::Linear: return "linear";
        case OpKind::Conv2d: return "conv2d";
        case OpKind::AvgPool2d: return "avg_pool2d";
        case OpKind::GlobalAvgPool: return "global_avg_pool";
        case OpKind::Relu: return "relu";
        case OpKind::Gelu: return "gelu";
        case OpKind::Silu: return "silu";
        case OpKind::Elu: return "elu";
        case OpKind::PSilu: return "psilu";
        case OpKind::PSSilu: return "pssilu";
        case OpKind::Softmax: return "softmax";
        case OpKind::CrossEntropy: return "cross_entropy";
        case OpKind::KlDivergence: return "kl_divergence";
        case OpKind::Dlr: return "dlr";
        case OpKind::Sum: return "sum";
        case OpKind::Mean: return "mean";
        case OpKind::SumAxis: return "sum_axis";
        case OpKind::MeanAxis: return "mean_axis";
        case OpKind::Reshape: return "reshape";
        case OpKind::BatchNormTrain: return "batch_norm_train";
        case OpKind::BatchNormEval: return "batch_norm_eval";
        case OpKind::ChannelAffine: return "channel_affine";
        case OpKind::MeanSparse: return "mean_sparse";
        case OpKind::Slice: return "slice";
        case OpKind::Transpose: return "transpose";
    }
    return "unknown";
}

const Tensor& Var::value() const { return tape_->node(id_).value; }

bool Var::requires_grad() const { return tape_->needs_grad(id_); }

Var Tape::leaf(Tensor& tensor) {
    TapeNode node;
    node.kind = OpKind::Leaf;
    node.value = Tensor(tensor.shape(), std::vector<double>(tensor.values().begin(), tensor.values().end()));
    node.requires_grad = tensor.requires_grad();
    node.sink = tensor.requires_grad() ? &tensor : nullptr;
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Var Tape::input(Tensor value, bool requires_grad) {
    TapeNode node;
    node.kind = OpKind::Leaf;
    value.set_requires_grad(false);
    value.clear_grad();
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Var Tape::record(OpKind kind, std::vector<NodeId> inputs, Tensor value, BackwardFn backward) {
    if (!value.all_finite()) {
        throw NumericError(std::string("overflow: ") + std::string(op_name(kind)) +
                           " produced a non-finite value");
    }
    TapeNode node;
    node.kind = kind;
    node.requires_grad = std::any_of(inputs.begin(), inputs.end(), [&](NodeId id) { return nodes_[id].requires_grad; });
    node.inputs = std::move(inputs);
    node.value = std::move(value);
    if (node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

std::span<double> Tape::grad_buffer(NodeId id) {
    if (grads_[id].empty()) grads_[id].assign(nodes_[id].value.numel(), 0.0);
    return grads_[id];
}

void Tape::backward(Var loss) {
    if (nodes_.empty()) throw Error("backward on an empty tape");
    if (&loss.tape() != this) throw Error("loss belongs to another tape");
    if (loss.value().numel() != 1) {
        throw ShapeError("backward needs a scalar loss, got shape " + shape_to_string(loss.shape()));
    }
    grads_.assign(nodes_.size(), {});
    if (!nodes_[loss.id()].requires_grad) return;
    grad_buffer(loss.id())[0] = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        TapeNode& node = nodes_[i];
        if (!node.requires_grad || grads_[i].empty()) continue;
        if (node.sink) {
            auto dst = node.sink->mutable_grad();
            for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += grads_[i][j];
        }
        if (node.backward) node.backward(*this, grads_[i]);
    }
}

Tensor Tape::grad(Var v) const {
    const auto& node = nodes_[v.id()];
    if (v.id() >= grads_.size() || grads_[v.id()].empty()) return Tensor(node.value.shape(), 0.0);
    return Tensor(node.value.shape(), grads_[v.id()]);
}

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

namespace {

constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void check_same_tape(Var a, Var b) {
    if (&a.tape() != &b.tape()) throw Error("operands live on different tapes");
}

// Elementwise binary op with scalar broadcasting on either side.
template <typename Fwd, typename DA, typename DB>
Var binary(OpKind kind, Var a, Var b, Fwd f, DA dfa, DB dfb) {
    check_same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const bool same = av.shape() == bv.shape();
    const bool b_scalar = !same && bv.numel() == 1;
    const bool a_scalar = !same && !b_scalar && av.numel() == 1;
    if (!same && !a_scalar && !b_scalar) {
        throw ShapeError("shape mismatch in " + std::string(op_name(kind)) + ": " + shape_to_string(av.shape()) +
                         " vs " + shape_to_string(bv.shape()));
    }
    const Shape out_shape = a_scalar ? bv.shape() : av.shape();
    const std::size_t n = shape_numel(out_shape);
    Tensor out(out_shape);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = f(av[a_scalar ? 0 : i], bv[b_scalar ? 0 : i]);
    }
    const NodeId ia = a.id(), ib = b.id();
    return a.tape().record(kind, {ia, ib}, std::move(out), [=](Tape& t, std::span<const double> g) {
        const Tensor& x = t.node(ia).value;
        const Tensor& y = t.node(ib).value;
        if (t.needs_grad(ia)) {
            auto ga = t.grad_buffer(ia);
            for (std::size_t i = 0; i < n; ++i) {
                ga[a_scalar ? 0 : i] += g[i] * dfa(x[a_scalar ? 0 : i], y[b_scalar ? 0 : i]);
            }
        }
        if (t.needs_grad(ib)) {
            auto gb = t.grad_buffer(ib);
            for (std::size_t i = 0; i < n; ++i) {
                gb[b_scalar ? 0 : i] += g[i] * dfb(x[a_scalar ? 0 : i], y[b_scalar ? 0 : i]);
            }
        }
    });
}

// Elementwise unary op; df receives (x, y).
template <typename Fwd, typename Deriv>
Var unary(OpKind kind, Var x, Fwd f, Deriv df) {
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = f(xv[i]);
    const NodeId ix = x.id();
    const NodeId self = static_cast<NodeId>(x.tape().size());
    return x.tape().record(kind, {ix}, std::move(out), [=](Tape& t, std::span<const double> g) {
        const Tensor& in = t.node(ix).value;
        const Tensor& y = t.node(self).value;
        auto gx = t.grad_buffer(ix);
        for (std::size_t i = 0; i < in.numel(); ++i) gx[i] += g[i] * df(in[i], y[i]);
    });
}

struct ChannelLayout {
    std::size_t batch, channels, spatial;
};

ChannelLayout channel_layout(const Tensor& x, std::string_view what) {
    if (x.rank() == 2) return {x.dim(0), x.dim(1), 1};
    if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)};
    throw ShapeError(std::string(what) + " expects [N,C] or [N,C,H,W], got " + shape_to_string(x.shape()));
}

void require_rows(const Tensor& logits, std::span<const int> labels, std::string_view what) {
    if (logits.rank() != 2) throw ShapeError(std::string(what) + " expects [N,K] logits, got " + shape_to_string(logits.shape()));
    if (labels.size() != logits.dim(0)) {
        throw ShapeError(std::string(what) + ": " + std::to_string(labels.size()) + " labels for " +
                         shape_to_string(logits.shape()) + " logits");
    }
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= logits.dim(1)) {
            throw ShapeError(std::string(what) + ": label " + std::to_string(y) + " outside [0, " +
                             std::to_string(logits.dim(1)) + ")");
        }
    }
}

// log-softmax of one row into dst; returns nothing.
void log_softmax_row(const double* z, std::size_t k, double* dst) {
    const double m = *std::max_element(z, z + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(z[j] - m);
    const double lse = m + std::log(s);
    for (std::size_t j = 0; j < k; ++j) dst[j] = z[j] - lse;
}

}  // namespace

Var add(Var a, Var b) {
    return binary(
        OpKind::Add, a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
    return binary(
        OpKind::Sub, a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
    return binary(
        OpKind::Mul, a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

Var scale(Var a, double factor) {
    return unary(
        OpKind::Scale, a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double offset) {
    return unary(
        OpKind::AddScalar, a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Var matmul(Var a, Var b) {
    check_same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
        throw ShapeError("shape mismatch in matmul: " + shape_to_string(av.shape()) + " vs " +
                         shape_to_string(bv.shape()));
    }
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    Tensor out(Shape{m, n});
    kernels::gemm_nn(m, n, k, av.data(), bv.data(), out.data());
    const NodeId ia = a.id(), ib = b.id();
    return a.tape().record(OpKind::MatMul, {ia, ib}, std::move(out), [=](Tape& t, std::span<const double> g) {
        const Tensor& x = t.node(ia).value;
        const Tensor& y = t.node(ib).value;
        if (t.needs_grad(ia)) {
            // dA = dC * B^T, via an explicit transpose of B.
            std::vector<double> bt(n * k);
            for (std::size_t r = 0; r < k; ++r)
                for (std::size_t c = 0; c < n; ++c) bt[c * k + r] = y[r * n + c];
            kernels::gemm_nn(m, k, n, g.data(), bt.data(), t.grad_buffer(ia).data());
        }
        if (t.needs_grad(ib)) {
            kernels::gemm_tn(k, n, m, x.data(), g.data(), t.grad_buffer(ib).data());
        }
    });
}

Var linear(Var x, Var weight, Var bias) {
    check_same_tape(x, weight);
    check_same_tape(x, bias);
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    const Tensor& bv = bias.value();
    if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(1) || bv.numel() != wv.dim(0)) {
        throw ShapeError("shape mismatch in linear: x " + shape_to_string(xv.shape()) + ", weight " +
                         shape_to_string(wv.shape()) + ", bias " + shape_to_string(bv.shape()));
    }
    const std::size_t n = xv.dim(0), d = xv.dim(1), k = wv.dim(0);
    Tensor out(Shape{n, k});
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < k; ++c) {
            double s = bv[c];
            for (std::size_t j = 0; j < d; ++j) s += xv[r * d + j] * wv[c * d + j];
            out[r * k + c] = s;
        }
    }
    const NodeId ix = x.id(), iw = weight.id(), ib = bias.id();
    return x.tape().record(OpKind::Linear, {ix, iw, ib}, std::move(out), [=](Tape& t, std::span<const double> g) {
        const Tensor& xin = t.node(ix).value;
        const Tensor& w = t.node(iw).value;
        if (t.needs_grad(ix)) {
            auto gx = t.grad_buffer(ix);
            kernels::gemm_nn(n, d, k, g.data(), w.data(), gx.data());
        }
        if (t.needs_grad(iw)) {
            auto gw = t.grad_buffer(iw);
            kernels::gemm_tn(k, d, n, g.data(), xin.data(), gw.data());
        }
        if (t.needs_grad(ib)) {
            auto gb = t.grad_buffer(ib);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < k; ++c) gb[c] += g[r * k + c];
        }
    });
}

Var conv2d(Var x, Var weight, std::size_t stride, std::size_t pad) {
    check_same_tape(x, weight);
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    if (xv.rank() != 4 || wv.rank() != 4 || xv.dim(1) != wv.dim(1)) {
        throw ShapeError("shape mismatch in conv2d: input " + shape_to_string(xv.shape()) + ", weight " +
                         shape_to_string(wv.shape()));
    }
    if (stride == 0) throw ShapeError("conv2d stride must be positive");
    const kernels::ConvGeometry geo{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(2), wv.dim(3), stride, pad};
    if (geo.height + 2 * pad < geo.kernel_h || geo.width + 2 * pad < geo.kernel_w) {
        throw ShapeError("conv2d kernel " + shape_to_string(wv.shape()) + " larger than padded input " +
                         shape_to_string(xv.shape()));
    }
    const std::size_t out_c = wv.dim(0), patch = geo.patch(), positions = geo.positions();
    const std::size_t cols_n = geo.batch * positions;
    std::vector<double> cols(patch * cols_n);
    kernels::im2col(geo, xv.data(), cols.data());
    std::vector<double> flat(out_c * cols_n, 0.0);
    kernels::gemm_nn(out_c, cols_n, patch, wv.data(), cols.data(), flat.data());
    Tensor out(Shape{geo.batch, out_c, geo.out_h(), geo.out_w()});
    for (std::size_t o = 0; o < out_c; ++o)
        for (std::size_t b = 0; b < geo.batch; ++b)
            std::copy_n(flat.data() + o * cols_n + b * positions, positions, out.data() + (b * out_c + o) * positions);

    const NodeId ix = x.id(), iw = weight.id();
    return x.tape().record(OpKind::Conv2d, {ix, iw}, std::move(out), [=](Tape& t, std::span<const double> g) {
        // Regroup upstream gradient as [O, N*P].
        std::vector<double> gflat(out_c * cols_n);
        for (std::size_t o = 0; o < out_c; ++o)
            for (std::size_t b = 0; b < geo.batch; ++b)
                std::copy_n(g.data() + (b * out_c + o) * positions, positions, gflat.data() + o * cols_n + b * positions);
        const Tensor& xin = t.node(ix).value;
        const Tensor& w = t.node(iw).value;
        if (t.needs_grad(iw)) {
            std::vector<double> cols_t(cols_n * patch);
            kernels::im2col_transposed(geo, xin.data(), cols_t.data());
            kernels::gemm_nn(out_c, patch, cols_n, gflat.data(), cols_t.data(), t.grad_buffer(iw).data());
        }
        if (t.needs_grad(ix)) {
            std::vector<double> dcols(patch * cols_n, 0.0);
            kernels::gemm_tn(patch, cols_n, out_c, w.data(), gflat.data(), dcols.data());
            kernels::col2im_add(geo, dcols.data(), t.grad_buffer(ix).data());
        }
    });
}

Var avg_pool2d(Var x, std::size_t kernel, std::size_t stride) {
    const Tensor& xv = x.value();
    if (xv.rank() != 4) throw ShapeError("avg_pool2d expects NCHW, got " + shape_to_string(xv.shape()));
    if (kernel == 0 || stride == 0 || kernel > xv.dim(2) || kernel > xv.dim(3)) {
        throw ShapeError("avg_pool2d window " + std::to_string(kernel) + " does not fit " + shape_to_string(xv.shape()));
    }
    const std::size_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    const std::size_t oh = (h - kernel) / stride + 1, ow = (w - kernel) / stride + 1;
    const double inv = 1.0 / static_cast<double>(kernel * kernel);
    Tensor out(Shape{n, c, oh, ow});
    for (std::size_t p = 0; p < n * c; ++p) {
        const double* src = xv.data() + p * h * w;
        double* dst = out.data() + p * oh * ow;
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx) {
                double s = 0.0;
                for (std::size_t i = 0; i < kernel; ++i)
                    for (std::size_t j = 0; j < kernel; ++j) s += src[(y * stride + i) * w + xx * stride + j];
                dst[y * ow + xx] = s * inv;
            }
    }
    const NodeId ix = x.id();
    return x.tape().record(OpKind::AvgPool2d, {ix}, std::move(out), [=](Tape& t, std::span<const double> g) {
        auto gx = t.grad_buffer(ix);
        for (std::size_t p = 0; p < n * c; ++p) {
            double* dst = gx.data() + p * h * w;
            const double* src = g.data() + p * oh * ow;
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t xx = 0; xx < ow; ++xx)
                    for (std::size_t i = 0; i < kernel; ++i)
                        for (std::size_t j = 0; j < kernel; ++j)
                            dst[(y * stride + i) * w + xx * stride + j] += src[y * ow + xx] * inv;
        }
    });
}

Var global_avg_pool(Var x) {
    const Tensor& xv = x.value();
    if (xv.rank() != 4) throw ShapeError("global_avg_pool expects NCHW, got " + shape_to_string(xv.shape()));
    const std::size_t n = xv.dim(0), c = xv.dim(1), s = xv.dim(2) * xv.dim(3);
    const double inv = 1.0 / static_cast<double>(s);
    Tensor out(Shape{n, c});
    for (std::size_t p = 0; p < n * c; ++p) {
        double acc = 0.0;
        for (std::size_t i = 0; i < s; ++i) acc += xv[p * s + i];
        out[p] = acc * inv;
    }
    const NodeId ix = x.id();
    return x.tape().record(OpKind::GlobalAvgPool, {ix}, std::move(out), [=](Tape& t, std::span<const double> g) {
        auto gx = t.grad_buffer(ix);
        for (std::size_t p = 0; p < n * c; ++p)
            for (std::size_t i = 0; i < s; ++i) gx[p * s + i] += g[p] * inv;
    });
}

Var relu(Var x) {
    return unary(
        OpKind::Relu, x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var gelu(Var x) {
    return unary(OpKind::Gelu, x, gelu_value, [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
        return cdf + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
    });
}

Var silu(Var x) {
    return unary(
        OpKind::Silu, x, [](double v) { return v * sigmoid(v); },
        [](double v, double) {
            const double s = sigmoid(v);
            return s * (1.0 + v * (1.0 - s));
        });
}

Var elu(Var x) {
    return unary(
        OpKind::Elu, x, [](double v) { return v > 0.0 ? v : std::expm1(v); },
        [](double v, double) { return v > 0.0 ? 1.0 : std::exp(v); });
}

Var psilu(Var x, Var beta) {
    check_same_tape(x, beta);
    if (beta.value().numel() != 1) throw ShapeError("psilu beta must be a single value");
    const double b = beta.value()[0];
    if (!(b > 0.0)) throw DomainError("psilu beta must be positive, got " + std::to_string(b));
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = xv[i] * sigmoid(b * xv[i]);
    const NodeId ix = x.id(), ibeta = beta.id();
    return x.tape().record(OpKind::PSilu, {ix, ibeta}, std::move(out), [=](Tape& t, std::span<const double> g) {
        const Tensor& in = t.node(ix).value;
        const bool gx_needed = t.needs_grad(ix), gb_needed = t.needs_grad(ibeta);
        double gb = 0.0;
        std::span<double> gx;
        if (gx_needed) gx = t.grad_buffer(ix);
        for (std::size_t i = 0; i < in.numel(); ++i) {
            const double v = in[i];
            const double s = sigmoid(b * v);
            const double ds = s * (1.0 - s);
            if (gx_needed) gx[i] += g[i] * (s + b * v * ds);
            gb += g[i] * v * v * ds;
        }
        if (gb_needed) t.grad_buffer(ibeta)[0] += gb;
    });
}

Var pssilu(Var x, Var beta, Var shift) {
    check_same_tape(x, beta);
    check_same_tape(x, shift);
    if (beta.value().numel() != 1 || shift.value().numel() != 1) {
        throw ShapeError("pssilu beta and shift must be single values");
    }
    const double b = beta.value()[0];
    const double s0 = shift.value()[0];
    if (!(b > 0.0)) throw DomainError("pssilu beta must be positive, got " + std::to_string(b));
    if (!(s0 >= 0.0 && s0 < 1.0)) throw DomainError("pssilu shift must lie in [0, 1), got " + std::to_string(s0));
    const double inv = 1.0 / (1.0 - s0);
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = xv[i] * (sigmoid(b * xv[i]) - s0) * inv;
    const NodeId ix = x.id(), ibeta = beta.id(), ishift = shift.id();
    return x.tape().record(OpKind::PSSilu, {ix, ibeta, ishift}, std::move(out),
                           [=](Tape& t, std::span<const double> g) {
                               const Tensor& in = t.node(ix).value;
                               const bool gx_needed = t.needs_grad(ix);
                               std::span<double> gx;
                               if (gx_needed) gx = t.grad_buffer(ix);
                               double gb = 0.0, gs = 0.0;
                               for (std::size_t i = 0; i < in.numel(); ++i) {
                                   const double v = in[i];
                                   const double s = sigmoid(b * v);
                                   const double ds = s * (1.0 - s);
                                   if (gx_needed) gx[i] += g[i] * (s - s0 + b * v * ds) * inv;
                                   gb += g[i] * v * v * ds * inv;
                                   gs += g[i] * v * (s - 1.0) * inv * inv;
                               }
                               if (t.needs_grad(ibeta)) t.grad_buffer(ibeta)[0] += gb;
                               if (t.needs_grad(ishift)) t.grad_buffer(ishift)[0] += gs;
                           });
}

Var softmax(Var x) {
    const Tensor& xv = x.value();
    if (xv.rank() != 2) throw ShapeError("softmax expects [N,K], got " + shape_to_string(xv.shape()));
    const std::size_t n = xv.dim(0), k = xv.dim(1);
    Tensor out(xv.shape());
    for (std::size_t r = 0; r < n; ++r) {
        log_softmax_row(xv.data() + r * k, k, out.data() + r * k);
        for (std::size_t j = 0; j < k; ++j) out[r * k + j] = std::exp(out[r * k + j]);
    }
    const NodeId ix = x.id();
    const NodeId self = static_cast<NodeId>(x.tape().size());
    return x.tape().record(OpKind::Softmax, {ix}, std::move(out), [=](Tape& t, std::span<const double> g) {
        const Tensor& y = t.node(self).value;
        auto gx = t.grad_buffer(ix);
        for (std::size_t r = 0; r < n; ++r) {
            double dot = 0.0;
            for (std::size_t j = 0; j < k; ++j) dot += g[r * k + j] * y[r * k + j];
            for (std::size_t j = 0; j < k; ++j) gx[r * k + j] += y[r * k + j] * (g[r * k + j] - dot);
        }
    });
}

Var cross_entropy(Var logits, std::span<const int> labels, Reduction reduction) {
    const Tensor& z = logits.value();
    require_rows(z, labels, "cross_entropy");
    const std::size_t n = z.dim(0), k = z.dim(1);
    std::vector<double> logp(n * k);
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        log_softmax_row(z.data() + r * k, k, logp.data() + r * k);
        total -= logp[r * k + static_cast<std::size_t>(labels[r])];
    }
    const double factor = reduction == Reduction::Mean ? 1.0 / static_cast<double>(n) : 1.0;
    std::vector<int> y(labels.begin(), labels.end());
    const NodeId iz = logits.id();
    return logits.tape().record(OpKind::CrossEntropy, {iz}, Tensor::scalar(total * factor),
                                [=, logp = std::move(logp), y = std::move(y)](Tape& t, std::span<const double> g) {
                                    auto gz = t.grad_buffer(iz);
                                    const double up = g[0] * factor;
                                    for (std::size_t r = 0; r < n; ++r)
                                        for (std::size_t j = 0; j < k; ++j) {
                                            const double p = std::exp(logp[r * k + j]);
                                            const double onehot = static_cast<int>(j) == y[r] ? 1.0 : 0.0;
                                            gz[r * k + j] += up * (p - onehot);
                                        }
                                });
}

Var kl_divergence(Var p_logits, Var q_logits, Reduction reduction) {
    check_same_tape(p_logits, q_logits);
    const Tensor& a = p_logits.value();
    const Tensor& b = q_logits.value();
    if (a.rank() != 2 || a.shape() != b.shape()) {
        throw ShapeError("shape mismatch in kl_divergence: " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
    }
    const std::size_t n = a.dim(0), k = a.dim(1);
    std::vector<double> lp(n * k), lq(n * k), row_kl(n);
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        log_softmax_row(a.data() + r * k, k, lp.data() + r * k);
        log_softmax_row(b.data() + r * k, k, lq.data() + r * k);
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) s += std::exp(lp[r * k + j]) * (lp[r * k + j] - lq[r * k + j]);
        row_kl[r] = s;
        total += s;
    }
    const double factor = reduction == Reduction::Mean ? 1.0 / static_cast<double>(n) : 1.0;
    const NodeId ia = p_logits.id(), ib = q_logits.id();
    return p_logits.tape().record(
        OpKind::KlDivergence, {ia, ib}, Tensor::scalar(total * factor),
        [=, lp = std::move(lp), lq = std::move(lq), row_kl = std::move(row_kl)](Tape& t, std::span<const double> g) {
            const double up = g[0] * factor;
            if (t.needs_grad(ia)) {
                auto ga = t.grad_buffer(ia);
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t j = 0; j < k; ++j) {
                        const std::size_t i = r * k + j;
                        ga[i] += up * std::exp(lp[i]) * (lp[i] - lq[i] - row_kl[r]);
                    }
            }
            if (t.needs_grad(ib)) {
                auto gb = t.grad_buffer(ib);
                for (std::size_t i = 0; i < n * k; ++i) gb[i] += up * (std::exp(lq[i]) - std::exp(lp[i]));
            }
        });
}

Var dlr_loss(Var logits, std::span<const int> labels, Reduction reduction) {
    const Tensor& z = logits.value();
    require_rows(z, labels, "dlr_loss");
    const std::size_t n = z.dim(0), k = z.dim(1);
    if (k < 3) throw ShapeError("dlr_loss needs at least 3 classes, got " + std::to_string(k));
    constexpr double kTiny = 1e-12;
    struct RowInfo {
        std::size_t other, top1, top3;
        double num, den;
    };
    std::vector<RowInfo> rows(n);
    double total = 0.0;
    std::vector<std::size_t> order(k);
    for (std::size_t r = 0; r < n; ++r) {
        const double* row = z.data() + r * k;
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [row](std::size_t i, std::size_t j) { return row[i] > row[j]; });
        const auto y = static_cast<std::size_t>(labels[r]);
        const std::size_t other = order[0] == y ? order[1] : order[0];
        RowInfo info{other, order[0], order[2], row[y] - row[other], row[order[0]] - row[order[2]] + kTiny};
        total += -info.num / info.den;
        rows[r] = info;
    }
    const double factor = reduction == Reduction::Mean ? 1.0 / static_cast<double>(n) : 1.0;
    std::vector<int> y(labels.begin(), labels.end());
    const NodeId iz = logits.id();
    return logits.tape().record(OpKind::Dlr, {iz}, Tensor::scalar(total * factor),
                                [=, rows = std::move(rows), y = std::move(y)](Tape& t, std::span<const double> g) {
                                    auto gz = t.grad_buffer(iz);
                                    const double up = g[0] * factor;
                                    for (std::size_t r = 0; r < n; ++r) {
                                        const RowInfo& info = rows[r];
                                        const double inv = 1.0 / info.den;
                                        const double q = info.num * inv * inv;
                                        gz[r * k + static_cast<std::size_t>(y[r])] -= up * inv;
                                        gz[r * k + info.other] += up * inv;
                                        gz[r * k + info.top1] += up * q;
                                        gz[r * k + info.top3] -= up * q;
                                    }
                                });
}

Var sum(Var x) {
    const Tensor& xv = x.value();
    double s = 0.0;
    for (double v : xv.values()) s += v;
    const NodeId ix = x.id();
    return x.tape().record(OpKind::Sum, {ix}, Tensor::scalar(s), [=](Tape& t, std::span<const double> g) {
        for (double& v : t.grad_buffer(ix)) v += g[0];
    });
}

Var mean(Var x) {
    const Tensor& xv = x.value();
    if (xv.numel() == 0) throw ShapeError("mean of an empty tensor");
    double s = 0.0;
    for (double v : xv.values()) s += v;
    const double inv = 1.0 / static_cast<double>(xv.numel());
    const NodeId ix = x.id();
    return x.tape().record(OpKind::Mean, {ix}, Tensor::scalar(s * inv), [=](Tape& t, std::span<const double> g) {
        for (double& v : t.grad_buffer(ix)) v += g[0] * inv;
    });
}

namespace {

Var reduce_axis(OpKind kind, Var x, std::size_t axis, bool average) {
    const Tensor& xv = x.value();
    if (axis >= xv.rank()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_to_string(xv.shape()));
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= xv.dim(i);
    for (std::size_t i = axis + 1; i < xv.rank(); ++i) inner *= xv.dim(i);
    const std::size_t len = xv.dim(axis);
    Shape out_shape = xv.shape();
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    const double factor = average ? 1.0 / static_cast<double>(len) : 1.0;
    Tensor out(out_shape);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t a = 0; a < len; ++a)
            for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xv[(o * len + a) * inner + i];
    if (average)
        for (double& v : out.values()) v *= factor;
    const NodeId ix = x.id();
    return x.tape().record(kind, {ix}, std::move(out), [=](Tape& t, std::span<const double> g) {
        auto gx = t.grad_buffer(ix);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t a = 0; a < len; ++a)
                for (std::size_t i = 0; i < inner; ++i) gx[(o * len + a) * inner + i] += g[o * inner + i] * factor;
    });
}

}  // namespace

Var sum_axis(Var x, std::size_t axis) { return reduce_axis(OpKind::SumAxis, x, axis, false); }

Var mean_axis(Var x, std::size_t axis) { return reduce_axis(OpKind::MeanAxis, x, axis, true); }

Var reshape(Var x, Shape shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    const NodeId ix = x.id();
    return x.tape().record(OpKind::Reshape, {ix}, std::move(out), [=](Tape& t, std::span<const double> g) {
        auto gx = t.grad_buffer(ix);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    });
}

Var slice(Var x, std::size_t begin, std::size_t count) {
    const Tensor& xv = x.value();
    if (begin + count > xv.numel()) {
        throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(begin + count) + ") outside " +
                         shape_to_string(xv.shape()));
    }
    Tensor out(Shape{count}, std::vector<double>(xv.data() + begin, xv.data() + begin + count));
    const NodeId ix = x.id();
    return x.tape().record(OpKind::Slice, {ix}, std::move(out), [=](Tape& t, std::span<const double> g) {
        auto gx = t.grad_buffer(ix);
        for (std::size_t i = 0; i < count; ++i) gx[begin + i] += g[i];
    });
}

Var transpose(Var x) {
    const Tensor& xv = x.value();
    if (xv.rank() != 2) throw ShapeError("transpose expects a matrix, got " + shape_to_string(xv.shape()));
    const std::size_t m = xv.dim(0), n = xv.dim(1);
    Tensor out(Shape{n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = xv[i * n + j];
    const NodeId ix = x.id();
    return x.tape().record(OpKind::Transpose, {ix}, std::move(out), [=](Tape& t, std::span<const double> g) {
        auto gx = t.grad_buffer(ix);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j * m + i];
    });
}

Var batch_norm_train(Var x, Var gamma, Var beta, double eps, std::vector<double>* batch_mean,
                     std::vector<double>* batch_var) {
    check_same_tape(x, gamma);
    check_same_tape(x, beta);
    const Tensor& xv = x.value();
    const auto [n, c, s] = channel_layout(xv, "batch_norm_train");
    if (gamma.value().numel() != c || beta.value().numel() != c) {
        throw ShapeError("batch_norm_train: " + std::to_string(c) + " channels but gamma " +
                         shape_to_string(gamma.value().shape()) + ", beta " + shape_to_string(beta.value().shape()));
    }
    const double m = static_cast<double>(n * s);
    std::vector<double> mu(c, 0.0), var(c, 0.0), inv_std(c);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < s; ++i) mu[ch] += xv[(b * c + ch) * s + i];
    for (auto& v : mu) v /= m;
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < s; ++i) {
                const double d = xv[(b * c + ch) * s + i] - mu[ch];
                var[ch] += d * d;
            }
    for (std::size_t ch = 0; ch < c; ++ch) {
        var[ch] /= m;
        inv_std[ch] = 1.0 / std::sqrt(var[ch] + eps);
    }
    const Tensor& gv = gamma.value();
    const Tensor& bv = beta.value();
    Tensor out(xv.shape());
    std::vector<double> xhat(xv.numel());
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < s; ++i) {
                const std::size_t idx = (b * c + ch) * s + i;
                xhat[idx] = (xv[idx] - mu[ch]) * inv_std[ch];
                out[idx] = gv[ch] * xhat[idx] + bv[ch];
            }
    if (batch_mean) *batch_mean = mu;
    if (batch_var) *batch_var = var;
    const NodeId ix = x.id(), ig = gamma.id(), ib = beta.id();
    return x.tape().record(
        OpKind::BatchNormTrain, {ix, ig, ib}, std::move(out),
        [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::span<const double> g) {
            const Tensor& gam = t.node(ig).value;
            std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t ch = 0; ch < c; ++ch)
                    for (std::size_t i = 0; i < s; ++i) {
                        const std::size_t idx = (b * c + ch) * s + i;
                        sum_g[ch] += g[idx];
                        sum_gx[ch] += g[idx] * xhat[idx];
                    }
            if (t.needs_grad(ig)) {
                auto gg = t.grad_buffer(ig);
                for (std::size_t ch = 0; ch < c; ++ch) gg[ch] += sum_gx[ch];
            }
            if (t.needs_grad(ib)) {
                auto gb = t.grad_buffer(ib);
                for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += sum_g[ch];
            }
            if (t.needs_grad(ix)) {
                auto gx = t.grad_buffer(ix);
                for (std::size_t b = 0; b < n; ++b)
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        const double k = gam[ch] * inv_std[ch] / m;
                        for (std::size_t i = 0; i < s; ++i) {
                            const std::size_t idx = (b * c + ch) * s + i;
                            gx[idx] += k * (m * g[idx] - sum_g[ch] - xhat[idx] * sum_gx[ch]);
                        }
                    }
            }
        });
}

Var batch_norm_eval(Var x, Var gamma, Var beta, std::span<const double> running_mean,
                    std::span<const double> running_var, double eps) {
    check_same_tape(x, gamma);
    check_same_tape(x, beta);
    const Tensor& xv = x.value();
    const auto [n, c, s] = channel_layout(xv, "batch_norm_eval");
    if (gamma.value().numel() != c || beta.value().numel() != c || running_mean.size() != c ||
        running_var.size() != c) {
        throw ShapeError("batch_norm_eval: parameter sizes do not match " + std::to_string(c) + " channels");
    }
    std::vector<double> inv_std(c), mu(running_mean.begin(), running_mean.end());
    for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = 1.0 / std::sqrt(running_var[ch] + eps);
    const Tensor& gv = gamma.value();
    const Tensor& bv = beta.value();
    Tensor out(xv.shape());
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double k = gv[ch] * inv_std[ch];
            for (std::size_t i = 0; i < s; ++i) {
                const std::size_t idx = (b * c + ch) * s + i;
                out[idx] = k * (xv[idx] - mu[ch]) + bv[ch];
            }
        }
    const NodeId ix = x.id(), ig = gamma.id(), ib = beta.id();
    return x.tape().record(OpKind::BatchNormEval, {ix, ig, ib}, std::move(out),
                           [=, inv_std = std::move(inv_std), mu = std::move(mu)](Tape& t, std::span<const double> g) {
                               const Tensor& xin = t.node(ix).value;
                               const Tensor& gam = t.node(ig).value;
                               const bool need_x = t.needs_grad(ix), need_g = t.needs_grad(ig),
                                          need_b = t.needs_grad(ib);
                               std::span<double> gx, gg, gb;
                               if (need_x) gx = t.grad_buffer(ix);
                               if (need_g) gg = t.grad_buffer(ig);
                               if (need_b) gb = t.grad_buffer(ib);
                               for (std::size_t b = 0; b < n; ++b)
                                   for (std::size_t ch = 0; ch < c; ++ch) {
                                       const double k = gam[ch] * inv_std[ch];
                                       for (std::size_t i = 0; i < s; ++i) {
                                           const std::size_t idx = (b * c + ch) * s + i;
                                           if (need_x) gx[idx] += g[idx] * k;
                                           if (need_g) gg[ch] += g[idx] * (xin[idx] - mu[ch]) * inv_std[ch];
                                           if (need_b) gb[ch] += g[idx];
                                       }
                                   }
                           });
}

Var channel_affine(Var x, std::span<const double> scale_c, std::span<const double> shift_c) {
    const Tensor& xv = x.value();
    const auto [n, c, s] = channel_layout(xv, "channel_affine");
    if (scale_c.size() != c || shift_c.size() != c) {
        throw ShapeError("channel_affine: coefficients do not match " + std::to_string(c) + " channels");
    }
    std::vector<double> k(scale_c.begin(), scale_c.end());
    Tensor out(xv.shape());
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < s; ++i) {
                const std::size_t idx = (b * c + ch) * s + i;
                out[idx] = k[ch] * xv[idx] + shift_c[ch];
            }
    const NodeId ix = x.id();
    return x.tape().record(OpKind::ChannelAffine, {ix}, std::move(out),
                           [=, k = std::move(k)](Tape& t, std::span<const double> g) {
                               auto gx = t.grad_buffer(ix);
                               for (std::size_t b = 0; b < n; ++b)
                                   for (std::size_t ch = 0; ch < c; ++ch)
                                       for (std::size_t i = 0; i < s; ++i) {
                                           const std::size_t idx = (b * c + ch) * s + i;
                                           gx[idx] += g[idx] * k[ch];
                                       }
                           });
}

}  // namespace meansparse
