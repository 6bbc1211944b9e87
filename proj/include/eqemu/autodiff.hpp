#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace eqemu::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <class T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated on first accumulation
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    std::vector<T>& grad_buffer() {
        if (grad.empty()) grad.assign(value.size(), T(0));
        return grad;
    }
};

/// Handle to a graph node. Copies share the node.
template <class T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    static Tensor constant(Shape shape, std::vector<T> values);
    static Tensor parameter(Shape shape, std::vector<T> values);
    static Tensor zeros(Shape shape, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->value.size(); }
    std::span<const T> data() const { return node_->value; }
    std::span<T> mutable_data() { return node_->value; }
    /// Empty until a backward pass reaches this tensor.
    std::span<const T> grad() const { return node_->grad; }
    bool requires_grad() const { return node_->requires_grad; }
    const char* op() const { return node_->op; }
    void zero_grad() { node_->grad.clear(); }
    T item() const;

    Node<T>& node() const { return *node_; }
    const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

/// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every reachable
/// tensor that requires them. Each node is visited once, in reverse
/// topological order.
template <class T>
void backward(const Tensor<T>& loss);

/// Gradient-weighted variant: seeds the output gradient with `seed`.
template <class T>
void backward(const Tensor<T>& output, std::span<const T> seed);

/// Scales the upstream gradient entering every backward of `op` by `factor`
/// while alive. Used by mutation tests and the CLI selfcheck.
class ScopedFault {
public:
    ScopedFault(std::string op, double factor);
    ~ScopedFault();
    ScopedFault(const ScopedFault&) = delete;
    ScopedFault& operator=(const ScopedFault&) = delete;
};

/// Disables graph construction on this thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};
bool grad_enabled();

enum class Activation { SiLU, GeLU };

// Elementwise.
template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> scale(const Tensor<T>& a, T s);
template <class T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <class T> Tensor<T> silu(const Tensor<T>& x);
template <class T> Tensor<T> gelu(const Tensor<T>& x);
template <class T> Tensor<T> activate(const Tensor<T>& x, Activation act);

// Layout.
template <class T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
/// [B, F] -> [B, F, n]
template <class T> Tensor<T> broadcast_space(const Tensor<T>& x, std::size_t n);
/// Concatenates [B, C_i, N] along channels.
template <class T> Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts);
template <class T> Tensor<T> slice_channels(const Tensor<T>& x, std::size_t start, std::size_t count);

// Layers.
/// x [..., I], w [O, I], b [O] (optional) -> [..., O]
template <class T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);
/// Periodic strided convolution. x [B, Cin, N], w [Cout, Cin, K], b [Cout]
/// (optional) -> [B, Cout, N / stride]; tap k reads x[(m*stride + k - K/2) mod N].
template <class T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t stride = 1);
/// Adjoint layout of conv1d: x [B, Cin, M], w [Cin, Cout, K] -> [B, Cout, M * stride].
template <class T>
Tensor<T> conv_transpose1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t stride);
/// Channel mixing on the lowest K Fourier modes. x [B, Cin, N]; w is
/// [Cin, Cout, K, 2] (shared) or [B, Cin, Cout, K, 2] (per sample), storing
/// (re, im). Modes >= K are dropped.
template <class T> Tensor<T> spectral_conv(const Tensor<T>& x, const Tensor<T>& w);
/// Per-sample spectral weights base + sum_r p[b,r,i] q[b,r,o] s[b,r,k,:].
/// base [Cin, Cout, K, 2], p [B, R, Cin], q [B, R, Cout], s [B, R, K, 2].
template <class T>
Tensor<T> lowrank_spectral_weights(const Tensor<T>& base, const Tensor<T>& p, const Tensor<T>& q,
                                   const Tensor<T>& s);
/// Multiplies Fourier modes k < K of x [B, C, N] by real gates g [B, C, K];
/// higher modes pass through unchanged.
template <class T> Tensor<T> spectral_gate(const Tensor<T>& x, const Tensor<T>& g);
/// gamma * x + beta with gamma, beta [B, C] broadcast over space.
template <class T> Tensor<T> film(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta);
/// Multi-head attention with spatial queries q [B, C, N] over T tokens
/// k, v [B, T, C]; softmax over tokens. Returns [B, C, N].
template <class T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads);
/// Right-hand side of the 7-term PDE for u [B, N] with per-sample physical
/// coefficients, derivatives taken spectrally on a periodic domain.
template <class T>
Tensor<T> pde_rhs(const Tensor<T>& u, const std::vector<std::array<double, 7>>& coeffs, double length);

// Reductions.
template <class T> Tensor<T> sum(const Tensor<T>& x);
template <class T> Tensor<T> mean(const Tensor<T>& x);
template <class T> Tensor<T> mae(const Tensor<T>& pred, const Tensor<T>& target);

// Conversion between precisions (graph-detached).
Tensor<double> to_double(const Tensor<float>& x);
Tensor<float> to_float(const Tensor<double>& x);

}  // namespace eqemu::ad
