#pragma once

// Minimal reverse-mode automatic differentiation over dense tensors.
//
// A Var is a shared handle to a graph node. Ops record a backward closure
// when any input requires a gradient and grad mode is enabled; calling
// backward() on a scalar Var accumulates gradients into every reachable
// node that requires one.

#include <functional>
#include <memory>
#include <vector>

#include "dforge/tensor.hpp"

namespace dforge {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor<T>& ensure_grad() {
    if (grad.empty() && value.numel() > 0) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var parameter(Tensor<T> value) { return Var(std::move(value), true); }
  static Var constant(Tensor<T> value) { return Var(std::move(value), false); }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  // In-place access for optimizer updates and finite-difference probes.
  Tensor<T>& mutable_value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad = Tensor<T>(); }
  bool requires_grad() const { return node_->requires_grad; }

  const Shape& shape() const { return node_->value.shape(); }
  int64_t dim(int64_t i) const { return node_->value.dim(i); }
  int64_t numel() const { return node_->value.numel(); }
  T item() const { return node_->value.item(); }

  Var detach() const { return Var(node_->value, false); }

  // Reverse pass from a scalar; seeds d(self)/d(self) = 1.
  void backward() const;

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Graph recording switch (thread-local). Evaluation runs under NoGradGuard.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace ag {

// Elementwise (identical shapes).
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> div(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);
template <typename T> Var<T> add_scalar(const Var<T>& a, T s);
// 1 - a
template <typename T> Var<T> one_minus(const Var<T>& a);

template <typename T> Var<T> silu(const Var<T>& x);
template <typename T> Var<T> sigmoid(const Var<T>& x);
template <typename T> Var<T> exp(const Var<T>& x);
template <typename T> Var<T> log(const Var<T>& x);
template <typename T> Var<T> sqrt(const Var<T>& x);
template <typename T> Var<T> abs(const Var<T>& x);
template <typename T> Var<T> square(const Var<T>& x);
// Gradient is zero where the input lies outside [lo, hi].
template <typename T> Var<T> clamp(const Var<T>& x, T lo, T hi);

// Reductions.
template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> mean(const Var<T>& x);
// [..., C] -> [...]
template <typename T> Var<T> sum_last(const Var<T>& x);
// [B,C,H,W] -> [B,C]
template <typename T> Var<T> global_avg_pool(const Var<T>& x);
// [B,C,H,W] -> [C], mean over batch and space.
template <typename T> Var<T> channel_mean(const Var<T>& x);
// [C] -> shape (must be [B,C,H,W] with matching C).
template <typename T> Var<T> broadcast_channel(const Var<T>& v, const Shape& shape);

// Layout.
template <typename T> Var<T> reshape(const Var<T>& x, Shape shape);
template <typename T> Var<T> concat(const std::vector<Var<T>>& parts, int64_t axis);
template <typename T> Var<T> slice(const Var<T>& x, int64_t axis, int64_t begin, int64_t end);
// Nearest-neighbour 2x upsampling of [B,C,H,W].
template <typename T> Var<T> upsample2x(const Var<T>& x);

// Dense layers.
// x [B,Cin,H,W], w [Cout,Cin,K,K], bias [Cout] (may be undefined).
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, int64_t stride, int64_t pad);
// x [B,In], w [Out,In], bias [Out].
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias);
// Batched matmul: a [B,M,K] (or [B,K,M] if trans_a), b [B,K,N] (or [B,N,K]).
template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool trans_a, bool trans_b);
// Softmax over the last axis.
template <typename T> Var<T> softmax_last(const Var<T>& x);

}  // namespace ag

template <typename T> Var<T> operator+(const Var<T>& a, const Var<T>& b) { return ag::add(a, b); }
template <typename T> Var<T> operator-(const Var<T>& a, const Var<T>& b) { return ag::sub(a, b); }
template <typename T> Var<T> operator*(const Var<T>& a, const Var<T>& b) { return ag::mul(a, b); }
template <typename T> Var<T> operator/(const Var<T>& a, const Var<T>& b) { return ag::div(a, b); }
template <typename T> Var<T> operator*(const Var<T>& a, T s) { return ag::scale(a, s); }
template <typename T> Var<T> operator*(T s, const Var<T>& a) { return ag::scale(a, s); }
template <typename T> Var<T> operator+(const Var<T>& a, T s) { return ag::add_scalar(a, s); }

}  // namespace dforge
