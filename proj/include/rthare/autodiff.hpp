#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "rthare/tensor.hpp"

namespace rthare {

// A named trainable tensor. Gradients live on the Tape that watched it, not here.
template <typename T>
struct Parameter {
  std::string name;
  BasicTensor<T> value;

  template <typename U>
  Parameter<U> cast() const {
    return Parameter<U>{name, value.template cast<U>()};
  }
};

namespace detail {

template <typename T>
struct Node {
  BasicTensor<T> own;
  const BasicTensor<T>* borrowed = nullptr;
  bool requires_grad = false;
  BasicTensor<T> grad;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> pullback;

  const BasicTensor<T>& value() const { return borrowed ? *borrowed : own; }

  BasicTensor<T>& grad_buffer() {
    if (grad.empty()) grad = BasicTensor<T>(value().shape());
    return grad;
  }
};

}  // namespace detail

template <typename T>
class Tape;

/// Handle to a value in the (possibly untaped) computation graph.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(std::shared_ptr<detail::Node<T>> node, Tape<T>* tape) : node_(std::move(node)), tape_(tape) {}

  const BasicTensor<T>& value() const { return node_->value(); }
  const Shape& shape() const { return node_->value().shape(); }
  bool valid() const { return node_ != nullptr; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tape<T>* tape() const { return tape_; }
  const std::shared_ptr<detail::Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node<T>> node_;
  Tape<T>* tape_ = nullptr;
};

/// Records operations for reverse-mode differentiation.
///
/// backward() may run once per tape; a second call throws ContractError. Gradients for
/// watched parameters are read back with grad(param). A tape is single-threaded; run
/// independent samples on independent tapes.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf bound to a parameter; watching the same parameter twice returns the same leaf.
  Var<T> watch(const Parameter<T>& p);

  // Leaf input that collects a gradient (used for input-gradient checks).
  Var<T> variable(BasicTensor<T> value);

  void record(const std::shared_ptr<detail::Node<T>>& node) { nodes_.push_back(node); }

  void backward(const Var<T>& loss);

  // Gradient of the last backward() w.r.t. a watched parameter; zeros if it did not
  // influence the loss.
  const BasicTensor<T>& grad(const Parameter<T>& p) const;
  const BasicTensor<T>& grad(const Var<T>& v) const;
  bool watches(const Parameter<T>& p) const { return watched_.count(&p) != 0; }

  std::size_t recorded() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  std::vector<std::shared_ptr<detail::Node<T>>> nodes_;
  std::unordered_map<const Parameter<T>*, std::shared_ptr<detail::Node<T>>> watched_;
  bool consumed_ = false;
};

template <typename T>
Var<T> constant(BasicTensor<T> value);

// Untaped view of an existing tensor; the tensor must outlive the Var.
template <typename T>
Var<T> borrow(const BasicTensor<T>& value);

// Binds parameters either to a tape (training) or by reference (inference).
template <typename T>
struct Context {
  Tape<T>* tape = nullptr;
  Var<T> param(const Parameter<T>& p) const { return tape ? tape->watch(p) : borrow(p.value); }
  Var<T> input(const BasicTensor<T>& v) const { return borrow(v); }
};

// ---- differentiable operations ----
// Image ops accept [C,H,W] or batched [N,C,H,W]; each batch item is processed independently.

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t stride, std::size_t pad);

template <typename T>
Var<T> group_norm(const Var<T>& x, std::size_t groups, const Var<T>& gamma, const Var<T>& beta, T eps);

template <typename T>
Var<T> relu(const Var<T>& x);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

// [N,C,H,W] -> [N,C], [C,H,W] -> [C]
template <typename T>
Var<T> global_avg_pool(const Var<T>& x);

// x[n] of a batched tensor: [N, ...] -> [...]
template <typename T>
Var<T> select(const Var<T>& x, std::size_t index);

// [D,h,w] x [D,h,w] -> [h*w, h, w]; channel enumerates positions of a, spatial axes positions of b.
template <typename T>
Var<T> correlate(const Var<T>& a, const Var<T>& b, T scale);

// Concatenate along axis 0.
template <typename T>
Var<T> concat(std::span<const Var<T>> parts);

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);

// mean((a - b)^2) as a scalar
template <typename T>
Var<T> mse_loss(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> sum(const Var<T>& x);

// sum(x * weights) with a constant weight tensor
template <typename T>
Var<T> weighted_sum(const Var<T>& x, const BasicTensor<T>& weights);

// Throws NumericError naming `what` when the tensor holds NaN or Inf.
template <typename T>
void require_finite(const BasicTensor<T>& t, const std::string& what);

}  // namespace rthare
