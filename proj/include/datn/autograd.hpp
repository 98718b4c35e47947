#pragma once

// Reverse-mode differentiation over a linear tape. Nodes are appended in
// execution order, so a node's inputs always precede it and the reverse walk
// is a valid topological order.

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "datn/tensor.hpp"

namespace datn {

/// A trainable tensor that outlives any single tape.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool decay = true;  ///< subject to decoupled weight decay

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v, bool wd = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), decay(wd) {}

  void zero_grad() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    grad.fill(T{0});
  }
};

template <typename T>
class Tape;

/// Handle to a tape node.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Tape {
 public:
  /// Called with the tape and the node's own id once its gradient is complete.
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  Var<T> leaf(Tensor<T> value, bool requires_grad = true);
  /// Binds a parameter: backward() adds this node's gradient into p.grad.
  Var<T> parameter(Parameter<T>& p);

  /// Appends an op result. `fn` is dropped when no input requires a gradient.
  /// Throws NumericalError when the value contains NaN or Inf.
  Var<T> record(std::string_view op, Tensor<T> value, const std::vector<Var<T>>& inputs,
                BackwardFn fn, std::vector<Tensor<T>> saved = {});

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  const Tensor<T>& saved(std::size_t id, std::size_t slot) const {
    return nodes_.at(id).saved.at(slot);
  }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }

  /// Gradient accumulated so far; empty tensor when none has reached the node.
  const Tensor<T>& grad(std::size_t id) const { return nodes_.at(id).grad; }
  /// Gradient buffer for accumulation, zero-initialized on first use.
  Tensor<T>& grad_buffer(std::size_t id);

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded backward in reverse.
  void backward(const Var<T>& loss);

  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    std::string op;
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<std::size_t> inputs;
    std::vector<Tensor<T>> saved;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  bool grad_enabled_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
template <typename T, typename F>
Tensor<T> finite_difference_grad(F&& f, const Tensor<T>& x, T h) {
  Tensor<T> g(x.shape());
  Tensor<T> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T orig = probe[i];
    probe[i] = orig + h;
    const T fp = f(probe);
    probe[i] = orig - h;
    const T fm = f(probe);
    probe[i] = orig;
    g[i] = (fp - fm) / (T{2} * h);
  }
  return g;
}

}  // namespace datn
