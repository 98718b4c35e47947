#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "datn/autograd.hpp"
#include "datn/errors.hpp"

namespace datn {

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
double max_abs_difference(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("compare " + shape_string(a.shape()) + " with " + shape_string(b.shape()));
  }
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return worst;
}

template <typename T>
double max_relative_error(const Tensor<T>& a, const Tensor<T>& b) {
  const double diff = max_abs_difference(a, b);
  double scale = 0;
  for (std::size_t i = 0; i < b.size(); ++i) scale = std::max(scale, std::abs(double(b[i])));
  if (scale == 0) return diff;
  return diff / scale;
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  Node n;
  n.op = "leaf";
  n.value = std::move(value);
  n.requires_grad = requires_grad && grad_enabled_;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::parameter(Parameter<T>& p) {
  Node n;
  n.op = "parameter:" + p.name;
  n.value = p.value;
  n.requires_grad = grad_enabled_;
  n.param = grad_enabled_ ? &p : nullptr;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::record(std::string_view op, Tensor<T> value, const std::vector<Var<T>>& inputs,
                       BackwardFn fn, std::vector<Tensor<T>> saved) {
  if (!value.all_finite()) {
    throw NumericalError("non-finite value produced by " + std::string(op));
  }
  Node n;
  n.op = op;
  n.value = std::move(value);
  bool needs = false;
  for (const auto& in : inputs) {
    if (&in.tape() != this) throw std::logic_error("op mixes tapes: " + std::string(op));
    n.inputs.push_back(in.id());
    needs = needs || nodes_[in.id()].requires_grad;
  }
  n.requires_grad = needs && grad_enabled_;
  if (n.requires_grad) {
    n.backward = std::move(fn);
    n.saved = std::move(saved);
  }
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) {
    n.grad = Tensor<T>(n.value.shape());
  }
  return n.grad;
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss) {
  if (&loss.tape() != this) throw std::logic_error("backward: loss lives on another tape");
  if (loss.value().size() != 1) {
    throw ShapeError("backward needs a scalar loss, got " + shape_string(loss.shape()));
  }
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    for (std::size_t in : nodes_[id].inputs) {
      if (in >= id) throw std::logic_error("tape cycle: node " + std::to_string(id) +
                                           " reads node " + std::to_string(in));
    }
  }
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss.id()).fill(T{1});
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param != nullptr) {
      Tensor<T>& pg = n.param->grad;
      if (pg.shape() != n.value.shape()) pg = Tensor<T>(n.value.shape());
      for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
    }
  }
}

template class Tape<float>;
template class Tape<double>;
template double max_abs_difference<float>(const Tensor<float>&, const Tensor<float>&);
template double max_abs_difference<double>(const Tensor<double>&, const Tensor<double>&);
template double max_relative_error<float>(const Tensor<float>&, const Tensor<float>&);
template double max_relative_error<double>(const Tensor<double>&, const Tensor<double>&);

}  // namespace datn
