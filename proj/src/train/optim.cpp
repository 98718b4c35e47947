#include <cmath>

#include "datn/errors.hpp"
#include "datn/train.hpp"

namespace datn {

template <typename T>
double clip_grad_norm(std::vector<Parameter<T>>& params, double max_norm) {
  double sq = 0;
  for (const auto& p : params)
    for (T g : p.grad.data()) sq += double(g) * double(g);
  const double norm = std::sqrt(sq);
  if (norm > max_norm && std::isfinite(norm)) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& p : params)
      for (T& g : p.grad.data()) g *= s;
  }
  return norm;
}

template <typename T>
void adamw_step(std::vector<Parameter<T>>& params, AdamState<T>& st, const TrainConfig& hp, double lr) {
  if (st.m.empty()) {
    for (const auto& p : params) {
      st.m.emplace_back(p.value.shape());
      st.v.emplace_back(p.value.shape());
    }
  }
  if (st.m.size() != params.size()) throw ShapeError("optimizer state does not match the parameter list");
  ++st.step;
  const double b1 = hp.adam_beta1, b2 = hp.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, double(st.step));
  const double c2 = 1.0 - std::pow(b2, double(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (p.grad.shape() != p.value.shape() || st.m[i].shape() != p.value.shape()) {
      throw ShapeError("gradient or moment shape differs from parameter '" + p.name + "'");
    }
    const double decay = p.decay ? lr * hp.weight_decay : 0.0;
    T* w = p.value.raw();
    const T* g = p.grad.raw();
    T* m = st.m[i].raw();
    T* v = st.v[i].raw();
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double gk = g[k];
      const double mk = b1 * m[k] + (1 - b1) * gk;
      const double vk = b2 * v[k] + (1 - b2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      double wk = w[k];
      wk -= decay * wk;
      wk -= lr * (mk / c1) / (std::sqrt(vk / c2) + hp.adam_eps);
      w[k] = static_cast<T>(wk);
    }
  }
}

template double clip_grad_norm<float>(std::vector<Parameter<float>>&, double);
template double clip_grad_norm<double>(std::vector<Parameter<double>>&, double);
template void adamw_step<float>(std::vector<Parameter<float>>&, AdamState<float>&, const TrainConfig&, double);
template void adamw_step<double>(std::vector<Parameter<double>>&, AdamState<double>&, const TrainConfig&, double);

}  // namespace datn
