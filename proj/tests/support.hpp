#pragma once

#include <random>

#include "datn/tensor.hpp"
#include "oracle/loops.hpp"

namespace testing {

template <typename T>
datn::Tensor<T> to_tensor(const oracle::Mat& m) {
  datn::Tensor<T> t({m.size(), m.empty() ? 0 : m[0].size()});
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[i].size(); ++j) t(i, j) = static_cast<T>(m[i][j]);
  return t;
}

template <typename T>
oracle::Mat to_mat(const datn::Tensor<T>& t) {
  oracle::Mat m = oracle::zeros(t.rows(), t.cols());
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = static_cast<double>(t(i, j));
  return m;
}

template <typename T>
datn::Tensor<T> uniform(datn::Shape shape, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  datn::Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(u(rng));
  return t;
}

inline double max_rel(const oracle::Mat& a, const oracle::Mat& b) {
  double diff = 0, scale = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) {
      diff = std::max(diff, std::abs(a[i][j] - b[i][j]));
      scale = std::max(scale, std::abs(b[i][j]));
    }
  return scale == 0 ? diff : diff / scale;
}

/// Elementwise |a-b| / max(|a|, |b|, floor), maximized. Used for gradient checks;
/// the floor keeps near-zero components from turning finite-difference noise
/// into a large ratio.
template <typename T>
double grad_rel(const datn::Tensor<T>& a, const datn::Tensor<T>& b, double floor = 1e-6) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i], y = b[i];
    worst = std::max(worst, std::abs(x - y) / std::max({std::abs(x), std::abs(y), floor}));
  }
  return worst;
}

}  // namespace testing
