#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "datn/kernels.hpp"
#include "omp_util.hpp"

namespace datn::kernels {

template <typename T>
void softmax_causal_rows(MatrixRef<T> s) {
  const long n = static_cast<long>(s.rows);
#pragma omp parallel for schedule(static) if (detail::should_fork(s.rows * s.cols))
  for (long il = 0; il < n; ++il) {
    const std::size_t i = static_cast<std::size_t>(il);
    T* row = s.data + i * s.ld;
    const std::size_t len = std::min(i + 1, s.cols);
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, row[j]);
    T sum = 0;
    for (std::size_t j = 0; j < len; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    const T inv = T{1} / sum;
    for (std::size_t j = 0; j < len; ++j) row[j] *= inv;
    for (std::size_t j = len; j < s.cols; ++j) row[j] = T{0};
  }
}

template <typename T>
void rms_norm_rows(std::span<const T> x, std::span<const T> gain, T eps, std::span<T> y,
                   std::span<T> inv_rms, std::size_t cols) {
  const long rows = static_cast<long>(x.size() / cols);
#pragma omp parallel for schedule(static) if (detail::should_fork(x.size()))
  for (long r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * cols;
    T* yr = y.data() + r * cols;
    T ss = 0;
    for (std::size_t j = 0; j < cols; ++j) ss += xr[j] * xr[j];
    const T inv = T{1} / std::sqrt(ss / static_cast<T>(cols) + eps);
    inv_rms[r] = inv;
    for (std::size_t j = 0; j < cols; ++j) yr[j] = xr[j] * inv * gain[j];
  }
}

template <typename T>
void rms_norm_rows_backward(std::span<const T> x, std::span<const T> gain,
                            std::span<const T> inv_rms, std::span<const T> dy, std::span<T> dx,
                            std::span<T> dgain, std::size_t cols) {
  const long rows = static_cast<long>(x.size() / cols);
  const T n = static_cast<T>(cols);
#pragma omp parallel for schedule(static) if (detail::should_fork(x.size()))
  for (long r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * cols;
    const T* dyr = dy.data() + r * cols;
    T* dxr = dx.data() + r * cols;
    const T inv = inv_rms[r];
    T dot = 0;
    for (std::size_t j = 0; j < cols; ++j) dot += dyr[j] * gain[j] * xr[j];
    const T coef = dot * inv * inv * inv / n;
    for (std::size_t j = 0; j < cols; ++j) dxr[j] += dyr[j] * gain[j] * inv - xr[j] * coef;
  }
  // Column reduction kept serial over rows so the summation order is fixed.
  const long ncols = static_cast<long>(cols);
#pragma omp parallel for schedule(static) if (detail::should_fork(x.size()))
  for (long j = 0; j < ncols; ++j) {
    T acc = 0;
    for (long r = 0; r < rows; ++r) acc += dy[r * cols + j] * x[r * cols + j] * inv_rms[r];
    dgain[j] += acc;
  }
}

template <typename T>
void rope_rows(std::span<T> x, std::size_t n_heads, std::size_t d_head, std::size_t period,
               T base, bool inverse) {
  const std::size_t width = n_heads * d_head;
  const std::size_t half = d_head / 2;
  const long rows = static_cast<long>(x.size() / width);
  const std::size_t positions = std::min<std::size_t>(period, static_cast<std::size_t>(rows));
  std::vector<T> cos_table(positions * half);
  std::vector<T> sin_table(positions * half);
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::pow(static_cast<double>(base), -2.0 * static_cast<double>(i) / d_head);
    for (std::size_t p = 0; p < positions; ++p) {
      const double angle = static_cast<double>(p) * freq;
      cos_table[p * half + i] = static_cast<T>(std::cos(angle));
      sin_table[p * half + i] = static_cast<T>(inverse ? -std::sin(angle) : std::sin(angle));
    }
  }
#pragma omp parallel for schedule(static) if (detail::should_fork(x.size()))
  for (long r = 0; r < rows; ++r) {
    const std::size_t pos = static_cast<std::size_t>(r) % period;
    T* row = x.data() + r * width;
    for (std::size_t i = 0; i < half; ++i) {
      const T c = cos_table[pos * half + i];
      const T s = sin_table[pos * half + i];
      for (std::size_t h = 0; h < n_heads; ++h) {
        T* hp = row + h * d_head;
        const T a = hp[i];
        const T b = hp[i + half];
        hp[i] = a * c - b * s;
        hp[i + half] = a * s + b * c;
      }
    }
  }
}

template <typename T>
void cross_entropy_rows(std::span<const T> logits, std::span<const int> targets,
                        std::size_t vocab, std::span<double> row_loss, std::span<T> dlogits,
                        T scale) {
  const long rows = static_cast<long>(targets.size());
  const bool with_grad = !dlogits.empty();
#pragma omp parallel for schedule(static) if (detail::should_fork(logits.size()))
  for (long r = 0; r < rows; ++r) {
    const T* lr = logits.data() + r * vocab;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < vocab; ++j) mx = std::max(mx, lr[j]);
    double sum = 0;
    for (std::size_t j = 0; j < vocab; ++j) sum += std::exp(static_cast<double>(lr[j] - mx));
    const double lse = static_cast<double>(mx) + std::log(sum);
    const auto t = static_cast<std::size_t>(targets[r]);
    row_loss[r] = lse - static_cast<double>(lr[t]);
    if (with_grad) {
      T* dr = dlogits.data() + r * vocab;
      for (std::size_t j = 0; j < vocab; ++j) {
        const double p = std::exp(static_cast<double>(lr[j]) - lse);
        dr[j] += static_cast<T>((p - (j == t ? 1.0 : 0.0)) * scale);
      }
    }
  }
}

#define DATN_INSTANTIATE_ROWWISE(T)                                                          \
  template void softmax_causal_rows<T>(MatrixRef<T>);                                        \
  template void rms_norm_rows<T>(std::span<const T>, std::span<const T>, T, std::span<T>,    \
                                 std::span<T>, std::size_t);                                 \
  template void rms_norm_rows_backward<T>(std::span<const T>, std::span<const T>,            \
                                          std::span<const T>, std::span<const T>,            \
                                          std::span<T>, std::span<T>, std::size_t);          \
  template void rope_rows<T>(std::span<T>, std::size_t, std::size_t, std::size_t, T, bool);  \
  template void cross_entropy_rows<T>(std::span<const T>, std::span<const int>, std::size_t, \
                                      std::span<double>, std::span<T>, T);

DATN_INSTANTIATE_ROWWISE(float)
DATN_INSTANTIATE_ROWWISE(double)

#undef DATN_INSTANTIATE_ROWWISE

}  // namespace datn::kernels
