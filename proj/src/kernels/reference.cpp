#include "datn/reference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "datn/errors.hpp"

namespace datn::reference {

template <typename T>
void gemm(Trans ta, Trans tb, T alpha, MatrixRef<const T> a, MatrixRef<const T> b, T beta,
          MatrixRef<T> c) {
  const bool at = ta == Trans::yes;
  const bool bt = tb == Trans::yes;
  const std::size_t m = at ? a.cols : a.rows;
  const std::size_t k = at ? a.rows : a.cols;
  const std::size_t kb = bt ? b.cols : b.rows;
  const std::size_t n = bt ? b.rows : b.cols;
  if (k != kb || c.rows != m || c.cols != n) throw ShapeError("reference gemm: shape mismatch");
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = at ? a(p, i) : a(i, p);
        const T bv = bt ? b(j, p) : b(p, j);
        acc += av * bv;
      }
      c(i, j) = (beta == T{0} ? T{0} : beta * c(i, j)) + alpha * acc;
    }
  }
}

template <typename T>
void softmax_causal_rows(MatrixRef<T> s) {
  for (std::size_t i = 0; i < s.rows; ++i) {
    const std::size_t len = std::min(i + 1, s.cols);
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, s(i, j));
    T sum = 0;
    for (std::size_t j = 0; j < len; ++j) sum += std::exp(s(i, j) - mx);
    for (std::size_t j = 0; j < len; ++j) s(i, j) = std::exp(s(i, j) - mx) / sum;
    for (std::size_t j = len; j < s.cols; ++j) s(i, j) = T{0};
  }
}

template <typename T>
void rms_norm_rows(std::span<const T> x, std::span<const T> gain, T eps, std::span<T> y,
                   std::span<T> inv_rms, std::size_t cols) {
  for (std::size_t r = 0; r < x.size() / cols; ++r) {
    T ss = 0;
    for (std::size_t j = 0; j < cols; ++j) ss += x[r * cols + j] * x[r * cols + j];
    inv_rms[r] = T{1} / std::sqrt(ss / static_cast<T>(cols) + eps);
    for (std::size_t j = 0; j < cols; ++j) y[r * cols + j] = x[r * cols + j] * inv_rms[r] * gain[j];
  }
}

template <typename T>
void rms_norm_rows_backward(std::span<const T> x, std::span<const T> gain,
                            std::span<const T> inv_rms, std::span<const T> dy, std::span<T> dx,
                            std::span<T> dgain, std::size_t cols) {
  const T n = static_cast<T>(cols);
  for (std::size_t r = 0; r < x.size() / cols; ++r) {
    const T inv = inv_rms[r];
    T dot = 0;
    for (std::size_t j = 0; j < cols; ++j) dot += dy[r * cols + j] * gain[j] * x[r * cols + j];
    for (std::size_t j = 0; j < cols; ++j) {
      const std::size_t idx = r * cols + j;
      dx[idx] += dy[idx] * gain[j] * inv - x[idx] * dot * inv * inv * inv / n;
      dgain[j] += dy[idx] * x[idx] * inv;
    }
  }
}

template <typename T>
void rope_rows(std::span<T> x, std::size_t n_heads, std::size_t d_head, std::size_t period,
               T base, bool inverse) {
  const std::size_t width = n_heads * d_head;
  const std::size_t half = d_head / 2;
  for (std::size_t r = 0; r < x.size() / width; ++r) {
    const double pos = static_cast<double>(r % period);
    for (std::size_t h = 0; h < n_heads; ++h) {
      for (std::size_t i = 0; i < half; ++i) {
        const double angle =
            pos * std::pow(static_cast<double>(base), -2.0 * static_cast<double>(i) / d_head);
        const double s = inverse ? -std::sin(angle) : std::sin(angle);
        const double c = std::cos(angle);
        T& a = x[r * width + h * d_head + i];
        T& b = x[r * width + h * d_head + i + half];
        const double na = a * c - b * s;
        const double nb = a * s + b * c;
        a = static_cast<T>(na);
        b = static_cast<T>(nb);
      }
    }
  }
}

template <typename T>
void cross_entropy_rows(std::span<const T> logits, std::span<const int> targets,
                        std::size_t vocab, std::span<double> row_loss, std::span<T> dlogits,
                        T scale) {
  for (std::size_t r = 0; r < targets.size(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < vocab; ++j) mx = std::max(mx, double(logits[r * vocab + j]));
    double sum = 0;
    for (std::size_t j = 0; j < vocab; ++j) sum += std::exp(logits[r * vocab + j] - mx);
    const double lse = mx + std::log(sum);
    row_loss[r] = lse - logits[r * vocab + static_cast<std::size_t>(targets[r])];
    if (!dlogits.empty()) {
      for (std::size_t j = 0; j < vocab; ++j) {
        const double p = std::exp(logits[r * vocab + j] - lse);
        const double onehot = j == static_cast<std::size_t>(targets[r]) ? 1.0 : 0.0;
        dlogits[r * vocab + j] += static_cast<T>((p - onehot) * scale);
      }
    }
  }
}

#define DATN_INSTANTIATE_REFERENCE(T)                                                        \
  template void gemm<T>(Trans, Trans, T, MatrixRef<const T>, MatrixRef<const T>, T,          \
                        MatrixRef<T>);                                                       \
  template void softmax_causal_rows<T>(MatrixRef<T>);                                        \
  template void rms_norm_rows<T>(std::span<const T>, std::span<const T>, T, std::span<T>,    \
                                 std::span<T>, std::size_t);                                 \
  template void rms_norm_rows_backward<T>(std::span<const T>, std::span<const T>,            \
                                          std::span<const T>, std::span<const T>,            \
                                          std::span<T>, std::span<T>, std::size_t);          \
  template void rope_rows<T>(std::span<T>, std::size_t, std::size_t, std::size_t, T, bool);  \
  template void cross_entropy_rows<T>(std::span<const T>, std::span<const int>, std::size_t, \
                                      std::span<double>, std::span<T>, T);

DATN_INSTANTIATE_REFERENCE(float)
DATN_INSTANTIATE_REFERENCE(double)

#undef DATN_INSTANTIATE_REFERENCE

}  // namespace datn::reference
