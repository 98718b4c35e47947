#pragma once

// Straight loop implementations used only as test oracles. Everything runs in
// double and avoids the library's kernels entirely.

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat zeros(std::size_t r, std::size_t c) { return Mat(r, std::vector<double>(c, 0.0)); }

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat c = zeros(a.size(), b[0].size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline Mat transpose(const Mat& a) {
  Mat t = zeros(a[0].size(), a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) t[j][i] = a[i][j];
  return t;
}

inline Mat random(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Mat m = zeros(r, c);
  for (auto& row : m)
    for (auto& v : row) v = u(rng);
  return m;
}

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

inline Mat causal_softmax(const Mat& s) {
  Mat a = zeros(s.size(), s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    double mx = s[i][0];
    for (std::size_t j = 0; j <= i; ++j) mx = std::max(mx, s[i][j]);
    double z = 0;
    for (std::size_t j = 0; j <= i; ++j) z += std::exp(s[i][j] - mx);
    for (std::size_t j = 0; j <= i; ++j) a[i][j] = std::exp(s[i][j] - mx) / z;
  }
  return a;
}

inline Mat rms_norm(const Mat& x, const std::vector<double>& g, double eps) {
  Mat y = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double ss = 0;
    for (double v : x[i]) ss += v * v;
    const double inv = 1.0 / std::sqrt(ss / x[i].size() + eps);
    for (std::size_t j = 0; j < x[i].size(); ++j) y[i][j] = x[i][j] * inv * g[j];
  }
  return y;
}

/// Half-split rotary embedding of one head-width vector at `pos`.
inline std::vector<double> rope(const std::vector<double>& v, std::size_t pos, double base = 10000) {
  const std::size_t d = v.size();
  const std::size_t half = d / 2;
  std::vector<double> out = v;
  for (std::size_t i = 0; i < half; ++i) {
    const double theta = pos * std::pow(base, -2.0 * i / d);
    out[i] = v[i] * std::cos(theta) - v[i + half] * std::sin(theta);
    out[i + half] = v[i] * std::sin(theta) + v[i + half] * std::cos(theta);
  }
  return out;
}

/// Columns [h*dh, (h+1)*dh) of every row.
inline Mat head(const Mat& x, std::size_t h, std::size_t dh) {
  Mat out = zeros(x.size(), dh);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < dh; ++j) out[i][j] = x[i][h * dh + j];
  return out;
}

inline void put_head(Mat& x, const Mat& part, std::size_t h, std::size_t dh) {
  for (std::size_t i = 0; i < part.size(); ++i)
    for (std::size_t j = 0; j < dh; ++j) x[i][h * dh + j] = part[i][j];
}

inline Mat rope_rows(const Mat& x, std::size_t n_heads, bool apply = true) {
  if (!apply) return x;
  const std::size_t dh = x[0].size() / n_heads;
  Mat out = x;
  for (std::size_t h = 0; h < n_heads; ++h) {
    Mat part = head(x, h, dh);
    for (std::size_t i = 0; i < part.size(); ++i) part[i] = rope(part[i], i);
    put_head(out, part, h, dh);
  }
  return out;
}

}  // namespace oracle
