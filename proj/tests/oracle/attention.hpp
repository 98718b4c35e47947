#pragma once

// Direct pairwise evaluation of every token mixer, one sequence at a time.

#include <cmath>
#include <string>

#include "loops.hpp"

namespace oracle {

struct Weights {
  Mat wq, wk, wv, wo;
  Mat gate, up, down;
  std::vector<double> bias, gain;
  std::size_t heads = 1;
};

struct Result {
  Mat o;
  std::vector<Mat> a;  // one per head
};

enum class Kind { standard, approx_split, approx_shared, nonapprox };

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Q/K from `qk_in`, V from `h`. `qk_in` may have more rows than h; only the
/// first h.size() are used.
inline Result attention(Kind kind, const Mat& h, const Mat& qk_in_full, const Weights& w, bool rope = true) {
  const std::size_t L = h.size();
  Mat qk_in(qk_in_full.begin(), qk_in_full.begin() + static_cast<long>(L));
  Mat q = matmul(qk_in, w.wq), k = matmul(qk_in, w.wk), v = matmul(h, w.wv);
  const std::size_t d = q[0].size(), dh = d / w.heads;
  if (kind == Kind::nonapprox)
    for (auto& row : q)
      for (auto& x : row) x = silu(x);
  const bool rotate = rope && dh % 2 == 0;
  q = rope_rows(q, w.heads, rotate);
  k = rope_rows(k, w.heads, rotate);

  Result r;
  Mat concat = zeros(L, d);
  for (std::size_t hd = 0; hd < w.heads; ++hd) {
    Mat qh = head(q, hd, dh), kh = head(k, hd, dh), vh = head(v, hd, dh);
    Mat a = zeros(L, L);
    const double c = 1.0 / std::sqrt(double(dh));
    for (std::size_t i = 0; i < L; ++i) {
      if (kind == Kind::standard) {
        Mat s = zeros(1, i + 1);
        for (std::size_t j = 0; j <= i; ++j) s[0][j] = dot(qh[i], kh[j]) * c;
        double mx = s[0][0];
        for (double x : s[0]) mx = std::max(mx, x);
        double z = 0;
        for (double x : s[0]) z += std::exp(x - mx);
        for (std::size_t j = 0; j <= i; ++j) a[i][j] = std::exp(s[0][j] - mx) / z;
      } else if (kind == Kind::nonapprox) {
        double z = 0;
        for (std::size_t j = 0; j <= i; ++j) z += std::exp(dot(qh[j], kh[j]) * c);
        for (std::size_t j = 0; j <= i; ++j) a[i][j] = std::exp(dot(qh[j], kh[j]) * c) / z;
      } else if (kind == Kind::approx_shared) {
        double z = 0;
        std::vector<double> phi(i + 1);
        for (std::size_t j = 0; j <= i; ++j) {
          const double x = dot(qh[i], kh[j]) * c;
          phi[j] = 1 + x + x * x / 2;
          z += phi[j];
        }
        for (std::size_t j = 0; j <= i; ++j) a[i][j] = phi[j] / z;
      } else {
        double z1 = 0, z2 = 0;
        std::vector<double> w1(i + 1), w2(i + 1);
        for (std::size_t j = 0; j <= i; ++j) {
          w1[j] = dot(qh[i], kh[j]);
          w2[j] = 0;
          for (std::size_t m = 0; m < dh; ++m) w2[j] += qh[i][m] * qh[i][m] * kh[j][m] * kh[j][m] / 2;
          z1 += w1[j];
          z2 += w2[j];
        }
        for (std::size_t j = 0; j <= i; ++j) a[i][j] = 1.0 / (i + 1) + w1[j] / z1 + w2[j] / z2;
      }
    }
    put_head(concat, matmul(a, vh), hd, dh);
    r.a.push_back(a);
  }
  r.o = matmul(concat, w.wo);
  return r;
}

inline Mat gated_mlp(const Mat& h, const Weights& w) {
  Mat g = matmul(h, w.gate), u = matmul(h, w.up);
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = 0; j < g[i].size(); ++j) g[i][j] = silu(g[i][j]) * u[i][j];
  Mat o = matmul(g, w.down);
  for (auto& row : o)
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (!w.bias.empty()) row[j] += w.bias[j];
      if (!w.gain.empty()) row[j] *= w.gain[j];
    }
  return o;
}

}  // namespace oracle
