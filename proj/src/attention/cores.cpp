// Fused attention cores with hand-written backward passes. Each core loops
// over (sequence, head) blocks; a block reads a strided [L x d_head] slice of
// the projected q/k/v and writes the matching slice of the output.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "../kernels/omp_util.hpp"
#include "datn/attention.hpp"
#include "datn/errors.hpp"
#include "datn/kernels.hpp"

namespace datn {
namespace {

struct Geometry {
  std::size_t batch;     // sequences in v
  std::size_t qk_batch;  // sequences in q/k: 1 (shared) or batch
  std::size_t len;
  std::size_t width;
  std::size_t heads;
  std::size_t d_head;

  std::size_t qk_seq(std::size_t b) const { return qk_batch == 1 ? 0 : b; }
};

template <typename T>
Geometry geometry(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                  const AttnOptions& opt, const char* op) {
  Geometry g{};
  g.batch = opt.batch;
  g.heads = opt.n_heads;
  g.width = v.cols();
  if (g.batch == 0 || v.rows() % g.batch != 0) {
    throw ShapeError(std::string(op) + ": " + std::to_string(v.rows()) + " rows do not split into " +
                     std::to_string(g.batch) + " sequences");
  }
  g.len = v.rows() / g.batch;
  if (g.heads == 0 || g.width % g.heads != 0) {
    throw ShapeError(std::string(op) + ": width " + std::to_string(g.width) +
                     " not divisible by heads " + std::to_string(g.heads));
  }
  g.d_head = g.width / g.heads;
  if (q.shape() != k.shape() || q.cols() != g.width || q.rows() % g.len != 0) {
    throw ShapeError(std::string(op) + ": q " + shape_string(q.shape()) + ", k " +
                     shape_string(k.shape()) + ", v " + shape_string(v.shape()));
  }
  g.qk_batch = q.rows() / g.len;
  if (g.qk_batch != 1 && g.qk_batch != g.batch) {
    throw ShapeError(std::string(op) + ": q/k hold " + std::to_string(g.qk_batch) +
                     " sequences, v holds " + std::to_string(g.batch));
  }
  return g;
}

template <typename T>
MatrixRef<const T> head_view(const Tensor<T>& x, const Geometry& g, std::size_t seq, std::size_t h) {
  return {x.raw() + seq * g.len * g.width + h * g.d_head, g.len, g.d_head, g.width};
}

template <typename T>
MatrixRef<T> head_view(Tensor<T>& x, const Geometry& g, std::size_t seq, std::size_t h) {
  return {x.raw() + seq * g.len * g.width + h * g.d_head, g.len, g.d_head, g.width};
}

template <typename T>
MatrixRef<T> square_block(Tensor<T>& x, std::size_t block, std::size_t len) {
  return {x.raw() + block * len * len, len, len, len};
}

template <typename T>
MatrixRef<const T> square_block(const Tensor<T>& x, std::size_t block, std::size_t len) {
  return {x.raw() + block * len * len, len, len, len};
}

template <typename T>
MatrixRef<const T> as_const(MatrixRef<T> m) {
  return {m.data, m.rows, m.cols, m.ld};
}

template <typename T>
void zero_upper(MatrixRef<T> m) {
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = i + 1; j < m.cols; ++j) m(i, j) = T{0};
}

template <typename F>
void for_each_block(std::size_t blocks, std::size_t work_per_block, F&& body) {
  const long n = static_cast<long>(blocks);
#pragma omp parallel for schedule(dynamic, 1) if (kernels::detail::should_fork(blocks * work_per_block) && blocks > 1)
  for (long b = 0; b < n; ++b) body(static_cast<std::size_t>(b));
}

constexpr auto kSerial = Exec::serial;

// Per-thread square scratch, grown on demand.
template <typename T>
MatrixRef<T> scratch_square(std::size_t len, int slot) {
  thread_local std::vector<T> buffers[3];
  auto& buf = buffers[slot];
  if (buf.size() < len * len) buf.resize(len * len);
  return {buf.data(), len, len, len};
}

template <typename T>
MatrixRef<T> scratch_rect(std::size_t rows, std::size_t cols, int slot) {
  thread_local std::vector<T> buffers[3];
  auto& buf = buffers[slot];
  if (buf.size() < rows * cols) buf.resize(rows * cols);
  return {buf.data(), rows, cols, cols};
}

template <typename T>
T dot_rows(MatrixRef<const T> a, std::size_t i, MatrixRef<const T> b, std::size_t j) {
  T acc = 0;
  for (std::size_t m = 0; m < a.cols; ++m) acc += a(i, m) * b(j, m);
  return acc;
}

// Records the first guard violation found by any block; thrown after the loop.
struct GuardHit {
  bool hit = false;
  std::size_t block = 0;
  std::size_t position = 0;
  double value = 0;
  const char* term = "";

  void report(std::size_t blk, std::size_t pos, double v, const char* t) {
#pragma omp critical(datn_guard)
    if (!hit || blk < block || (blk == block && pos < position)) {
      hit = true;
      block = blk;
      position = pos;
      value = v;
      term = t;
    }
  }
};

void throw_guard(const GuardHit& g, const Geometry& geo, long layer) {
  const std::size_t head = g.block % geo.heads;
  const std::size_t seq = g.block / geo.heads;
  throw DenominatorError("approximate attention: " + std::string(g.term) + " denominator " +
                             std::to_string(g.value) + " below guard at layer " +
                             std::to_string(layer) + ", head " + std::to_string(head) +
                             ", sequence " + std::to_string(seq) + ", position " +
                             std::to_string(g.position),
                         layer, static_cast<long>(head), static_cast<long>(g.position));
}

}  // namespace

template <typename T>
Var<T> softmax_attention_core(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                              const AttnOptions& opt, Capture<T>* capture) {
  const Tensor<T>& Q = q.value();
  const Tensor<T>& K = k.value();
  const Tensor<T>& V = v.value();
  const Geometry g = geometry(Q, K, V, opt, "softmax attention");
  const T scale = T{1} / std::sqrt(static_cast<T>(g.d_head));
  const std::size_t L = g.len;

  Tensor<T> A({g.qk_batch * g.heads, L, L});
  Tensor<T> pre;
  if (capture) pre = Tensor<T>(A.shape());
  for_each_block(g.qk_batch * g.heads, L * L * g.d_head, [&](std::size_t blk) {
    const std::size_t s = blk / g.heads, h = blk % g.heads;
    auto S = square_block(A, blk, L);
    kernels::gemm<T>(Trans::no, Trans::yes, scale, head_view(Q, g, s, h), head_view(K, g, s, h), T{0},
                     S, kSerial);
    if (capture) {
      auto P = square_block(pre, blk, L);
      for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j <= i; ++j) P(i, j) = S(i, j);
    }
    kernels::softmax_causal_rows<T>(S);
  });

  Tensor<T> out({g.batch * L, g.width});
  for_each_block(g.batch * g.heads, L * L * g.d_head, [&](std::size_t blk) {
    const std::size_t b = blk / g.heads, h = blk % g.heads;
    kernels::gemm<T>(Trans::no, Trans::no, T{1}, as_const(square_block(A, g.qk_seq(b) * g.heads + h, L)),
                     head_view(V, g, b, h), T{0}, head_view(out, g, b, h), kSerial);
  });

  if (capture) {
    if (g.qk_batch == g.batch) {
      capture->attention = A;
      capture->prelogits = std::move(pre);
    } else {
      capture->attention = Tensor<T>({g.batch * g.heads, L, L});
      capture->prelogits = Tensor<T>({g.batch * g.heads, L, L});
      for (std::size_t b = 0; b < g.batch; ++b) {
        std::copy_n(A.raw(), A.size(), capture->attention.raw() + b * A.size());
        std::copy_n(pre.raw(), pre.size(), capture->prelogits.raw() + b * pre.size());
      }
    }
  }

  std::vector<Tensor<T>> saved;
  saved.push_back(std::move(A));
  return q.tape().record(
      "softmax_attention", std::move(out), {q, k, v},
      [qi = q.id(), ki = k.id(), vi = v.id(), g, scale](Tape<T>& tape, std::size_t self) {
        const Tensor<T>& G = tape.grad(self);
        const Tensor<T>& A = tape.saved(self, 0);
        const Tensor<T>& Q = tape.value(qi);
        const Tensor<T>& K = tape.value(ki);
        const Tensor<T>& V = tape.value(vi);
        const std::size_t L = g.len;
        if (tape.requires_grad(vi)) {
          Tensor<T>& dV = tape.grad_buffer(vi);
          for_each_block(g.batch * g.heads, L * L * g.d_head, [&](std::size_t blk) {
            const std::size_t b = blk / g.heads, h = blk % g.heads;
            kernels::gemm<T>(Trans::yes, Trans::no, T{1}, square_block(A, g.qk_seq(b) * g.heads + h, L),
                             head_view(G, g, b, h), T{1}, head_view(dV, g, b, h), kSerial);
          });
        }
        const bool need_q = tape.requires_grad(qi), need_k = tape.requires_grad(ki);
        if (!need_q && !need_k) return;
        Tensor<T>* dQ = need_q ? &tape.grad_buffer(qi) : nullptr;
        Tensor<T>* dK = need_k ? &tape.grad_buffer(ki) : nullptr;
        for_each_block(g.qk_batch * g.heads, g.batch * L * L * g.d_head, [&](std::size_t blk) {
          const std::size_t s = blk / g.heads, h = blk % g.heads;
          auto dS = scratch_square<T>(L, 0);
          const std::size_t b_begin = g.qk_batch == 1 ? 0 : s;
          const std::size_t b_end = g.qk_batch == 1 ? g.batch : s + 1;
          for (std::size_t b = b_begin; b < b_end; ++b) {
            kernels::gemm<T>(Trans::no, Trans::yes, T{1}, head_view(G, g, b, h), head_view(V, g, b, h),
                             b == b_begin ? T{0} : T{1}, dS, kSerial);
          }
          auto a = square_block(A, blk, L);
          for (std::size_t i = 0; i < L; ++i) {
            T row = 0;
            for (std::size_t j = 0; j <= i; ++j) row += a(i, j) * dS(i, j);
            for (std::size_t j = 0; j <= i; ++j) dS(i, j) = a(i, j) * (dS(i, j) - row);
            for (std::size_t j = i + 1; j < L; ++j) dS(i, j) = T{0};
          }
          if (dQ) {
            kernels::gemm<T>(Trans::no, Trans::no, scale, as_const(dS), head_view(K, g, s, h), T{1},
                             head_view(*dQ, g, s, h), kSerial);
          }
          if (dK) {
            kernels::gemm<T>(Trans::yes, Trans::no, scale, as_const(dS), head_view(Q, g, s, h), T{1},
                             head_view(*dK, g, s, h), kSerial);
          }
        });
      },
      std::move(saved));
}

template <typename T>
Var<T> approx_attention_core(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                             const AttnOptions& opt, Capture<T>* capture) {
  const Tensor<T>& Q = q.value();
  const Tensor<T>& K = k.value();
  const Tensor<T>& V = v.value();
  const Geometry g = geometry(Q, K, V, opt, "approximate attention");
  if (g.qk_batch != g.batch) throw ShapeError("approximate attention: q/k must be per sequence");
  const std::size_t L = g.len, dh = g.d_head, blocks = g.batch * g.heads;
  const T scale = T{1} / std::sqrt(static_cast<T>(dh));
  const T guard = static_cast<T>(kDenominatorGuard);
  const bool split = opt.approx_mode == ApproxMode::split;

  Tensor<T> out({g.batch * L, g.width});
  Tensor<T> P1({blocks, L, L});
  Tensor<T> P2;  // split: second-order weights; shared: the scaled scores x
  Tensor<T> den1({blocks, L});
  Tensor<T> den2;
  Tensor<T> O1, O2;
  if (split) {
    P2 = Tensor<T>({blocks, L, L});
    den2 = Tensor<T>({blocks, L});
    O1 = Tensor<T>(out.shape());
    O2 = Tensor<T>(out.shape());
  } else {
    P2 = Tensor<T>({blocks, L, L});
  }
  GuardHit hit;

  for_each_block(blocks, L * L * dh, [&](std::size_t blk) {
    const std::size_t b = blk / g.heads, h = blk % g.heads;
    const auto Qb = head_view(Q, g, b, h), Kb = head_view(K, g, b, h), Vb = head_view(V, g, b, h);
    auto Ob = head_view(out, g, b, h);
    T* d1 = den1.raw() + blk * L;
    if (split) {
      T* d2 = den2.raw() + blk * L;
      std::vector<T> z1(dh, T{0}), z2(dh, T{0});
      for (std::size_t i = 0; i < L; ++i) {
        T a1 = 0, a2 = 0;
        for (std::size_t m = 0; m < dh; ++m) {
          z1[m] += Kb(i, m);
          z2[m] += Kb(i, m) * Kb(i, m);
          a1 += Qb(i, m) * z1[m];
          a2 += Qb(i, m) * Qb(i, m) * z2[m];
        }
        d1[i] = a1;
        d2[i] = a2 / T{2};
        if (std::abs(d1[i]) < guard) hit.report(blk, i, d1[i], "first-order");
        if (std::abs(d2[i]) < guard) hit.report(blk, i, d2[i], "second-order");
      }
      auto W1 = square_block(P1, blk, L);
      kernels::gemm<T>(Trans::no, Trans::yes, T{1}, Qb, Kb, T{0}, W1, kSerial);
      auto Q2 = scratch_rect<T>(L, dh, 0), K2 = scratch_rect<T>(L, dh, 1);
      for (std::size_t i = 0; i < L; ++i)
        for (std::size_t m = 0; m < dh; ++m) {
          Q2(i, m) = Qb(i, m) * Qb(i, m);
          K2(i, m) = Kb(i, m) * Kb(i, m);
        }
      auto W2 = square_block(P2, blk, L);
      kernels::gemm<T>(Trans::no, Trans::yes, T{0.5}, as_const(Q2), as_const(K2), T{0}, W2, kSerial);
      for (std::size_t i = 0; i < L; ++i) {
        const T inv1 = T{1} / d1[i], inv2 = T{1} / d2[i];
        for (std::size_t j = 0; j <= i; ++j) {
          W1(i, j) *= inv1;
          W2(i, j) *= inv2;
        }
      }
      zero_upper(W1);
      zero_upper(W2);
      auto O1b = head_view(O1, g, b, h), O2b = head_view(O2, g, b, h);
      kernels::gemm<T>(Trans::no, Trans::no, T{1}, as_const(W1), Vb, T{0}, O1b, kSerial);
      kernels::gemm<T>(Trans::no, Trans::no, T{1}, as_const(W2), Vb, T{0}, O2b, kSerial);
      std::vector<T> run(dh, T{0});
      for (std::size_t i = 0; i < L; ++i) {
        const T inv = T{1} / static_cast<T>(i + 1);
        for (std::size_t m = 0; m < dh; ++m) {
          run[m] += Vb(i, m);
          Ob(i, m) = run[m] * inv + O1b(i, m) + O2b(i, m);
        }
      }
    } else {
      auto X = square_block(P2, blk, L);
      auto P = square_block(P1, blk, L);
      kernels::gemm<T>(Trans::no, Trans::yes, scale, Qb, Kb, T{0}, X, kSerial);
      zero_upper(X);
      for (std::size_t i = 0; i < L; ++i) {
        T den = 0;
        for (std::size_t j = 0; j <= i; ++j) {
          const T x = X(i, j);
          P(i, j) = T{1} + x + x * x / T{2};
          den += P(i, j);
        }
        d1[i] = den;
        if (std::abs(den) < guard) hit.report(blk, i, den, "shared");
        const T inv = T{1} / den;
        for (std::size_t j = 0; j <= i; ++j) P(i, j) *= inv;
        for (std::size_t j = i + 1; j < L; ++j) P(i, j) = T{0};
      }
      kernels::gemm<T>(Trans::no, Trans::no, T{1}, as_const(P), Vb, T{0}, Ob, kSerial);
    }
  });
  if (hit.hit) throw_guard(hit, g, opt.layer);

  if (capture) {
    capture->attention = Tensor<T>({blocks, L, L});
    capture->prelogits = Tensor<T>({blocks, L, L});
    for_each_block(blocks, L * L * dh, [&](std::size_t blk) {
      const std::size_t b = blk / g.heads, h = blk % g.heads;
      auto A = square_block(capture->attention, blk, L);
      auto X = square_block(capture->prelogits, blk, L);
      if (split) {
        kernels::gemm<T>(Trans::no, Trans::yes, scale, head_view(Q, g, b, h), head_view(K, g, b, h),
                         T{0}, X, kSerial);
        zero_upper(X);
        const auto W1 = square_block(P1, blk, L), W2 = square_block(P2, blk, L);
        for (std::size_t i = 0; i < L; ++i)
          for (std::size_t j = 0; j <= i; ++j)
            A(i, j) = T{1} / static_cast<T>(i + 1) + W1(i, j) + W2(i, j);
      } else {
        const auto P = square_block(P1, blk, L), S = square_block(P2, blk, L);
        for (std::size_t i = 0; i < L; ++i)
          for (std::size_t j = 0; j <= i; ++j) {
            A(i, j) = P(i, j);
            X(i, j) = S(i, j);
          }
      }
    });
  }

  std::vector<Tensor<T>> saved;
  saved.push_back(std::move(P1));
  saved.push_back(std::move(P2));
  saved.push_back(std::move(den1));
  if (split) {
    saved.push_back(std::move(den2));
    saved.push_back(std::move(O1));
    saved.push_back(std::move(O2));
  }
  return q.tape().record(
      split ? "approx_attention_split" : "approx_attention_shared", std::move(out), {q, k, v},
      [qi = q.id(), ki = k.id(), vi = v.id(), g, scale, split](Tape<T>& tape, std::size_t self) {
        const Tensor<T>& G = tape.grad(self);
        const Tensor<T>& Q = tape.value(qi);
        const Tensor<T>& K = tape.value(ki);
        const Tensor<T>& V = tape.value(vi);
        const Tensor<T>& P1 = tape.saved(self, 0);
        const Tensor<T>& P2 = tape.saved(self, 1);
        const Tensor<T>& den1 = tape.saved(self, 2);
        const std::size_t L = g.len, dh = g.d_head;
        Tensor<T>* dQ = tape.requires_grad(qi) ? &tape.grad_buffer(qi) : nullptr;
        Tensor<T>* dK = tape.requires_grad(ki) ? &tape.grad_buffer(ki) : nullptr;
        Tensor<T>* dV = tape.requires_grad(vi) ? &tape.grad_buffer(vi) : nullptr;
        const Tensor<T>* den2 = split ? &tape.saved(self, 3) : nullptr;
        const Tensor<T>& O1 = split ? tape.saved(self, 4) : tape.value(self);
        const Tensor<T>* O2 = split ? &tape.saved(self, 5) : nullptr;

        for_each_block(g.batch * g.heads, L * L * dh, [&](std::size_t blk) {
          const std::size_t b = blk / g.heads, h = blk % g.heads;
          const auto Qb = head_view(Q, g, b, h), Kb = head_view(K, g, b, h), Vb = head_view(V, g, b, h);
          const auto Gb = head_view(G, g, b, h);
          const auto W1 = square_block(P1, blk, L), W2 = square_block(P2, blk, L);
          const T* d1 = den1.raw() + blk * L;
          auto dP = scratch_square<T>(L, 0);
          kernels::gemm<T>(Trans::no, Trans::yes, T{1}, Gb, Vb, T{0}, dP, kSerial);
          if (dV) {
            auto dVb = head_view(*dV, g, b, h);
            kernels::gemm<T>(Trans::yes, Trans::no, T{1}, W1, Gb, T{1}, dVb, kSerial);
            if (split) {
              kernels::gemm<T>(Trans::yes, Trans::no, T{1}, W2, Gb, T{1}, dVb, kSerial);
              std::vector<T> suffix(dh, T{0});
              for (std::size_t i = L; i-- > 0;) {
                const T inv = T{1} / static_cast<T>(i + 1);
                for (std::size_t m = 0; m < dh; ++m) {
                  suffix[m] += Gb(i, m) * inv;
                  dVb(i, m) += suffix[m];
                }
              }
            }
          }
          if (!dQ && !dK) return;
          const auto O1b = head_view(O1, g, b, h);
          auto dW1 = scratch_square<T>(L, 1);
          for (std::size_t i = 0; i < L; ++i) {
            const T gi = dot_rows(Gb, i, O1b, i);
            const T inv = T{1} / d1[i];
            for (std::size_t j = 0; j <= i; ++j) dW1(i, j) = (dP(i, j) - gi) * inv;
            for (std::size_t j = i + 1; j < L; ++j) dW1(i, j) = T{0};
          }
          if (split) {
            // First-order weights are q_i . k_j; the 1/sqrt(d) cancels in the ratio.
            if (dQ) kernels::gemm<T>(Trans::no, Trans::no, T{1}, as_const(dW1), Kb, T{1}, head_view(*dQ, g, b, h), kSerial);
            if (dK) kernels::gemm<T>(Trans::yes, Trans::no, T{1}, as_const(dW1), Qb, T{1}, head_view(*dK, g, b, h), kSerial);
            const auto O2b = head_view(*O2, g, b, h);
            const T* d2 = den2->raw() + blk * L;
            auto dW2 = scratch_square<T>(L, 2);
            for (std::size_t i = 0; i < L; ++i) {
              const T gi = dot_rows(Gb, i, O2b, i);
              const T inv = T{1} / d2[i];
              for (std::size_t j = 0; j <= i; ++j) dW2(i, j) = (dP(i, j) - gi) * inv;
              for (std::size_t j = i + 1; j < L; ++j) dW2(i, j) = T{0};
            }
            // W2_ij = sum_m q_im^2 k_jm^2 / 2, so dq_im = q_im * sum_j dW2_ij k_jm^2.
            auto sq = scratch_rect<T>(L, dh, 0);
            auto tmp = scratch_rect<T>(L, dh, 1);
            if (dQ) {
              for (std::size_t i = 0; i < L; ++i)
                for (std::size_t m = 0; m < dh; ++m) sq(i, m) = Kb(i, m) * Kb(i, m);
              kernels::gemm<T>(Trans::no, Trans::no, T{1}, as_const(dW2), as_const(sq), T{0}, tmp, kSerial);
              auto dQb = head_view(*dQ, g, b, h);
              for (std::size_t i = 0; i < L; ++i)
                for (std::size_t m = 0; m < dh; ++m) dQb(i, m) += tmp(i, m) * Qb(i, m);
            }
            if (dK) {
              for (std::size_t i = 0; i < L; ++i)
                for (std::size_t m = 0; m < dh; ++m) sq(i, m) = Qb(i, m) * Qb(i, m);
              kernels::gemm<T>(Trans::yes, Trans::no, T{1}, as_const(dW2), as_const(sq), T{0}, tmp, kSerial);
              auto dKb = head_view(*dK, g, b, h);
              for (std::size_t i = 0; i < L; ++i)
                for (std::size_t m = 0; m < dh; ++m) dKb(i, m) += tmp(i, m) * Kb(i, m);
            }
          } else {
            // phi = 1 + x + x^2/2, dphi/dx = 1 + x.
            for (std::size_t i = 0; i < L; ++i)
              for (std::size_t j = 0; j <= i; ++j) dW1(i, j) *= T{1} + W2(i, j);
            if (dQ) kernels::gemm<T>(Trans::no, Trans::no, scale, as_const(dW1), Kb, T{1}, head_view(*dQ, g, b, h), kSerial);
            if (dK) kernels::gemm<T>(Trans::yes, Trans::no, scale, as_const(dW1), Qb, T{1}, head_view(*dK, g, b, h), kSerial);
          }
        });
      },
      std::move(saved));
}

template <typename T>
Var<T> nonapprox_attention_core(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                                const AttnOptions& opt, Capture<T>* capture) {
  const Tensor<T>& Q = q.value();
  const Tensor<T>& K = k.value();
  const Tensor<T>& V = v.value();
  const Geometry g = geometry(Q, K, V, opt, "non-approximate attention");
  if (g.qk_batch != g.batch) throw ShapeError("non-approximate attention: q/k must be per sequence");
  const std::size_t L = g.len, dh = g.d_head, blocks = g.batch * g.heads;
  const T scale = T{1} / std::sqrt(static_cast<T>(dh));

  Tensor<T> scores({blocks, L});
  Tensor<T> log_z({blocks, L});
  Tensor<T> out({g.batch * L, g.width});
  if (capture) {
    capture->attention = Tensor<T>({blocks, L, L});
    capture->prelogits = Tensor<T>({blocks, L, L});
  }
  for_each_block(blocks, L * L * dh, [&](std::size_t blk) {
    const std::size_t b = blk / g.heads, h = blk % g.heads;
    const auto Qb = head_view(Q, g, b, h), Kb = head_view(K, g, b, h);
    T* s = scores.raw() + blk * L;
    T* lz = log_z.raw() + blk * L;
    T run_max = -std::numeric_limits<T>::infinity();
    T run_sum = 0;
    for (std::size_t i = 0; i < L; ++i) {
      s[i] = dot_rows(Qb, i, Kb, i) * scale;
      if (s[i] > run_max) {
        run_sum = run_sum * std::exp(run_max - s[i]) + T{1};
        run_max = s[i];
      } else {
        run_sum += std::exp(s[i] - run_max);
      }
      lz[i] = run_max + std::log(run_sum);
    }
    // Parallel form: A_ij = exp(s_j - logZ_i) on the causal support, O = A V.
    auto A = capture ? square_block(capture->attention, blk, L) : scratch_square<T>(L, 0);
    for (std::size_t i = 0; i < L; ++i) {
      for (std::size_t j = 0; j <= i; ++j) A(i, j) = std::exp(s[j] - lz[i]);
      for (std::size_t j = i + 1; j < L; ++j) A(i, j) = T{0};
    }
    if (capture) {
      auto P = square_block(capture->prelogits, blk, L);
      for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j <= i; ++j) P(i, j) = s[j];
    }
    kernels::gemm<T>(Trans::no, Trans::no, T{1}, as_const(A), head_view(V, g, b, h), T{0},
                     head_view(out, g, b, h), kSerial);
  });

  std::vector<Tensor<T>> saved;
  saved.push_back(std::move(scores));
  saved.push_back(std::move(log_z));
  return q.tape().record(
      "nonapprox_attention", std::move(out), {q, k, v},
      [qi = q.id(), ki = k.id(), vi = v.id(), g, scale](Tape<T>& tape, std::size_t self) {
        const Tensor<T>& G = tape.grad(self);
        const Tensor<T>& O = tape.value(self);
        const Tensor<T>& Q = tape.value(qi);
        const Tensor<T>& K = tape.value(ki);
        const Tensor<T>& V = tape.value(vi);
        const Tensor<T>& S = tape.saved(self, 0);
        const Tensor<T>& LZ = tape.saved(self, 1);
        const std::size_t L = g.len, dh = g.d_head;
        Tensor<T>* dQ = tape.requires_grad(qi) ? &tape.grad_buffer(qi) : nullptr;
        Tensor<T>* dK = tape.requires_grad(ki) ? &tape.grad_buffer(ki) : nullptr;
        Tensor<T>* dV = tape.requires_grad(vi) ? &tape.grad_buffer(vi) : nullptr;
        // Suffix sums over queries i >= j, rescaled by exp(logZ_j - logZ_i) <= 1.
        for_each_block(g.batch * g.heads, L * dh, [&](std::size_t blk) {
          const std::size_t b = blk / g.heads, h = blk % g.heads;
          const auto Qb = head_view(Q, g, b, h), Kb = head_view(K, g, b, h), Vb = head_view(V, g, b, h);
          const auto Gb = head_view(G, g, b, h), Ob = head_view(O, g, b, h);
          const T* s = S.raw() + blk * L;
          const T* lz = LZ.raw() + blk * L;
          std::vector<T> gv(dh, T{0});
          T go = 0;
          for (std::size_t j = L; j-- > 0;) {
            if (j + 1 < L) {
              const T f = std::exp(lz[j] - lz[j + 1]);
              for (auto& x : gv) x *= f;
              go *= f;
            }
            for (std::size_t m = 0; m < dh; ++m) gv[m] += Gb(j, m);
            go += dot_rows(Gb, j, Ob, j);
            const T a = std::exp(s[j] - lz[j]);
            T vg = 0;
            for (std::size_t m = 0; m < dh; ++m) vg += Vb(j, m) * gv[m];
            const T ds = a * (vg - go) * scale;
            if (dV) {
              auto dVb = head_view(*dV, g, b, h);
              for (std::size_t m = 0; m < dh; ++m) dVb(j, m) += a * gv[m];
            }
            if (dQ) {
              auto dQb = head_view(*dQ, g, b, h);
              for (std::size_t m = 0; m < dh; ++m) dQb(j, m) += ds * Kb(j, m);
            }
            if (dK) {
              auto dKb = head_view(*dK, g, b, h);
              for (std::size_t m = 0; m < dh; ++m) dKb(j, m) += ds * Qb(j, m);
            }
          }
        });
      },
      std::move(saved));
}

#define DATN_INSTANTIATE_CORES(T)                                                                 \
  template Var<T> softmax_attention_core<T>(const Var<T>&, const Var<T>&, const Var<T>&,          \
                                            const AttnOptions&, Capture<T>*);                     \
  template Var<T> approx_attention_core<T>(const Var<T>&, const Var<T>&, const Var<T>&,           \
                                           const AttnOptions&, Capture<T>*);                      \
  template Var<T> nonapprox_attention_core<T>(const Var<T>&, const Var<T>&, const Var<T>&,        \
                                              const AttnOptions&, Capture<T>*);

DATN_INSTANTIATE_CORES(float)
DATN_INSTANTIATE_CORES(double)

#undef DATN_INSTANTIATE_CORES

}  // namespace datn
