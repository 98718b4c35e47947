#pragma once

// Compute kernels behind the tensor ops. Every kernel here has a serial
// counterpart in datn/reference.hpp that the tests compare against and the
// benchmark target times side by side.

#include <cstddef>
#include <span>

namespace datn {

/// Strided row-major matrix view.
template <typename T>
struct MatrixRef {
  T* data;
  std::size_t rows;
  std::size_t cols;
  std::size_t ld;

  T& operator()(std::size_t i, std::size_t j) const noexcept { return data[i * ld + j]; }
};

template <typename T>
MatrixRef<T> matrix_ref(T* data, std::size_t rows, std::size_t cols) {
  return {data, rows, cols, cols};
}

enum class Trans : bool { no = false, yes = true };

/// Whether a kernel may open its own OpenMP region. Kernels called from inside
/// a parallel loop over heads or sequences use `serial`.
enum class Exec { serial, parallel };

}  // namespace datn

namespace datn::kernels {

/// c = alpha * op(a) * op(b) + beta * c. `a` and `b` are given untransposed;
/// op() applies the Trans flag. Packed register-tiled implementation.
template <typename T>
void gemm(Trans ta, Trans tb, T alpha, MatrixRef<const T> a, MatrixRef<const T> b, T beta,
          MatrixRef<T> c, Exec exec = Exec::parallel);

/// In place over an L x L block: row i becomes softmax over columns 0..i, the
/// rest is zeroed. Row-max subtracted.
template <typename T>
void softmax_causal_rows(MatrixRef<T> s);

/// y[r] = x[r] / sqrt(mean(x[r]^2) + eps) * gain; writes the per-row inverse rms.
template <typename T>
void rms_norm_rows(std::span<const T> x, std::span<const T> gain, T eps, std::span<T> y,
                   std::span<T> inv_rms, std::size_t cols);

/// Backward of rms_norm_rows. Accumulates into dx and dgain.
template <typename T>
void rms_norm_rows_backward(std::span<const T> x, std::span<const T> gain,
                            std::span<const T> inv_rms, std::span<const T> dy, std::span<T> dx,
                            std::span<T> dgain, std::size_t cols);

/// Rotary embedding over rows of width n_heads * d_head. Row r has position
/// r % period. Half-split pairing (i, i + d_head/2) within each head.
/// `inverse` applies the transpose rotation (used by the backward pass).
template <typename T>
void rope_rows(std::span<T> x, std::size_t n_heads, std::size_t d_head, std::size_t period,
               T base, bool inverse);

/// Row-wise log-softmax cross entropy. Writes per-row losses and, when
/// dlogits is non-empty, (softmax - onehot) * scale.
template <typename T>
void cross_entropy_rows(std::span<const T> logits, std::span<const int> targets,
                        std::size_t vocab, std::span<double> row_loss, std::span<T> dlogits,
                        T scale);

}  // namespace datn::kernels
