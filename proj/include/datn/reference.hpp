#pragma once

// Straightforward serial versions of the kernels in datn/kernels.hpp. Kept for
// testing and for the benchmark comparison; the library never calls them.

#include <span>

#include "datn/kernels.hpp"

namespace datn::reference {

template <typename T>
void gemm(Trans ta, Trans tb, T alpha, MatrixRef<const T> a, MatrixRef<const T> b, T beta,
          MatrixRef<T> c);

template <typename T>
void softmax_causal_rows(MatrixRef<T> s);

template <typename T>
void rms_norm_rows(std::span<const T> x, std::span<const T> gain, T eps, std::span<T> y,
                   std::span<T> inv_rms, std::size_t cols);

template <typename T>
void rms_norm_rows_backward(std::span<const T> x, std::span<const T> gain,
                            std::span<const T> inv_rms, std::span<const T> dy, std::span<T> dx,
                            std::span<T> dgain, std::size_t cols);

template <typename T>
void rope_rows(std::span<T> x, std::size_t n_heads, std::size_t d_head, std::size_t period,
               T base, bool inverse);

template <typename T>
void cross_entropy_rows(std::span<const T> logits, std::span<const int> targets,
                        std::size_t vocab, std::span<double> row_loss, std::span<T> dlogits,
                        T scale);

}  // namespace datn::reference
