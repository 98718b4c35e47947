#pragma once

// Differentiable tensor ops. All take and return tape handles; the result
// lives on the tape of the first operand.

#include <cstddef>
#include <span>
#include <vector>

#include "datn/autograd.hpp"
#include "datn/kernels.hpp"

namespace datn {

/// op(a) * op(b) for rank-2 operands.
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, Trans ta = Trans::no, Trans tb = Trans::no);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& a, T factor);

/// Adds a length-cols vector to every row.
template <typename T>
Var<T> add_row_vector(const Var<T>& x, const Var<T>& v);

/// Multiplies every row elementwise by a length-cols vector.
template <typename T>
Var<T> mul_row_vector(const Var<T>& x, const Var<T>& v);

template <typename T>
Var<T> sum(const Var<T>& a);

template <typename T>
Var<T> silu(const Var<T>& a);

/// x / sqrt(mean(x^2) + eps) * gain over the last axis.
template <typename T>
Var<T> rms_norm(const Var<T>& x, const Var<T>& gain, T eps);

/// Rotary embedding on rows of width n_heads * d_head; row r sits at position
/// r % period. Requires an even head width.
template <typename T>
Var<T> rope(const Var<T>& x, std::size_t n_heads, std::size_t period, T base);

/// Row i becomes a distribution over columns 0..i; the strict upper triangle is 0.
template <typename T>
Var<T> softmax_causal_rows(const Var<T>& logits);

/// Rows of `table` selected by token id.
template <typename T>
Var<T> embedding(const Var<T>& table, std::span<const int> tokens);

/// Rows [begin, begin + count) of a rank-2 value.
template <typename T>
Var<T> slice_rows(const Var<T>& x, std::size_t begin, std::size_t count);

/// Mean next-token negative log-likelihood in nats.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> targets);

/// Non-differentiable companion: per-row NLL in double precision.
template <typename T>
std::vector<double> cross_entropy_rows(const Tensor<T>& logits, std::span<const int> targets);

// Plain-tensor forms of the primitives, for callers that hold no tape.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> softmax_causal_rows(const Tensor<T>& logits);

template <typename T>
Tensor<T> silu(const Tensor<T>& x);

template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gain, T eps);

/// Rotates row i of a (rows x d_head) block by position positions[i].
template <typename T>
Tensor<T> rope_apply(const Tensor<T>& x, std::span<const std::size_t> positions, T base);

}  // namespace datn
