#pragma once

// Parallel versus recurrent evaluation of the linear-time mixers on seeded
// random weights and inputs.

#include <cstddef>
#include <cstdint>

#include "datn/attention.hpp"

namespace datn {

struct EquivalenceQuery {
  Variant variant = Variant::nonapprox;  ///< approx or nonapprox
  ApproxMode approx_mode = ApproxMode::split;
  std::size_t seq_len = 32;
  std::size_t d_head = 16;
  std::size_t n_heads = 2;
  std::uint64_t seed = 0;
};

struct EquivalenceResult {
  double max_rel_err = 0;  ///< max |recurrent - parallel| / max |parallel|
  double tolerance = 0;
  bool passed = false;
};

/// 1e-10 in double precision, 1e-5 in single.
template <typename T>
constexpr double equivalence_tolerance() {
  return sizeof(T) == sizeof(double) ? 1e-10 : 1e-5;
}

/// Weights are drawn uniformly from +-1/sqrt(d) and inputs from [-1, 1] in
/// double precision, then cast to T, so both precisions see the same problem.
/// For the approximate variant the query/key weights come from
/// [1/(4 sqrt(d)), 1/sqrt(d)] and inputs from [0.25, 1], which keeps q.k > 0.
/// Throws ConfigError for variants without a recurrent form.
template <typename T>
EquivalenceResult check_recurrent_equivalence(const EquivalenceQuery& q);

}  // namespace datn
