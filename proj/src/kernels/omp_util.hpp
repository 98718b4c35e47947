#pragma once

#include <cstddef>

#include <omp.h>

namespace datn::kernels::detail {

// Below this many scalar operations a parallel region costs more than it saves.
inline constexpr std::size_t kMinParallelWork = 1 << 15;

inline bool should_fork(std::size_t work) {
  return work >= kMinParallelWork && !omp_in_parallel() && omp_get_max_threads() > 1;
}

}  // namespace datn::kernels::detail
