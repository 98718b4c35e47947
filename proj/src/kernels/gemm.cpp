#include <algorithm>
#include <cstddef>
#include <experimental/simd>
#include <string>
#include <vector>

#include "datn/errors.hpp"
#include "datn/kernels.hpp"
#include "omp_util.hpp"

namespace stdx = std::experimental;

namespace datn::kernels {
namespace {

template <typename T>
struct Blocking {
  using V = stdx::native_simd<T>;
  static constexpr std::size_t W = V::size();
  static constexpr std::size_t MR = 6;
  static constexpr std::size_t NR = 2 * W;
  static constexpr std::size_t KC = 256;
};

template <typename T>
struct OpView {
  MatrixRef<const T> m;
  bool trans;
  std::size_t rows() const { return trans ? m.cols : m.rows; }
  std::size_t cols() const { return trans ? m.rows : m.cols; }
  T operator()(std::size_t i, std::size_t j) const {
    return trans ? m.data[j * m.ld + i] : m.data[i * m.ld + j];
  }
};

// Panel of op(A): rows [i0, i0+MR) x cols [p0, p0+kc), stored k-major, zero padded.
template <typename T>
void pack_a(const OpView<T>& a, std::size_t i0, std::size_t p0, std::size_t kc, T* dst) {
  constexpr std::size_t MR = Blocking<T>::MR;
  const std::size_t rows = std::min(MR, a.rows() - i0);
  if (!a.trans) {
    for (std::size_t r = 0; r < MR; ++r) {
      if (r < rows) {
        const T* src = a.m.data + (i0 + r) * a.m.ld + p0;
        for (std::size_t p = 0; p < kc; ++p) dst[p * MR + r] = src[p];
      } else {
        for (std::size_t p = 0; p < kc; ++p) dst[p * MR + r] = T{0};
      }
    }
  } else {
    for (std::size_t p = 0; p < kc; ++p) {
      const T* src = a.m.data + (p0 + p) * a.m.ld + i0;
      std::size_t r = 0;
      for (; r < rows; ++r) dst[p * MR + r] = src[r];
      for (; r < MR; ++r) dst[p * MR + r] = T{0};
    }
  }
}

// Panel of op(B): rows [p0, p0+kc) x cols [j0, j0+NR), stored k-major, zero padded.
template <typename T>
void pack_b(const OpView<T>& b, std::size_t p0, std::size_t kc, std::size_t j0, T* dst) {
  constexpr std::size_t NR = Blocking<T>::NR;
  const std::size_t cols = std::min(NR, b.cols() - j0);
  if (!b.trans) {
    for (std::size_t p = 0; p < kc; ++p) {
      const T* src = b.m.data + (p0 + p) * b.m.ld + j0;
      std::size_t j = 0;
      for (; j < cols; ++j) dst[p * NR + j] = src[j];
      for (; j < NR; ++j) dst[p * NR + j] = T{0};
    }
  } else {
    for (std::size_t j = 0; j < NR; ++j) {
      if (j < cols) {
        const T* src = b.m.data + (j0 + j) * b.m.ld + p0;
        for (std::size_t p = 0; p < kc; ++p) dst[p * NR + j] = src[p];
      } else {
        for (std::size_t p = 0; p < kc; ++p) dst[p * NR + j] = T{0};
      }
    }
  }
}

template <typename T>
void micro_kernel(const T* __restrict ap, const T* __restrict bp, std::size_t kc, T alpha,
                  T* __restrict c, std::size_t ldc, std::size_t rows, std::size_t cols) {
  using B = Blocking<T>;
  using V = typename B::V;
  constexpr std::size_t MR = B::MR;
  constexpr std::size_t W = B::W;
  constexpr std::size_t NR = B::NR;

  V acc[MR][2];
#pragma GCC unroll 6
  for (std::size_t r = 0; r < MR; ++r) {
    acc[r][0] = V(T{0});
    acc[r][1] = V(T{0});
  }
  for (std::size_t p = 0; p < kc; ++p) {
    const V b0(bp, stdx::vector_aligned);
    const V b1(bp + W, stdx::vector_aligned);
#pragma GCC unroll 6
    for (std::size_t r = 0; r < MR; ++r) {
      const V a(ap[r]);
      acc[r][0] += a * b0;
      acc[r][1] += a * b1;
    }
    ap += MR;
    bp += NR;
  }

  if (rows == MR && cols == NR) {
    const V va(alpha);
#pragma GCC unroll 6
    for (std::size_t r = 0; r < MR; ++r) {
      T* row = c + r * ldc;
      V c0(row, stdx::element_aligned);
      V c1(row + W, stdx::element_aligned);
      c0 += va * acc[r][0];
      c1 += va * acc[r][1];
      c0.copy_to(row, stdx::element_aligned);
      c1.copy_to(row + W, stdx::element_aligned);
    }
    return;
  }
  alignas(64) T buf[MR * NR];
  for (std::size_t r = 0; r < MR; ++r) {
    acc[r][0].copy_to(buf + r * NR, stdx::vector_aligned);
    acc[r][1].copy_to(buf + r * NR + W, stdx::vector_aligned);
  }
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) c[r * ldc + j] += alpha * buf[r * NR + j];
  }
}

template <typename T>
struct AlignedBuffer {
  struct alignas(64) Block {
    T v[64 / sizeof(T)];
  };
  std::vector<Block> blocks;
  T* get(std::size_t n) {
    const std::size_t need = (n * sizeof(T) + 63) / 64;
    if (blocks.size() < need) blocks.resize(need);
    return reinterpret_cast<T*>(blocks.data());
  }
};

template <typename T>
void scale_c(MatrixRef<T> c, T beta) {
  for (std::size_t i = 0; i < c.rows; ++i) {
    T* row = c.data + i * c.ld;
    if (beta == T{0}) {
      std::fill(row, row + c.cols, T{0});
    } else if (beta != T{1}) {
      for (std::size_t j = 0; j < c.cols; ++j) row[j] *= beta;
    }
  }
}

}  // namespace

template <typename T>
void gemm(Trans ta, Trans tb, T alpha, MatrixRef<const T> a, MatrixRef<const T> b, T beta,
          MatrixRef<T> c, Exec exec) {
  using Bk = Blocking<T>;
  constexpr std::size_t MR = Bk::MR;
  constexpr std::size_t NR = Bk::NR;
  constexpr std::size_t KC = Bk::KC;

  const OpView<T> opa{a, ta == Trans::yes};
  const OpView<T> opb{b, tb == Trans::yes};
  const std::size_t m = opa.rows();
  const std::size_t k = opa.cols();
  const std::size_t n = opb.cols();
  if (opb.rows() != k || c.rows != m || c.cols != n) {
    throw ShapeError("gemm: op(a) is " + std::to_string(m) + "x" + std::to_string(k) +
                     ", op(b) is " + std::to_string(opb.rows()) + "x" + std::to_string(n) +
                     ", c is " + std::to_string(c.rows) + "x" + std::to_string(c.cols));
  }
  if (m == 0 || n == 0) return;
  scale_c(c, beta);
  if (k == 0 || alpha == T{0}) return;

  const std::size_t m_panels = (m + MR - 1) / MR;
  const std::size_t n_panels = (n + NR - 1) / NR;
  thread_local AlignedBuffer<T> abuf;
  thread_local AlignedBuffer<T> bbuf;
  T* ap = abuf.get(m_panels * MR * KC);
  T* bp = bbuf.get(n_panels * NR * KC);

  const bool fork = exec == Exec::parallel && detail::should_fork(m * n * k);
  const long tiles = static_cast<long>(m_panels * n_panels);

  for (std::size_t p0 = 0; p0 < k; p0 += KC) {
    const std::size_t kc = std::min(KC, k - p0);
#pragma omp parallel if (fork)
    {
#pragma omp for schedule(static) nowait
      for (long ip = 0; ip < static_cast<long>(m_panels); ++ip) {
        pack_a(opa, static_cast<std::size_t>(ip) * MR, p0, kc, ap + ip * kc * MR);
      }
#pragma omp for schedule(static)
      for (long jp = 0; jp < static_cast<long>(n_panels); ++jp) {
        pack_b(opb, p0, kc, static_cast<std::size_t>(jp) * NR, bp + jp * kc * NR);
      }
#pragma omp for schedule(static)
      for (long t = 0; t < tiles; ++t) {
        const std::size_t jp = static_cast<std::size_t>(t) / m_panels;
        const std::size_t ip = static_cast<std::size_t>(t) % m_panels;
        const std::size_t i0 = ip * MR;
        const std::size_t j0 = jp * NR;
        micro_kernel(ap + ip * kc * MR, bp + jp * kc * NR, kc, alpha, c.data + i0 * c.ld + j0,
                     c.ld, std::min(MR, m - i0), std::min(NR, n - j0));
      }
    }
  }
}

template void gemm<float>(Trans, Trans, float, MatrixRef<const float>, MatrixRef<const float>,
                          float, MatrixRef<float>, Exec);
template void gemm<double>(Trans, Trans, double, MatrixRef<const double>,
                           MatrixRef<const double>, double, MatrixRef<double>, Exec);

}  // namespace datn::kernels
