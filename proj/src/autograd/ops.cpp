#include "datn/ops.hpp"

#include <cmath>
#include <string>

#include "datn/errors.hpp"

namespace datn {
namespace {

template <typename T>
MatrixRef<const T> cview(const Tensor<T>& t) {
  return {t.raw(), t.rows(), t.cols(), t.cols()};
}

template <typename T>
MatrixRef<T> view(Tensor<T>& t) {
  return {t.raw(), t.rows(), t.cols(), t.cols()};
}

template <typename T>
void require_rank2(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " +
                                      shape_string(t.shape()));
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

template <typename T>
T sigmoid(T x) {
  return T{1} / (T{1} + std::exp(-x));
}

}  // namespace

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, Trans ta, Trans tb) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require_rank2(av, "matmul");
  require_rank2(bv, "matmul");
  const std::size_t m = ta == Trans::yes ? av.cols() : av.rows();
  const std::size_t ka = ta == Trans::yes ? av.rows() : av.cols();
  const std::size_t kb = tb == Trans::yes ? bv.cols() : bv.rows();
  const std::size_t n = tb == Trans::yes ? bv.rows() : bv.cols();
  if (ka != kb) {
    throw ShapeError("matmul: inner dimensions differ (" + shape_string(av.shape()) + " x " +
                     shape_string(bv.shape()) + ")");
  }
  Tensor<T> out({m, n});
  kernels::gemm<T>(ta, tb, T{1}, cview(av), cview(bv), T{0}, view(out));
  return a.tape().record(
      "matmul", std::move(out), {a, b},
      [ai = a.id(), bi = b.id(), ta, tb](Tape<T>& tape, std::size_t self) {
        const Tensor<T>& g = tape.grad(self);
        const Tensor<T>& A = tape.value(ai);
        const Tensor<T>& B = tape.value(bi);
        const bool at = ta == Trans::yes;
        const bool bt = tb == Trans::yes;
        if (tape.requires_grad(ai)) {
          auto dA = view(tape.grad_buffer(ai));
          if (!at) {
            // dA = dC op(B)^T
            kernels::gemm<T>(Trans::no, bt ? Trans::no : Trans::yes, T{1}, cview(g), cview(B),
                             T{1}, dA);
          } else {
            // dA = op(B) dC^T
            kernels::gemm<T>(bt ? Trans::yes : Trans::no, Trans::yes, T{1}, cview(B), cview(g),
                             T{1}, dA);
          }
        }
        if (tape.requires_grad(bi)) {
          auto dB = view(tape.grad_buffer(bi));
          if (!bt) {
            // dB = op(A)^T dC
            kernels::gemm<T>(at ? Trans::no : Trans::yes, Trans::no, T{1}, cview(A), cview(g),
                             T{1}, dB);
          } else {
            // dB = dC^T op(A)
            kernels::gemm<T>(Trans::yes, at ? Trans::yes : Trans::no, T{1}, cview(g), cview(A),
                             T{1}, dB);
          }
        }
      });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape().record("add", std::move(out), {a, b},
                         [ai = a.id(), bi = b.id()](Tape<T>& tape, std::size_t self) {
                           const Tensor<T>& g = tape.grad(self);
                           for (std::size_t id : {ai, bi}) {
                             if (!tape.requires_grad(id)) continue;
                             Tensor<T>& d = tape.grad_buffer(id);
                             for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
                           }
                         });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape().record("mul", std::move(out), {a, b},
                         [ai = a.id(), bi = b.id()](Tape<T>& tape, std::size_t self) {
                           const Tensor<T>& g = tape.grad(self);
                           const Tensor<T>& A = tape.value(ai);
                           const Tensor<T>& B = tape.value(bi);
                           if (tape.requires_grad(ai)) {
                             Tensor<T>& d = tape.grad_buffer(ai);
                             for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * B[i];
                           }
                           if (tape.requires_grad(bi)) {
                             Tensor<T>& d = tape.grad_buffer(bi);
                             for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * A[i];
                           }
                         });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= factor;
  return a.tape().record("scale", std::move(out), {a},
                         [ai = a.id(), factor](Tape<T>& tape, std::size_t self) {
                           const Tensor<T>& g = tape.grad(self);
                           Tensor<T>& d = tape.grad_buffer(ai);
                           for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * factor;
                         });
}

template <typename T>
Var<T> add_row_vector(const Var<T>& x, const Var<T>& v) {
  const std::size_t cols = x.value().cols();
  if (v.value().size() != cols) throw ShapeError("add_row_vector: width mismatch");
  Tensor<T> out = x.value();
  const Tensor<T>& vv = v.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += vv[i % cols];
  return x.tape().record("add_row_vector", std::move(out), {x, v},
                         [xi = x.id(), vi = v.id(), cols](Tape<T>& tape, std::size_t self) {
                           const Tensor<T>& g = tape.grad(self);
                           if (tape.requires_grad(xi)) {
                             Tensor<T>& d = tape.grad_buffer(xi);
                             for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
                           }
                           if (tape.requires_grad(vi)) {
                             Tensor<T>& d = tape.grad_buffer(vi);
                             for (std::size_t i = 0; i < g.size(); ++i) d[i % cols] += g[i];
                           }
                         });
}

template <typename T>
Var<T> mul_row_vector(const Var<T>& x, const Var<T>& v) {
  const std::size_t cols = x.value().cols();
  if (v.value().size() != cols) throw ShapeError("mul_row_vector: width mismatch");
  Tensor<T> out = x.value();
  const Tensor<T>& vv = v.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= vv[i % cols];
  return x.tape().record("mul_row_vector", std::move(out), {x, v},
                         [xi = x.id(), vi = v.id(), cols](Tape<T>& tape, std::size_t self) {
                           const Tensor<T>& g = tape.grad(self);
                           const Tensor<T>& X = tape.value(xi);
                           const Tensor<T>& V = tape.value(vi);
                           if (tape.requires_grad(xi)) {
                             Tensor<T>& d = tape.grad_buffer(xi);
                             for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * V[i % cols];
                           }
                           if (tape.requires_grad(vi)) {
                             Tensor<T>& d = tape.grad_buffer(vi);
                             for (std::size_t i = 0; i < g.size(); ++i) d[i % cols] += g[i] * X[i];
                           }
                         });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T acc = 0;
  for (T v : a.value().data()) acc += v;
  return a.tape().record("sum", Tensor<T>({1}, {acc}), {a},
                         [ai = a.id()](Tape<T>& tape, std::size_t self) {
                           const T g = tape.grad(self)[0];
                           Tensor<T>& d = tape.grad_buffer(ai);
                           for (auto& v : d.data()) v += g;
                         });
}

template <typename T>
Var<T> silu(const Var<T>& a) {
  Tensor<T> out = silu(a.value());
  return a.tape().record("silu", std::move(out), {a}, [ai = a.id()](Tape<T>& tape, std::size_t self) {
    const Tensor<T>& g = tape.grad(self);
    const Tensor<T>& x = tape.value(ai);
    Tensor<T>& d = tape.grad_buffer(ai);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const T s = sigmoid(x[i]);
      d[i] += g[i] * s * (T{1} + x[i] * (T{1} - s));
    }
  });
}

template <typename T>
Var<T> rms_norm(const Var<T>& x, const Var<T>& gain, T eps) {
  const Tensor<T>& xv = x.value();
  const std::size_t cols = xv.cols();
  if (gain.value().size() != cols) {
    throw ShapeError("rms_norm: gain has " + std::to_string(gain.value().size()) +
                     " entries, rows have " + std::to_string(cols));
  }
  Tensor<T> out(xv.shape());
  Tensor<T> inv({xv.rows()});
  kernels::rms_norm_rows<T>(xv.data(), gain.value().data(), eps, out.data(), inv.data(), cols);
  std::vector<Tensor<T>> saved;
  saved.push_back(std::move(inv));
  return x.tape().record(
      "rms_norm", std::move(out), {x, gain},
      [xi = x.id(), gi = gain.id(), cols](Tape<T>& tape, std::size_t self) {
        const Tensor<T>& g = tape.grad(self);
        Tensor<T> dx_scratch;
        Tensor<T> dg_scratch;
        Tensor<T>& dx = tape.requires_grad(xi) ? tape.grad_buffer(xi)
                                               : (dx_scratch = Tensor<T>(tape.value(xi).shape()));
        Tensor<T>& dg = tape.requires_grad(gi) ? tape.grad_buffer(gi)
                                               : (dg_scratch = Tensor<T>(tape.value(gi).shape()));
        kernels::rms_norm_rows_backward<T>(tape.value(xi).data(), tape.value(gi).data(),
                                           tape.saved(self, 0).data(), g.data(), dx.data(),
                                           dg.data(), cols);
      },
      std::move(saved));
}

template <typename T>
Var<T> rope(const Var<T>& x, std::size_t n_heads, std::size_t period, T base) {
  const std::size_t width = x.value().cols();
  if (n_heads == 0 || width % n_heads != 0) throw ShapeError("rope: width not divisible by heads");
  const std::size_t d_head = width / n_heads;
  if (d_head % 2 != 0) throw ShapeError("rope: head width must be even, got " + std::to_string(d_head));
  Tensor<T> out = x.value();
  kernels::rope_rows<T>(out.data(), n_heads, d_head, period, base, false);
  return x.tape().record("rope", std::move(out), {x},
                         [xi = x.id(), n_heads, d_head, period, base](Tape<T>& tape, std::size_t self) {
                           Tensor<T> g = tape.grad(self);
                           kernels::rope_rows<T>(g.data(), n_heads, d_head, period, base, true);
                           Tensor<T>& d = tape.grad_buffer(xi);
                           for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
                         });
}

template <typename T>
Var<T> softmax_causal_rows(const Var<T>& logits) {
  Tensor<T> out = softmax_causal_rows(logits.value());
  return logits.tape().record("softmax_causal_rows", std::move(out), {logits},
                              [li = logits.id()](Tape<T>& tape, std::size_t self) {
                                const Tensor<T>& g = tape.grad(self);
                                const Tensor<T>& a = tape.value(self);
                                Tensor<T>& d = tape.grad_buffer(li);
                                const std::size_t n = a.cols();
                                for (std::size_t i = 0; i < a.rows(); ++i) {
                                  T dot = 0;
                                  for (std::size_t j = 0; j < n; ++j) dot += a(i, j) * g(i, j);
                                  for (std::size_t j = 0; j < n; ++j) d(i, j) += a(i, j) * (g(i, j) - dot);
                                }
                              });
}

template <typename T>
Var<T> embedding(const Var<T>& table, std::span<const int> tokens) {
  const Tensor<T>& tv = table.value();
  require_rank2(tv, "embedding");
  const std::size_t d = tv.cols();
  Tensor<T> out({tokens.size(), d});
  for (std::size_t r = 0; r < tokens.size(); ++r) {
    if (tokens[r] < 0 || static_cast<std::size_t>(tokens[r]) >= tv.rows()) {
      throw ConfigError("token id " + std::to_string(tokens[r]) + " outside vocabulary of " +
                        std::to_string(tv.rows()));
    }
    std::copy_n(tv.raw() + static_cast<std::size_t>(tokens[r]) * d, d, out.raw() + r * d);
  }
  std::vector<int> ids(tokens.begin(), tokens.end());
  return table.tape().record("embedding", std::move(out), {table},
                             [ti = table.id(), ids = std::move(ids), d](Tape<T>& tape, std::size_t self) {
                               const Tensor<T>& g = tape.grad(self);
                               Tensor<T>& dt = tape.grad_buffer(ti);
                               for (std::size_t r = 0; r < ids.size(); ++r) {
                                 T* dst = dt.raw() + static_cast<std::size_t>(ids[r]) * d;
                                 const T* src = g.raw() + r * d;
                                 for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                               }
                             });
}

template <typename T>
Var<T> slice_rows(const Var<T>& x, std::size_t begin, std::size_t count) {
  const Tensor<T>& xv = x.value();
  require_rank2(xv, "slice_rows");
  if (begin + count > xv.rows()) {
    throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of " + std::to_string(xv.rows()));
  }
  const std::size_t d = xv.cols();
  Tensor<T> out({count, d});
  std::copy_n(xv.raw() + begin * d, count * d, out.raw());
  return x.tape().record("slice_rows", std::move(out), {x},
                         [xi = x.id(), begin, d](Tape<T>& tape, std::size_t self) {
                           const Tensor<T>& g = tape.grad(self);
                           Tensor<T>& dx = tape.grad_buffer(xi);
                           for (std::size_t i = 0; i < g.size(); ++i) dx[begin * d + i] += g[i];
                         });
}

template <typename T>
std::vector<double> cross_entropy_rows(const Tensor<T>& logits, std::span<const int> targets) {
  if (logits.rows() != targets.size()) throw ShapeError("cross_entropy: rows vs targets mismatch");
  const std::size_t vocab = logits.cols();
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw ConfigError("target " + std::to_string(t) + " outside vocabulary of " +
                        std::to_string(vocab));
    }
  }
  std::vector<double> rows(targets.size());
  kernels::cross_entropy_rows<T>(logits.data(), targets, vocab, rows, {}, T{0});
  return rows;
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> targets) {
  const std::vector<double> rows = cross_entropy_rows(logits.value(), targets);
  double total = 0;
  for (double r : rows) total += r;
  const double mean = total / static_cast<double>(rows.size());
  std::vector<int> ids(targets.begin(), targets.end());
  return logits.tape().record(
      "cross_entropy", Tensor<T>({1}, {static_cast<T>(mean)}), {logits},
      [li = logits.id(), ids = std::move(ids)](Tape<T>& tape, std::size_t self) {
        const T g = tape.grad(self)[0];
        const Tensor<T>& lv = tape.value(li);
        Tensor<T>& d = tape.grad_buffer(li);
        std::vector<double> scratch(ids.size());
        kernels::cross_entropy_rows<T>(lv.data(), ids, lv.cols(), scratch, d.data(),
                                       g / static_cast<T>(ids.size()));
      });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ (" + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()) + ")");
  }
  Tensor<T> out({a.rows(), b.cols()});
  kernels::gemm<T>(Trans::no, Trans::no, T{1}, cview(a), cview(b), T{0}, view(out));
  return out;
}

template <typename T>
Tensor<T> softmax_causal_rows(const Tensor<T>& logits) {
  require_rank2(logits, "softmax_causal_rows");
  if (logits.rows() != logits.cols()) {
    throw ShapeError("softmax_causal_rows: expected a square matrix, got " +
                     shape_string(logits.shape()));
  }
  Tensor<T> out = logits;
  kernels::softmax_causal_rows<T>(view(out));
  return out;
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  Tensor<T> out = x;
  for (auto& v : out.data()) v = v * sigmoid(v);
  return out;
}

template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gain, T eps) {
  if (gain.size() != x.cols()) throw ShapeError("rms_norm: gain width mismatch");
  Tensor<T> out(x.shape());
  std::vector<T> inv(x.rows());
  kernels::rms_norm_rows<T>(x.data(), gain.data(), eps, out.data(), inv, x.cols());
  return out;
}

template <typename T>
Tensor<T> rope_apply(const Tensor<T>& x, std::span<const std::size_t> positions, T base) {
  require_rank2(x, "rope_apply");
  const std::size_t d = x.cols();
  if (d % 2 != 0) throw ShapeError("rope_apply: head width must be even, got " + std::to_string(d));
  if (positions.size() != x.rows()) throw ShapeError("rope_apply: one position per row required");
  Tensor<T> out = x;
  const std::size_t half = d / 2;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t i = 0; i < half; ++i) {
      const double angle = static_cast<double>(positions[r]) *
                           std::pow(static_cast<double>(base), -2.0 * static_cast<double>(i) / d);
      const double c = std::cos(angle);
      const double s = std::sin(angle);
      const double a = x(r, i);
      const double b = x(r, i + half);
      out(r, i) = static_cast<T>(a * c - b * s);
      out(r, i + half) = static_cast<T>(a * s + b * c);
    }
  }
  return out;
}

#define DATN_INSTANTIATE_OPS(T)                                                             \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&, Trans, Trans);                    \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                     \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                     \
  template Var<T> scale<T>(const Var<T>&, T);                                               \
  template Var<T> add_row_vector<T>(const Var<T>&, const Var<T>&);                          \
  template Var<T> mul_row_vector<T>(const Var<T>&, const Var<T>&);                          \
  template Var<T> sum<T>(const Var<T>&);                                                    \
  template Var<T> silu<T>(const Var<T>&);                                                   \
  template Var<T> rms_norm<T>(const Var<T>&, const Var<T>&, T);                             \
  template Var<T> rope<T>(const Var<T>&, std::size_t, std::size_t, T);                      \
  template Var<T> softmax_causal_rows<T>(const Var<T>&);                                    \
  template Var<T> embedding<T>(const Var<T>&, std::span<const int>);                        \
  template Var<T> slice_rows<T>(const Var<T>&, std::size_t, std::size_t);                   \
  template Var<T> cross_entropy<T>(const Var<T>&, std::span<const int>);                    \
  template std::vector<double> cross_entropy_rows<T>(const Tensor<T>&, std::span<const int>); \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> softmax_causal_rows<T>(const Tensor<T>&);                              \
  template Tensor<T> silu<T>(const Tensor<T>&);                                             \
  template Tensor<T> rms_norm<T>(const Tensor<T>&, const Tensor<T>&, T);                    \
  template Tensor<T> rope_apply<T>(const Tensor<T>&, std::span<const std::size_t>, T);

DATN_INSTANTIATE_OPS(float)
DATN_INSTANTIATE_OPS(double)

#undef DATN_INSTANTIATE_OPS

}  // namespace datn
