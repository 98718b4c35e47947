#include <cmath>
#include <string>

#include "datn/attention.hpp"
#include "datn/errors.hpp"
#include "datn/ops.hpp"

namespace datn {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::standard: return "standard";
    case Variant::mlp: return "mlp";
    case Variant::approx: return "approx";
    case Variant::nonapprox: return "nonapprox";
    case Variant::rnd_emb_qk: return "rnd_emb_qk";
    case Variant::fixed_seq_qk: return "fixed_seq_qk";
    case Variant::static_emb_qk: return "static_emb_qk";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("unknown variant '" + std::string(name) +
                    "' (expected standard, mlp, approx, nonapprox, rnd_emb_qk, fixed_seq_qk, "
                    "static_emb_qk)");
}

std::string_view approx_mode_name(ApproxMode m) {
  return m == ApproxMode::split ? "split" : "shared";
}

ApproxMode parse_approx_mode(std::string_view name) {
  if (name == "split") return ApproxMode::split;
  if (name == "shared") return ApproxMode::shared;
  throw ConfigError("unknown approx mode '" + std::string(name) + "' (expected split or shared)");
}

std::size_t gated_mlp_width(std::size_t d_model) { return 4 * d_model / 3; }

std::size_t gated_mlp_pad_vectors(std::size_t d_model) { return (4 * d_model) % 3; }

template <typename T>
AttnVars<T> bind(Tape<T>& tape, const AttnParams<T>& p) {
  auto maybe = [&](const Tensor<T>& t) { return t.empty() ? Var<T>{} : tape.constant(t); };
  return {maybe(p.w_q),    maybe(p.w_k),  maybe(p.w_v),    maybe(p.w_o),  maybe(p.w_gate),
          maybe(p.w_up),   maybe(p.w_down), maybe(p.bias), maybe(p.gain)};
}

namespace {

template <typename T>
void require(const Var<T>& w, Variant variant, const char* name) {
  if (!w.valid()) {
    throw ConfigError(std::string(variant_name(variant)) + " mixer is missing weight " + name);
  }
}

// A head of odd width has an unpaired coordinate; such heads (in practice
// d_head = 1) are left unrotated rather than rejected.
template <typename T>
Var<T> positional(const Var<T>& x, const AttnOptions& opt, std::size_t len) {
  if (!opt.rope || (x.value().cols() / opt.n_heads) % 2 != 0) return x;
  return rope(x, opt.n_heads, len, static_cast<T>(opt.rope_base));
}

}  // namespace

template <typename T>
Var<T> token_mixer(Variant variant, const Var<T>& h, const AttnVars<T>& w, const AttnOptions& opt,
                   const Var<T>& qk_source, Capture<T>* capture) {
  const std::size_t len = h.value().rows() / opt.batch;
  if (variant == Variant::mlp) {
    require(w.w_gate, variant, "gate");
    require(w.w_up, variant, "up");
    require(w.w_down, variant, "down");
    Var<T> a = mul(silu(matmul(h, w.w_gate)), matmul(h, w.w_up));
    Var<T> o = matmul(a, w.w_down);
    if (w.bias.valid()) o = add_row_vector(o, w.bias);
    if (w.gain.valid()) o = mul_row_vector(o, w.gain);
    if (capture) {
      // Position-wise: every row attends only to itself.
      const std::size_t blocks = opt.batch * opt.n_heads;
      capture->attention = Tensor<T>({blocks, len, len});
      capture->prelogits = Tensor<T>();
      for (std::size_t b = 0; b < blocks; ++b)
        for (std::size_t i = 0; i < len; ++i) capture->attention(b, i, i) = T{1};
    }
    return o;
  }

  require(w.w_q, variant, "q");
  require(w.w_k, variant, "k");
  require(w.w_v, variant, "v");
  require(w.w_o, variant, "o");
  Var<T> qk_in = h;
  if (uses_shadow(variant) || variant == Variant::static_emb_qk) {
    if (!qk_source.valid()) {
      throw ConfigError(std::string(variant_name(variant)) + " mixer needs a query/key source");
    }
    qk_in = qk_source;
    const std::size_t want = uses_shadow(variant) ? len : h.value().rows();
    if (qk_in.value().rows() != want || qk_in.value().cols() != h.value().cols()) {
      throw ShapeError(std::string(variant_name(variant)) + ": query/key source " +
                       shape_string(qk_in.shape()) + " does not fit hidden states " +
                       shape_string(h.shape()));
    }
  }

  Var<T> q = matmul(qk_in, w.w_q);
  Var<T> k = matmul(qk_in, w.w_k);
  Var<T> v = matmul(h, w.w_v);
  if (variant == Variant::nonapprox) q = silu(q);
  q = positional(q, opt, len);
  k = positional(k, opt, len);

  Var<T> o;
  switch (variant) {
    case Variant::approx: o = approx_attention_core(q, k, v, opt, capture); break;
    case Variant::nonapprox: o = nonapprox_attention_core(q, k, v, opt, capture); break;
    default: o = softmax_attention_core(q, k, v, opt, capture); break;
  }
  return matmul(o, w.w_o);
}

namespace {

template <typename T>
void require_finite(const Tensor<T>& t, const char* what) {
  if (!t.all_finite()) throw NumericalError(std::string(what) + " contains NaN or Inf");
}

template <typename T>
AttentionOutput<T> run_single(Variant variant, const Tensor<T>& h, const AttnParams<T>& p,
                              const TensorAttnOptions& topt, const Tensor<T>* qk_source) {
  require_finite(h, "hidden states");
  if (h.rank() != 2 || h.rows() == 0) throw ShapeError("hidden states must be [L x d], got " + shape_string(h.shape()));
  Tape<T> tape(false);
  AttnOptions opt;
  opt.n_heads = p.n_heads;
  opt.batch = 1;
  opt.approx_mode = topt.approx_mode;
  opt.rope = topt.rope;
  opt.rope_base = topt.rope_base;
  opt.layer = topt.layer;
  Var<T> src;
  if (qk_source) {
    require_finite(*qk_source, "query/key source");
    src = tape.constant(*qk_source);
  }
  Capture<T> cap;
  const bool want = topt.capture && variant != Variant::mlp;
  Var<T> o = token_mixer(variant, tape.constant(h), bind(tape, p), opt, src, want ? &cap : nullptr);
  AttentionOutput<T> out;
  out.o = o.value();
  if (want) {
    out.attention = std::move(cap.attention);
    out.prelogits = std::move(cap.prelogits);
  }
  return out;
}

}  // namespace

template <typename T>
AttentionOutput<T> standard_attention(const Tensor<T>& h, const AttnParams<T>& p,
                                      const TensorAttnOptions& opt) {
  return run_single<T>(Variant::standard, h, p, opt, nullptr);
}

template <typename T>
AttentionOutput<T> gated_mlp(const Tensor<T>& h, const AttnParams<T>& p) {
  return run_single<T>(Variant::mlp, h, p, {}, nullptr);
}

template <typename T>
AttentionOutput<T> approximate_attention_parallel(const Tensor<T>& h, const AttnParams<T>& p,
                                                  const TensorAttnOptions& opt) {
  return run_single<T>(Variant::approx, h, p, opt, nullptr);
}

template <typename T>
AttentionOutput<T> nonapprox_attention_parallel(const Tensor<T>& h, const AttnParams<T>& p,
                                                const TensorAttnOptions& opt) {
  return run_single<T>(Variant::nonapprox, h, p, opt, nullptr);
}

template <typename T>
AttentionOutput<T> external_qk_attention(const Tensor<T>& h, const Tensor<T>& x,
                                         const AttnParams<T>& p, const TensorAttnOptions& opt) {
  if (x.rank() != 2 || x.rows() < h.rows()) {
    throw ShapeError("external query/key rows " + shape_string(x.shape()) + " shorter than sequence " +
                     shape_string(h.shape()));
  }
  Tensor<T> head({h.rows(), x.cols()});
  std::copy_n(x.raw(), head.size(), head.raw());
  return run_single<T>(Variant::rnd_emb_qk, h, p, opt, &head);
}

template <typename T>
AttentionOutput<T> static_emb_qk_attention(const Tensor<T>& h, const Tensor<T>& e,
                                           const AttnParams<T>& p, const TensorAttnOptions& opt) {
  if (e.shape() != h.shape()) {
    throw ShapeError("static embeddings " + shape_string(e.shape()) + " vs hidden states " +
                     shape_string(h.shape()));
  }
  return run_single<T>(Variant::static_emb_qk, h, p, opt, &e);
}

// Recurrent forms.

namespace {

template <typename T>
std::vector<T> row_times(const Tensor<T>& x, const Tensor<T>& w) {
  const std::size_t d_in = w.rows(), d_out = w.cols();
  std::vector<T> out(d_out, T{0});
  for (std::size_t r = 0; r < d_in; ++r) {
    const T xr = x[r];
    for (std::size_t c = 0; c < d_out; ++c) out[c] += xr * w(r, c);
  }
  return out;
}

template <typename T>
void rotate(std::vector<T>& x, std::size_t n_heads, std::size_t position, double base) {
  const std::size_t dh = x.size() / n_heads, half = dh / 2;
  for (std::size_t h = 0; h < n_heads; ++h) {
    T* p = x.data() + h * dh;
    for (std::size_t i = 0; i < half; ++i) {
      const double angle = static_cast<double>(position) *
                           std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(dh));
      const T c = static_cast<T>(std::cos(angle)), s = static_cast<T>(std::sin(angle));
      const T a = p[i], b = p[i + half];
      p[i] = a * c - b * s;
      p[i + half] = a * s + b * c;
    }
  }
}

template <typename T>
struct Projected {
  std::vector<T> q, k, v;
  std::size_t dh;
};

template <typename T>
Projected<T> project(const Tensor<T>& x_t, const AttnParams<T>& p, const RecurrentState<T>& state,
                     const TensorAttnOptions& opt, bool silu_q) {
  require_finite(x_t, "hidden state");
  const std::size_t d = p.w_q.rows();
  if (x_t.size() != d) {
    throw ShapeError("recurrent step expects a row of width " + std::to_string(d) + ", got " +
                     shape_string(x_t.shape()));
  }
  if (p.n_heads == 0 || d % p.n_heads != 0) throw ShapeError("width not divisible by heads");
  Projected<T> pr{row_times(x_t, p.w_q), row_times(x_t, p.w_k), row_times(x_t, p.w_v), d / p.n_heads};
  if (silu_q) {
    for (auto& v : pr.q) v = v / (T{1} + std::exp(-v));
  }
  if (opt.rope && pr.dh % 2 == 0) {
    rotate(pr.q, p.n_heads, state.steps, opt.rope_base);
    rotate(pr.k, p.n_heads, state.steps, opt.rope_base);
  }
  return pr;
}

template <typename T>
Tensor<T> output_projection(const std::vector<T>& o, const AttnParams<T>& p) {
  Tensor<T> row({o.size()}, std::vector<T>(o));
  std::vector<T> y = row_times(row, p.w_o);
  const std::size_t n = y.size();
  Tensor<T> out({n}, std::move(y));
  require_finite(out, "recurrent output");
  return out;
}

[[noreturn]] void guard_failure(const char* term, double value, long layer, std::size_t head,
                                std::size_t position) {
  throw DenominatorError("approximate attention: " + std::string(term) + " denominator " +
                             std::to_string(value) + " below guard at layer " + std::to_string(layer) +
                             ", head " + std::to_string(head) + ", position " + std::to_string(position),
                         layer, static_cast<long>(head), static_cast<long>(position));
}

}  // namespace

template <typename T>
Tensor<T> approximate_attention_recurrent(const Tensor<T>& x_t, const AttnParams<T>& p,
                                          RecurrentState<T>& state, const TensorAttnOptions& opt) {
  const Projected<T> pr = project(x_t, p, state, opt, false);
  const std::size_t dh = pr.dh;
  const bool split = opt.approx_mode == ApproxMode::split;
  const std::size_t feat = split ? dh : dh * dh;  // second-order feature width
  if (state.steps == 0) {
    state.heads.assign(p.n_heads, {});
    for (auto& hs : state.heads) {
      hs.sum_v.assign(dh, T{0});
      hs.s1.assign(dh * dh, T{0});
      hs.z1.assign(dh, T{0});
      hs.s2.assign(feat * dh, T{0});
      hs.z2.assign(feat, T{0});
    }
  }
  const T guard = static_cast<T>(kDenominatorGuard);
  const T n = static_cast<T>(state.steps + 1);
  const T inv_sqrt2 = T{1} / std::sqrt(T{2});
  const T c = T{1} / std::sqrt(static_cast<T>(dh));
  std::vector<T> o(p.w_q.rows(), T{0});
  std::vector<T> kf(feat), qf(feat);

  for (std::size_t h = 0; h < p.n_heads; ++h) {
    auto& hs = state.heads[h];
    const T* q = pr.q.data() + h * dh;
    const T* k = pr.k.data() + h * dh;
    const T* v = pr.v.data() + h * dh;
    if (split) {
      for (std::size_t m = 0; m < dh; ++m) {
        kf[m] = k[m] * k[m] * inv_sqrt2;
        qf[m] = q[m] * q[m] * inv_sqrt2;
      }
    } else {
      for (std::size_t a = 0; a < dh; ++a)
        for (std::size_t b = 0; b < dh; ++b) {
          kf[a * dh + b] = k[a] * k[b];
          qf[a * dh + b] = q[a] * q[b];
        }
    }
    for (std::size_t m = 0; m < dh; ++m) {
      hs.sum_v[m] += v[m];
      hs.z1[m] += k[m];
      for (std::size_t e = 0; e < dh; ++e) hs.s1[m * dh + e] += k[m] * v[e];
    }
    for (std::size_t f = 0; f < feat; ++f) {
      hs.z2[f] += kf[f];
      for (std::size_t e = 0; e < dh; ++e) hs.s2[f * dh + e] += kf[f] * v[e];
    }

    T den1 = 0, den2 = 0;
    for (std::size_t m = 0; m < dh; ++m) den1 += q[m] * hs.z1[m];
    for (std::size_t f = 0; f < feat; ++f) den2 += qf[f] * hs.z2[f];
    T* oh = o.data() + h * dh;
    if (split) {
      if (std::abs(den1) < guard) guard_failure("first-order", den1, opt.layer, h, state.steps);
      if (std::abs(den2) < guard) guard_failure("second-order", den2, opt.layer, h, state.steps);
      for (std::size_t e = 0; e < dh; ++e) {
        T num1 = 0, num2 = 0;
        for (std::size_t m = 0; m < dh; ++m) num1 += q[m] * hs.s1[m * dh + e];
        for (std::size_t f = 0; f < feat; ++f) num2 += qf[f] * hs.s2[f * dh + e];
        oh[e] = hs.sum_v[e] / n + num1 / den1 + num2 / den2;
      }
    } else {
      const T den = n + c * den1 + c * c / T{2} * den2;
      if (std::abs(den) < guard) guard_failure("shared", den, opt.layer, h, state.steps);
      for (std::size_t e = 0; e < dh; ++e) {
        T num1 = 0, num2 = 0;
        for (std::size_t m = 0; m < dh; ++m) num1 += q[m] * hs.s1[m * dh + e];
        for (std::size_t f = 0; f < feat; ++f) num2 += qf[f] * hs.s2[f * dh + e];
        oh[e] = (hs.sum_v[e] + c * num1 + c * c / T{2} * num2) / den;
      }
    }
  }
  ++state.steps;
  return output_projection(o, p);
}

template <typename T>
Tensor<T> nonapprox_attention_recurrent(const Tensor<T>& x_t, const AttnParams<T>& p,
                                        RecurrentState<T>& state, const TensorAttnOptions& opt) {
  const Projected<T> pr = project(x_t, p, state, opt, true);
  const std::size_t dh = pr.dh;
  if (state.steps == 0) {
    state.heads.assign(p.n_heads, {});
    for (auto& hs : state.heads) hs.sum_v.assign(dh, T{0});
  }
  const T c = T{1} / std::sqrt(static_cast<T>(dh));
  std::vector<T> o(p.w_q.rows(), T{0});
  for (std::size_t h = 0; h < p.n_heads; ++h) {
    auto& hs = state.heads[h];
    const T* q = pr.q.data() + h * dh;
    const T* k = pr.k.data() + h * dh;
    const T* v = pr.v.data() + h * dh;
    T s = 0;
    for (std::size_t m = 0; m < dh; ++m) s += q[m] * k[m];
    s *= c;
    if (state.steps == 0 || s > hs.max_score) {
      const T f = state.steps == 0 ? T{0} : std::exp(hs.max_score - s);
      for (std::size_t m = 0; m < dh; ++m) hs.sum_v[m] = hs.sum_v[m] * f + v[m];
      hs.denom = hs.denom * f + T{1};
      hs.max_score = s;
    } else {
      const T w = std::exp(s - hs.max_score);
      for (std::size_t m = 0; m < dh; ++m) hs.sum_v[m] += w * v[m];
      hs.denom += w;
    }
    hs.log_denom = hs.max_score + std::log(hs.denom);
    for (std::size_t m = 0; m < dh; ++m) o[h * dh + m] = hs.sum_v[m] / hs.denom;
  }
  ++state.steps;
  return output_projection(o, p);
}

#define DATN_INSTANTIATE_MIXERS(T)                                                                  \
  template AttnVars<T> bind<T>(Tape<T>&, const AttnParams<T>&);                                     \
  template Var<T> token_mixer<T>(Variant, const Var<T>&, const AttnVars<T>&, const AttnOptions&,     \
                                 const Var<T>&, Capture<T>*);                                        \
  template AttentionOutput<T> standard_attention<T>(const Tensor<T>&, const AttnParams<T>&,         \
                                                    const TensorAttnOptions&);                      \
  template AttentionOutput<T> gated_mlp<T>(const Tensor<T>&, const AttnParams<T>&);                 \
  template AttentionOutput<T> approximate_attention_parallel<T>(const Tensor<T>&,                   \
                                                                const AttnParams<T>&,               \
                                                                const TensorAttnOptions&);          \
  template AttentionOutput<T> nonapprox_attention_parallel<T>(const Tensor<T>&, const AttnParams<T>&, \
                                                              const TensorAttnOptions&);            \
  template AttentionOutput<T> external_qk_attention<T>(const Tensor<T>&, const Tensor<T>&,          \
                                                       const AttnParams<T>&,                        \
                                                       const TensorAttnOptions&);                   \
  template AttentionOutput<T> static_emb_qk_attention<T>(const Tensor<T>&, const Tensor<T>&,        \
                                                         const AttnParams<T>&,                      \
                                                         const TensorAttnOptions&);                 \
  template Tensor<T> approximate_attention_recurrent<T>(const Tensor<T>&, const AttnParams<T>&,     \
                                                        RecurrentState<T>&,                         \
                                                        const TensorAttnOptions&);                  \
  template Tensor<T> nonapprox_attention_recurrent<T>(const Tensor<T>&, const AttnParams<T>&,       \
                                                      RecurrentState<T>&, const TensorAttnOptions&);

DATN_INSTANTIATE_MIXERS(float)
DATN_INSTANTIATE_MIXERS(double)

#undef DATN_INSTANTIATE_MIXERS

}  // namespace datn
