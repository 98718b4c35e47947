#pragma once

// Token mixers. Each variant exists at two levels:
//  - tape level, batched: hidden states are [B*L x d_model] with sequence b
//    occupying rows [b*L, (b+1)*L); used by the model and by training.
//  - tensor level, one sequence: the plain functions at the bottom, which run
//    the tape-level code on a gradient-free tape.
// Approximate and Non-approximate additionally have a recurrent, one token at
// a time form with constant-size state.

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "datn/autograd.hpp"
#include "datn/tensor.hpp"

namespace datn {

enum class Variant {
  standard,
  mlp,
  approx,
  nonapprox,
  rnd_emb_qk,
  fixed_seq_qk,
  static_emb_qk,
};

inline constexpr Variant kAllVariants[] = {Variant::standard,   Variant::mlp,
                                           Variant::approx,     Variant::nonapprox,
                                           Variant::rnd_emb_qk, Variant::fixed_seq_qk,
                                           Variant::static_emb_qk};

std::string_view variant_name(Variant v);
/// Throws ConfigError for unknown names.
Variant parse_variant(std::string_view name);

/// Whether the variant's Q and K come from the shadow stream.
constexpr bool uses_shadow(Variant v) {
  return v == Variant::rnd_emb_qk || v == Variant::fixed_seq_qk;
}

/// Approximate attention normalization: three separately normalized Taylor
/// terms, or one denominator over 1 + x + x^2/2.
enum class ApproxMode { split, shared };

std::string_view approx_mode_name(ApproxMode m);
ApproxMode parse_approx_mode(std::string_view name);

/// Normalizers below this magnitude raise DenominatorError.
inline constexpr double kDenominatorGuard = 1e-8;

/// Width of the gated-MLP mixer whose three matrices total as close to 4*d^2
/// as possible without exceeding it: floor(4d/3).
std::size_t gated_mlp_width(std::size_t d_model);
/// Parameters still missing from 4*d^2 after the three matrices, in units of
/// d_model: 0, 1 (output bias) or 2 (output bias and output gain).
std::size_t gated_mlp_pad_vectors(std::size_t d_model);

/// Weights of one mixer. Attention variants use q/k/v/o ([d x d] each); the
/// gated MLP uses gate/up ([d x d_ff']), down ([d_ff' x d]) and the optional
/// pad vectors bias/gain ([d]).
template <typename T>
struct AttnParams {
  Tensor<T> w_q, w_k, w_v, w_o;
  Tensor<T> w_gate, w_up, w_down, bias, gain;
  std::size_t n_heads = 1;
};

/// Same weights bound to a tape. Unused members stay invalid.
template <typename T>
struct AttnVars {
  Var<T> w_q, w_k, w_v, w_o;
  Var<T> w_gate, w_up, w_down, bias, gain;
};

template <typename T>
AttnVars<T> bind(Tape<T>& tape, const AttnParams<T>& p);

struct AttnOptions {
  std::size_t n_heads = 1;
  std::size_t batch = 1;  ///< sequences stacked in the hidden-state rows
  ApproxMode approx_mode = ApproxMode::split;
  bool rope = true;
  double rope_base = 10000.0;
  long layer = -1;  ///< reported by DenominatorError
  bool capture = false;
};

/// Materialized mixing weights of one call. Both tensors are
/// [batch*n_heads x L x L]; entries above the diagonal are 0.
template <typename T>
struct Capture {
  Tensor<T> attention;
  Tensor<T> prelogits;
};

/// Dispatches on the variant. `qk_source` supplies Q/K inputs for variants
/// that do not take them from `h`: the first L shadow rows ([L x d], shared by
/// every sequence) for rnd/fixed, the normalized static embeddings
/// ([B*L x d]) for static_emb_qk. Standard and the other self-contained
/// variants ignore it.
template <typename T>
Var<T> token_mixer(Variant variant, const Var<T>& h, const AttnVars<T>& w, const AttnOptions& opt,
                   const Var<T>& qk_source = {}, Capture<T>* capture = nullptr);

// Fused cores. Inputs are projected [rows x d] matrices split into heads by
// column blocks; q/k may hold a single sequence that every batch entry shares.

template <typename T>
Var<T> softmax_attention_core(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                              const AttnOptions& opt, Capture<T>* capture);

template <typename T>
Var<T> approx_attention_core(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                             const AttnOptions& opt, Capture<T>* capture);

/// q is expected to be SiLU-activated already.
template <typename T>
Var<T> nonapprox_attention_core(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                                const AttnOptions& opt, Capture<T>* capture);

// Single-sequence tensor forms.

template <typename T>
struct AttentionOutput {
  Tensor<T> o;                        ///< [L x d_model]
  std::optional<Tensor<T>> attention;  ///< [n_heads x L x L]
  std::optional<Tensor<T>> prelogits;  ///< [n_heads x L x L]
};

struct TensorAttnOptions {
  ApproxMode approx_mode = ApproxMode::split;
  bool rope = true;
  double rope_base = 10000.0;
  bool capture = true;
  long layer = -1;
};

template <typename T>
AttentionOutput<T> standard_attention(const Tensor<T>& h, const AttnParams<T>& p,
                                      const TensorAttnOptions& opt = {});

template <typename T>
AttentionOutput<T> gated_mlp(const Tensor<T>& h, const AttnParams<T>& p);

template <typename T>
AttentionOutput<T> approximate_attention_parallel(const Tensor<T>& h, const AttnParams<T>& p,
                                                  const TensorAttnOptions& opt = {});

template <typename T>
AttentionOutput<T> nonapprox_attention_parallel(const Tensor<T>& h, const AttnParams<T>& p,
                                                const TensorAttnOptions& opt = {});

/// Q and K from the first L rows of x, V from h.
template <typename T>
AttentionOutput<T> external_qk_attention(const Tensor<T>& h, const Tensor<T>& x,
                                         const AttnParams<T>& p, const TensorAttnOptions& opt = {});

/// Q and K from e (same length as h), V from h.
template <typename T>
AttentionOutput<T> static_emb_qk_attention(const Tensor<T>& h, const Tensor<T>& e,
                                           const AttnParams<T>& p,
                                           const TensorAttnOptions& opt = {});

// Recurrent forms.

/// Per-head running sums. Approximate keeps sum v, sum k^T v, sum k, and the
/// second-order pair (split: elementwise k^2/sqrt2; shared: k (x) k).
/// Non-approximate keeps sum e^{s-m} v and sum e^{s-m} under a running max m.
template <typename T>
struct RecurrentState {
  struct Head {
    std::vector<T> sum_v;
    std::vector<T> s1, z1;  ///< sum k^T v [dh x dh], sum k [dh]
    std::vector<T> s2, z2;  ///< second-order counterparts
    T max_score = 0;
    T denom = 0;
    T log_denom = 0;  ///< m + log(denom), strictly increasing over steps
  };
  std::size_t steps = 0;
  std::vector<Head> heads;
};

/// One token: x_t is the hidden-state row [d_model]. Returns o_t after W_O.
template <typename T>
Tensor<T> approximate_attention_recurrent(const Tensor<T>& x_t, const AttnParams<T>& p,
                                          RecurrentState<T>& state,
                                          const TensorAttnOptions& opt = {});

template <typename T>
Tensor<T> nonapprox_attention_recurrent(const Tensor<T>& x_t, const AttnParams<T>& p,
                                        RecurrentState<T>& state,
                                        const TensorAttnOptions& opt = {});

}  // namespace datn
