#pragma once

// Decoder stacks with a per-layer token-mixer assignment.
//
// Block l:  h += Mixer_l(Norm_l(h));  h += FFN_l(Norm'_l(h))
// Logits:   Norm_f(h) E^T (embeddings tied with the LM head).
//
// Variants that take Q/K from a shadow stream read X^(l), the hidden state of
// a fixed input (random embeddings or a fixed token sequence) entering layer l
// when that input is run through layers 1..l-1 on its own, with standard
// attention in every attention layer.

#include <cstddef>
#include <cstdint>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "datn/attention.hpp"
#include "datn/autograd.hpp"

namespace datn {

using LayerMap = std::vector<Variant>;

/// Names accepted by layer_map_from_name. "hybrid" is "even"; "uniform" has
/// no standard layer.
inline constexpr std::string_view kLayerMapNames[] = {"even",  "odd",   "top",  "middle",
                                                      "bottom", "25%",  "first", "last",
                                                      "bilateral", "hybrid", "uniform"};

/// 1-indexed standard layers of a named map for an n-layer stack. At 24
/// layers the sets are the ablation table verbatim; other depths scale the
/// same rule (parity, halves, quarters, every 4th, literal ends).
std::vector<std::size_t> standard_layer_ids(std::string_view name, std::size_t n_layers);

/// Standard at the named layers, `simple` everywhere else.
LayerMap layer_map_from_name(std::string_view name, std::size_t n_layers, Variant simple);

std::string layer_map_string(const LayerMap& map);

struct ShadowSpec {
  enum class Kind { random_embeddings, fixed_text };
  Kind kind = Kind::random_embeddings;
  double sigma = 0.02;
  std::uint64_t seed = 0;
  std::string source_path;  ///< fixed_text only
  std::size_t offset = 0;
  std::size_t length = 0;
  std::vector<int> tokens;  ///< resolved fixed-text tokens; travels with checkpoints
};

std::string_view shadow_kind_name(ShadowSpec::Kind k);
ShadowSpec::Kind parse_shadow_kind(std::string_view name);

/// Reads `length` bytes at `offset` from source_path into spec.tokens.
/// Throws ConfigError when the file is missing or too short.
void resolve_shadow_tokens(ShadowSpec& spec);

inline constexpr std::size_t kByteVocab = 257;
inline constexpr int kBosToken = 256;

struct ModelConfig {
  std::size_t vocab_size = kByteVocab;
  std::size_t d_model = 64;
  std::size_t d_ff = 256;
  std::size_t n_layers = 4;
  std::size_t n_heads = 2;
  std::size_t max_seq_len = 256;
  double rope_base = 10000.0;
  double norm_eps = 1e-6;
  LayerMap variant_map = LayerMap(4, Variant::standard);
  std::optional<ShadowSpec> shadow;
  bool tie_embeddings = true;
  ApproxMode approx_mode = ApproxMode::split;
};

/// "70M", "160M", "500M", "1.7B" or "desk"; every layer standard.
ModelConfig preset(std::string_view name);

/// Throws ConfigError on inconsistent fields; fills in a default ShadowSpec
/// when the map needs one and none is given.
void validate(ModelConfig& cfg);

/// Parameter count of a config without building it.
std::size_t count_parameters(const ModelConfig& cfg);

struct LayerParams {
  std::size_t attn_norm, ffn_norm;
  std::size_t wq = npos, wk = npos, wv = npos, wo = npos;
  std::size_t gate = npos, up = npos, down = npos, bias = npos, gain = npos;
  std::size_t ffn_gate, ffn_up, ffn_down;
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

/// Per-layer captures of one forward. Layers run as MLP report the identity
/// and an empty prelogit tensor.
template <typename T>
struct ForwardCapture {
  std::vector<Capture<T>> layers;
};

template <typename T>
class Model;

template <typename T>
Model<T> skip_transform(const Model<T>& model);

template <typename T>
class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return cfg_; }
  std::uint64_t seed() const noexcept { return seed_; }

  std::vector<Parameter<T>>& parameters() noexcept { return params_; }
  const std::vector<Parameter<T>>& parameters() const noexcept { return params_; }
  Parameter<T>& parameter(std::string_view name);
  const Parameter<T>& parameter(std::string_view name) const;
  std::size_t parameter_count() const;

  /// Fixed random shadow input [max_seq_len x d_model]; empty unless some
  /// layer uses random shadow embeddings.
  const Tensor<T>& shadow_epsilon() const noexcept { return shadow_epsilon_; }
  void set_shadow_epsilon(Tensor<T> eps);

  /// Increment after every in-place parameter change; invalidates the
  /// cached shadow stream.
  void bump_version() noexcept { ++version_; }
  std::uint64_t version() const noexcept { return version_; }
  void set_version(std::uint64_t v) noexcept { version_ = v; }

  /// Logits [batch*L x vocab] on `tape`. tokens holds `batch` sequences of
  /// equal length L <= max_seq_len, concatenated.
  Var<T> forward(Tape<T>& tape, std::span<const int> tokens, std::size_t batch = 1,
                 ForwardCapture<T>* capture = nullptr) const;

  /// Single-sequence forward without gradients.
  Tensor<T> logits(std::span<const int> tokens, ForwardCapture<T>* capture = nullptr) const;

  /// X^(l) for every layer l (entry l-1), each [max_seq_len x d_model].
  /// Entries for layers that do not read the shadow stream are still filled
  /// up to the deepest layer that does, and empty beyond it. Cached until the
  /// version counter moves.
  std::vector<Tensor<T>> shadow_forward() const;

  bool needs_shadow() const;

 private:
  friend Model<T> skip_transform<>(const Model<T>&);

  // Copies start empty so that a copied model never sees stale states.
  struct ShadowCache {
    ShadowCache() = default;
    ShadowCache(const ShadowCache&) {}
    ShadowCache& operator=(const ShadowCache&) {
      std::lock_guard lock(mu);
      valid = false;
      states.clear();
      return *this;
    }
    std::mutex mu;
    bool valid = false;
    std::uint64_t version = 0;
    std::vector<Tensor<T>> states;
  };

  Var<T> bind(Tape<T>& tape, std::size_t index) const;
  Var<T> shadow_input(Tape<T>& tape) const;
  std::vector<Var<T>> shadow_states(Tape<T>& tape) const;
  Var<T> ffn(Tape<T>& tape, const LayerParams& lp, const Var<T>& h) const;
  AttnVars<T> mixer_vars(Tape<T>& tape, const LayerParams& lp) const;

  ModelConfig cfg_;
  std::uint64_t seed_ = 0;
  std::vector<Parameter<T>> params_;
  std::size_t embed_ = 0, final_norm_ = 0;
  std::vector<LayerParams> layers_;
  Tensor<T> shadow_epsilon_;
  std::uint64_t version_ = 0;
  mutable ShadowCache cache_;
};

/// Deletes every non-standard layer; the remaining layers keep their weights
/// and are renumbered. Throws ConfigError when no standard layer exists.
template <typename T>
Model<T> skip_transform(const Model<T>& model);

/// Same seed, same config, fresh parameters.
template <typename T>
Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  return Model<T>(cfg, seed);
}

}  // namespace datn
