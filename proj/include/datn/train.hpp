#pragma once

// Byte-level causal language-model training: corpus ingestion, AdamW with
// global-norm clipping, warmup plus cosine learning rate, the training loop,
// perplexity evaluation and binary checkpoints.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "datn/model.hpp"

namespace datn {

struct TrainConfig {
  std::size_t max_steps = 2000;
  std::size_t batch_size = 16;
  std::size_t seq_len = 256;
  double peak_lr = 4e-4;
  std::size_t warmup_steps = 100;
  std::string schedule = "cosine";  ///< "cosine" or "constant"
  double cycles = 0.5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.9999;
  double adam_eps = 1e-8;
  double weight_decay = 0.1;
  double grad_clip_norm = 1.0;
  std::uint64_t seed = 0;
  std::size_t eval_every = 250;  ///< 0 disables periodic evaluation
  std::string corpus_path;
  double val_fraction = 0.05;  ///< tail of the corpus held out
};

/// Throws ConfigError on out-of-range values.
void validate(const TrainConfig& cfg);

// ---- data ----------------------------------------------------------------

/// [BOS, b0, b1, ...] for the raw bytes of `text`.
std::vector<int> tokenize_bytes(std::string_view text);
/// Inverse of tokenize_bytes; BOS tokens are dropped. Throws ConfigError on
/// ids outside the byte range.
std::string detokenize(std::span<const int> tokens);
/// Reads a file as bytes and tokenizes it. Throws ConfigError when the file
/// is missing or empty.
std::vector<int> ingest_corpus(const std::string& path);

/// Non-overlapping windows over a token stream. Window i has inputs
/// tokens[i*L, i*L+L) and targets shifted by one.
class Windows {
 public:
  Windows(std::span<const int> tokens, std::size_t seq_len);
  std::size_t count() const noexcept { return count_; }
  std::size_t seq_len() const noexcept { return seq_len_; }
  std::span<const int> inputs(std::size_t i) const { return tokens_.subspan(i * seq_len_, seq_len_); }
  std::span<const int> targets(std::size_t i) const { return tokens_.subspan(i * seq_len_ + 1, seq_len_); }

 private:
  std::span<const int> tokens_;
  std::size_t seq_len_;
  std::size_t count_;
};

/// floor((n_tokens - 1) / seq_len).
std::size_t window_count(std::size_t n_tokens, std::size_t seq_len);

struct CorpusSplit {
  std::vector<int> train;
  std::vector<int> val;
};

/// The last floor(n * val_fraction) tokens become the validation stream.
CorpusSplit split_corpus(std::span<const int> tokens, double val_fraction);

// ---- optimization --------------------------------------------------------

/// Linear warmup 0 -> peak, then cosine to 0 over the remaining steps.
double lr_at(std::size_t step, const TrainConfig& cfg);

/// Scales every gradient so that the global L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(std::vector<Parameter<T>>& params, double max_norm);

template <typename T>
struct AdamState {
  std::uint64_t step = 0;
  std::vector<Tensor<T>> m, v;
};

/// One decoupled-decay Adam update with bias-corrected moments. Parameters
/// with decay = false skip the weight decay term. Throws ShapeError when the
/// state does not match the parameters.
template <typename T>
void adamw_step(std::vector<Parameter<T>>& params, AdamState<T>& state, const TrainConfig& hp, double lr);

// ---- training ------------------------------------------------------------

struct StepRecord {
  std::size_t step = 0;
  double loss = 0;
  double lr = 0;
  double grad_norm = 0;
  double elapsed_s = 0;
};

struct EvalRecord {
  std::size_t step = 0;
  double val_loss = 0;
  double elapsed_s = 0;
};

struct TrainResult {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  std::optional<double> final_val_loss;
  bool aborted = false;
  std::string abort_reason;
  std::mt19937_64 rng;  ///< batch-order generator after the last step
};

struct TrainHooks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const EvalRecord&)> on_eval;
};

/// Trains in place. Batches are windows of the train stream in a per-epoch
/// shuffle drawn from cfg.seed, so identical inputs give identical runs. A
/// non-finite loss or a numerical failure stops training and restores the
/// parameters from before the failing update.
template <typename T>
TrainResult train(Model<T>& model, const TrainConfig& cfg, const CorpusSplit& data, const TrainHooks& hooks = {});

/// Mean next-token NLL over every window of `tokens` at the model's seq_len.
template <typename T>
double mean_loss(const Model<T>& model, std::span<const int> tokens, std::size_t seq_len,
                 std::size_t batch = 16);

struct PerplexityPoint {
  std::size_t context = 0;
  double mean_nll = 0;
  double perplexity = 0;
  std::size_t tokens = 0;
};

/// exp(mean NLL) at each context length. Every length scores the same
/// targets: the first floor((n-1)/c_max)*c_max, cut into chunks of c with a
/// shorter final chunk when c does not divide the total. Throws ConfigError
/// for lengths of 0 or above max_seq_len, ShapeError when the slice is too
/// short for the longest context.
template <typename T>
std::vector<PerplexityPoint> evaluate_perplexity(const Model<T>& model, std::span<const int> tokens,
                                                 std::span<const std::size_t> contexts);

// ---- checkpoints ---------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
struct Checkpoint {
  Model<T> model;
  TrainConfig train;
  std::string rng_state;  ///< text form of the batch-order generator
};

/// Magic "DATN", u32 format version, u64-prefixed JSON manifest, u64
/// parameter version, u64-prefixed RNG text, u32 tensor count, then per
/// tensor: u32-prefixed name, u8 dtype (1 f32, 2 f64), u32 rank, u64 dims,
/// raw little-endian values. Written to a temp file and renamed.
template <typename T>
void save_checkpoint(const Model<T>& model, const TrainConfig& train, const std::string& path,
                     const std::string& rng_state = {});

/// Throws FormatError on a bad magic, unknown version, truncation, or a
/// tensor table that does not match the manifest. Values stored in the other
/// precision are converted.
template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path);

/// The manifest of a checkpoint without loading tensors.
std::string read_checkpoint_manifest(const std::string& path);

}  // namespace datn
