#include <cmath>
#include <fstream>
#include <iterator>

#include "datn/errors.hpp"
#include "datn/train.hpp"

namespace datn {

void validate(const TrainConfig& c) {
  if (c.batch_size == 0 || c.seq_len == 0) throw ConfigError("batch_size and seq_len must be positive");
  if (c.warmup_steps > c.max_steps) throw ConfigError("warmup_steps exceeds max_steps");
  if (c.schedule != "cosine" && c.schedule != "constant") {
    throw ConfigError("unknown schedule '" + c.schedule + "'");
  }
  if (!(c.peak_lr >= 0) || !std::isfinite(c.peak_lr)) throw ConfigError("peak_lr must be finite and non-negative");
  if (!(c.cycles > 0)) throw ConfigError("cycles must be positive");
  if (!(c.adam_beta1 >= 0 && c.adam_beta1 < 1) || !(c.adam_beta2 >= 0 && c.adam_beta2 < 1)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(c.adam_eps > 0)) throw ConfigError("adam_eps must be positive");
  if (!(c.weight_decay >= 0)) throw ConfigError("weight_decay must be non-negative");
  if (!(c.grad_clip_norm > 0)) throw ConfigError("grad_clip_norm must be positive");
  if (!(c.val_fraction > 0 && c.val_fraction < 1)) throw ConfigError("val_fraction must lie in (0, 1)");
}

std::vector<int> tokenize_bytes(std::string_view text) {
  std::vector<int> out;
  out.reserve(text.size() + 1);
  out.push_back(kBosToken);
  for (char ch : text) out.push_back(static_cast<unsigned char>(ch));
  return out;
}

std::string detokenize(std::span<const int> tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (int t : tokens) {
    if (t == kBosToken) continue;
    if (t < 0 || t > 255) throw ConfigError("token " + std::to_string(t) + " is not a byte");
    out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
  }
  return out;
}

std::vector<int> ingest_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read corpus '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty()) throw ConfigError("corpus '" + path + "' is empty");
  return tokenize_bytes(bytes);
}

std::size_t window_count(std::size_t n_tokens, std::size_t seq_len) {
  if (seq_len == 0) throw ConfigError("seq_len must be positive");
  return n_tokens < 1 ? 0 : (n_tokens - 1) / seq_len;
}

Windows::Windows(std::span<const int> tokens, std::size_t seq_len)
    : tokens_(tokens), seq_len_(seq_len), count_(window_count(tokens.size(), seq_len)) {}

CorpusSplit split_corpus(std::span<const int> tokens, double val_fraction) {
  if (!(val_fraction > 0 && val_fraction < 1)) throw ConfigError("val_fraction must lie in (0, 1)");
  const auto n_val = static_cast<std::size_t>(std::floor(double(tokens.size()) * val_fraction));
  const std::size_t cut = tokens.size() - n_val;
  return {{tokens.begin(), tokens.begin() + cut}, {tokens.begin() + cut, tokens.end()}};
}

double lr_at(std::size_t step, const TrainConfig& c) {
  if (c.warmup_steps > 0 && step < c.warmup_steps) return c.peak_lr * double(step) / double(c.warmup_steps);
  if (c.schedule == "constant") return c.peak_lr;
  if (step >= c.max_steps) return 0.0;
  const double span = double(c.max_steps - c.warmup_steps);
  const double progress = double(step - c.warmup_steps) / span;
  const double lr = c.peak_lr * 0.5 * (1.0 + std::cos(M_PI * 2.0 * c.cycles * progress));
  return std::max(0.0, lr);
}

}  // namespace datn
