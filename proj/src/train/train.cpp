#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "datn/errors.hpp"
#include "datn/ops.hpp"
#include "datn/train.hpp"

namespace datn {
namespace {

// Concatenated inputs and targets of the selected windows.
void gather(const Windows& w, std::span<const std::size_t> ids, std::vector<int>& in, std::vector<int>& tg) {
  in.clear();
  tg.clear();
  for (std::size_t i : ids) {
    auto a = w.inputs(i), b = w.targets(i);
    in.insert(in.end(), a.begin(), a.end());
    tg.insert(tg.end(), b.begin(), b.end());
  }
}

// Sum of per-token NLL over `chunks` equal-length chunks starting at `starts`.
template <typename T>
double chunk_nll(const Model<T>& model, std::span<const int> tokens, std::span<const std::size_t> starts,
                 std::size_t len) {
  std::vector<int> in, tg;
  for (std::size_t s : starts) {
    in.insert(in.end(), tokens.begin() + s, tokens.begin() + s + len);
    tg.insert(tg.end(), tokens.begin() + s + 1, tokens.begin() + s + len + 1);
  }
  Tape<T> tape(false);
  Var<T> logits = model.forward(tape, in, starts.size());
  double sum = 0;
  for (double x : cross_entropy_rows(logits.value(), std::span<const int>(tg))) sum += x;
  return sum;
}

}  // namespace

template <typename T>
double mean_loss(const Model<T>& model, std::span<const int> tokens, std::size_t seq_len, std::size_t batch) {
  const Windows w(tokens, seq_len);
  if (w.count() == 0) throw ShapeError("token slice is shorter than one window");
  batch = std::max<std::size_t>(1, batch);
  double sum = 0;
  std::vector<std::size_t> starts;
  for (std::size_t i = 0; i < w.count(); i += batch) {
    starts.clear();
    for (std::size_t k = i; k < std::min(w.count(), i + batch); ++k) starts.push_back(k * seq_len);
    sum += chunk_nll(model, tokens, starts, seq_len);
  }
  return sum / double(w.count() * seq_len);
}

template <typename T>
std::vector<PerplexityPoint> evaluate_perplexity(const Model<T>& model, std::span<const int> tokens,
                                                 std::span<const std::size_t> contexts) {
  if (contexts.empty()) return {};
  const std::size_t cmax = *std::ranges::max_element(contexts);
  for (std::size_t c : contexts) {
    if (c == 0 || c > model.config().max_seq_len) {
      throw ConfigError("context length " + std::to_string(c) + " outside 1.." +
                        std::to_string(model.config().max_seq_len));
    }
  }
  const std::size_t total = window_count(tokens.size(), cmax) * cmax;
  if (total == 0) throw ShapeError("evaluation slice is shorter than the longest context");

  constexpr std::size_t kBatch = 16;
  std::vector<PerplexityPoint> out;
  for (std::size_t c : contexts) {
    double sum = 0;
    std::vector<std::size_t> starts;
    const std::size_t full = total / c;
    for (std::size_t i = 0; i < full; i += kBatch) {
      starts.clear();
      for (std::size_t k = i; k < std::min(full, i + kBatch); ++k) starts.push_back(k * c);
      sum += chunk_nll(model, tokens, starts, c);
    }
    if (const std::size_t rest = total - full * c; rest > 0) {
      const std::size_t s = full * c;
      sum += chunk_nll(model, tokens, std::span<const std::size_t>(&s, 1), rest);
    }
    const double nll = sum / double(total);
    out.push_back({c, nll, std::exp(nll), total});
  }
  return out;
}

template <typename T>
TrainResult train(Model<T>& model, const TrainConfig& cfg, const CorpusSplit& data, const TrainHooks& hooks) {
  validate(cfg);
  if (cfg.seq_len > model.config().max_seq_len) throw ConfigError("seq_len exceeds the model's max_seq_len");
  const Windows windows(data.train, cfg.seq_len);
  if (windows.count() < cfg.batch_size) {
    throw ConfigError("training stream holds " + std::to_string(windows.count()) + " windows, fewer than one batch");
  }

  TrainResult result;
  result.rng.seed(cfg.seed);
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
  auto evaluate = [&](std::size_t step) {
    if (window_count(data.val.size(), cfg.seq_len) == 0) return;
    EvalRecord e{step, mean_loss(model, data.val, cfg.seq_len, cfg.batch_size), 0.0};
    e.elapsed_s = elapsed();
    result.evals.push_back(e);
    if (hooks.on_eval) hooks.on_eval(e);
  };

  std::vector<std::size_t> order(windows.count());
  std::size_t cursor = order.size();
  AdamState<T> adam;
  std::vector<Tensor<T>> last_good;
  std::vector<int> in, tg;
  auto restore = [&] {
    if (last_good.empty()) return;
    auto& ps = model.parameters();
    for (std::size_t i = 0; i < ps.size(); ++i) ps[i].value = last_good[i];
    model.bump_version();
  };

  for (std::size_t step = 0; step < cfg.max_steps; ++step) {
    if (cursor + cfg.batch_size > order.size()) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), result.rng);
      cursor = 0;
    }
    gather(windows, std::span<const std::size_t>(order).subspan(cursor, cfg.batch_size), in, tg);
    cursor += cfg.batch_size;

    StepRecord rec;
    rec.step = step;
    rec.lr = lr_at(step, cfg);
    try {
      for (auto& p : model.parameters()) p.zero_grad();
      Tape<T> tape(true);
      Var<T> logits = model.forward(tape, in, cfg.batch_size);
      Var<T> loss = cross_entropy(logits, std::span<const int>(tg));
      rec.loss = double(loss.value()[0]);
      if (!std::isfinite(rec.loss)) throw NumericalError("non-finite loss");
      last_good.clear();
      for (const auto& p : model.parameters()) last_good.push_back(p.value);
      tape.backward(loss);
      rec.grad_norm = clip_grad_norm(model.parameters(), cfg.grad_clip_norm);
      if (!std::isfinite(rec.grad_norm)) throw NumericalError("non-finite gradient norm");
      adamw_step(model.parameters(), adam, cfg, rec.lr);
      model.bump_version();
    } catch (const NumericalError& e) {
      restore();
      result.aborted = true;
      result.abort_reason = "step " + std::to_string(step) + ": " + e.what();
      return result;
    }
    rec.elapsed_s = elapsed();
    result.steps.push_back(rec);
    if (hooks.on_step) hooks.on_step(rec);
    if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 && step + 1 < cfg.max_steps) {
      try {
        evaluate(step + 1);
      } catch (const NumericalError& e) {
        restore();
        result.aborted = true;
        result.abort_reason = "evaluation after step " + std::to_string(step) + ": " + e.what();
        return result;
      }
    }
  }
  try {
    if (window_count(data.val.size(), cfg.seq_len) > 0) {
      evaluate(cfg.max_steps);
      result.final_val_loss = result.evals.back().val_loss;
    }
  } catch (const NumericalError& e) {
    result.aborted = true;
    result.abort_reason = std::string("final evaluation: ") + e.what();
  }
  return result;
}

#define DATN_INSTANTIATE_TRAIN(T)                                                                             \
  template double mean_loss<T>(const Model<T>&, std::span<const int>, std::size_t, std::size_t);            \
  template std::vector<PerplexityPoint> evaluate_perplexity<T>(const Model<T>&, std::span<const int>,       \
                                                               std::span<const std::size_t>);               \
  template TrainResult train<T>(Model<T>&, const TrainConfig&, const CorpusSplit&, const TrainHooks&);

DATN_INSTANTIATE_TRAIN(float)
DATN_INSTANTIATE_TRAIN(double)

#undef DATN_INSTANTIATE_TRAIN

}  // namespace datn
