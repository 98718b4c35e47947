#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "datn/config_io.hpp"
#include "datn/errors.hpp"
#include "datn/train.hpp"

using namespace datn;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "datn_test_train";
  fs::create_directories(dir);
  return dir / name;
}

void write_file(const fs::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

std::string corpus_text(std::size_t n) {
  const std::string words[] = {"the ", "cat ", "sat ", "on ", "a ", "mat. ", "dog ", "ran\n"};
  std::mt19937_64 rng(11);
  std::string s;
  while (s.size() < n) s += words[rng() % 8];
  s.resize(n);
  return s;
}

TrainConfig small_train(std::size_t steps) {
  TrainConfig c;
  c.max_steps = steps;
  c.batch_size = 2;
  c.seq_len = 32;
  c.warmup_steps = std::min<std::size_t>(2, steps);
  c.peak_lr = 3e-3;
  c.eval_every = 0;
  return c;
}

ModelConfig desk_map(std::string_view name, Variant v) {
  ModelConfig c = preset("desk");
  c.variant_map = layer_map_from_name(name, c.n_layers, v);
  if (v == Variant::fixed_seq_qk) {
    c.shadow = ShadowSpec{};
    c.shadow->kind = ShadowSpec::Kind::fixed_text;
    c.shadow->tokens = tokenize_bytes(corpus_text(c.max_seq_len));
  }
  validate(c);
  return c;
}

template <typename A, typename B>
bool equal(const A& a, const B& b) {
  return std::ranges::equal(a, b);
}

template <typename T>
bool same_values(const Model<T>& a, const Model<T>& b) {
  for (std::size_t i = 0; i < a.parameters().size(); ++i)
    if (!equal(a.parameters()[i].value.data(), b.parameters()[i].value.data())) return false;
  return true;
}

}  // namespace

TEST_CASE("byte tokenization") {
  CHECK(tokenize_bytes("ab") == std::vector<int>{kBosToken, 97, 98});
  std::string all;
  for (int b = 0; b < 256; ++b) all.push_back(static_cast<char>(b));
  CHECK(detokenize(tokenize_bytes(all)) == all);
  CHECK_THROWS_AS(detokenize(std::vector<int>{300}), ConfigError);

  const auto path = scratch("corpus.bin");
  write_file(path, all + all);
  const auto toks = ingest_corpus(path.string());
  CHECK(toks.size() == 513);
  CHECK(toks[0] == kBosToken);
  CHECK(toks[256] == 255);

  write_file(scratch("empty.txt"), "");
  CHECK_THROWS_AS(ingest_corpus(scratch("empty.txt").string()), ConfigError);
  CHECK_THROWS_AS(ingest_corpus(scratch("missing.txt").string()), ConfigError);
}

TEST_CASE("windows and split") {
  CHECK(window_count(513, 256) == 2);
  CHECK(window_count(512, 256) == 1);
  CHECK(window_count(257, 256) == 1);
  CHECK(window_count(256, 256) == 0);
  std::vector<int> toks(100);
  for (int i = 0; i < 100; ++i) toks[i] = i;
  Windows w(toks, 8);
  CHECK(w.count() == 12);
  CHECK(w.inputs(2)[0] == 16);
  CHECK(w.targets(2)[0] == 17);
  CHECK(w.targets(11)[7] == 96);

  auto s = split_corpus(toks, 0.05);
  CHECK(s.train.size() == 95);
  CHECK(s.val.size() == 5);
  CHECK(s.val.front() == 95);
  CHECK_THROWS_AS(split_corpus(toks, 0.0), ConfigError);
}

TEST_CASE("learning-rate schedule") {
  TrainConfig c;
  CHECK(lr_at(0, c) == 0.0);
  CHECK(lr_at(c.warmup_steps, c) == doctest::Approx(c.peak_lr).epsilon(1e-15));
  CHECK(lr_at(c.max_steps, c) == 0.0);
  CHECK(lr_at(c.warmup_steps / 2, c) == doctest::Approx(c.peak_lr / 2));
  // Halfway through the decay a half-cycle cosine sits at peak/2.
  CHECK(lr_at(c.warmup_steps + (c.max_steps - c.warmup_steps) / 2, c) == doctest::Approx(c.peak_lr / 2));
  // Continuous across the warmup boundary, non-negative and decaying after it.
  CHECK(std::abs(lr_at(c.warmup_steps - 1, c) - lr_at(c.warmup_steps, c)) < 1.01 * c.peak_lr / double(c.warmup_steps));
  double prev = lr_at(c.warmup_steps, c);
  for (std::size_t s = c.warmup_steps + 1; s <= c.max_steps + 10; ++s) {
    const double lr = lr_at(s, c);
    CHECK(lr >= 0);
    CHECK(lr <= prev);
    prev = lr;
  }
  c.schedule = "constant";
  CHECK(lr_at(c.max_steps - 1, c) == c.peak_lr);
}

TEST_CASE("defaults and validation") {
  TrainConfig c;
  CHECK(c.adam_beta1 == 0.9);
  CHECK(c.adam_beta2 == 0.9999);
  CHECK(c.adam_eps == 1e-8);
  CHECK(c.weight_decay == 0.1);
  CHECK(c.grad_clip_norm == 1.0);
  CHECK(c.cycles == 0.5);
  CHECK(c.peak_lr == 4e-4);
  CHECK(c.batch_size == 16);
  CHECK(c.seq_len == 256);
  CHECK(c.max_steps == 2000);
  CHECK(c.warmup_steps == 100);
  c.warmup_steps = 3000;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = TrainConfig{};
  c.schedule = "linear";
  CHECK_THROWS_AS(validate(c), ConfigError);
}

TEST_CASE("gradient clipping") {
  std::vector<Parameter<double>> ps;
  ps.emplace_back("a", Tensor<double>({2}));
  ps.emplace_back("b", Tensor<double>({1}));
  ps[0].grad = Tensor<double>({2}, {3.0, 0.0});
  ps[1].grad = Tensor<double>({1}, {4.0});
  CHECK(clip_grad_norm(ps, 1.0) == 5.0);
  CHECK(ps[0].grad[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(ps[1].grad[0] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(clip_grad_norm(ps, 1.0) == doctest::Approx(1.0).epsilon(1e-15));
  // Below the threshold nothing moves.
  CHECK(clip_grad_norm(ps, 10.0) == doctest::Approx(1.0));
  CHECK(ps[1].grad[0] == doctest::Approx(0.8).epsilon(1e-15));

  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0, 5);
  for (int k = 0; k < 50; ++k) {
    for (auto& p : ps)
      for (auto& x : p.grad.data()) x = g(rng);
    const double before = clip_grad_norm(ps, 2.0);
    const double after = clip_grad_norm(ps, 1e9);
    CHECK(after <= before * (1 + 1e-12));
    CHECK(after <= 2.0 * (1 + 1e-12));
  }
}

TEST_CASE("AdamW") {
  TrainConfig hp;
  SUBCASE("zero gradients and no decay leave parameters unchanged") {
    hp.weight_decay = 0;
    std::vector<Parameter<double>> ps;
    ps.emplace_back("w", Tensor<double>({2, 2}, {1, -2, 3, 0.5}));
    ps[0].zero_grad();
    AdamState<double> st;
    for (int i = 0; i < 3; ++i) adamw_step(ps, st, hp, 1e-2);
    CHECK(equal(ps[0].value.data(), std::vector<double>{1, -2, 3, 0.5}));
  }
  SUBCASE("one step on a scalar") {
    std::vector<Parameter<double>> ps;
    ps.emplace_back("w", Tensor<double>({1, 1}, {2.0}));
    ps[0].grad = Tensor<double>({1, 1}, {1.0});
    AdamState<double> st;
    const double lr = 1e-3;
    adamw_step(ps, st, hp, lr);
    // m_hat = v_hat = 1: step lr / (1 + eps), plus decay lr * 0.1 * 2.
    const double expected = 2.0 - lr * 0.1 * 2.0 - lr / (1.0 + 1e-8);
    CHECK(ps[0].value[0] == doctest::Approx(expected).epsilon(1e-15));
    CHECK(st.step == 1);
    CHECK(st.m[0][0] == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(st.v[0][0] == doctest::Approx(1e-4).epsilon(1e-12));
  }
  SUBCASE("decay follows the parameter flag") {
    std::vector<Parameter<double>> ps;
    ps.emplace_back("gain", Tensor<double>({3}, {1, 1, 1}), false);
    ps.emplace_back("w", Tensor<double>({1, 3}, {1, 1, 1}));
    for (auto& p : ps) p.zero_grad();
    AdamState<double> st;
    adamw_step(ps, st, hp, 0.5);
    CHECK(ps[0].value[0] == 1.0);
    CHECK(ps[1].value[0] == doctest::Approx(1.0 - 0.5 * 0.1));
  }
  SUBCASE("mismatched state") {
    std::vector<Parameter<double>> ps;
    ps.emplace_back("w", Tensor<double>({2}));
    ps[0].zero_grad();
    AdamState<double> st;
    st.m.emplace_back(Shape{3});
    st.v.emplace_back(Shape{3});
    CHECK_THROWS_AS(adamw_step(ps, st, hp, 0.1), ShapeError);
    ps.emplace_back("x", Tensor<double>({2}));
    CHECK_THROWS_AS(adamw_step(ps, st, hp, 0.1), ShapeError);
  }
}

TEST_CASE("training loop") {
  const auto toks = tokenize_bytes(corpus_text(20000));
  const auto data = split_corpus(toks, 0.05);

  SUBCASE("zero steps keep the initialization") {
    Model<float> m(preset("desk"), 3);
    const Model<float> init(preset("desk"), 3);
    auto r = train(m, small_train(0), data);
    CHECK(r.steps.empty());
    CHECK_FALSE(r.aborted);
    CHECK(same_values(m, init));
    REQUIRE(r.final_val_loss.has_value());
    CHECK(*r.final_val_loss == doctest::Approx(std::log(257.0)).epsilon(0.02));
  }

  SUBCASE("first loss is near ln(257) for every map") {
    for (Variant v : kAllVariants)
      for (std::string_view map : {"uniform", "hybrid"}) {
        CAPTURE(variant_name(v));
        CAPTURE(map);
        Model<float> m(desk_map(map, v), 0);
        auto r = train(m, small_train(1), data);
        REQUIRE(r.steps.size() == 1);
        CHECK(std::abs(r.steps[0].loss - std::log(257.0)) < 0.2);
        CHECK(r.steps[0].lr == 0.0);
      }
  }

  SUBCASE("runs are deterministic and learn") {
    auto run = [&] {
      Model<float> m(desk_map("hybrid", Variant::nonapprox), 5);
      auto cfg = small_train(40);
      cfg.eval_every = 20;
      auto r = train(m, cfg, data);
      return std::make_pair(std::move(m), std::move(r));
    };
    auto [m1, r1] = run();
    auto [m2, r2] = run();
    REQUIRE(r1.steps.size() == 40);
    for (std::size_t i = 0; i < 40; ++i) {
      CHECK(r1.steps[i].loss == r2.steps[i].loss);
      CHECK(r1.steps[i].grad_norm == r2.steps[i].grad_norm);
      CHECK(r1.steps[i].lr == lr_at(i, small_train(40)));
    }
    CHECK(same_values(m1, m2));
    CHECK(m1.version() == 40);
    REQUIRE(r1.evals.size() == 2);
    CHECK(r1.evals[0].step == 20);
    CHECK(r1.evals[1].step == 40);
    CHECK(*r1.final_val_loss == r1.evals[1].val_loss);
    CHECK(*r1.final_val_loss < std::log(257.0) - 0.5);
    for (const auto& s : r1.steps) CHECK(s.grad_norm > 0);
  }

  SUBCASE("a non-finite loss aborts and keeps the last good parameters") {
    Model<float> m(preset("desk"), 1);
    std::vector<Tensor<float>> snapshot;
    TrainHooks hooks;
    hooks.on_step = [&](const StepRecord& r) {
      if (r.step != 1) return;
      for (const auto& p : m.parameters()) snapshot.push_back(p.value);
      m.parameter("final_norm").value[0] = std::numeric_limits<float>::quiet_NaN();
      m.bump_version();
    };
    auto r = train(m, small_train(5), data, hooks);
    CHECK(r.aborted);
    CHECK(r.steps.size() == 2);
    CHECK(r.abort_reason.find("step 2") != std::string::npos);
    for (const auto& p : m.parameters())
      for (float x : p.value.data()) REQUIRE(std::isfinite(x));
    // Restored to the parameters that produced the last finite loss, i.e.
    // before step 1's update.
    bool differs = false;
    for (std::size_t i = 0; i < snapshot.size(); ++i) differs |= !equal(snapshot[i].data(), m.parameters()[i].value.data());
    CHECK(differs);
  }

  SUBCASE("bad configurations") {
    Model<float> m(preset("desk"), 0);
    auto c = small_train(1);
    c.seq_len = 512;
    CHECK_THROWS_AS(train(m, c, data), ConfigError);
    c = small_train(1);
    c.batch_size = 10000;
    CHECK_THROWS_AS(train(m, c, data), ConfigError);
  }
}

TEST_CASE("perplexity") {
  const auto toks = tokenize_bytes(corpus_text(6000));
  const std::vector<std::size_t> contexts = {32, 64, 128, 256};

  Model<double> fresh(preset("desk"), 2);
  auto base = evaluate_perplexity(fresh, toks, contexts);
  REQUIRE(base.size() == 4);
  for (const auto& p : base) {
    CHECK(p.tokens == 23 * 256);
    CHECK(std::abs(std::log(p.perplexity) - std::log(257.0)) < 0.05);
  }

  // A position-wise model scores every target identically at any context.
  auto mlp_cfg = desk_map("uniform", Variant::mlp);
  Model<double> mlp(mlp_cfg, 2);
  auto c = small_train(15);
  train(mlp, c, split_corpus(toks, 0.05));
  auto flat = evaluate_perplexity(mlp, toks, contexts);
  for (const auto& p : flat) CHECK(std::abs(p.perplexity / flat[0].perplexity - 1) <= 1e-6);
  CHECK(flat[0].perplexity < base[0].perplexity);

  // Lengths that do not divide the total use a shorter last chunk.
  const std::vector<std::size_t> odd = {48, 256};
  auto o = evaluate_perplexity(mlp, toks, odd);
  CHECK(o[0].tokens == o[1].tokens);
  CHECK(std::abs(o[0].perplexity / flat[0].perplexity - 1) <= 1e-6);

  // Standard attention does use the context.
  Model<double> std_model(preset("desk"), 2);
  train(std_model, c, split_corpus(toks, 0.05));
  auto s = evaluate_perplexity(std_model, toks, contexts);
  CHECK(s[0].perplexity != s[3].perplexity);

  const std::vector<std::size_t> too_long = {512};
  CHECK_THROWS_AS(evaluate_perplexity(fresh, toks, too_long), ConfigError);
  const std::vector<std::size_t> zero = {0};
  CHECK_THROWS_AS(evaluate_perplexity(fresh, toks, zero), ConfigError);
  CHECK_THROWS_AS(evaluate_perplexity(fresh, std::span<const int>(toks).first(100), contexts), ShapeError);

  CHECK(mean_loss(fresh, toks, 256) == doctest::Approx(base[3].mean_nll).epsilon(1e-12));
}

TEST_CASE("checkpoint round trip for every map") {
  std::vector<ModelConfig> configs;
  for (Variant v : kAllVariants) {
    configs.push_back(desk_map("uniform", v));
    configs.push_back(desk_map("hybrid", v));
  }
  std::vector<int> probe = tokenize_bytes("round trips must be exact");
  const auto path = scratch("rt.ckpt").string();
  for (const auto& cfg : configs) {
    CAPTURE(layer_map_string(cfg.variant_map));
    Model<float> m(cfg, 9);
    m.parameters()[1].value[0] = 1.2345f;
    m.bump_version();
    TrainConfig tc = small_train(7);
    save_checkpoint(m, tc, path, "rng-state");
    auto ck = load_checkpoint<float>(path);
    CHECK(equal(ck.model.logits(probe).data(), m.logits(probe).data()));
    CHECK(ck.model.version() == m.version());
    CHECK(ck.train.max_steps == 7);
    CHECK(ck.rng_state == "rng-state");
    CHECK(ck.model.config().variant_map == cfg.variant_map);
    CHECK(equal(ck.model.shadow_epsilon().data(), m.shadow_epsilon().data()));
  }
  CHECK_FALSE(fs::exists(path + ".tmp"));
}

TEST_CASE("checkpoint precision, manifest and failures") {
  const auto path = scratch("p.ckpt").string();
  Model<double> m(desk_map("hybrid", Variant::rnd_emb_qk), 4);
  save_checkpoint(m, TrainConfig{}, path);
  auto as_double = load_checkpoint<double>(path);
  std::vector<int> probe = {kBosToken, 1, 2, 3};
  CHECK(equal(as_double.model.logits(probe).data(), m.logits(probe).data()));
  auto as_float = load_checkpoint<float>(path);
  auto lf = as_float.model.logits(probe);
  auto ld = m.logits(probe);
  for (std::size_t i = 0; i < lf.size(); ++i) CHECK(std::abs(lf[i] - ld[i]) < 1e-4);

  const auto manifest = nlohmann::json::parse(read_checkpoint_manifest(path));
  CHECK(manifest["dtype"] == "f64");
  CHECK(manifest["model"]["variant_map"][1] == "standard");
  CHECK(manifest["train"]["adam_beta2"] == 0.9999);

  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto expect_format_error = [&](std::string mutated, std::string_view needle) {
    write_file(scratch("bad.ckpt"), mutated);
    try {
      (void)load_checkpoint<double>(scratch("bad.ckpt").string());
      FAIL("no error");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };
  std::string bad = bytes;
  bad[0] = 'X';
  expect_format_error(bad, "magic");
  bad = bytes;
  bad[4] = 2;
  expect_format_error(bad, "version 2");
  expect_format_error(bytes.substr(0, bytes.size() - 3), "truncated");
  expect_format_error(bytes.substr(0, 10), "truncated");
  expect_format_error(bytes + "xx", "trailing");
  CHECK_THROWS_AS(load_checkpoint<double>(scratch("none.ckpt").string()), FormatError);
}

TEST_CASE("config documents") {
  RunConfig r;
  r.model = desk_map("hybrid", Variant::fixed_seq_qk);
  r.train.max_steps = 17;
  r.train.warmup_steps = 3;
  r.train.corpus_path = "x.txt";
  r.model_seed = 4;
  const auto back = run_from_json(to_json(r));
  CHECK(to_json(back).dump() == to_json(r).dump());
  CHECK(back.model.variant_map == r.model.variant_map);

  auto j = nlohmann::ordered_json::parse(R"({"model": {"preset": "desk", "layer_map": "even", "variant": "mlp"},
                                             "train": {"max_steps": 5, "warmup_steps": 2}})");
  auto c = run_from_json(j);
  CHECK(c.model.variant_map == desk_map("even", Variant::mlp).variant_map);
  CHECK(c.train.max_steps == 5);
  CHECK(c.train.batch_size == 16);

  auto bad = [](const char* text) { return run_from_json(nlohmann::ordered_json::parse(text)); };
  CHECK_THROWS_AS(bad(R"({"modle": {}})"), ConfigError);
  CHECK_THROWS_AS(bad(R"({"model": {"d_model": "big"}})"), ConfigError);
  CHECK_THROWS_AS(bad(R"({"model": {"n_layers": -1}})"), ConfigError);
  CHECK_THROWS_AS(bad(R"({"model": {"variant_map": ["standard"]}})"), ConfigError);
  CHECK_THROWS_AS(bad(R"({"model": {"variant_map": ["standard"], "layer_map": "even"}})"), ConfigError);
  CHECK_THROWS_AS(bad(R"({"train": {"warmup_steps": 10, "max_steps": 5}})"), ConfigError);
  CHECK_THROWS_AS(bad(R"({"train": {"schedule": 3}})"), ConfigError);
  CHECK_THROWS_AS(bad(R"({"model": {"preset": "9B"}})"), ConfigError);

  write_file(scratch("c.json"), "{ not json");
  CHECK_THROWS_AS(load_run_config(scratch("c.json").string()), ConfigError);
  CHECK_THROWS_AS(load_run_config(scratch("absent.json").string()), ConfigError);
}
