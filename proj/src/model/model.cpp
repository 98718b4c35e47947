#include "datn/model.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <random>

#include "datn/errors.hpp"
#include "datn/ops.hpp"

namespace datn {

std::vector<std::size_t> standard_layer_ids(std::string_view name, std::size_t n) {
  std::vector<std::size_t> ids;
  auto range = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i <= hi && i <= n; ++i) ids.push_back(i);
  };
  const std::size_t half = n / 2, quarter = std::max<std::size_t>(1, n / 4);
  if (name == "even" || name == "hybrid") {
    for (std::size_t i = 2; i <= n; i += 2) ids.push_back(i);
  } else if (name == "odd") {
    for (std::size_t i = 1; i <= n; i += 2) ids.push_back(i);
  } else if (name == "top") {
    range(1, std::max<std::size_t>(1, half));
  } else if (name == "bottom") {
    range(half + 1, n);
  } else if (name == "middle") {
    range(1, quarter);
    range(std::max(quarter + 1, n - quarter + 1), n);
  } else if (name == "25%") {
    for (std::size_t i = 4; i <= n; i += 4) ids.push_back(i);
    if (ids.empty()) ids.push_back(n);
  } else if (name == "first") {
    ids.push_back(1);
  } else if (name == "last") {
    ids.push_back(n);
  } else if (name == "bilateral") {
    ids.push_back(1);
    if (n > 1) ids.push_back(n);
  } else if (name != "uniform") {
    throw ConfigError("unknown layer map '" + std::string(name) + "'");
  }
  return ids;
}

LayerMap layer_map_from_name(std::string_view name, std::size_t n_layers, Variant simple) {
  if (n_layers == 0) throw ConfigError("layer map needs at least one layer");
  LayerMap map(n_layers, simple);
  for (std::size_t id : standard_layer_ids(name, n_layers)) map[id - 1] = Variant::standard;
  return map;
}

std::string layer_map_string(const LayerMap& map) {
  std::string s;
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (i) s += ",";
    s += variant_name(map[i]);
  }
  return s;
}

std::string_view shadow_kind_name(ShadowSpec::Kind k) {
  return k == ShadowSpec::Kind::fixed_text ? "fixed_text" : "random_embeddings";
}

ShadowSpec::Kind parse_shadow_kind(std::string_view name) {
  if (name == "random_embeddings") return ShadowSpec::Kind::random_embeddings;
  if (name == "fixed_text") return ShadowSpec::Kind::fixed_text;
  throw ConfigError("unknown shadow kind '" + std::string(name) + "'");
}

void resolve_shadow_tokens(ShadowSpec& spec) {
  std::ifstream in(spec.source_path, std::ios::binary);
  if (!in) throw ConfigError("cannot open shadow text '" + spec.source_path + "'");
  in.seekg(static_cast<std::streamoff>(spec.offset));
  std::vector<char> bytes(spec.length);
  in.read(bytes.data(), static_cast<std::streamsize>(spec.length));
  if (static_cast<std::size_t>(in.gcount()) != spec.length) {
    throw ConfigError("shadow text '" + spec.source_path + "' has fewer than " +
                      std::to_string(spec.offset + spec.length) + " bytes");
  }
  spec.tokens.clear();
  for (char c : bytes) spec.tokens.push_back(static_cast<unsigned char>(c));
}

ModelConfig preset(std::string_view name) {
  ModelConfig c;
  auto set = [&](std::size_t d, std::size_t ff, std::size_t layers, std::size_t heads, std::size_t len) {
    c.d_model = d;
    c.d_ff = ff;
    c.n_layers = layers;
    c.n_heads = heads;
    c.max_seq_len = len;
    c.variant_map.assign(layers, Variant::standard);
  };
  if (name == "70M") set(512, 2048, 6, 8, 2048);
  else if (name == "160M") set(768, 3072, 12, 12, 2048);
  else if (name == "500M") set(896, 4864, 24, 14, 2048);
  else if (name == "1.7B") set(2048, 6144, 28, 16, 2048);
  else if (name == "desk") set(64, 256, 4, 2, 256);
  else throw ConfigError("unknown preset '" + std::string(name) + "'");
  return c;
}

void validate(ModelConfig& cfg) {
  if (cfg.n_layers < 1) throw ConfigError("n_layers must be at least 1");
  if (cfg.variant_map.size() != cfg.n_layers) {
    throw ConfigError("variant map has " + std::to_string(cfg.variant_map.size()) + " entries for " +
                      std::to_string(cfg.n_layers) + " layers");
  }
  if (cfg.n_heads == 0 || cfg.d_model % cfg.n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(cfg.d_model) + " is not divisible by n_heads " +
                      std::to_string(cfg.n_heads));
  }
  if (cfg.vocab_size == 0 || cfg.d_ff == 0 || cfg.max_seq_len == 0) {
    throw ConfigError("vocab_size, d_ff and max_seq_len must be positive");
  }
  if (!(cfg.norm_eps > 0) || !(cfg.rope_base > 0)) throw ConfigError("norm_eps and rope_base must be positive");

  const bool rnd = std::ranges::count(cfg.variant_map, Variant::rnd_emb_qk) > 0;
  const bool fixed = std::ranges::count(cfg.variant_map, Variant::fixed_seq_qk) > 0;
  if (rnd && fixed) throw ConfigError("one model cannot mix rnd_emb_qk and fixed_seq_qk layers");
  if (!rnd && !fixed) return;
  if (!cfg.shadow) cfg.shadow = ShadowSpec{};
  ShadowSpec& s = *cfg.shadow;
  if (rnd) {
    if (s.kind != ShadowSpec::Kind::random_embeddings) {
      throw ConfigError("rnd_emb_qk layers need a random_embeddings shadow");
    }
    if (!(s.sigma > 0)) throw ConfigError("shadow sigma must be positive");
    return;
  }
  if (s.kind != ShadowSpec::Kind::fixed_text) throw ConfigError("fixed_seq_qk layers need a fixed_text shadow");
  if (s.tokens.empty() && !s.source_path.empty()) {
    if (s.length == 0) s.length = cfg.max_seq_len;
    resolve_shadow_tokens(s);
  }
  if (s.tokens.size() < cfg.max_seq_len) {
    throw ConfigError("fixed shadow text holds " + std::to_string(s.tokens.size()) +
                      " tokens, fewer than max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  for (int t : s.tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size) throw ConfigError("shadow token outside vocabulary");
  }
}

std::size_t count_parameters(const ModelConfig& cfg) {
  const std::size_t d = cfg.d_model;
  std::size_t n = cfg.vocab_size * d * (cfg.tie_embeddings ? 1 : 2) + d;
  for (Variant v : cfg.variant_map) {
    n += 2 * d + 3 * d * cfg.d_ff;
    if (v == Variant::mlp) {
      n += 3 * d * gated_mlp_width(d) + gated_mlp_pad_vectors(d) * d;
    } else {
      n += 4 * d * d;
    }
  }
  return n;
}

template <typename T>
Model<T>::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) {
  validate(cfg_);
  const std::size_t d = cfg_.d_model, f = cfg_.d_ff;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  auto add = [&](std::string name, Shape shape, char init) {
    Tensor<T> t(shape);
    for (auto& x : t.data()) {
      x = init == 'n' ? static_cast<T>(normal(rng)) : init == '1' ? T{1} : T{0};
    }
    params_.emplace_back(std::move(name), std::move(t), shape.size() == 2);
    return params_.size() - 1;
  };

  embed_ = add("embed", {cfg_.vocab_size, d}, 'n');
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    LayerParams lp{};
    lp.attn_norm = add(p + "attn_norm", {d}, '1');
    if (cfg_.variant_map[l] == Variant::mlp) {
      const std::size_t w = gated_mlp_width(d), pads = gated_mlp_pad_vectors(d);
      lp.gate = add(p + "mix.gate", {d, w}, 'n');
      lp.up = add(p + "mix.up", {d, w}, 'n');
      lp.down = add(p + "mix.down", {w, d}, 'n');
      if (pads >= 1) lp.bias = add(p + "mix.bias", {d}, '0');
      if (pads >= 2) lp.gain = add(p + "mix.gain", {d}, '1');
    } else {
      lp.wq = add(p + "wq", {d, d}, 'n');
      lp.wk = add(p + "wk", {d, d}, 'n');
      lp.wv = add(p + "wv", {d, d}, 'n');
      lp.wo = add(p + "wo", {d, d}, 'n');
    }
    lp.ffn_norm = add(p + "ffn_norm", {d}, '1');
    lp.ffn_gate = add(p + "ffn.gate", {d, f}, 'n');
    lp.ffn_up = add(p + "ffn.up", {d, f}, 'n');
    lp.ffn_down = add(p + "ffn.down", {f, d}, 'n');
    layers_.push_back(lp);
  }
  final_norm_ = add("final_norm", {d}, '1');
  if (!cfg_.tie_embeddings) add("lm_head", {cfg_.vocab_size, d}, 'n');

  if (cfg_.shadow && cfg_.shadow->kind == ShadowSpec::Kind::random_embeddings && needs_shadow()) {
    std::mt19937_64 srng(cfg_.shadow->seed);
    std::normal_distribution<double> eps(0.0, cfg_.shadow->sigma);
    shadow_epsilon_ = Tensor<T>({cfg_.max_seq_len, d});
    for (auto& x : shadow_epsilon_.data()) x = static_cast<T>(eps(srng));
  }
}

template <typename T>
Parameter<T>& Model<T>::parameter(std::string_view name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw ConfigError("no parameter named '" + std::string(name) + "'");
}

template <typename T>
const Parameter<T>& Model<T>::parameter(std::string_view name) const {
  return const_cast<Model&>(*this).parameter(name);
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
void Model<T>::set_shadow_epsilon(Tensor<T> eps) {
  if (eps.shape() != Shape{cfg_.max_seq_len, cfg_.d_model}) {
    throw ShapeError("shadow epsilon must be " + shape_string({cfg_.max_seq_len, cfg_.d_model}) + ", got " +
                     shape_string(eps.shape()));
  }
  shadow_epsilon_ = std::move(eps);
  bump_version();
}

template <typename T>
bool Model<T>::needs_shadow() const {
  return std::ranges::any_of(cfg_.variant_map, [](Variant v) { return uses_shadow(v); });
}

template <typename T>
Var<T> Model<T>::bind(Tape<T>& tape, std::size_t index) const {
  // Gradients are written back only on grad-enabled tapes, which belong to
  // the single training writer.
  return tape.parameter(const_cast<Parameter<T>&>(params_[index]));
}

template <typename T>
AttnVars<T> Model<T>::mixer_vars(Tape<T>& tape, const LayerParams& lp) const {
  AttnVars<T> w;
  auto maybe = [&](std::size_t i) { return i == LayerParams::npos ? Var<T>{} : bind(tape, i); };
  w.w_q = maybe(lp.wq);
  w.w_k = maybe(lp.wk);
  w.w_v = maybe(lp.wv);
  w.w_o = maybe(lp.wo);
  w.w_gate = maybe(lp.gate);
  w.w_up = maybe(lp.up);
  w.w_down = maybe(lp.down);
  w.bias = maybe(lp.bias);
  w.gain = maybe(lp.gain);
  return w;
}

template <typename T>
Var<T> Model<T>::ffn(Tape<T>& tape, const LayerParams& lp, const Var<T>& h) const {
  Var<T> n = rms_norm(h, bind(tape, lp.ffn_norm), static_cast<T>(cfg_.norm_eps));
  Var<T> a = mul(silu(matmul(n, bind(tape, lp.ffn_gate))), matmul(n, bind(tape, lp.ffn_up)));
  return matmul(a, bind(tape, lp.ffn_down));
}

template <typename T>
Var<T> Model<T>::shadow_input(Tape<T>& tape) const {
  if (cfg_.shadow->kind == ShadowSpec::Kind::random_embeddings) return tape.constant(shadow_epsilon_);
  const auto& toks = cfg_.shadow->tokens;
  return embedding(bind(tape, embed_), std::span<const int>(toks.data(), cfg_.max_seq_len));
}

template <typename T>
std::vector<Var<T>> Model<T>::shadow_states(Tape<T>& tape) const {
  std::size_t deepest = 0;
  for (std::size_t l = 0; l < cfg_.n_layers; ++l)
    if (uses_shadow(cfg_.variant_map[l])) deepest = l + 1;
  std::vector<Var<T>> xs;
  if (deepest == 0) return xs;
  Var<T> x = shadow_input(tape);
  const T eps = static_cast<T>(cfg_.norm_eps);
  for (std::size_t l = 0; l < deepest; ++l) {
    xs.push_back(x);
    if (l + 1 == deepest) break;
    const LayerParams& lp = layers_[l];
    AttnOptions opt;
    opt.n_heads = cfg_.n_heads;
    opt.rope_base = cfg_.rope_base;
    opt.layer = static_cast<long>(l);
    const Variant v = cfg_.variant_map[l] == Variant::mlp ? Variant::mlp : Variant::standard;
    Var<T> n = rms_norm(x, bind(tape, lp.attn_norm), eps);
    x = add(x, token_mixer(v, n, mixer_vars(tape, lp), opt));
    x = add(x, ffn(tape, lp, x));
  }
  return xs;
}

template <typename T>
std::vector<Tensor<T>> Model<T>::shadow_forward() const {
  std::lock_guard lock(cache_.mu);
  if (!cache_.valid || cache_.version != version_) {
    Tape<T> tape(false);
    cache_.states.clear();
    for (const Var<T>& x : shadow_states(tape)) cache_.states.push_back(x.value());
    cache_.states.resize(cfg_.n_layers);
    cache_.version = version_;
    cache_.valid = true;
  }
  return cache_.states;
}

template <typename T>
Var<T> Model<T>::forward(Tape<T>& tape, std::span<const int> tokens, std::size_t batch,
                         ForwardCapture<T>* capture) const {
  if (batch == 0 || tokens.size() % batch != 0 || tokens.empty()) {
    throw ShapeError("cannot split " + std::to_string(tokens.size()) + " tokens into " + std::to_string(batch) +
                     " equal sequences");
  }
  const std::size_t len = tokens.size() / batch;
  if (len > cfg_.max_seq_len) {
    throw ShapeError("sequence length " + std::to_string(len) + " exceeds max_seq_len " +
                     std::to_string(cfg_.max_seq_len));
  }
  const T eps = static_cast<T>(cfg_.norm_eps);

  std::vector<Var<T>> shadow;
  if (needs_shadow()) {
    if (tape.grad_enabled()) {
      shadow = shadow_states(tape);
    } else {
      for (const Tensor<T>& x : shadow_forward()) shadow.push_back(x.empty() ? Var<T>{} : tape.constant(x));
    }
  }

  Var<T> table = bind(tape, embed_);
  Var<T> h = embedding(table, tokens);
  const Var<T> e = h;
  if (capture) capture->layers.assign(cfg_.n_layers, {});

  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const LayerParams& lp = layers_[l];
    const Variant v = cfg_.variant_map[l];
    AttnOptions opt;
    opt.n_heads = cfg_.n_heads;
    opt.batch = batch;
    opt.approx_mode = cfg_.approx_mode;
    opt.rope_base = cfg_.rope_base;
    opt.layer = static_cast<long>(l);
    opt.capture = capture != nullptr;
    Var<T> gain = bind(tape, lp.attn_norm);
    Var<T> qk;
    if (uses_shadow(v)) qk = rms_norm(slice_rows(shadow[l], 0, len), gain, eps);
    if (v == Variant::static_emb_qk) qk = rms_norm(e, gain, eps);
    Var<T> mixed = token_mixer(v, rms_norm(h, gain, eps), mixer_vars(tape, lp), opt, qk,
                               capture ? &capture->layers[l] : nullptr);
    h = add(h, mixed);
    h = add(h, ffn(tape, lp, h));
  }

  Var<T> out = rms_norm(h, bind(tape, final_norm_), eps);
  Var<T> head = cfg_.tie_embeddings ? table : bind(tape, params_.size() - 1);
  return matmul(out, head, Trans::no, Trans::yes);
}

template <typename T>
Tensor<T> Model<T>::logits(std::span<const int> tokens, ForwardCapture<T>* capture) const {
  Tape<T> tape(false);
  return forward(tape, tokens, 1, capture).value();
}

template <typename T>
Model<T> skip_transform(const Model<T>& model) {
  const ModelConfig& src = model.config();
  ModelConfig cfg = src;
  std::vector<std::size_t> kept;
  for (std::size_t l = 0; l < src.n_layers; ++l)
    if (src.variant_map[l] == Variant::standard) kept.push_back(l);
  if (kept.empty()) throw ConfigError("skip transform needs at least one standard layer");
  cfg.n_layers = kept.size();
  cfg.variant_map.assign(kept.size(), Variant::standard);
  cfg.shadow.reset();

  Model<T> out(cfg, model.seed());
  auto copy = [&](const std::string& from, const std::string& to) {
    out.parameter(to).value = model.parameter(from).value;
  };
  copy("embed", "embed");
  copy("final_norm", "final_norm");
  if (!cfg.tie_embeddings) copy("lm_head", "lm_head");
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const std::string a = "layers." + std::to_string(kept[i]) + ".", b = "layers." + std::to_string(i) + ".";
    for (const char* n : {"attn_norm", "wq", "wk", "wv", "wo", "ffn_norm", "ffn.gate", "ffn.up", "ffn.down"}) {
      copy(a + n, b + n);
    }
  }
  out.set_version(model.version());
  return out;
}

template class Model<float>;
template class Model<double>;
template Model<float> skip_transform<float>(const Model<float>&);
template Model<double> skip_transform<double>(const Model<double>&);

}  // namespace datn
