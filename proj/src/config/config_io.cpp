#include "datn/config_io.hpp"

#include <fstream>
#include <set>

#include "datn/errors.hpp"

namespace datn {

using json = nlohmann::ordered_json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, std::string_view what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.contains(k)) throw ConfigError("unknown key '" + k + "' in " + std::string(what));
  }
}

template <typename V>
void read(const json& j, const char* key, V& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    if constexpr (std::is_same_v<V, bool>) {
      if (!it->is_boolean()) throw ConfigError("");
    } else if constexpr (std::is_unsigned_v<V>) {
      if (it->is_number_integer() && it->template get<long long>() < 0) throw ConfigError("");
      if (!it->is_number_integer()) throw ConfigError("");
    } else if constexpr (std::is_floating_point_v<V>) {
      if (!it->is_number()) throw ConfigError("");
    } else if constexpr (std::is_same_v<V, std::string>) {
      if (!it->is_string()) throw ConfigError("");
    }
    out = it->template get<V>();
  } catch (const std::exception&) {
    throw ConfigError(std::string("key '") + key + "' has the wrong type");
  }
}

}  // namespace

json to_json(const ShadowSpec& s) {
  json j;
  j["kind"] = shadow_kind_name(s.kind);
  j["sigma"] = s.sigma;
  j["seed"] = s.seed;
  j["source_path"] = s.source_path;
  j["offset"] = s.offset;
  j["length"] = s.length;
  j["tokens"] = s.tokens;
  return j;
}

json to_json(const ModelConfig& c) {
  json j;
  j["vocab_size"] = c.vocab_size;
  j["d_model"] = c.d_model;
  j["d_ff"] = c.d_ff;
  j["n_layers"] = c.n_layers;
  j["n_heads"] = c.n_heads;
  j["max_seq_len"] = c.max_seq_len;
  j["rope_base"] = c.rope_base;
  j["norm_eps"] = c.norm_eps;
  json map = json::array();
  for (Variant v : c.variant_map) map.push_back(variant_name(v));
  j["variant_map"] = map;
  j["shadow"] = c.shadow ? to_json(*c.shadow) : json(nullptr);
  j["tie_embeddings"] = c.tie_embeddings;
  j["approx_mode"] = approx_mode_name(c.approx_mode);
  return j;
}

json to_json(const TrainConfig& c) {
  json j;
  j["max_steps"] = c.max_steps;
  j["batch_size"] = c.batch_size;
  j["seq_len"] = c.seq_len;
  j["peak_lr"] = c.peak_lr;
  j["warmup_steps"] = c.warmup_steps;
  j["schedule"] = c.schedule;
  j["cycles"] = c.cycles;
  j["adam_beta1"] = c.adam_beta1;
  j["adam_beta2"] = c.adam_beta2;
  j["adam_eps"] = c.adam_eps;
  j["weight_decay"] = c.weight_decay;
  j["grad_clip_norm"] = c.grad_clip_norm;
  j["seed"] = c.seed;
  j["eval_every"] = c.eval_every;
  j["corpus_path"] = c.corpus_path;
  j["val_fraction"] = c.val_fraction;
  return j;
}

json to_json(const RunConfig& c) {
  json j;
  j["model"] = to_json(c.model);
  j["model_seed"] = c.model_seed;
  j["train"] = to_json(c.train);
  return j;
}

ShadowSpec shadow_from_json(const json& j) {
  check_keys(j, {"kind", "sigma", "seed", "source_path", "offset", "length", "tokens"}, "shadow");
  ShadowSpec s;
  std::string kind = std::string(shadow_kind_name(s.kind));
  read(j, "kind", kind);
  s.kind = parse_shadow_kind(kind);
  read(j, "sigma", s.sigma);
  read(j, "seed", s.seed);
  read(j, "source_path", s.source_path);
  read(j, "offset", s.offset);
  read(j, "length", s.length);
  if (auto it = j.find("tokens"); it != j.end()) {
    if (!it->is_array()) throw ConfigError("shadow tokens must be an array");
    for (const auto& t : *it) {
      if (!t.is_number_integer()) throw ConfigError("shadow tokens must be integers");
      s.tokens.push_back(t.get<int>());
    }
  }
  return s;
}

ModelConfig model_from_json(const json& j) {
  check_keys(j,
             {"preset", "vocab_size", "d_model", "d_ff", "n_layers", "n_heads", "max_seq_len", "rope_base", "norm_eps",
              "variant_map", "layer_map", "variant", "shadow", "tie_embeddings", "approx_mode"},
             "model");
  std::string name = "desk";
  read(j, "preset", name);
  ModelConfig c = preset(name);
  read(j, "vocab_size", c.vocab_size);
  read(j, "d_model", c.d_model);
  read(j, "d_ff", c.d_ff);
  read(j, "n_layers", c.n_layers);
  read(j, "n_heads", c.n_heads);
  read(j, "max_seq_len", c.max_seq_len);
  read(j, "rope_base", c.rope_base);
  read(j, "norm_eps", c.norm_eps);
  read(j, "tie_embeddings", c.tie_embeddings);
  std::string mode(approx_mode_name(c.approx_mode));
  read(j, "approx_mode", mode);
  c.approx_mode = parse_approx_mode(mode);

  if (j.contains("variant_map") && (j.contains("layer_map") || j.contains("variant"))) {
    throw ConfigError("give either variant_map or layer_map/variant, not both");
  }
  if (auto it = j.find("variant_map"); it != j.end()) {
    if (!it->is_array()) throw ConfigError("variant_map must be an array of variant names");
    c.variant_map.clear();
    for (const auto& v : *it) {
      if (!v.is_string()) throw ConfigError("variant_map entries must be strings");
      c.variant_map.push_back(parse_variant(v.get<std::string>()));
    }
  } else {
    std::string map = "uniform", variant = "standard";
    read(j, "layer_map", map);
    read(j, "variant", variant);
    c.variant_map = layer_map_from_name(map, c.n_layers, parse_variant(variant));
  }
  if (auto it = j.find("shadow"); it != j.end() && !it->is_null()) c.shadow = shadow_from_json(*it);
  validate(c);
  return c;
}

TrainConfig train_from_json(const json& j) {
  check_keys(j,
             {"max_steps", "batch_size", "seq_len", "peak_lr", "warmup_steps", "schedule", "cycles", "adam_beta1",
              "adam_beta2", "adam_eps", "weight_decay", "grad_clip_norm", "seed", "eval_every", "corpus_path",
              "val_fraction"},
             "train");
  TrainConfig c;
  read(j, "max_steps", c.max_steps);
  read(j, "batch_size", c.batch_size);
  read(j, "seq_len", c.seq_len);
  read(j, "peak_lr", c.peak_lr);
  read(j, "warmup_steps", c.warmup_steps);
  read(j, "schedule", c.schedule);
  read(j, "cycles", c.cycles);
  read(j, "adam_beta1", c.adam_beta1);
  read(j, "adam_beta2", c.adam_beta2);
  read(j, "adam_eps", c.adam_eps);
  read(j, "weight_decay", c.weight_decay);
  read(j, "grad_clip_norm", c.grad_clip_norm);
  read(j, "seed", c.seed);
  read(j, "eval_every", c.eval_every);
  read(j, "corpus_path", c.corpus_path);
  read(j, "val_fraction", c.val_fraction);
  validate(c);
  return c;
}

RunConfig run_from_json(const json& j) {
  check_keys(j, {"model", "model_seed", "train"}, "config");
  RunConfig r;
  if (auto it = j.find("model"); it != j.end()) r.model = model_from_json(*it);
  read(j, "model_seed", r.model_seed);
  if (auto it = j.find("train"); it != j.end()) r.train = train_from_json(*it);
  return r;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return run_from_json(j);
}

}  // namespace datn
