#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include "datn/config_io.hpp"
#include "datn/cost.hpp"
#include "datn/diagnostics.hpp"
#include "datn/equivalence.hpp"
#include "datn/errors.hpp"
#include "datn/records.hpp"
#include "datn/train.hpp"

#ifndef DATN_DEFAULT_CORPUS
#define DATN_DEFAULT_CORPUS "data/corpus/canterbury_1mb.txt"
#endif

namespace datn::cli {
namespace {

using json = nlohmann::ordered_json;

// ---- shared helpers ------------------------------------------------------

void write_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw ConfigError("cannot write '" + tmp + "'");
    f << content;
    if (!f) throw ConfigError("failed writing '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

void echo_config(std::ostream& err, const json& resolved) { err << "resolved config: " << resolved.dump() << "\n"; }

std::string fmt(double x, int precision = 17) {
  std::ostringstream os;
  os << std::setprecision(precision) << x;
  return os.str();
}

// Flags that override the model section of a config.
struct ModelFlags {
  std::string preset, layer_map, variant, approx_mode;
  void add(CLI::App* app) {
    app->add_option("--preset", preset, "Model preset: desk, 70M, 160M, 500M, 1.7B");
    app->add_option("--layer-map", layer_map,
                    "Named layer map: uniform, hybrid, even, odd, top, middle, bottom, 25%, first, last, bilateral");
    app->add_option("--variant", variant,
                    "Mixer for the non-standard layers: standard, mlp, approx, nonapprox, rnd_emb_qk, fixed_seq_qk, "
                    "static_emb_qk");
    app->add_option("--approx-mode", approx_mode, "Approximate attention normalization: split or shared");
  }
  bool any() const { return !preset.empty() || !layer_map.empty() || !variant.empty() || !approx_mode.empty(); }
};

// Applies model flags to `j` (a model JSON object) before parsing, so the
// config file and flags pass through the same validation.
void apply_model_flags(json& j, const ModelFlags& f) {
  if (!f.preset.empty()) {
    // A new preset replaces the architecture given by the file.
    for (const char* k : {"d_model", "d_ff", "n_layers", "n_heads", "max_seq_len"}) j.erase(k);
    j["preset"] = f.preset;
  }
  if (!f.layer_map.empty() || !f.variant.empty()) {
    std::string map = f.layer_map.empty() ? "uniform" : f.layer_map;
    std::string variant = f.variant.empty() ? "standard" : f.variant;
    if (j.contains("variant_map") && (f.layer_map.empty() || f.variant.empty())) {
      throw ConfigError("the config gives an explicit variant_map; pass both --layer-map and --variant to replace it");
    }
    if (j.contains("layer_map") && f.layer_map.empty()) map = j["layer_map"].get<std::string>();
    if (j.contains("variant") && f.variant.empty()) variant = j["variant"].get<std::string>();
    j.erase("variant_map");
    j["layer_map"] = map;
    j["variant"] = variant;
  }
  if (!f.approx_mode.empty()) j["approx_mode"] = f.approx_mode;
}

// A fixed_seq_qk map without a shadow section reads its text from the corpus.
void default_fixed_shadow(json& j, const std::string& corpus) {
  if (j.contains("shadow") && !j["shadow"].is_null()) return;
  bool fixed = false;
  if (j.contains("variant_map") && j["variant_map"].is_array()) {
    for (const auto& v : j["variant_map"]) fixed |= v == "fixed_seq_qk";
  }
  fixed |= j.value("variant", std::string{}) == "fixed_seq_qk";
  if (fixed) j["shadow"] = {{"kind", "fixed_text"}, {"source_path", corpus}, {"offset", 0}};
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
}

// ---- train ---------------------------------------------------------------

struct TrainArgs {
  std::string config, corpus, out, log, dtype = "f32";
  ModelFlags model;
  std::optional<std::size_t> steps, batch, seq_len, warmup, eval_every;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
};

template <typename T>
int do_train(const RunConfig& rc, const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const auto tokens = ingest_corpus(rc.train.corpus_path);
  const auto data = split_corpus(tokens, rc.train.val_fraction);
  Model<T> model(rc.model, rc.model_seed);
  err << "parameters: " << model.parameter_count() << "\n";

  const std::string log_path = a.log.empty() ? a.out + ".log.jsonl" : a.log;
  const std::string log_tmp = log_path + ".tmp";
  std::ofstream log(log_tmp, std::ios::trunc);
  if (!log) throw ConfigError("cannot write '" + log_tmp + "'");
  TrainHooks hooks;
  hooks.on_step = [&](const StepRecord& r) {
    log << step_record_json(r).dump() << "\n";
    log.flush();
    if (r.step % 50 == 0) err << "step " << r.step << " loss " << fmt(r.loss, 6) << "\n";
  };
  hooks.on_eval = [&](const EvalRecord& r) {
    log << eval_record_json(r).dump() << "\n";
    log.flush();
    err << "eval at step " << r.step << " val_loss " << fmt(r.val_loss, 6) << "\n";
  };
  const TrainResult res = train(model, rc.train, data, hooks);
  log.close();
  std::filesystem::rename(log_tmp, log_path);

  std::ostringstream rng;
  rng << res.rng;
  save_checkpoint(model, rc.train, a.out, rng.str());
  json summary;
  summary["checkpoint"] = a.out;
  summary["log"] = log_path;
  summary["steps"] = res.steps.size();
  summary["final_val_loss"] = res.final_val_loss ? json(*res.final_val_loss) : json(nullptr);
  summary["aborted"] = res.aborted;
  if (res.aborted) summary["abort_reason"] = res.abort_reason;
  out << summary.dump() << "\n";
  if (res.aborted) {
    err << "training aborted (" << res.abort_reason << "); last good parameters saved to " << a.out << "\n";
    return kExitNumerical;
  }
  return kExitOk;
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  json doc = a.config.empty() ? json::object() : read_json_file(a.config);
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  json& tj = doc["train"];
  if (tj.is_null()) tj = json::object();
  if (!a.corpus.empty()) tj["corpus_path"] = a.corpus;
  if (!tj.contains("corpus_path") || tj["corpus_path"] == "") tj["corpus_path"] = DATN_DEFAULT_CORPUS;
  if (a.steps) tj["max_steps"] = *a.steps;
  if (a.batch) tj["batch_size"] = *a.batch;
  if (a.seq_len) tj["seq_len"] = *a.seq_len;
  if (a.warmup) tj["warmup_steps"] = *a.warmup;
  if (a.eval_every) tj["eval_every"] = *a.eval_every;
  if (a.lr) tj["peak_lr"] = *a.lr;
  if (a.seed) {
    tj["seed"] = *a.seed;
    doc["model_seed"] = *a.seed;
  }
  if (a.steps && !a.warmup && tj.value("warmup_steps", std::size_t{100}) > *a.steps) tj["warmup_steps"] = *a.steps;
  const std::string corpus = tj["corpus_path"].get<std::string>();
  json& mj = doc["model"];  // may move the train entry; tj is not used below
  if (mj.is_null()) mj = json::object();
  apply_model_flags(mj, a.model);
  default_fixed_shadow(mj, corpus);

  const RunConfig rc = run_from_json(doc);
  json resolved = to_json(rc);
  resolved["dtype"] = a.dtype;
  echo_config(err, resolved);
  if (a.dtype == "f64") return do_train<double>(rc, a, out, err);
  return do_train<float>(rc, a, out, err);
}

// ---- eval ----------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, corpus, split = "val", out, dtype = "f32";
  std::vector<std::size_t> contexts;
  bool skip = false;
};

template <typename T>
int do_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  auto ck = load_checkpoint<T>(a.checkpoint);
  Model<T> model = a.skip ? skip_transform(ck.model) : std::move(ck.model);
  const std::string corpus = a.corpus.empty() ? ck.train.corpus_path : a.corpus;
  const auto tokens = ingest_corpus(corpus);
  const auto parts = split_corpus(tokens, ck.train.val_fraction);
  const std::vector<int>& slice = a.split == "val" ? parts.val : a.split == "train" ? parts.train : tokens;

  std::vector<std::size_t> contexts = a.contexts;
  if (contexts.empty()) {
    for (std::size_t c : {32, 64, 128, 256})
      if (c <= model.config().max_seq_len) contexts.push_back(c);
  }
  json resolved;
  resolved["checkpoint"] = a.checkpoint;
  resolved["corpus"] = corpus;
  resolved["split"] = a.split;
  resolved["skip"] = a.skip;
  resolved["dtype"] = a.dtype;
  resolved["contexts"] = contexts;
  resolved["model"] = to_json(model.config());
  echo_config(err, resolved);

  std::string lines;
  for (const auto& p : evaluate_perplexity(model, slice, contexts)) lines += perplexity_record_json(p).dump() + "\n";
  out << lines;
  if (!a.out.empty()) write_atomic(a.out, lines);
  return kExitOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  if (a.split != "val" && a.split != "train" && a.split != "all") throw ConfigError("--split must be val, train or all");
  if (a.dtype == "f64") return do_eval<double>(a, out, err);
  return do_eval<float>(a, out, err);
}

// ---- diagnose ------------------------------------------------------------

struct DiagnoseArgs {
  std::string config, checkpoint, eval_file, out, csv, prelogits, dtype = "f64";
  ModelFlags model;
  std::size_t sequences = 8, seq_len = 0, offset = 0;
  std::uint64_t seed = 0;
  bool per_row_entropy = false;
};

template <typename T>
int do_diagnose(const DiagnoseArgs& a, std::ostream& out, std::ostream& err) {
  std::optional<Model<T>> model;
  std::optional<RunConfig> from_config;
  if (!a.config.empty() || a.model.any()) {
    json doc = a.config.empty() ? json::object() : read_json_file(a.config);
    json& mj = doc["model"];
    if (mj.is_null()) mj = json::object();
    apply_model_flags(mj, a.model);
    default_fixed_shadow(mj, DATN_DEFAULT_CORPUS);
    from_config = run_from_json(doc);
  }
  if (!a.checkpoint.empty()) {
    auto ck = load_checkpoint<T>(a.checkpoint);
    if (from_config && to_json(from_config->model).dump() != to_json(ck.model.config()).dump()) {
      throw ConfigError("checkpoint '" + a.checkpoint + "' was built from a different model config");
    }
    model.emplace(std::move(ck.model));
  } else {
    model.emplace(from_config ? from_config->model : preset("desk"), a.seed);
  }

  const ModelConfig& cfg = model->config();
  const std::size_t L = a.seq_len ? a.seq_len : cfg.max_seq_len;
  if (L > cfg.max_seq_len) throw ConfigError("--seq-len exceeds the model's max_seq_len");
  const std::string file = a.eval_file.empty() ? DATN_DEFAULT_CORPUS : a.eval_file;
  const auto tokens = ingest_corpus(file);
  if (a.sequences == 0) throw ConfigError("--sequences must be positive");
  const std::size_t need = a.offset + a.sequences * L;
  if (tokens.size() < need) {
    throw ConfigError("eval file holds " + std::to_string(tokens.size()) + " tokens, " + std::to_string(need) +
                      " needed");
  }

  json resolved;
  resolved["checkpoint"] = a.checkpoint;
  resolved["eval_file"] = file;
  resolved["sequences"] = a.sequences;
  resolved["seq_len"] = L;
  resolved["offset"] = a.offset;
  resolved["per_row_entropy"] = a.per_row_entropy;
  resolved["dtype"] = a.dtype;
  resolved["seed"] = a.seed;
  resolved["model"] = to_json(cfg);
  echo_config(err, resolved);

  ForwardCapture<T> capture;
  Tape<T> tape(false);
  model->forward(tape, std::span<const int>(tokens).subspan(a.offset, a.sequences * L), a.sequences, &capture);
  const auto report = indicator_report(capture, cfg, a.sequences, {.per_row_entropy = a.per_row_entropy});

  const std::string lines = indicator_jsonl(report);
  if (a.out.empty()) out << lines;
  else write_atomic(a.out, lines);
  if (!a.csv.empty()) write_atomic(a.csv, indicator_csv(report));
  if (!a.prelogits.empty()) {
    const bool any = std::ranges::any_of(capture.layers, [](const auto& c) { return !c.prelogits.empty(); });
    write_atomic(a.prelogits, any ? prelogit_jsonl(prelogit_stats(capture)) : std::string{});
  }
  return kExitOk;
}

int cmd_diagnose(const DiagnoseArgs& a, std::ostream& out, std::ostream& err) {
  if (a.dtype == "f32") return do_diagnose<float>(a, out, err);
  return do_diagnose<double>(a, out, err);
}

// ---- cost ----------------------------------------------------------------

struct CostArgs {
  std::vector<std::string> variants = {"all"}, metrics = {"all"};
  std::string stage = "both", out;
  std::vector<std::int64_t> B, L, d, h = {1}, t = {1};
  bool precomputed = false, formula = false;
};

int cmd_cost(const CostArgs& a, std::ostream& out, std::ostream& err) {
  std::vector<Variant> variants;
  for (const auto& v : a.variants) {
    if (v == "all") variants.assign(std::begin(kAllVariants), std::end(kAllVariants));
    else variants.push_back(parse_variant(v));
  }
  std::vector<cost::Metric> metrics;
  for (const auto& m : a.metrics) {
    if (m == "all") metrics.assign(std::begin(cost::kAllMetrics), std::end(cost::kAllMetrics));
    else metrics.push_back(cost::parse_metric(m));
  }
  std::vector<cost::Stage> stages;
  if (a.stage == "both") stages = {cost::Stage::prefill, cost::Stage::decode};
  else stages = {cost::parse_stage(a.stage)};
  if (a.B.empty() || a.L.empty() || a.d.empty()) throw ConfigError("--B, --L and --d are required");

  std::vector<cost::CostQuery> queries;
  for (Variant v : variants)
    for (auto B : a.B)
      for (auto L : a.L)
        for (auto d : a.d)
          for (auto h : a.h)
            for (auto t : a.t)
              for (auto s : stages) queries.push_back({v, B, L, d, h, t, s, a.precomputed});

  json resolved;
  json names = json::array();
  for (Variant v : variants) names.push_back(variant_name(v));
  resolved["variants"] = names;
  json mnames = json::array();
  for (auto m : metrics) mnames.push_back(cost::metric_name(m));
  resolved["metrics"] = mnames;
  resolved["stage"] = a.stage;
  resolved["B"] = a.B;
  resolved["L"] = a.L;
  resolved["d"] = a.d;
  resolved["h"] = a.h;
  resolved["t"] = a.t;
  resolved["precomputed"] = a.precomputed;
  echo_config(err, resolved);

  const auto rows = cost::sweep(queries, metrics);
  if (a.formula) {
    for (const auto& r : rows) {
      err << variant_name(r.query.variant) << " " << cost::metric_name(r.metric);
      if (cost::depends_on_stage(r.metric)) err << " " << cost::stage_name(r.query.stage);
      err << ": " << cost::to_string(r.terms) << " = " << cost::to_string(r.value) << " " << cost::unit(r.metric)
          << "\n";
    }
  }
  if (rows.size() == 1 && a.out.empty()) {
    out << cost::to_string(rows[0].value) << "\n";
    return kExitOk;
  }
  const std::string csv = cost::to_csv(rows);
  if (a.out.empty()) out << csv;
  else write_atomic(a.out, csv);
  return kExitOk;
}

// ---- equiv ---------------------------------------------------------------

struct EquivArgs {
  std::vector<std::string> variants = {"approx", "nonapprox"};
  std::string mode = "both", dtype = "f64", out;
  std::vector<std::size_t> L = {1, 2, 8, 32, 64}, d_head = {1, 4, 16};
  std::size_t heads = 2;
  std::uint64_t seed = 0;
};

int cmd_equiv(const EquivArgs& a, std::ostream& out, std::ostream& err) {
  if (a.dtype != "f32" && a.dtype != "f64") throw ConfigError("--dtype must be f32 or f64");
  std::vector<ApproxMode> modes;
  if (a.mode == "both") modes = {ApproxMode::split, ApproxMode::shared};
  else modes = {parse_approx_mode(a.mode)};
  json resolved{{"variants", a.variants}, {"approx_mode", a.mode}, {"dtype", a.dtype}, {"L", a.L},
                {"d_head", a.d_head},     {"heads", a.heads},       {"seed", a.seed}};
  echo_config(err, resolved);

  bool all = true;
  std::string lines;
  for (const auto& name : a.variants) {
    const Variant v = parse_variant(name);
    const std::vector<ApproxMode> vm = v == Variant::approx ? modes : std::vector<ApproxMode>{ApproxMode::split};
    for (ApproxMode m : vm)
      for (std::size_t L : a.L)
        for (std::size_t dh : a.d_head) {
          EquivalenceQuery q{v, m, L, dh, a.heads, a.seed};
          const auto r = a.dtype == "f64" ? check_recurrent_equivalence<double>(q) : check_recurrent_equivalence<float>(q);
          all &= r.passed;
          json rec{{"variant", name},
                   {"approx_mode", v == Variant::approx ? json(approx_mode_name(m)) : json(nullptr)},
                   {"L", L},
                   {"d_head", dh},
                   {"dtype", a.dtype},
                   {"max_rel_err", r.max_rel_err},
                   {"tolerance", r.tolerance},
                   {"passed", r.passed}};
          lines += rec.dump() + "\n";
        }
  }
  out << lines;
  if (!a.out.empty()) write_atomic(a.out, lines);
  if (!all) err << "parallel and recurrent forms disagree beyond tolerance\n";
  return all ? kExitOk : kExitNumerical;
}

// ---- maps ----------------------------------------------------------------

struct MapsArgs {
  std::string name = "all", variant, out;
  std::size_t layers = 24;
};

int cmd_maps(const MapsArgs& a, std::ostream& out, std::ostream& err) {
  std::vector<std::string> names;
  if (a.name == "all") {
    for (auto n : kLayerMapNames) names.emplace_back(n);
  } else {
    names.push_back(a.name);
  }
  echo_config(err, json{{"name", a.name}, {"layers", a.layers}, {"variant", a.variant}});
  std::string text;
  for (const auto& n : names) {
    const auto ids = standard_layer_ids(n, a.layers);
    std::string set = "{";
    for (std::size_t i = 0; i < ids.size(); ++i) set += (i ? "," : "") + std::to_string(ids[i]);
    set += "}";
    std::string line = names.size() > 1 ? n + ": " + set : set;
    if (!a.variant.empty()) line += "  " + layer_map_string(layer_map_from_name(n, a.layers, parse_variant(a.variant)));
    text += line + "\n";
  }
  out << text;
  if (!a.out.empty()) write_atomic(a.out, text);
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Token-mixer study: train, evaluate, diagnose and cost decoder variants", "datn"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a model on a byte corpus and write a checkpoint");
  train_cmd->add_option("--config", ta.config, "JSON config file (model, model_seed, train)");
  ta.model.add(train_cmd);
  train_cmd->add_option("--corpus", ta.corpus, "Training text; the tail is held out for validation");
  train_cmd->add_option("--steps", ta.steps, "Optimizer steps");
  train_cmd->add_option("--batch", ta.batch, "Sequences per step");
  train_cmd->add_option("--seq-len", ta.seq_len, "Tokens per training sequence");
  train_cmd->add_option("--lr", ta.lr, "Peak learning rate");
  train_cmd->add_option("--warmup", ta.warmup, "Linear warmup steps");
  train_cmd->add_option("--eval-every", ta.eval_every, "Validation interval in steps (0 disables)");
  train_cmd->add_option("--seed", ta.seed, "Seed for initialization and batch order");
  train_cmd->add_option("--dtype", ta.dtype, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  train_cmd->add_option("--out", ta.out, "Checkpoint path")->required();
  train_cmd->add_option("--log", ta.log, "Training log (JSON lines); default <out>.log.jsonl");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Perplexity of a checkpoint at several context lengths");
  eval_cmd->add_option("--checkpoint", ea.checkpoint, "Checkpoint to evaluate")->required();
  eval_cmd->add_option("--corpus", ea.corpus, "Text to score; default the checkpoint's training corpus");
  eval_cmd->add_option("--split", ea.split, "val (held-out tail), train, or all")
      ->check(CLI::IsMember({"val", "train", "all"}));
  eval_cmd->add_option("--contexts", ea.contexts, "Context lengths, comma separated; default 32,64,128,256")
      ->delimiter(',');
  eval_cmd->add_flag("--skip", ea.skip, "Delete the non-standard layers before evaluating");
  eval_cmd->add_option("--dtype", ea.dtype, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  eval_cmd->add_option("--out", ea.out, "Also write the records (JSON lines) here");

  DiagnoseArgs da;
  auto* diag_cmd = app.add_subcommand("diagnose", "Attention indicators and prelogit statistics of one forward");
  diag_cmd->add_option("--checkpoint", da.checkpoint, "Checkpoint to inspect");
  diag_cmd->add_option("--config", da.config, "Config for a fresh model, or to check the checkpoint against");
  da.model.add(diag_cmd);
  diag_cmd->add_option("--seed", da.seed, "Initialization seed when no checkpoint is given");
  diag_cmd->add_option("--eval-file", da.eval_file, "Text whose first sequences are fed to the model");
  diag_cmd->add_option("--sequences", da.sequences, "Sequences averaged over");
  diag_cmd->add_option("--seq-len", da.seq_len, "Tokens per sequence; default max_seq_len");
  diag_cmd->add_option("--offset", da.offset, "Token offset into the eval file");
  diag_cmd->add_flag("--per-row-entropy", da.per_row_entropy, "Report entropy as a mean over rows");
  diag_cmd->add_option("--dtype", da.dtype, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  diag_cmd->add_option("--out", da.out, "Indicator records (JSON lines); default standard output");
  diag_cmd->add_option("--csv", da.csv, "Indicator table as CSV");
  diag_cmd->add_option("--prelogits", da.prelogits, "Prelogit statistics (JSON lines)");

  CostArgs ca;
  auto* cost_cmd = app.add_subcommand("cost", "Analytical per-layer cost of the token mixers");
  cost_cmd->set_help_flag("--help", "Print this help message and exit");  // -h would clash with --h
  cost_cmd->add_option("--variant", ca.variants, "Variants, comma separated, or all")->delimiter(',');
  cost_cmd->add_option("--metric", ca.metrics, "complexity, flops, activation_memory, cache_size, or all")
      ->delimiter(',');
  cost_cmd->add_option("--stage", ca.stage, "prefill, decode, or both")
      ->check(CLI::IsMember({"prefill", "decode", "both"}));
  cost_cmd->add_option("--B", ca.B, "Batch sizes")->delimiter(',');
  cost_cmd->add_option("--L", ca.L, "Sequence lengths")->delimiter(',');
  cost_cmd->add_option("--d", ca.d, "Model widths")->delimiter(',');
  cost_cmd->add_option("--h", ca.h, "Head counts (default 1)")->delimiter(',');
  cost_cmd->add_option("--t", ca.t, "Tensor-parallel degrees (default 1)")->delimiter(',');
  cost_cmd->add_flag("--precomputed", ca.precomputed, "rnd_emb_qk/fixed_seq_qk FLOPs with scores computed ahead");
  cost_cmd->add_flag("--formula", ca.formula, "Print each formula and its value to standard error");
  cost_cmd->add_option("--out", ca.out, "Write CSV here instead of standard output");

  EquivArgs qa;
  auto* equiv_cmd = app.add_subcommand("equiv", "Check recurrent against parallel evaluation");
  equiv_cmd->add_option("--variant", qa.variants, "approx and/or nonapprox, comma separated")->delimiter(',');
  equiv_cmd->add_option("--approx-mode", qa.mode, "split, shared, or both")
      ->check(CLI::IsMember({"split", "shared", "both"}));
  equiv_cmd->add_option("--L", qa.L, "Sequence lengths")->delimiter(',');
  equiv_cmd->add_option("--d-head", qa.d_head, "Head widths")->delimiter(',');
  equiv_cmd->add_option("--heads", qa.heads, "Number of heads");
  equiv_cmd->add_option("--dtype", qa.dtype, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  equiv_cmd->add_option("--seed", qa.seed, "Seed for weights and inputs");
  equiv_cmd->add_option("--out", qa.out, "Also write the records (JSON lines) here");

  MapsArgs ma;
  auto* maps_cmd = app.add_subcommand("maps", "Standard-attention layer ids of the named layer maps");
  maps_cmd->add_option("--name", ma.name, "Map name, or all");
  maps_cmd->add_option("--layers", ma.layers, "Number of layers");
  maps_cmd->add_option("--variant", ma.variant, "Also print the full map with this mixer in the other layers");
  maps_cmd->add_option("--out", ma.out, "Also write the listing here");

  std::vector<const char*> argv;
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train_cmd) return cmd_train(ta, out, err);
    if (*eval_cmd) return cmd_eval(ea, out, err);
    if (*diag_cmd) {
      if (da.checkpoint.empty() && da.config.empty() && !da.model.any()) {
        err << "diagnose: give --checkpoint, --config or model flags\n";
        return kExitUsage;
      }
      return cmd_diagnose(da, out, err);
    }
    if (*cost_cmd) return cmd_cost(ca, out, err);
    if (*equiv_cmd) return cmd_equiv(qa, out, err);
    if (*maps_cmd) return cmd_maps(ma, out, err);
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace datn::cli
