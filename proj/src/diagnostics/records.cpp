#include "datn/records.hpp"

#include <sstream>

namespace datn {

using json = nlohmann::ordered_json;

namespace {

json opt(const std::optional<double>& x) { return x ? json(*x) : json(nullptr); }

void fill(json& j, const Indicators& v) {
  j["entropy"] = opt(v.entropy);
  j["conc"] = v.conc;
  j["head_div"] = opt(v.head_div);
  j["sink"] = v.sink;
  for (std::size_t n = 0; n <= kLocalFocusMax; ++n) j["loc_foc" + std::to_string(n)] = opt(v.loc_foc[n]);
}

std::string cell(const std::optional<double>& x) {
  if (!x) return "";
  std::ostringstream os;
  os.precision(17);
  os << *x;
  return os.str();
}

void csv_row(std::ostringstream& os, std::string_view view, std::size_t layer, const std::string& head,
             const Indicators& v) {
  os << view << "," << layer << "," << head << "," << cell(v.entropy) << "," << cell(v.conc) << ","
     << cell(v.head_div) << "," << cell(v.sink);
  for (const auto& f : v.loc_foc) os << "," << cell(f);
  os << "\n";
}

}  // namespace

json head_record_json(const HeadRecord& r) {
  json j;
  j["layer"] = r.layer;
  j["head"] = r.head;
  fill(j, r.values);
  return j;
}

json layer_record_json(const LayerRecord& r) {
  json j;
  j["layer"] = r.layer;
  j["head"] = nullptr;
  fill(j, r.normalized);
  return j;
}

json prelogit_record_json(const PrelogitLayerStats& s) {
  json j;
  j["layer"] = s.layer;
  j["count"] = s.count;
  j["min"] = s.min;
  const char* names[] = {"q01", "q25", "q50", "q75", "q99"};
  for (std::size_t k = 0; k < s.quantiles.size(); ++k) j[names[k]] = s.quantiles[k];
  j["max"] = s.max;
  j["max_abs"] = s.max_abs;
  return j;
}

std::string indicator_jsonl(const IndicatorReport& report) {
  std::string out;
  for (const auto& h : report.heads) out += head_record_json(h).dump() + "\n";
  for (const auto& l : report.layers) out += layer_record_json(l).dump() + "\n";
  return out;
}

std::string indicator_csv(const IndicatorReport& report) {
  std::ostringstream os;
  os << "view,layer,head,entropy,conc,head_div,sink,loc_foc0,loc_foc1,loc_foc2,loc_foc3\n";
  for (const auto& h : report.heads) csv_row(os, "head", h.layer, std::to_string(h.head), h.values);
  for (const auto& l : report.layers) csv_row(os, "layer_raw", l.layer, "", l.raw);
  for (const auto& l : report.layers) csv_row(os, "layer_normalized", l.layer, "", l.normalized);
  return os.str();
}

std::string prelogit_jsonl(const std::vector<PrelogitLayerStats>& stats) {
  std::string out;
  for (const auto& s : stats) out += prelogit_record_json(s).dump() + "\n";
  return out;
}

json step_record_json(const StepRecord& r) {
  return {{"step", r.step}, {"loss", r.loss}, {"lr", r.lr}, {"grad_norm", r.grad_norm}, {"elapsed_s", r.elapsed_s}};
}

json eval_record_json(const EvalRecord& r) {
  return {{"step", r.step}, {"val_loss", r.val_loss}, {"elapsed_s", r.elapsed_s}};
}

json perplexity_record_json(const PerplexityPoint& p) {
  return {{"context", p.context}, {"mean_nll", p.mean_nll}, {"perplexity", p.perplexity}, {"tokens", p.tokens}};
}

}  // namespace datn
