#pragma once

// Line-delimited JSON and CSV forms of the diagnostics and training records.

#include <string>
#include <vector>

#include <json.hpp>

#include "datn/diagnostics.hpp"
#include "datn/train.hpp"

namespace datn {

/// Exactly {layer, head, entropy, conc, head_div, sink, loc_foc0..loc_foc3};
/// undefined values are null.
nlohmann::ordered_json head_record_json(const HeadRecord& r);
/// Same fields with head = null, carrying the plot-normalized values.
nlohmann::ordered_json layer_record_json(const LayerRecord& r);
/// {layer, count, min, q01, q25, q50, q75, q99, max, max_abs}.
nlohmann::ordered_json prelogit_record_json(const PrelogitLayerStats& s);

/// One line per head record, then one per layer record.
std::string indicator_jsonl(const IndicatorReport& report);
/// Columns: view (head, layer_raw, layer_normalized), layer, head, the
/// indicator fields. Empty cells for undefined values.
std::string indicator_csv(const IndicatorReport& report);
std::string prelogit_jsonl(const std::vector<PrelogitLayerStats>& stats);

nlohmann::ordered_json step_record_json(const StepRecord& r);
nlohmann::ordered_json eval_record_json(const EvalRecord& r);
nlohmann::ordered_json perplexity_record_json(const PerplexityPoint& p);

}  // namespace datn
