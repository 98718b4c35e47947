#pragma once

// JSON form of ModelConfig, ShadowSpec and TrainConfig. The schema is
// described in docs/config.md.

#include <string>

#include <json.hpp>

#include "datn/model.hpp"
#include "datn/train.hpp"

namespace datn {

struct RunConfig {
  ModelConfig model = preset("desk");
  TrainConfig train;
  std::uint64_t model_seed = 0;
};

nlohmann::ordered_json to_json(const ShadowSpec& s);
nlohmann::ordered_json to_json(const ModelConfig& c);
nlohmann::ordered_json to_json(const TrainConfig& c);
nlohmann::ordered_json to_json(const RunConfig& c);

/// Unknown keys and wrongly typed values throw ConfigError. Missing keys keep
/// their defaults. A model object may name a "preset" that the other keys
/// then override, and may give the map as "variant_map" (a list of variant
/// names) or as "layer_map" plus "variant".
ShadowSpec shadow_from_json(const nlohmann::ordered_json& j);
ModelConfig model_from_json(const nlohmann::ordered_json& j);
TrainConfig train_from_json(const nlohmann::ordered_json& j);
RunConfig run_from_json(const nlohmann::ordered_json& j);

/// Parses a file; ConfigError when it is unreadable or not JSON.
RunConfig load_run_config(const std::string& path);

}  // namespace datn
