#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "fpb/datasets.hpp"
#include "fpb/losses.hpp"
#include "fpb/model.hpp"
#include "fpb/pipeline.hpp"
#include "fpb/regularization.hpp"

namespace fpb {

struct DataConfig {
  std::string root;  // empty: FPB_DATA_ROOT
  bool cache_index = true;
  int image_cache_mb = 2048;
};

struct EvalConfig {
  int batch_size = 32;
  int max_rank = 50;
  bool per_query = false;
  int activation_maps = 0;  // images to dump heat maps for
};

// Everything a command can be configured with.
struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  SpectralPenaltyConfig regularization;
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;
  ToySpec toy;

  void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
// Strict: every key must be known and every value must have the default's
// type. Missing keys keep their defaults.
RunConfig run_config_from_json(const nlohmann::json& j);

// Merges `patch` into `base`; unknown keys and type changes throw
// std::invalid_argument naming the dotted key.
void merge_config(nlohmann::json& base, const nlohmann::json& patch, const std::string& prefix = "");

// Applies one `dotted.key=value` override. The value is parsed as JSON when
// possible (numbers, booleans, arrays) and taken as a string otherwise.
void apply_override(nlohmann::json& cfg, const std::string& assignment);

// Defaults, then the optional file, then the overrides in order.
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides);

}  // namespace fpb
