#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "pfad/aggregation.hpp"
#include "pfad/flow.hpp"
#include "pfad/scoring.hpp"
#include "pfad/training.hpp"

namespace pfad {

struct ImageSize {
  std::size_t height = 768;
  std::size_t width = 768;
};

/// Every hyperparameter of a run. Serialized as nested JSON objects named
/// after the member structs; unknown keys are rejected.
struct RunConfig {
  AggregationConfig aggregation;
  std::int64_t adapter_channels = 768;
  FlowConfig flow;
  TrainConfig train;
  ThresholdPolicy threshold;
  ImageSize image;
  int threads = 1;
  // Training manifest recorded at train time so evaluation can rerun ablations.
  std::string train_manifest;

  void validate() const;
};

nlohmann::json to_json(const RunConfig& c);
/// Overlays the keys present in `j` onto `base`.
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

}  // namespace pfad
