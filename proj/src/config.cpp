#include "pfad/config.hpp"

#include <fstream>
#include <set>

namespace pfad {

void RunConfig::validate() const {
  aggregation.validate();
  if (adapter_channels < 2 || adapter_channels % 2 != 0)
    throw UsageError("adapter.channels must be even and >= 2, got " + std::to_string(adapter_channels));
  flow.validate(adapter_channels);
  train.validate();
  threshold.validate();
  if (image.height == 0 || image.width == 0) throw UsageError("image size must be positive");
  if (threads < 1) throw UsageError("threads must be >= 1");
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["aggregation"] = {{"patch_size", c.aggregation.patch_size},
                      {"scale_count", c.aggregation.scale_count},
                      {"base_height", c.aggregation.base_height},
                      {"base_width", c.aggregation.base_width},
                      {"align_corners", c.aggregation.align_corners}};
  j["adapter"] = {{"channels", c.adapter_channels},
                  {"mode", to_string(c.train.adapter_mode)},
                  {"ortho_penalty", c.train.ortho_penalty}};
  j["flow"] = {{"steps", c.flow.steps}, {"bottleneck", c.flow.bottleneck}, {"clamp", c.flow.clamp}};
  j["train"] = {{"learning_rate", c.train.learning_rate},
                {"weight_decay", c.train.weight_decay},
                {"batch_size", c.train.batch_size},
                {"epochs", c.train.epochs},
                {"seed", c.train.seed},
                {"shuffle", c.train.shuffle},
                {"gradient_check", c.train.gradient_check},
                {"precision", to_string(c.train.precision)}};
  j["threshold"] = {{"kind", to_string(c.threshold.kind)}, {"parameter", c.threshold.parameter}};
  j["image"] = {{"height", c.image.height}, {"width", c.image.width}};
  j["threads"] = c.threads;
  j["train_manifest"] = c.train_manifest;
  return j;
}

namespace {

void reject_unknown(const nlohmann::json& obj, const std::string& where, std::set<std::string> known) {
  if (!obj.is_object()) throw UsageError("config: '" + where + "' must be an object");
  for (const auto& [key, _] : obj.items())
    if (!known.count(key)) throw UsageError("config: unknown key '" + where + (where.empty() ? "" : ".") + key + "'");
}

template <typename T>
void read(const nlohmann::json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& j, RunConfig c) {
  reject_unknown(j, "", {"aggregation", "adapter", "flow", "train", "threshold", "image", "threads", "train_manifest"});
  if (j.contains("aggregation")) {
    const auto& a = j["aggregation"];
    reject_unknown(a, "aggregation", {"patch_size", "scale_count", "base_height", "base_width", "align_corners"});
    read(a, "patch_size", c.aggregation.patch_size);
    read(a, "scale_count", c.aggregation.scale_count);
    read(a, "base_height", c.aggregation.base_height);
    read(a, "base_width", c.aggregation.base_width);
    read(a, "align_corners", c.aggregation.align_corners);
  }
  if (j.contains("adapter")) {
    const auto& a = j["adapter"];
    reject_unknown(a, "adapter", {"channels", "mode", "ortho_penalty"});
    read(a, "channels", c.adapter_channels);
    std::string mode = to_string(c.train.adapter_mode);
    read(a, "mode", mode);
    c.train.adapter_mode = parse_adapter_mode(mode);
    read(a, "ortho_penalty", c.train.ortho_penalty);
  }
  if (j.contains("flow")) {
    const auto& f = j["flow"];
    reject_unknown(f, "flow", {"steps", "bottleneck", "clamp"});
    read(f, "steps", c.flow.steps);
    read(f, "bottleneck", c.flow.bottleneck);
    read(f, "clamp", c.flow.clamp);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    reject_unknown(t, "train", {"learning_rate", "weight_decay", "batch_size", "epochs", "seed", "shuffle",
                                "gradient_check", "precision"});
    read(t, "learning_rate", c.train.learning_rate);
    read(t, "weight_decay", c.train.weight_decay);
    read(t, "batch_size", c.train.batch_size);
    read(t, "epochs", c.train.epochs);
    read(t, "seed", c.train.seed);
    read(t, "shuffle", c.train.shuffle);
    read(t, "gradient_check", c.train.gradient_check);
    std::string precision = to_string(c.train.precision);
    read(t, "precision", precision);
    c.train.precision = parse_precision(precision);
  }
  if (j.contains("threshold")) {
    const auto& t = j["threshold"];
    reject_unknown(t, "threshold", {"kind", "parameter"});
    std::string kind = to_string(c.threshold.kind);
    read(t, "kind", kind);
    c.threshold.kind = parse_threshold_kind(kind);
    read(t, "parameter", c.threshold.parameter);
  }
  if (j.contains("image")) {
    const auto& i = j["image"];
    reject_unknown(i, "image", {"height", "width"});
    read(i, "height", c.image.height);
    read(i, "width", c.image.width);
  }
  read(j, "threads", c.threads);
  read(j, "train_manifest", c.train_manifest);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j, std::move(base));
}

}  // namespace pfad
