#include "pfad/engine.hpp"

#include <charconv>

namespace pfad {

namespace {

Precision checkpoint_precision(const Checkpoint& ck) {
  return run_config_from_json(ck.config).train.precision;
}

}  // namespace

Checkpoint train_checkpoint(const Manifest& train, const RunConfig& config, const LogSink& log) {
  if (config.train.precision == Precision::f64) return to_checkpoint(train_model<double>(train, config, log));
  return to_checkpoint(train_model<float>(train, config, log));
}

std::vector<AnomalyResult> score_checkpoint(const Checkpoint& ck, const std::vector<ManifestEntry>& entries,
                                            int threads) {
  if (checkpoint_precision(ck) == Precision::f64) return score_entries(from_checkpoint<double>(ck), entries, threads);
  return score_entries(from_checkpoint<float>(ck), entries, threads);
}

nlohmann::json evaluate_checkpoint(const Checkpoint& ck, const Manifest& test, int threads) {
  if (checkpoint_precision(ck) == Precision::f64) return evaluate(from_checkpoint<double>(ck), test, threads);
  return evaluate(from_checkpoint<float>(ck), test, threads);
}

nlohmann::json run_ablation(const RunConfig& base, const Manifest& train, const Manifest& test,
                            const std::string& parameter, const std::vector<int>& values, const LogSink& log) {
  nlohmann::json rows = nlohmann::json::array();
  for (int v : values) {
    RunConfig config = base;
    if (parameter == "flow_steps")
      config.flow.steps = v;
    else if (parameter == "scales")
      config.aggregation.scale_count = v;
    else
      throw UsageError("unknown ablation parameter '" + parameter + "' (expected flow_steps|scales)");
    if (log) log("ablation " + parameter + "=" + std::to_string(v));
    auto ck = train_checkpoint(train, config, {});
    auto report = evaluate_checkpoint(ck, test, config.threads);
    nlohmann::json row = {{parameter, v}, {"auroc", report["auroc"]}};
    if (report.contains("aupro")) row["aupro"] = report["aupro"];
    rows.push_back(std::move(row));
  }
  return rows;
}

std::pair<std::string, std::vector<int>> parse_ablation(const std::string& spec) {
  auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("ablation must look like name=lo..hi, got '" + spec + "'");
  std::string name = spec.substr(0, eq);
  std::string range = spec.substr(eq + 1);
  auto to_int = [&](std::string_view s) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
      throw UsageError("ablation value '" + std::string(s) + "' is not an integer");
    return v;
  };
  std::vector<int> values;
  if (auto dots = range.find(".."); dots != std::string::npos) {
    int lo = to_int(std::string_view(range).substr(0, dots));
    int hi = to_int(std::string_view(range).substr(dots + 2));
    if (lo > hi) throw UsageError("ablation range '" + range + "' is empty");
    for (int v = lo; v <= hi; ++v) values.push_back(v);
  } else {
    std::size_t start = 0;
    while (start <= range.size()) {
      auto comma = range.find(',', start);
      if (comma == std::string::npos) comma = range.size();
      values.push_back(to_int(std::string_view(range).substr(start, comma - start)));
      start = comma + 1;
    }
  }
  return {name, values};
}

}  // namespace pfad
