#pragma once

#include <atomic>
#include <exception>
#include <functional>
#include <thread>

#include "pfad/config.hpp"
#include "pfad/metrics.hpp"
#include "pfad/tensor_io.hpp"

namespace pfad {

using LogSink = std::function<void(const std::string&)>;

/// A trained detector: adapter + flow plus the configuration that produced
/// them and the threshold calibrated on the training images.
template <typename Scalar>
struct Model {
  RunConfig config;
  AdapterParams<Scalar> adapter;
  FlowModel<Scalar> flow;
  double threshold = 0.0;
  std::vector<double> loss_history;
  int best_epoch = 0;
};

// ------------------------------------------------------------ feature files

inline fs::path feature_file(const fs::path& dir, std::size_t scale, std::size_t hierarchy) {
  return dir / ("scale" + std::to_string(scale) + "_hier" + std::to_string(hierarchy) + ".pftn");
}

/// A feature directory holds scale{k}_hier{j}.pftn for k, j counting from 0.
template <typename Scalar>
FeatureStack<Scalar> load_feature_stack(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("feature directory " + dir.string() + " does not exist");
  FeatureStack<Scalar> stack;
  for (std::size_t k = 0; fs::exists(feature_file(dir, k, 0)); ++k) {
    std::vector<Tensor<Scalar>> scale;
    for (std::size_t j = 0; fs::exists(feature_file(dir, k, j)); ++j)
      scale.push_back(as<Scalar>(load_tensor(feature_file(dir, k, j))));
    stack.push_back(std::move(scale));
  }
  if (stack.empty()) throw DataError("no scale0_hier0.pftn in " + dir.string());
  return stack;
}

template <typename Scalar>
void save_feature_stack(const FeatureStack<Scalar>& stack, const fs::path& dir) {
  fs::create_directories(dir);
  for (std::size_t k = 0; k < stack.size(); ++k)
    for (std::size_t j = 0; j < stack[k].size(); ++j) save_tensor(stack[k][j], feature_file(dir, k, j));
}

// -------------------------------------------------------------- checkpoints

template <typename Scalar>
Tensor<Scalar> matrix_tensor(const Mat<Scalar>& m) {
  Tensor<Scalar> t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  t.matrix() = m;
  return t;
}

template <typename Scalar>
Tensor<Scalar> vector_tensor(const Vec<Scalar>& v) {
  return Tensor<Scalar>({static_cast<std::size_t>(v.size())}, v);
}

template <typename Scalar>
Checkpoint to_checkpoint(const Model<Scalar>& model) {
  Checkpoint ck;
  ck.config = to_json(model.config);
  ck.rng_seed = model.config.train.seed;
  ck.meta["threshold"] = model.threshold;
  ck.meta["loss_history"] = model.loss_history;
  ck.meta["best_epoch"] = model.best_epoch;
  ck.meta["feature_channels"] = model.adapter.in_channels();
  ck.tensors.emplace("adapter.weight", matrix_tensor(model.adapter.weight));
  ck.tensors.emplace("adapter.bias", vector_tensor(model.adapter.bias));
  for_each_parameter(model.flow, [&](const std::string& name, const auto& p) {
    if constexpr (std::decay_t<decltype(p)>::ColsAtCompileTime == 1)
      ck.tensors.emplace(name, vector_tensor<Scalar>(p));
    else
      ck.tensors.emplace(name, matrix_tensor<Scalar>(p));
  });
  for (std::size_t i = 0; i < model.flow.steps.size(); ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      const auto& perm = model.flow.steps[i].perms[j];
      Tensor<Scalar> t({perm.size()});
      for (std::size_t c = 0; c < perm.size(); ++c) t(c) = static_cast<Scalar>(perm[c]);
      ck.tensors.emplace("flow.step" + std::to_string(i) + ".perm" + std::to_string(j), std::move(t));
    }
  return ck;
}

template <typename Scalar>
Model<Scalar> from_checkpoint(const Checkpoint& ck) {
  Model<Scalar> model;
  model.config = run_config_from_json(ck.config);
  model.config.validate();
  model.threshold = ck.meta.value("threshold", 0.0);
  model.loss_history = ck.meta.value("loss_history", std::vector<double>{});
  model.best_epoch = ck.meta.value("best_epoch", 0);

  auto matrix = [&](const std::string& name) -> Mat<Scalar> {
    auto t = as<Scalar>(ck.tensor(name));
    if (t.ndim() != 2) throw DataError("checkpoint tensor '" + name + "' must be 2-D");
    return t.matrix();
  };
  auto vector = [&](const std::string& name) -> Vec<Scalar> {
    auto t = as<Scalar>(ck.tensor(name));
    if (t.ndim() != 1) throw DataError("checkpoint tensor '" + name + "' must be 1-D");
    return t.values();
  };
  model.adapter.weight = matrix("adapter.weight");
  model.adapter.bias = vector("adapter.bias");
  model.adapter.mode = model.config.train.adapter_mode;
  if (model.adapter.out_channels() != model.config.adapter_channels ||
      model.adapter.bias.size() != model.adapter.out_channels())
    throw DataError("checkpoint adapter shape disagrees with its config");

  const Eigen::Index channels = model.config.adapter_channels;
  model.flow.channels = channels;
  model.flow.steps.resize(static_cast<std::size_t>(model.config.flow.steps));
  for (std::size_t i = 0; i < model.flow.steps.size(); ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      auto& block = model.flow.steps[i].blocks[j];
      block.passive_first = j == 0;
      block.clamp = static_cast<Scalar>(model.config.flow.clamp);
      Vec<Scalar> perm = vector("flow.step" + std::to_string(i) + ".perm" + std::to_string(j));
      auto& p = model.flow.steps[i].perms[j];
      for (Eigen::Index c = 0; c < perm.size(); ++c) p.push_back(static_cast<int>(perm[c]));
      if (static_cast<Eigen::Index>(p.size()) != channels) throw DataError("checkpoint permutation has wrong length");
      inverse_permutation(p);
    }
  for_each_parameter(model.flow, [&](const std::string& name, auto& p) {
    if constexpr (std::decay_t<decltype(p)>::ColsAtCompileTime == 1)
      p = vector(name);
    else
      p = matrix(name);
  });
  for (const auto& step : model.flow.steps)
    for (const auto& b : step.blocks)
      if (b.fc1.weight.cols() != channels / 2 || b.fc3.weight.rows() != channels ||
          b.fc1.weight.rows() != b.fc2.weight.cols() || b.fc2.weight.rows() != b.fc3.weight.cols())
        throw DataError("checkpoint flow layer shapes are inconsistent");
  return model;
}

// ------------------------------------------------------------------ scoring

/// Aggregated patch features of one image, checked against the adapter.
template <typename Scalar>
Tensor<Scalar> aggregate_checked(const FeatureStack<Scalar>& stack, const RunConfig& config,
                                 Eigen::Index expected_channels) {
  auto f = aggregate(stack, config.aggregation);
  if (static_cast<Eigen::Index>(f.extent(0)) != expected_channels)
    throw DataError("feature channel mismatch: model expects " + std::to_string(expected_channels) +
                    " aggregated channels, features give " + std::to_string(f.extent(0)));
  return f;
}

template <typename Scalar>
AnomalyResult score_aggregated(const Model<Scalar>& model, const Tensor<Scalar>& f, std::string image_id) {
  auto g = adapt(f, model.adapter);
  auto maps = flow_forward(g, model.flow);
  auto scores = patch_scores(maps.z, maps.logdet).template cast<double>();
  AnomalyResult r;
  r.image_id = std::move(image_id);
  r.map = anomaly_map(scores, model.config.image.height, model.config.image.width, model.config.aggregation.align_corners);
  r.image_score = image_score(r.map);
  return r;
}

template <typename Scalar>
AnomalyResult score_features(const Model<Scalar>& model, const FeatureStack<Scalar>& stack, std::string image_id) {
  return score_aggregated(model, aggregate_checked(stack, model.config, model.adapter.in_channels()),
                          std::move(image_id));
}

/// Scores entries on `threads` workers. Each image is processed by exactly
/// one worker with the same code path, so results do not depend on the
/// thread count.
template <typename Scalar>
std::vector<AnomalyResult> score_entries(const Model<Scalar>& model, const std::vector<ManifestEntry>& entries,
                                         int threads) {
  std::vector<AnomalyResult> results(entries.size());
  std::vector<std::exception_ptr> errors(entries.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < entries.size();) {
      try {
        auto stack = load_feature_stack<Scalar>(entries[i].feature_path);
        results[i] = score_features(model, stack, entries[i].image_id);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto n = static_cast<std::size_t>(std::max(1, threads));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::min(n, entries.size()); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (std::size_t i = 0; i < errors.size(); ++i)
    if (errors[i]) {
      try {
        std::rethrow_exception(errors[i]);
      } catch (const DataError& e) {
        throw DataError(entries[i].image_id + ": " + e.what());
      }
    }
  return results;
}

// ----------------------------------------------------------------- training

template <typename Scalar>
Model<Scalar> train_model(const Manifest& manifest, RunConfig config, const LogSink& log = {}) {
  config.validate();
  if (manifest.split != Split::train) throw DataError("training requires a manifest with split 'train'");
  if (manifest.entries.empty()) throw DataError("training manifest has no entries");
  for (const auto& e : manifest.entries)
    if (e.label != Label::normal)
      throw DataError("training entry '" + e.image_id + "' is labeled anomalous; training uses normal images only");

  std::vector<Tensor<Scalar>> aggregated;
  std::vector<Mat<Scalar>> features;
  Eigen::Index channels = -1;
  for (const auto& e : manifest.entries) {
    auto stack = load_feature_stack<Scalar>(e.feature_path);
    Tensor<Scalar> f;
    try {
      f = aggregate(stack, config.aggregation);
    } catch (const DataError& err) {
      throw DataError(e.image_id + ": " + err.what());
    }
    if (channels < 0) channels = static_cast<Eigen::Index>(f.extent(0));
    if (static_cast<Eigen::Index>(f.extent(0)) != channels)
      throw DataError(e.image_id + ": aggregated channel count " + std::to_string(f.extent(0)) + " differs from " +
                      std::to_string(channels));
    features.emplace_back(f.matrix());
    aggregated.push_back(std::move(f));
  }
  if (config.adapter_channels > channels)
    throw UsageError("adapter.channels (" + std::to_string(config.adapter_channels) +
                     ") exceeds the aggregated feature channels (" + std::to_string(channels) + ")");
  if (log)
    log("aggregated " + std::to_string(features.size()) + " images to " + std::to_string(channels) + " x " +
        std::to_string(features[0].cols()) + " patch features");

  Rng rng(config.train.seed);
  auto adapter = init_adapter<Scalar>(rng, channels, config.adapter_channels, config.train.adapter_mode);
  auto flow = init_flow<Scalar>(rng, config.adapter_channels, config.flow);

  if (config.train.gradient_check) {
    // Checked in double on a perturbed copy so every parameter path is live.
    auto flow64 = cast_flow<double>(flow);
    Rng check_rng(config.train.seed + 1);
    randomize_flow(flow64, check_rng, 0.1);
    auto adapter64 = adapter.template cast<double>();
    adapter64.mode = AdapterMode::trained_joint;
    Mat<double> sample = features[0].leftCols(std::min<Eigen::Index>(32, features[0].cols())).template cast<double>();
    auto worst = spot_check_gradients(flow64, adapter64, sample, config.train.ortho_penalty, check_rng);
    double max_err = 0.0;
    for (const auto& [name, err] : worst) max_err = std::max(max_err, err);
    if (log) log("gradient check: max relative error " + std::to_string(max_err));
    if (max_err > 1e-3) throw NumericalError("gradient check failed: max relative error " + std::to_string(max_err));
  }

  auto result = fit(features, std::move(flow), std::move(adapter), config.train, [&](int epoch, double value) {
    if (log) log("epoch " + std::to_string(epoch) + " loss " + std::to_string(value));
  });

  Model<Scalar> model;
  model.config = config;
  model.adapter = std::move(result.adapter);
  model.flow = std::move(result.flow);
  model.loss_history = std::move(result.loss_history);
  model.best_epoch = result.best_epoch;

  std::vector<double> train_scores;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i)
    train_scores.push_back(score_aggregated(model, aggregated[i], manifest.entries[i].image_id).image_score);
  model.threshold = calibrate_threshold(train_scores, config.threshold);
  if (log) log("threshold (" + std::string(to_string(config.threshold.kind)) + ") = " + std::to_string(model.threshold));
  return model;
}

// --------------------------------------------------------------- evaluation

/// Metrics report with image- and pixel-level scores (aupro only when masks
/// exist) plus the confusion matrix at the model threshold.
template <typename Scalar>
nlohmann::json evaluate(const Model<Scalar>& model, const Manifest& test, int threads, double fpr_limit = 0.3) {
  if (test.entries.empty()) throw DataError("evaluation manifest has no entries");
  auto results = score_entries(model, test.entries, threads);
  std::vector<double> scores;
  std::vector<int> labels;
  for (std::size_t i = 0; i < results.size(); ++i) {
    scores.push_back(results[i].image_score);
    labels.push_back(test.entries[i].label == Label::anomalous ? 1 : 0);
  }
  const auto anomalous = std::count(labels.begin(), labels.end(), 1);
  if (anomalous == 0 || anomalous == static_cast<long>(labels.size()))
    throw DataError("evaluation manifest must contain both normal and anomalous images");

  nlohmann::json report;
  report["auroc"] = auroc(scores, labels);
  report["threshold"] = model.threshold;
  auto c = confusion(scores, labels, model.threshold);
  report["confusion"] = {{"tp", c.tp}, {"fp", c.fp},     {"fn", c.fn}, {"tn", c.tn}, {"accuracy", c.accuracy},
                         {"f1_normal", c.f1_normal}, {"positive_class", "normal"}};

  if (test.has_masks()) {
    std::vector<Tensor<double>> maps, masks;
    std::size_t skipped = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
      const auto& e = test.entries[i];
      if (e.mask_path) {
        auto mask = as<double>(load_tensor(*e.mask_path));
        if (mask.ndim() == 3 && mask.extent(0) == 1) mask = mask.reshaped({mask.extent(1), mask.extent(2)});
        if (mask.dims() != results[i].map.dims())
          throw DataError(e.image_id + ": mask " + shape_string(mask.dims()) + " does not match the anomaly map " +
                          shape_string(results[i].map.dims()));
        masks.push_back(std::move(mask));
      } else if (e.label == Label::normal) {
        masks.push_back(Tensor<double>(results[i].map.dims()));
      } else {
        ++skipped;
        continue;
      }
      maps.push_back(results[i].map);
    }
    report["aupro"] = aupro(maps, masks, fpr_limit);
    report["aupro_fpr_limit"] = fpr_limit;
    if (skipped) report["aupro_skipped_images"] = skipped;
  } else {
    report["aupro_note"] = "omitted: manifest has no masks";
  }

  report["per_image"] = nlohmann::json::array();
  for (std::size_t i = 0; i < results.size(); ++i)
    report["per_image"].push_back({{"image_id", results[i].image_id},
                                   {"label", to_string(test.entries[i].label)},
                                   {"score", results[i].image_score},
                                   {"predicted", results[i].image_score > model.threshold ? "anomalous" : "normal"}});
  return report;
}

// ------------------------------------------------- precision-erased facade

Checkpoint train_checkpoint(const Manifest& train, const RunConfig& config, const LogSink& log = {});
std::vector<AnomalyResult> score_checkpoint(const Checkpoint& ck, const std::vector<ManifestEntry>& entries,
                                            int threads);
nlohmann::json evaluate_checkpoint(const Checkpoint& ck, const Manifest& test, int threads);

/// Retrains with `parameter` ("flow_steps" or "scales") set to each value and
/// evaluates on `test`. Returns one row per value.
nlohmann::json run_ablation(const RunConfig& base, const Manifest& train, const Manifest& test,
                            const std::string& parameter, const std::vector<int>& values, const LogSink& log = {});

/// Parses "name=lo..hi" or "name=a,b,c".
std::pair<std::string, std::vector<int>> parse_ablation(const std::string& spec);

}  // namespace pfad
