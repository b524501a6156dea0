#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pfad/adapter.hpp"
#include "pfad/flow.hpp"

namespace pfad {

enum class Precision { f32, f64 };

inline const char* to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

inline Precision parse_precision(const std::string& s) {
  if (s == "f32") return Precision::f32;
  if (s == "f64") return Precision::f64;
  throw UsageError("unknown precision '" + s + "' (expected f32|f64)");
}

struct TrainConfig {
  double learning_rate = 2e-4;
  double weight_decay = 1e-5;
  int batch_size = 4;  // images per optimizer step
  int epochs = 30;
  std::uint64_t seed = 0;
  AdapterMode adapter_mode = AdapterMode::frozen_random;
  double ortho_penalty = 1e-2;
  bool shuffle = true;
  bool gradient_check = false;
  Precision precision = Precision::f32;

  void validate() const {
    if (!(learning_rate > 0.0)) throw UsageError("learning_rate must be > 0");
    if (weight_decay < 0.0) throw UsageError("weight_decay must be >= 0");
    if (epochs < 1) throw UsageError("epochs must be >= 1");
    if (batch_size < 1) throw UsageError("batch_size must be >= 1");
    if (ortho_penalty < 0.0) throw UsageError("ortho_penalty must be >= 0");
  }
};

/// Mean over patches of ||z||^2 / 2 - logdet. The additive constant of the
/// Gaussian log-density is omitted.
template <typename Scalar>
Scalar loss(const Mat<Scalar>& z, const RowVec<Scalar>& logdet) {
  if (z.cols() != logdet.cols() || z.cols() == 0) throw DataError("loss: latent and log-det shapes disagree");
  Scalar value = (Scalar(0.5) * z.colwise().squaredNorm() - logdet).mean();
  if (!std::isfinite(static_cast<double>(value))) throw NumericalError("loss is not finite");
  return value;
}

template <typename Scalar>
Scalar loss(const Tensor<Scalar>& z_map, const Tensor<Scalar>& logdet_map) {
  if (z_map.ndim() != 3 || logdet_map.ndim() != 2 || z_map.extent(1) != logdet_map.extent(0) ||
      z_map.extent(2) != logdet_map.extent(1))
    throw DataError("loss: latent map " + shape_string(z_map.dims()) + " and log-det map " +
                    shape_string(logdet_map.dims()) + " disagree");
  return loss<Scalar>(Mat<Scalar>(z_map.matrix()), RowVec<Scalar>(logdet_map.values().transpose()));
}

template <typename Scalar>
struct Gradients {
  FlowModel<Scalar> flow;
  std::optional<AdapterParams<Scalar>> adapter;  // present when the adapter is trainable
};

/// Backpropagates through one coupling block. Accumulates parameter
/// gradients into `grad` and returns d(loss)/d(block input).
/// `dlogdet` is d(loss)/d(logdet) for every column.
template <typename Scalar>
Mat<Scalar> coupling_backward(const CouplingBlock<Scalar>& block, const CouplingTrace<Scalar>& trace,
                              const Mat<Scalar>& dy, Scalar dlogdet, CouplingBlock<Scalar>& grad) {
  const Eigen::Index half = block.half();
  const Scalar c = block.clamp;
  const Mat<Scalar> dy_active = dy.middleRows(block.active_offset(), half);

  const auto growth = trace.scale.array().exp();
  Mat<Scalar> d_out(block.channels(), dy.cols());
  // d/d scale of (active * exp(scale) + logdet-sum) through the soft clamp.
  d_out.topRows(half) = ((dy_active.array() * trace.active.array() * growth + dlogdet) *
                         (Scalar(1) - (trace.scale.array() / c).square()))
                            .matrix();
  d_out.bottomRows(half) = dy_active;

  grad.fc3.weight.noalias() += d_out * trace.hidden2.transpose();
  grad.fc3.bias += d_out.rowwise().sum();

  Mat<Scalar> d_pre2 = block.fc3.weight.transpose() * d_out;
  d_pre2.array() *= (trace.pre2.array() > Scalar(0)).template cast<Scalar>();
  const Mat<Scalar> hidden1 = trace.pre1.cwiseMax(Scalar(0));
  grad.fc2.weight.noalias() += d_pre2 * hidden1.transpose();
  grad.fc2.bias += d_pre2.rowwise().sum();

  Mat<Scalar> d_pre1 = block.fc2.weight.transpose() * d_pre2;
  d_pre1.array() *= (trace.pre1.array() > Scalar(0)).template cast<Scalar>();
  grad.fc1.weight.noalias() += d_pre1 * trace.passive.transpose();
  grad.fc1.bias += d_pre1.rowwise().sum();

  Mat<Scalar> dx(block.channels(), dy.cols());
  dx.middleRows(block.passive_offset(), half) = dy.middleRows(block.passive_offset(), half);
  dx.middleRows(block.passive_offset(), half).noalias() += block.fc1.weight.transpose() * d_pre1;
  dx.middleRows(block.active_offset(), half) = (dy_active.array() * growth).matrix();
  return dx;
}

/// Training objective for one batch of patch features (one per column) and,
/// when `grads` is given, its exact gradient. With an adapter, `features`
/// are aggregated features (C_total rows) and the adapter is applied first;
/// a trainable adapter also contributes the orthonormality penalty.
/// Without one, `features` are already adapted (C_g rows).
template <typename Scalar>
Scalar objective(const FlowModel<Scalar>& flow, const AdapterParams<Scalar>* adapter, const Mat<Scalar>& features,
                 Scalar ortho_lambda, Gradients<Scalar>* grads) {
  const bool adapter_grads = adapter && adapter->trainable();
  Mat<Scalar> g = adapter ? adapt_columns(features, *adapter) : features;
  FlowTrace<Scalar> trace;
  auto out = flow_forward(flow, g, grads ? &trace : nullptr);
  Scalar value = loss(out.z, out.logdet);
  if (adapter_grads) value += orthonormality_penalty(adapter->weight, ortho_lambda);
  if (!grads) return value;

  const auto n = static_cast<Scalar>(g.cols());
  grads->flow = zeros_like(flow);
  Mat<Scalar> d = out.z / n;
  const Scalar dlogdet = Scalar(-1) / n;
  for (std::size_t i = flow.steps.size(); i-- > 0;)
    for (std::size_t j = 2; j-- > 0;) {
      d = coupling_backward(flow.steps[i].blocks[j], trace.blocks[i * 2 + j], d, dlogdet,
                            grads->flow.steps[i].blocks[j]);
      d = unpermute_rows(d, flow.steps[i].perms[j]);
    }

  if (adapter_grads) {
    AdapterParams<Scalar> ga = *adapter;
    ga.weight = d * features.transpose() + orthonormality_penalty_grad(adapter->weight, ortho_lambda);
    ga.bias = d.rowwise().sum();
    grads->adapter = std::move(ga);
  } else {
    grads->adapter.reset();
  }

  for_each_parameter(grads->flow, [](const std::string& name, const auto& p) {
    if (!p.allFinite()) throw NumericalError("non-finite gradient in " + name);
  });
  if (grads->adapter && (!grads->adapter->weight.allFinite() || !grads->adapter->bias.allFinite()))
    throw NumericalError("non-finite gradient in adapter.weight");
  return value;
}

/// Adam with decoupled weight decay. Moment buffers are keyed by parameter
/// name and shaped like the parameter.
template <typename Scalar>
class AdamW {
 public:
  struct Options {
    double learning_rate = 2e-4;
    double weight_decay = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
  };

  explicit AdamW(Options options) : options_(options) {}

  /// Call once per optimizer step, before the per-parameter updates.
  void begin_step() { ++step_; }
  std::size_t step_count() const { return step_; }

  template <typename Param>
  void update(const std::string& name, Param& param, const Param& grad) {
    auto& m = first_[name];
    auto& v = second_[name];
    if (m.size() == 0) {
      m = Mat<Scalar>::Zero(param.rows(), param.cols());
      v = Mat<Scalar>::Zero(param.rows(), param.cols());
    }
    const auto b1 = static_cast<Scalar>(options_.beta1), b2 = static_cast<Scalar>(options_.beta2);
    const auto lr = static_cast<Scalar>(options_.learning_rate);
    const auto wd = static_cast<Scalar>(options_.weight_decay);
    const auto eps = static_cast<Scalar>(options_.epsilon);
    const auto t = static_cast<double>(step_);
    const auto c1 = static_cast<Scalar>(1.0 - std::pow(options_.beta1, t));
    const auto c2 = static_cast<Scalar>(1.0 - std::pow(options_.beta2, t));

    m.array() = b1 * m.array() + (Scalar(1) - b1) * grad.array();
    v.array() = b2 * v.array() + (Scalar(1) - b2) * grad.array().square();
    param.array() -= lr * wd * param.array();
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }

  const std::map<std::string, Mat<Scalar>>& first_moments() const { return first_; }
  const std::map<std::string, Mat<Scalar>>& second_moments() const { return second_; }

 private:
  Options options_;
  std::size_t step_ = 0;
  std::map<std::string, Mat<Scalar>> first_;
  std::map<std::string, Mat<Scalar>> second_;
};

template <typename Scalar>
void apply_gradients(AdamW<Scalar>& opt, FlowModel<Scalar>& flow, AdapterParams<Scalar>& adapter,
                     Gradients<Scalar>& grads) {
  opt.begin_step();
  auto flat_grads = std::map<std::string, Mat<Scalar>>{};
  for_each_parameter(grads.flow, [&](const std::string& name, const auto& g) { flat_grads[name] = g; });
  for_each_parameter(flow, [&](const std::string& name, auto& p) {
    const Mat<Scalar>& g = flat_grads.at(name);
    if constexpr (std::is_same_v<std::decay_t<decltype(p)>, Vec<Scalar>>) {
      Mat<Scalar> pm = p;
      opt.update(name, pm, g);
      p = pm;
    } else {
      opt.update(name, p, g);
    }
  });
  if (grads.adapter && adapter.trainable()) {
    opt.update("adapter.weight", adapter.weight, grads.adapter->weight);
    Mat<Scalar> bias = adapter.bias, gb = grads.adapter->bias;
    opt.update("adapter.bias", bias, gb);
    adapter.bias = bias;
  }
}

template <typename Scalar>
struct TrainResult {
  FlowModel<Scalar> flow;
  AdapterParams<Scalar> adapter;
  std::vector<double> loss_history;  // one entry per epoch
  int best_epoch = 0;                // 1-based
  double best_loss = std::numeric_limits<double>::infinity();
};

/// Minimizes the objective over per-image patch-feature matrices
/// (C_total x positions each). Each optimizer step sees every patch of
/// `batch_size` images. The parameters returned are those at the end of the
/// epoch with the lowest mean training loss.
template <typename Scalar>
TrainResult<Scalar> fit(const std::vector<Mat<Scalar>>& images, FlowModel<Scalar> flow, AdapterParams<Scalar> adapter,
                        const TrainConfig& config,
                        const std::function<void(int, double)>& on_epoch = {}) {
  config.validate();
  if (images.empty()) throw DataError("no training images");
  adapter.mode = config.adapter_mode;

  // A frozen adapter is applied once up front.
  std::vector<Mat<Scalar>> inputs;
  inputs.reserve(images.size());
  for (const auto& f : images) inputs.push_back(adapter.trainable() ? f : adapt_columns(f, adapter));
  const AdapterParams<Scalar>* adapter_in_loop = adapter.trainable() ? &adapter : nullptr;

  AdamW<Scalar> opt({config.learning_rate, config.weight_decay});
  Rng shuffler(config.seed ^ 0x5DEECE66DULL);
  std::vector<std::size_t> order(inputs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult<Scalar> result{flow, adapter, {}, 0, std::numeric_limits<double>::infinity()};
  const auto lambda = static_cast<Scalar>(config.ortho_penalty);
  const auto batch = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    if (config.shuffle) shuffler.shuffle(order);
    double weighted = 0.0;
    std::size_t patches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t stop = std::min(order.size(), start + batch);
      Eigen::Index cols = 0;
      for (std::size_t k = start; k < stop; ++k) cols += inputs[order[k]].cols();
      Mat<Scalar> x(inputs[order[start]].rows(), cols);
      Eigen::Index at = 0;
      for (std::size_t k = start; k < stop; ++k) {
        const auto& m = inputs[order[k]];
        x.middleCols(at, m.cols()) = m;
        at += m.cols();
      }
      Gradients<Scalar> grads;
      Scalar value;
      try {
        value = objective(flow, adapter_in_loop, x, lambda, &grads);
      } catch (const NumericalError& e) {
        throw NumericalError("epoch " + std::to_string(epoch) + ", batch starting at image " +
                             std::to_string(start) + ": " + e.what());
      }
      apply_gradients(opt, flow, adapter, grads);
      weighted += static_cast<double>(value) * static_cast<double>(cols);
      patches += static_cast<std::size_t>(cols);
    }
    const double epoch_loss = weighted / static_cast<double>(patches);
    result.loss_history.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
    if (epoch_loss < result.best_loss) {
      result.best_loss = epoch_loss;
      result.best_epoch = epoch;
      result.flow = flow;
      result.adapter = adapter;
    }
  }
  return result;
}

/// Central finite-difference check of the analytic gradient on a few
/// coordinates of every parameter tensor. Returns the worst relative error
/// per tensor, measured as |analytic - numeric| / max(|analytic|, |numeric|, floor).
template <typename Scalar>
std::map<std::string, double> spot_check_gradients(FlowModel<Scalar> flow, AdapterParams<Scalar> adapter,
                                                   const Mat<Scalar>& features, Scalar lambda, Rng& rng,
                                                   int coords_per_tensor = 4, double step = 1e-6,
                                                   double floor = 1e-6) {
  Gradients<Scalar> grads;
  objective(flow, &adapter, features, lambda, &grads);
  std::map<std::string, double> worst;
  auto probe = [&](const std::string& name, auto& param, const auto& grad) {
    double w = 0.0;
    for (int k = 0; k < coords_per_tensor; ++k) {
      auto idx = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(param.size())));
      const Scalar saved = param.data()[idx];
      param.data()[idx] = saved + static_cast<Scalar>(step);
      const double up = objective(flow, &adapter, features, lambda, static_cast<Gradients<Scalar>*>(nullptr));
      param.data()[idx] = saved - static_cast<Scalar>(step);
      const double down = objective(flow, &adapter, features, lambda, static_cast<Gradients<Scalar>*>(nullptr));
      param.data()[idx] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = grad.data()[idx];
      w = std::max(w, std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor}));
    }
    worst[name] = w;
  };
  std::map<std::string, Mat<Scalar>> flat;
  for_each_parameter(grads.flow, [&](const std::string& name, const auto& g) { flat[name] = g; });
  for_each_parameter(flow, [&](const std::string& name, auto& p) { probe(name, p, flat.at(name)); });
  if (grads.adapter) {
    probe("adapter.weight", adapter.weight, grads.adapter->weight);
    probe("adapter.bias", adapter.bias, grads.adapter->bias);
  }
  return worst;
}

}  // namespace pfad
