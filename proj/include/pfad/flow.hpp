#pragma once

#include <array>
#include <string>
#include <vector>

#include "pfad/numerics.hpp"

namespace pfad {

struct FlowConfig {
  int steps = 1;
  int bottleneck = 128;
  double clamp = 2.0;

  void validate(Eigen::Index channels) const {
    if (steps < 1) throw UsageError("flow steps must be >= 1, got " + std::to_string(steps));
    if (bottleneck < 1) throw UsageError("flow bottleneck must be >= 1, got " + std::to_string(bottleneck));
    if (!(clamp > 0.0)) throw UsageError("flow clamp must be positive");
    if (channels < 2 || channels % 2 != 0)
      throw UsageError("flow channel count must be even and >= 2, got " + std::to_string(channels));
  }
};

/// Per-position affine layer (a 1x1 convolution): out = weight * in + bias.
template <typename Scalar>
struct Dense {
  Mat<Scalar> weight;  // out x in
  Vec<Scalar> bias;

  Mat<Scalar> apply(const Mat<Scalar>& x) const {
    Mat<Scalar> y = matmul(weight, x);
    y.colwise() += bias;
    return y;
  }
};

/// Affine coupling block. The passive half conditions a three-layer
/// bottleneck subnet whose output is split into [scale_raw; shift] for the
/// active half:
///   active' = active * exp(c * tanh(scale_raw / c)) + shift
template <typename Scalar>
struct CouplingBlock {
  bool passive_first = true;
  Dense<Scalar> fc1;  // C/2 -> bottleneck
  Dense<Scalar> fc2;  // bottleneck -> bottleneck
  Dense<Scalar> fc3;  // bottleneck -> C (scale rows first, then shift rows)
  Scalar clamp = Scalar(2);

  Eigen::Index half() const { return fc1.weight.cols(); }
  Eigen::Index channels() const { return 2 * half(); }
  Eigen::Index passive_offset() const { return passive_first ? 0 : half(); }
  Eigen::Index active_offset() const { return passive_first ? half() : 0; }
};

template <typename Scalar>
struct FlowStep {
  std::array<std::vector<int>, 2> perms;  // perms[j] precedes blocks[j]
  std::array<CouplingBlock<Scalar>, 2> blocks;
};

template <typename Scalar>
struct FlowModel {
  Eigen::Index channels = 0;
  std::vector<FlowStep<Scalar>> steps;
};

/// Intermediate values of one coupling block kept for the backward pass.
template <typename Scalar>
struct CouplingTrace {
  Mat<Scalar> passive;
  Mat<Scalar> active;
  Mat<Scalar> pre1;   // fc1 output before rectification
  Mat<Scalar> pre2;   // fc2 output before rectification
  Mat<Scalar> hidden2;
  Mat<Scalar> scale;  // clamped scale
};

template <typename Scalar>
struct FlowTrace {
  // Indexed [step * 2 + block].
  std::vector<CouplingTrace<Scalar>> blocks;
};

inline std::vector<int> inverse_permutation(const std::vector<int>& perm) {
  std::vector<int> inv(perm.size(), -1);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    auto p = static_cast<std::size_t>(perm[i]);
    if (perm[i] < 0 || p >= perm.size() || inv[p] != -1) throw DataError("invalid channel permutation");
    inv[p] = static_cast<int>(i);
  }
  return inv;
}

/// Row i of the result is row perm[i] of x.
template <typename Scalar>
Mat<Scalar> permute_rows(const Mat<Scalar>& x, const std::vector<int>& perm) {
  if (static_cast<Eigen::Index>(perm.size()) != x.rows()) throw DataError("permutation length mismatch");
  return x(perm, Eigen::all);
}

/// Inverse of permute_rows.
template <typename Scalar>
Mat<Scalar> unpermute_rows(const Mat<Scalar>& x, const std::vector<int>& perm) {
  Mat<Scalar> out(x.rows(), x.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) out.row(perm[i]) = x.row(static_cast<Eigen::Index>(i));
  return out;
}

template <typename Scalar>
Dense<Scalar> make_dense(Rng& rng, Eigen::Index in, Eigen::Index out, bool zero) {
  Dense<Scalar> d;
  if (zero)
    d.weight = Mat<Scalar>::Zero(out, in);
  else
    d.weight = rng.uniform_matrix<Scalar>(out, in, 1.0 / std::sqrt(static_cast<double>(in)));
  d.bias = Vec<Scalar>::Zero(out);
  return d;
}

/// Fresh model: hidden layers uniformly initialized, output layers zero so the
/// flow starts as a pure channel permutation with zero log-determinant.
template <typename Scalar>
FlowModel<Scalar> init_flow(Rng& rng, Eigen::Index channels, const FlowConfig& config) {
  config.validate(channels);
  FlowModel<Scalar> model;
  model.channels = channels;
  const Eigen::Index half = channels / 2;
  for (int i = 0; i < config.steps; ++i) {
    FlowStep<Scalar> step;
    for (int j = 0; j < 2; ++j) {
      step.perms[static_cast<std::size_t>(j)] = rng.permutation(static_cast<int>(channels));
      auto& block = step.blocks[static_cast<std::size_t>(j)];
      block.passive_first = j == 0;
      block.clamp = static_cast<Scalar>(config.clamp);
      block.fc1 = make_dense<Scalar>(rng, half, config.bottleneck, false);
      block.fc2 = make_dense<Scalar>(rng, config.bottleneck, config.bottleneck, false);
      block.fc3 = make_dense<Scalar>(rng, config.bottleneck, channels, true);
    }
    model.steps.push_back(std::move(step));
  }
  return model;
}

/// Replaces every output layer (and hidden biases) with random values of the
/// given magnitude. Used to exercise non-trivial parameterizations.
template <typename Scalar>
void randomize_flow(FlowModel<Scalar>& model, Rng& rng, double scale) {
  for (auto& step : model.steps)
    for (auto& block : step.blocks) {
      block.fc3.weight = rng.uniform_matrix<Scalar>(block.fc3.weight.rows(), block.fc3.weight.cols(), scale);
      block.fc3.bias = rng.uniform_matrix<Scalar>(block.fc3.bias.rows(), 1, scale);
      block.fc1.bias = rng.uniform_matrix<Scalar>(block.fc1.bias.rows(), 1, scale);
      block.fc2.bias = rng.uniform_matrix<Scalar>(block.fc2.bias.rows(), 1, scale);
    }
}

/// Calls fn(name, tensor) for every trainable array of the model, in a fixed
/// order. Names follow the checkpoint layout.
template <typename Scalar, typename Fn>
void for_each_parameter(FlowModel<Scalar>& model, Fn&& fn) {
  for (std::size_t i = 0; i < model.steps.size(); ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      auto& block = model.steps[i].blocks[j];
      const std::string prefix = "flow.step" + std::to_string(i) + ".block" + std::to_string(j) + ".";
      fn(prefix + "fc1.weight", block.fc1.weight);
      fn(prefix + "fc1.bias", block.fc1.bias);
      fn(prefix + "fc2.weight", block.fc2.weight);
      fn(prefix + "fc2.bias", block.fc2.bias);
      fn(prefix + "fc3.weight", block.fc3.weight);
      fn(prefix + "fc3.bias", block.fc3.bias);
    }
}

template <typename Scalar, typename Fn>
void for_each_parameter(const FlowModel<Scalar>& model, Fn&& fn) {
  for_each_parameter(const_cast<FlowModel<Scalar>&>(model),
                     [&](const std::string& name, const auto& p) { fn(name, p); });
}

template <typename Scalar>
FlowModel<Scalar> zeros_like(const FlowModel<Scalar>& model) {
  FlowModel<Scalar> z = model;
  for_each_parameter(z, [](const std::string&, auto& p) { p.setZero(); });
  return z;
}

template <typename Other, typename Scalar>
FlowModel<Other> cast_flow(const FlowModel<Scalar>& model) {
  FlowModel<Other> out;
  out.channels = model.channels;
  for (const auto& step : model.steps) {
    FlowStep<Other> s;
    s.perms = step.perms;
    for (std::size_t j = 0; j < 2; ++j) {
      const auto& b = step.blocks[j];
      auto& o = s.blocks[j];
      o.passive_first = b.passive_first;
      o.clamp = static_cast<Other>(b.clamp);
      o.fc1 = {b.fc1.weight.template cast<Other>(), b.fc1.bias.template cast<Other>()};
      o.fc2 = {b.fc2.weight.template cast<Other>(), b.fc2.bias.template cast<Other>()};
      o.fc3 = {b.fc3.weight.template cast<Other>(), b.fc3.bias.template cast<Other>()};
    }
    out.steps.push_back(std::move(s));
  }
  return out;
}

/// Clamped scale and shift predicted from the passive half.
template <typename Scalar>
std::pair<Mat<Scalar>, Mat<Scalar>> coupling_subnet(const CouplingBlock<Scalar>& block, const Mat<Scalar>& passive,
                                                    CouplingTrace<Scalar>* trace = nullptr) {
  const Eigen::Index half = block.half();
  Mat<Scalar> pre1 = block.fc1.apply(passive);
  Mat<Scalar> hidden1 = pre1.cwiseMax(Scalar(0));
  Mat<Scalar> pre2 = block.fc2.apply(hidden1);
  Mat<Scalar> hidden2 = pre2.cwiseMax(Scalar(0));
  Mat<Scalar> out = block.fc3.apply(hidden2);
  if (!out.allFinite()) throw NumericalError("coupling subnet produced non-finite output");
  const Scalar c = block.clamp;
  Mat<Scalar> scale = (out.topRows(half).array() / c).tanh() * c;
  Mat<Scalar> shift = out.bottomRows(half);
  if (trace) {
    trace->pre1 = std::move(pre1);
    trace->pre2 = std::move(pre2);
    trace->hidden2 = std::move(hidden2);
    trace->scale = scale;
  }
  return {std::move(scale), std::move(shift)};
}

/// Forward pass over a batch (one vector per column). Adds the per-column
/// log-determinant to `logdet`.
template <typename Scalar>
Mat<Scalar> coupling_forward(const CouplingBlock<Scalar>& block, const Mat<Scalar>& x, RowVec<Scalar>& logdet,
                             CouplingTrace<Scalar>* trace = nullptr) {
  if (x.rows() != block.channels())
    throw DataError("coupling block expects " + std::to_string(block.channels()) + " channels, got " +
                    std::to_string(x.rows()));
  const Eigen::Index half = block.half();
  Mat<Scalar> passive = x.middleRows(block.passive_offset(), half);
  Mat<Scalar> active = x.middleRows(block.active_offset(), half);
  auto [scale, shift] = coupling_subnet(block, passive, trace);
  Mat<Scalar> y = x;
  y.middleRows(block.active_offset(), half) = (active.array() * scale.array().exp() + shift.array()).matrix();
  logdet += scale.colwise().sum();
  if (trace) {
    trace->passive = std::move(passive);
    trace->active = std::move(active);
  }
  return y;
}

template <typename Scalar>
Mat<Scalar> coupling_inverse(const CouplingBlock<Scalar>& block, const Mat<Scalar>& y) {
  if (y.rows() != block.channels())
    throw DataError("coupling block expects " + std::to_string(block.channels()) + " channels, got " +
                    std::to_string(y.rows()));
  const Eigen::Index half = block.half();
  Mat<Scalar> passive = y.middleRows(block.passive_offset(), half);
  auto [scale, shift] = coupling_subnet(block, passive);
  Mat<Scalar> x = y;
  x.middleRows(block.active_offset(), half) =
      ((y.middleRows(block.active_offset(), half).array() - shift.array()) * (-scale.array()).exp()).matrix();
  if (!x.allFinite()) throw NumericalError("coupling inverse produced non-finite values");
  return x;
}

/// Single-vector form returning (output, log-determinant).
template <typename Scalar>
std::pair<Vec<Scalar>, Scalar> coupling_forward(const Vec<Scalar>& g, const CouplingBlock<Scalar>& block) {
  RowVec<Scalar> logdet = RowVec<Scalar>::Zero(1);
  Mat<Scalar> y = coupling_forward(block, Mat<Scalar>(g), logdet);
  return {y.col(0), logdet(0)};
}

template <typename Scalar>
Vec<Scalar> coupling_inverse(const Vec<Scalar>& y, const CouplingBlock<Scalar>& block) {
  return coupling_inverse(block, Mat<Scalar>(y)).col(0);
}

template <typename Scalar>
struct FlowOutput {
  Mat<Scalar> z;          // C x N
  RowVec<Scalar> logdet;  // 1 x N
};

template <typename Scalar>
FlowOutput<Scalar> flow_forward(const FlowModel<Scalar>& model, const Mat<Scalar>& g, FlowTrace<Scalar>* trace = nullptr) {
  if (g.rows() != model.channels)
    throw DataError("flow expects " + std::to_string(model.channels) + " channels, got " + std::to_string(g.rows()));
  FlowOutput<Scalar> out{g, RowVec<Scalar>::Zero(g.cols())};
  if (trace) trace->blocks.assign(model.steps.size() * 2, {});
  for (std::size_t i = 0; i < model.steps.size(); ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      out.z = permute_rows(out.z, model.steps[i].perms[j]);
      out.z = coupling_forward(model.steps[i].blocks[j], out.z, out.logdet, trace ? &trace->blocks[i * 2 + j] : nullptr);
    }
  return out;
}

template <typename Scalar>
Mat<Scalar> flow_inverse(const FlowModel<Scalar>& model, const Mat<Scalar>& z) {
  if (z.rows() != model.channels)
    throw DataError("flow expects " + std::to_string(model.channels) + " channels, got " + std::to_string(z.rows()));
  Mat<Scalar> g = z;
  for (std::size_t i = model.steps.size(); i-- > 0;)
    for (std::size_t j = 2; j-- > 0;) {
      g = coupling_inverse(model.steps[i].blocks[j], g);
      g = unpermute_rows(g, model.steps[i].perms[j]);
    }
  return g;
}

template <typename Scalar>
struct FlowMaps {
  Tensor<Scalar> z;       // C_g x H_g x W_g
  Tensor<Scalar> logdet;  // H_g x W_g
};

template <typename Scalar>
FlowMaps<Scalar> flow_forward(const Tensor<Scalar>& g_map, const FlowModel<Scalar>& model) {
  if (g_map.ndim() != 3) throw DataError("flow_forward expects a C x H x W map, got " + shape_string(g_map.dims()));
  auto out = flow_forward(model, Mat<Scalar>(g_map.matrix()));
  FlowMaps<Scalar> maps{Tensor<Scalar>(g_map.dims()), Tensor<Scalar>({g_map.extent(1), g_map.extent(2)})};
  maps.z.matrix() = out.z;
  maps.logdet.values() = out.logdet.transpose();
  return maps;
}

template <typename Scalar>
Tensor<Scalar> flow_inverse(const Tensor<Scalar>& z_map, const FlowModel<Scalar>& model) {
  if (z_map.ndim() != 3) throw DataError("flow_inverse expects a C x H x W map, got " + shape_string(z_map.dims()));
  Tensor<Scalar> g(z_map.dims());
  g.matrix() = flow_inverse(model, Mat<Scalar>(z_map.matrix()));
  return g;
}

}  // namespace pfad
