#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "pfad/training.hpp"

namespace pfad::test {

/// log|det A| by Gaussian elimination with partial pivoting.
inline double log_abs_det(std::vector<std::vector<double>> a) {
  const std::size_t n = a.size();
  double acc = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t pivot = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a[i][k]) > std::abs(a[pivot][k])) pivot = i;
    std::swap(a[k], a[pivot]);
    if (a[k][k] == 0.0) return -INFINITY;
    acc += std::log(std::abs(a[k][k]));
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a[i][k] / a[k][k];
      for (std::size_t j = k; j < n; ++j) a[i][j] -= f * a[k][j];
    }
  }
  return acc;
}

/// Central-difference Jacobian of a vector map, row i = d out_i.
inline std::vector<std::vector<double>> fd_jacobian(const std::function<Vec<double>(const Vec<double>&)>& f,
                                                    const Vec<double>& x, double h = 1e-6) {
  const auto n = static_cast<std::size_t>(x.size());
  std::vector<std::vector<double>> jac(n, std::vector<double>(n));
  for (std::size_t j = 0; j < n; ++j) {
    Vec<double> up = x, down = x;
    up[static_cast<Eigen::Index>(j)] += h;
    down[static_cast<Eigen::Index>(j)] -= h;
    Vec<double> d = (f(up) - f(down)) / (2 * h);
    for (std::size_t i = 0; i < n; ++i) jac[i][j] = d[static_cast<Eigen::Index>(i)];
  }
  return jac;
}

/// Norm-based relative error ||a - b|| / max(||a||, ||b||), zero when both vanish.
template <typename A, typename B>
double relative_error(const A& a, const B& b) {
  const double denom = std::max(a.norm(), b.norm());
  return denom == 0.0 ? 0.0 : (a - b).norm() / denom;
}

/// Every parameter tensor's full central-difference gradient against the
/// analytic one. Returns (name, relative error) per tensor.
inline std::vector<std::pair<std::string, double>> full_gradient_check(FlowModel<double> flow,
                                                                      AdapterParams<double> adapter,
                                                                      const Mat<double>& features, double lambda,
                                                                      double h = 1e-6) {
  Gradients<double> grads;
  objective(flow, &adapter, features, lambda, &grads);
  std::vector<std::pair<std::string, double>> out;
  auto value = [&] { return objective<double>(flow, &adapter, features, lambda, nullptr); };
  auto check = [&](const std::string& name, auto& param, const auto& analytic) {
    Mat<double> numeric(param.rows(), param.cols());
    for (Eigen::Index i = 0; i < param.size(); ++i) {
      const double saved = param.data()[i];
      param.data()[i] = saved + h;
      const double up = value();
      param.data()[i] = saved - h;
      const double down = value();
      param.data()[i] = saved;
      numeric.data()[i] = (up - down) / (2 * h);
    }
    out.emplace_back(name, relative_error(Mat<double>(analytic), numeric));
  };
  std::map<std::string, Mat<double>> flat;
  for_each_parameter(grads.flow, [&](const std::string& name, const auto& g) { flat[name] = g; });
  for_each_parameter(flow, [&](const std::string& name, auto& p) { check(name, p, flat.at(name)); });
  if (grads.adapter) {
    check("adapter.weight", adapter.weight, grads.adapter->weight);
    check("adapter.bias", adapter.bias, grads.adapter->bias);
  }
  return out;
}

/// Small flow with every parameter (including the zero-initialized output
/// layer) set to random values, so every gradient path is exercised.
inline FlowModel<double> random_flow(Rng& rng, Eigen::Index channels, int steps, int bottleneck, double scale = 0.5) {
  FlowConfig config;
  config.steps = steps;
  config.bottleneck = bottleneck;
  auto flow = init_flow<double>(rng, channels, config);
  randomize_flow(flow, rng, scale);
  return flow;
}

}  // namespace pfad::test
