#pragma once

#include <string>

#include "pfad/numerics.hpp"

namespace pfad {

enum class AdapterMode { frozen_random, trained_joint };

inline const char* to_string(AdapterMode m) {
  return m == AdapterMode::frozen_random ? "frozen-random" : "trained-joint";
}

inline AdapterMode parse_adapter_mode(const std::string& s) {
  if (s == "frozen-random") return AdapterMode::frozen_random;
  if (s == "trained-joint") return AdapterMode::trained_joint;
  throw UsageError("unknown adapter mode '" + s + "' (expected frozen-random|trained-joint)");
}

/// Single fully connected layer g = W f + b applied independently at every
/// spatial position.
template <typename Scalar>
struct AdapterParams {
  Mat<Scalar> weight;  // C_g x C_total
  Vec<Scalar> bias;    // C_g
  AdapterMode mode = AdapterMode::frozen_random;

  Eigen::Index in_channels() const { return weight.cols(); }
  Eigen::Index out_channels() const { return weight.rows(); }
  bool trainable() const { return mode == AdapterMode::trained_joint; }

  template <typename Other>
  AdapterParams<Other> cast() const {
    return {weight.template cast<Other>(), bias.template cast<Other>(), mode};
  }
};

/// Rows of W are an orthonormal basis of a random C_g-dimensional subspace:
/// Q of the QR factorization of a Gaussian C_total x C_g matrix, transposed.
template <typename Scalar>
AdapterParams<Scalar> init_adapter(Rng& rng, Eigen::Index c_total, Eigen::Index c_g, AdapterMode mode) {
  if (c_g < 1 || c_g > c_total)
    throw UsageError("adapter output channels (" + std::to_string(c_g) + ") must be in [1, " +
                     std::to_string(c_total) + "]");
  Mat<double> gaussian = rng.normal_matrix<double>(c_total, c_g);
  Eigen::HouseholderQR<Mat<double>> qr(gaussian);
  Mat<double> q = qr.householderQ() * Mat<double>::Identity(c_total, c_g);
  AdapterParams<Scalar> p;
  p.weight = q.transpose().template cast<Scalar>();
  p.bias = Vec<Scalar>::Zero(c_g);
  p.mode = mode;
  return p;
}

template <typename Scalar>
AdapterParams<Scalar> identity_adapter(Eigen::Index channels, AdapterMode mode = AdapterMode::frozen_random) {
  return {Mat<Scalar>::Identity(channels, channels), Vec<Scalar>::Zero(channels), mode};
}

/// f holds one patch feature per column.
template <typename Scalar, typename Derived>
Mat<Scalar> adapt_columns(const Eigen::MatrixBase<Derived>& f, const AdapterParams<Scalar>& p) {
  if (f.rows() != p.in_channels())
    throw DataError("adapter expects " + std::to_string(p.in_channels()) + " input channels, got " +
                    std::to_string(f.rows()));
  Mat<Scalar> g = matmul(p.weight, f);
  g.colwise() += p.bias;
  return g;
}

template <typename Scalar>
Tensor<Scalar> adapt(const Tensor<Scalar>& f, const AdapterParams<Scalar>& p) {
  if (f.ndim() != 3) throw DataError("adapt expects a C x H x W map, got " + shape_string(f.dims()));
  Mat<Scalar> g = adapt_columns(f.matrix(), p);
  Tensor<Scalar> out({static_cast<std::size_t>(p.out_channels()), f.extent(1), f.extent(2)});
  out.matrix() = g;
  return out;
}

/// lambda * ||W W^T - I||_F^2, discouraging the adapter from contracting
/// features when it is trained jointly with the flow.
template <typename Scalar>
Scalar orthonormality_penalty(const Mat<Scalar>& w, Scalar lambda) {
  Mat<Scalar> gram = w * w.transpose();
  gram -= Mat<Scalar>::Identity(w.rows(), w.rows());
  return lambda * gram.squaredNorm();
}

template <typename Scalar>
Mat<Scalar> orthonormality_penalty_grad(const Mat<Scalar>& w, Scalar lambda) {
  Mat<Scalar> gram = w * w.transpose();
  gram -= Mat<Scalar>::Identity(w.rows(), w.rows());
  return Scalar(4) * lambda * gram * w;
}

}  // namespace pfad
