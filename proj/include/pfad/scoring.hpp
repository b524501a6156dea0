#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pfad/numerics.hpp"

namespace pfad {

enum class ThresholdKind { train_max, train_quantile, fixed };

struct ThresholdPolicy {
  ThresholdKind kind = ThresholdKind::train_max;
  double parameter = 1.0;  // quantile q for train-quantile, the value for fixed

  void validate() const {
    if (kind == ThresholdKind::train_quantile && !(parameter > 0.0 && parameter <= 1.0))
      throw UsageError("threshold quantile must lie in (0, 1]");
    if (kind == ThresholdKind::fixed && !std::isfinite(parameter))
      throw UsageError("fixed threshold must be finite");
  }
};

const char* to_string(ThresholdKind k);
ThresholdKind parse_threshold_kind(const std::string& s);

/// Per-pixel anomaly map at input resolution plus its maximum.
struct AnomalyResult {
  std::string image_id;
  Tensor<double> map;  // H x W
  double image_score = 0.0;
  std::optional<Tensor<double>> mask;  // binary H x W, present once thresholded
};

/// Per-patch negative log-likelihood up to a constant: ||z||^2 / 2 - logdet.
template <typename Scalar>
Tensor<Scalar> patch_scores(const Tensor<Scalar>& z_map, const Tensor<Scalar>& logdet_map) {
  if (z_map.ndim() != 3 || logdet_map.ndim() != 2 || z_map.extent(1) != logdet_map.extent(0) ||
      z_map.extent(2) != logdet_map.extent(1))
    throw DataError("patch_scores: latent map " + shape_string(z_map.dims()) + " and log-det map " +
                    shape_string(logdet_map.dims()) + " disagree");
  Tensor<Scalar> scores({logdet_map.extent(0), logdet_map.extent(1)});
  scores.values() = (Scalar(0.5) * z_map.matrix().colwise().squaredNorm()).transpose() - logdet_map.values();
  if (!scores.values().allFinite()) throw NumericalError("patch_scores: non-finite score");
  return scores;
}

template <typename Scalar>
Tensor<Scalar> anomaly_map(const Tensor<Scalar>& scores, std::size_t height, std::size_t width,
                           bool align_corners = true) {
  if (scores.ndim() != 2) throw DataError("anomaly_map expects an H_g x W_g score map");
  if (height == 0 || width == 0) throw DataError("anomaly_map: zero output extent");
  if (height < scores.extent(0) || width < scores.extent(1))
    throw DataError("anomaly_map: output " + std::to_string(height) + "x" + std::to_string(width) +
                    " is smaller than the score grid " + shape_string(scores.dims()));
  auto up = bilinear_resize(scores.reshaped({1, scores.extent(0), scores.extent(1)}), height, width, align_corners);
  return up.reshaped({height, width});
}

template <typename Scalar>
Scalar image_score(const Tensor<Scalar>& map) {
  if (map.size() == 0) throw DataError("image_score: empty map");
  return map.values().maxCoeff();
}

double calibrate_threshold(std::vector<double> train_scores, const ThresholdPolicy& policy);

/// 1 where map > threshold, else 0.
Tensor<double> threshold_mask(const Tensor<double>& map, double threshold);

/// Min-max normalized 16-bit binary graymap (P5, maxval 65535). The
/// normalization bounds go to `<path>.txt` as "min <v>\nmax <v>\n".
void write_pgm(const Tensor<double>& map, const std::filesystem::path& path);
/// Binary bitmap (P4); set pixels are 1 (black).
void write_pbm(const Tensor<double>& mask, const std::filesystem::path& path);

struct GrayImage {
  std::size_t width = 0, height = 0, maxval = 0;
  std::vector<std::uint16_t> pixels;
};
GrayImage read_pgm(const std::filesystem::path& path);

}  // namespace pfad
