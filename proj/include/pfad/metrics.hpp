#pragma once

#include <span>
#include <vector>

#include "pfad/tensor.hpp"

namespace pfad {

struct RocCurve {
  std::vector<double> thresholds;  // descending; the first point has +inf
  std::vector<double> fpr;
  std::vector<double> tpr;
  double auroc = 0.0;
};

/// Mann-Whitney form of the area under the ROC curve: the fraction of
/// (anomalous, normal) pairs ordered correctly, ties counting one half.
/// labels: 1 = anomalous, 0 = normal.
double auroc(std::span<const double> scores, std::span<const int> labels);
RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels);

/// Connected regions of a binary H x W mask under 8-connectivity.
struct Components {
  std::size_t height = 0, width = 0;
  std::vector<int> labels;  // row-major; -1 for background, else 0..count-1
  int count = 0;
  std::vector<std::size_t> sizes;
};

Components label_components(const Tensor<double>& mask);

struct ProCurve {
  std::vector<double> fpr;  // truncated at fpr_limit (last point interpolated)
  std::vector<double> pro;
  double fpr_limit = 0.3;
  double area = 0.0;  // normalized to [0, 1] by fpr_limit
};

/// Per-region overlap curve: at every distinct score threshold t (pixel
/// fires when score >= t) the mean over all ground-truth regions of the
/// fraction of region pixels firing, against the false positive rate on
/// defect-free pixels of all images. The curve starts at (0, 0).
ProCurve pro_curve(const std::vector<Tensor<double>>& maps, const std::vector<Tensor<double>>& masks,
                   double fpr_limit = 0.3);
double aupro(const std::vector<Tensor<double>>& maps, const std::vector<Tensor<double>>& masks,
             double fpr_limit = 0.3);

/// Trapezoid area under a piecewise-linear curve up to x = limit, normalized
/// by limit. Points must have non-decreasing x.
double capped_area(std::span<const double> x, std::span<const double> y, double limit);

/// Counts with "normal" as the positive class: an image is predicted
/// anomalous when its score exceeds the threshold.
struct Confusion {
  std::size_t tp = 0;  // normal predicted normal
  std::size_t fp = 0;  // anomalous predicted normal
  std::size_t fn = 0;  // normal predicted anomalous
  std::size_t tn = 0;  // anomalous predicted anomalous
  double accuracy = 0.0;
  double f1_normal = 0.0;
};

Confusion confusion_from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn);
Confusion confusion(std::span<const double> scores, std::span<const int> labels, double threshold);

}  // namespace pfad
