#include "pfad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace pfad {

namespace {

void check_binary_labels(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DataError("scores and labels differ in length");
  for (int l : labels)
    if (l != 0 && l != 1) throw DataError("labels must be 0 (normal) or 1 (anomalous)");
  for (double s : scores)
    if (std::isnan(s)) throw NumericalError("NaN score");
}

std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const int> labels) {
  check_binary_labels(scores, labels);
  const auto positives = static_cast<std::int64_t>(std::count(labels.begin(), labels.end(), 1));
  const auto negatives = static_cast<std::int64_t>(labels.size()) - positives;
  if (positives == 0 || negatives == 0) throw DataError("auroc needs both normal and anomalous samples");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the Mann-Whitney U, kept integral so ties are exact.
  std::int64_t twice_u = 0, negatives_below = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::int64_t pos = 0, neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1 ? pos : neg) += 1;
      ++j;
    }
    twice_u += 2 * pos * negatives_below + pos * neg;
    negatives_below += neg;
    i = j;
  }
  return static_cast<double>(twice_u) / static_cast<double>(2 * positives * negatives);
}

RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels) {
  RocCurve curve;
  curve.auroc = auroc(scores, labels);
  const auto positives = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const auto negatives = static_cast<double>(labels.size()) - positives;
  auto order = descending_order(scores);
  curve.thresholds.push_back(std::numeric_limits<double>::infinity());
  curve.fpr.push_back(0.0);
  curve.tpr.push_back(0.0);
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1 ? tp : fp) += 1;
      ++j;
    }
    curve.thresholds.push_back(scores[order[i]]);
    curve.fpr.push_back(fp / negatives);
    curve.tpr.push_back(tp / positives);
    i = j;
  }
  return curve;
}

Components label_components(const Tensor<double>& mask) {
  if (mask.ndim() != 2) throw DataError("label_components expects an H x W mask");
  Components out;
  out.height = mask.extent(0);
  out.width = mask.extent(1);
  const std::size_t n = mask.size();
  out.labels.assign(n, -1);

  std::vector<int> parent;
  auto find = [&](int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  };
  auto unite = [&](int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
  };

  // First pass: provisional labels from the already-visited 8-neighbours.
  for (std::size_t r = 0; r < out.height; ++r)
    for (std::size_t c = 0; c < out.width; ++c) {
      const double v = mask(r, c);
      if (v != 0.0 && v != 1.0) throw DataError("mask values must be 0 or 1");
      if (v == 0.0) continue;
      int label = -1;
      const long dr[4] = {-1, -1, -1, 0}, dc[4] = {-1, 0, 1, -1};
      for (int k = 0; k < 4; ++k) {
        long rr = static_cast<long>(r) + dr[k], cc = static_cast<long>(c) + dc[k];
        if (rr < 0 || cc < 0 || cc >= static_cast<long>(out.width)) continue;
        int nb = out.labels[static_cast<std::size_t>(rr) * out.width + static_cast<std::size_t>(cc)];
        if (nb < 0) continue;
        if (label < 0)
          label = nb;
        else
          unite(label, nb);
      }
      if (label < 0) {
        label = static_cast<int>(parent.size());
        parent.push_back(label);
      }
      out.labels[r * out.width + c] = label;
    }

  // Second pass: compact root labels to 0..count-1 in raster order.
  std::vector<int> compact(parent.size(), -1);
  for (auto& l : out.labels) {
    if (l < 0) continue;
    int root = find(l);
    if (compact[static_cast<std::size_t>(root)] < 0) {
      compact[static_cast<std::size_t>(root)] = out.count++;
      out.sizes.push_back(0);
    }
    l = compact[static_cast<std::size_t>(root)];
    ++out.sizes[static_cast<std::size_t>(l)];
  }
  return out;
}

double capped_area(std::span<const double> x, std::span<const double> y, double limit) {
  if (x.size() != y.size() || x.empty()) throw DataError("capped_area: malformed curve");
  if (!(limit > 0.0)) throw UsageError("fpr limit must be positive");
  double area = 0.0;
  for (std::size_t k = 1; k < x.size(); ++k) {
    const double x0 = x[k - 1], x1 = x[k], y0 = y[k - 1], y1 = y[k];
    if (x1 <= limit) {
      area += (x1 - x0) * (y0 + y1) / 2.0;
      continue;
    }
    if (x0 < limit) {
      const double y_at = y0 + (y1 - y0) * (limit - x0) / (x1 - x0);
      area += (limit - x0) * (y0 + y_at) / 2.0;
    }
    break;
  }
  return area / limit;
}

ProCurve pro_curve(const std::vector<Tensor<double>>& maps, const std::vector<Tensor<double>>& masks,
                   double fpr_limit) {
  if (maps.size() != masks.size()) throw DataError("aupro: map and mask counts differ");
  if (!(fpr_limit > 0.0 && fpr_limit <= 1.0)) throw UsageError("fpr limit must lie in (0, 1]");

  struct Pixel {
    double score;
    int region;  // -1 for defect-free pixels
  };
  std::vector<Pixel> pixels;
  std::vector<double> inv_size;
  std::size_t normal_pixels = 0;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (maps[i].dims() != masks[i].dims() || maps[i].ndim() != 2)
      throw DataError("aupro: map " + shape_string(maps[i].dims()) + " and mask " + shape_string(masks[i].dims()) +
                      " must be equal-sized H x W arrays");
    auto comps = label_components(masks[i]);
    const int offset = static_cast<int>(inv_size.size());
    for (auto s : comps.sizes) inv_size.push_back(1.0 / static_cast<double>(s));
    for (std::size_t p = 0; p < maps[i].size(); ++p) {
      const int l = comps.labels[p];
      pixels.push_back({maps[i](p), l < 0 ? -1 : l + offset});
      normal_pixels += l < 0;
    }
  }
  if (inv_size.empty()) throw DataError("aupro: no anomalous region in any mask");
  if (normal_pixels == 0) throw DataError("aupro: no defect-free pixels to measure false positives on");

  std::sort(pixels.begin(), pixels.end(), [](const Pixel& a, const Pixel& b) { return a.score > b.score; });
  const double regions = static_cast<double>(inv_size.size());
  std::vector<double> fpr{0.0}, pro{0.0};
  std::size_t false_positives = 0;
  double overlap_sum = 0.0;
  for (std::size_t i = 0; i < pixels.size();) {
    std::size_t j = i;
    for (; j < pixels.size() && pixels[j].score == pixels[i].score; ++j) {
      if (pixels[j].region < 0)
        ++false_positives;
      else
        overlap_sum += inv_size[static_cast<std::size_t>(pixels[j].region)];
    }
    fpr.push_back(static_cast<double>(false_positives) / static_cast<double>(normal_pixels));
    pro.push_back(std::min(1.0, overlap_sum / regions));
    i = j;
  }

  ProCurve curve;
  curve.fpr_limit = fpr_limit;
  curve.area = capped_area(fpr, pro, fpr_limit);
  for (std::size_t k = 0; k < fpr.size(); ++k) {
    if (fpr[k] <= fpr_limit) {
      curve.fpr.push_back(fpr[k]);
      curve.pro.push_back(pro[k]);
      continue;
    }
    const double x0 = fpr[k - 1], y0 = pro[k - 1];
    curve.fpr.push_back(fpr_limit);
    curve.pro.push_back(y0 + (pro[k] - y0) * (fpr_limit - x0) / (fpr[k] - x0));
    break;
  }
  return curve;
}

double aupro(const std::vector<Tensor<double>>& maps, const std::vector<Tensor<double>>& masks, double fpr_limit) {
  return pro_curve(maps, masks, fpr_limit).area;
}

Confusion confusion_from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn) {
  Confusion c{tp, fp, fn, tn, 0.0, 0.0};
  const std::size_t total = tp + fp + fn + tn;
  if (total == 0) throw DataError("confusion: no samples");
  c.accuracy = static_cast<double>(tp + tn) / static_cast<double>(total);
  const double denom = static_cast<double>(2 * tp + fp + fn);
  c.f1_normal = denom > 0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
  return c;
}

Confusion confusion(std::span<const double> scores, std::span<const int> labels, double threshold) {
  if (!std::isfinite(threshold)) throw UsageError("confusion: threshold must be finite");
  check_binary_labels(scores, labels);
  if (scores.empty()) throw DataError("confusion: no samples");
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted_anomalous = scores[i] > threshold;
    if (labels[i] == 0)
      (predicted_anomalous ? fn : tp) += 1;
    else
      (predicted_anomalous ? tn : fp) += 1;
  }
  return confusion_from_counts(tp, fp, fn, tn);
}

}  // namespace pfad
