#pragma once

#include <algorithm>
#include <cstdint>
#include <queue>
#include <set>
#include <vector>

#include "pfad/tensor.hpp"

namespace pfad::test {

/// Pairwise Mann-Whitney statistic: correct orderings count 2, ties 1,
/// divided by twice the number of (anomalous, normal) pairs.
inline double brute_force_auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  std::int64_t twice = 0, pos = 0, neg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] == 1) ++pos; else ++neg;
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      twice += scores[i] > scores[j] ? 2 : scores[i] == scores[j] ? 1 : 0;
    }
  }
  return static_cast<double>(twice) / static_cast<double>(2 * pos * neg);
}

/// 8-connected regions by breadth-first flood fill; -1 marks background.
inline std::vector<int> flood_fill_labels(const Tensor<double>& mask, int& count) {
  const long h = static_cast<long>(mask.extent(0)), w = static_cast<long>(mask.extent(1));
  std::vector<int> labels(mask.size(), -1);
  count = 0;
  for (long r = 0; r < h; ++r)
    for (long c = 0; c < w; ++c) {
      if (mask(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) == 0.0 || labels[static_cast<std::size_t>(r * w + c)] >= 0)
        continue;
      std::queue<std::pair<long, long>> q;
      q.emplace(r, c);
      labels[static_cast<std::size_t>(r * w + c)] = count;
      while (!q.empty()) {
        auto [y, x] = q.front();
        q.pop();
        for (long dy = -1; dy <= 1; ++dy)
          for (long dx = -1; dx <= 1; ++dx) {
            long yy = y + dy, xx = x + dx;
            if (yy < 0 || xx < 0 || yy >= h || xx >= w) continue;
            auto idx = static_cast<std::size_t>(yy * w + xx);
            if (mask(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) == 0.0 || labels[idx] >= 0) continue;
            labels[idx] = count;
            q.emplace(yy, xx);
          }
      }
      ++count;
    }
  return labels;
}

/// Normalized area under the per-region-overlap curve up to `limit`,
/// recomputing every curve point from scratch at each distinct threshold.
inline double exhaustive_aupro(const std::vector<Tensor<double>>& maps, const std::vector<Tensor<double>>& masks,
                               double limit) {
  struct Region {
    std::size_t image;
    std::vector<std::size_t> pixels;
  };
  std::vector<Region> regions;
  std::set<double> distinct;
  std::size_t normal_total = 0;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    int count = 0;
    auto labels = flood_fill_labels(masks[i], count);
    std::vector<Region> local(static_cast<std::size_t>(count), Region{i, {}});
    for (std::size_t p = 0; p < labels.size(); ++p) {
      if (labels[p] >= 0)
        local[static_cast<std::size_t>(labels[p])].pixels.push_back(p);
      else
        ++normal_total;
      distinct.insert(maps[i](p));
    }
    regions.insert(regions.end(), local.begin(), local.end());
  }
  std::vector<double> xs{0.0}, ys{0.0};
  for (auto it = distinct.rbegin(); it != distinct.rend(); ++it) {
    const double t = *it;
    std::size_t fp = 0;
    for (std::size_t i = 0; i < maps.size(); ++i)
      for (std::size_t p = 0; p < maps[i].size(); ++p)
        if (masks[i](p) == 0.0 && maps[i](p) >= t) ++fp;
    double overlap = 0.0;
    for (const auto& r : regions) {
      std::size_t hit = 0;
      for (auto p : r.pixels) hit += maps[r.image](p) >= t;
      overlap += static_cast<double>(hit) / static_cast<double>(r.pixels.size());
    }
    xs.push_back(static_cast<double>(fp) / static_cast<double>(normal_total));
    ys.push_back(overlap / static_cast<double>(regions.size()));
  }
  double area = 0.0;
  for (std::size_t k = 1; k < xs.size(); ++k) {
    double x0 = xs[k - 1], x1 = xs[k], y0 = ys[k - 1], y1 = ys[k];
    if (x0 >= limit) break;
    if (x1 > limit) {
      y1 = y0 + (y1 - y0) * (limit - x0) / (x1 - x0);
      x1 = limit;
    }
    area += 0.5 * (x1 - x0) * (y0 + y1);
  }
  return area / limit;
}

}  // namespace pfad::test
