#pragma once

#include <utility>
#include <vector>

#include "pfad/numerics.hpp"

namespace pfad {

struct AggregationConfig {
  int patch_size = 3;
  int scale_count = 3;
  // Zero means "use the spatial size of the first hierarchy of scale 0".
  std::size_t base_height = 0;
  std::size_t base_width = 0;
  bool align_corners = true;

  void validate() const {
    if (patch_size < 1 || patch_size % 2 == 0)
      throw UsageError("patch_size must be odd and >= 1, got " + std::to_string(patch_size));
    if (scale_count < 1 || scale_count > 3)
      throw UsageError("scale_count must be 1, 2 or 3, got " + std::to_string(scale_count));
  }
};

/// scales[k][j] is the raw activation map of hierarchy j at scale k, shaped
/// c^j x h^j x w^j, with hierarchies ordered shallow to deep.
template <typename Scalar>
using FeatureStack = std::vector<std::vector<Tensor<Scalar>>>;

using Position = std::pair<std::size_t, std::size_t>;

inline void check_patch_size(int s) {
  if (s < 1 || s % 2 == 0) throw UsageError("patch size must be odd and >= 1, got " + std::to_string(s));
}

/// The s x s window centred on (h, w). Indices falling outside the map are
/// clamped to the border, so border windows repeat edge positions.
inline std::vector<Position> neighborhood(std::size_t h, std::size_t w, int s, std::size_t height,
                                          std::size_t width) {
  check_patch_size(s);
  if (h >= height || w >= width) throw UsageError("neighborhood centre outside the map");
  const auto r = static_cast<long>(s / 2);
  auto clamp = [](long v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<long>(v, 0, static_cast<long>(n) - 1));
  };
  std::vector<Position> out;
  out.reserve(static_cast<std::size_t>(s * s));
  for (long a = static_cast<long>(h) - r; a <= static_cast<long>(h) + r; ++a)
    for (long b = static_cast<long>(w) - r; b <= static_cast<long>(w) + r; ++b)
      out.emplace_back(clamp(a, height), clamp(b, width));
  return out;
}

/// Channelwise mean of each clamped s x s neighborhood. The window is a
/// product set, so the mean is taken separably (rows, then columns) with a
/// running mean that reproduces constant inputs exactly.
template <typename Scalar>
Tensor<Scalar> aggregate_hierarchy(const Tensor<Scalar>& y, int s) {
  check_patch_size(s);
  if (y.ndim() != 3) throw DataError("aggregate_hierarchy expects c x h x w, got " + shape_string(y.dims()));
  if (s == 1) return y;
  const std::size_t channels = y.extent(0), height = y.extent(1), width = y.extent(2);
  const long r = s / 2;
  auto clamp = [](long v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<long>(v, 0, static_cast<long>(n) - 1));
  };

  Tensor<Scalar> horizontal({channels, height, width});
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t h = 0; h < height; ++h)
      for (std::size_t w = 0; w < width; ++w) {
        Scalar mean = 0;
        int k = 0;
        for (long b = static_cast<long>(w) - r; b <= static_cast<long>(w) + r; ++b)
          mean += (y(c, h, clamp(b, width)) - mean) / static_cast<Scalar>(++k);
        horizontal(c, h, w) = mean;
      }

  Tensor<Scalar> out({channels, height, width});
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t h = 0; h < height; ++h)
      for (std::size_t w = 0; w < width; ++w) {
        Scalar mean = 0;
        int k = 0;
        for (long a = static_cast<long>(h) - r; a <= static_cast<long>(h) + r; ++a)
          mean += (horizontal(c, clamp(a, height), w) - mean) / static_cast<Scalar>(++k);
        out(c, h, w) = mean;
      }
  return out;
}

/// Upsamples deeper hierarchies to the size of the first and stacks channels
/// in hierarchy order.
template <typename Scalar>
Tensor<Scalar> fuse_hierarchies(std::span<const Tensor<Scalar>> patches, bool align_corners = true) {
  if (patches.empty()) throw DataError("fuse_hierarchies: no hierarchies given");
  const std::size_t h = patches[0].extent(1), w = patches[0].extent(2);
  std::vector<Tensor<Scalar>> resized;
  resized.reserve(patches.size());
  for (const auto& p : patches) resized.push_back(bilinear_resize(p, h, w, align_corners));
  return concat_channels(resized);
}

template <typename Scalar>
Tensor<Scalar> fuse_scales(std::span<const Tensor<Scalar>> per_scale, int expected_scales, std::size_t base_h,
                           std::size_t base_w, bool align_corners = true) {
  if (static_cast<int>(per_scale.size()) != expected_scales)
    throw DataError("fuse_scales: got " + std::to_string(per_scale.size()) + " scales, configured for " +
                    std::to_string(expected_scales));
  std::vector<Tensor<Scalar>> resized;
  resized.reserve(per_scale.size());
  for (const auto& f : per_scale) resized.push_back(bilinear_resize(f, base_h, base_w, align_corners));
  return concat_channels(resized);
}

/// Checks the structural assumptions on a feature stack: at least
/// `scale_count` scales, identical hierarchy channel layout across scales,
/// and non-increasing spatial size with depth.
template <typename Scalar>
void validate_stack(const FeatureStack<Scalar>& stack, int scale_count) {
  if (static_cast<int>(stack.size()) < scale_count)
    throw DataError("feature stack has " + std::to_string(stack.size()) + " scales, need " +
                    std::to_string(scale_count));
  for (int k = 0; k < scale_count; ++k) {
    const auto& scale = stack[static_cast<std::size_t>(k)];
    if (scale.empty()) throw DataError("scale " + std::to_string(k) + " has no hierarchies");
    if (scale.size() != stack[0].size())
      throw DataError("scale " + std::to_string(k) + " has a different hierarchy count than scale 0");
    for (std::size_t j = 0; j < scale.size(); ++j) {
      const auto& y = scale[j];
      if (y.ndim() != 3) throw DataError("hierarchy maps must be c x h x w, got " + shape_string(y.dims()));
      if (y.extent(0) != stack[0][j].extent(0))
        throw DataError("hierarchy " + std::to_string(j) + " channel count differs between scales");
      if (j > 0 && (y.extent(1) > scale[j - 1].extent(1) || y.extent(2) > scale[j - 1].extent(2)))
        throw DataError("hierarchy " + std::to_string(j) + " of scale " + std::to_string(k) +
                        " is spatially larger than its shallower neighbour");
    }
  }
}

/// Channels of the final patch feature map: S * sum_j c^j.
template <typename Scalar>
std::size_t aggregated_channels(const FeatureStack<Scalar>& stack, int scale_count) {
  std::size_t fused = 0;
  for (const auto& y : stack.at(0)) fused += y.extent(0);
  return fused * static_cast<std::size_t>(scale_count);
}

/// Full aggregation: per-hierarchy neighborhood mean, hierarchy fusion within
/// each scale, then scale fusion at the base resolution. Only the first
/// `scale_count` scales of the stack are used.
template <typename Scalar>
Tensor<Scalar> aggregate(const FeatureStack<Scalar>& stack, const AggregationConfig& config) {
  config.validate();
  validate_stack(stack, config.scale_count);
  std::size_t base_h = config.base_height ? config.base_height : stack[0][0].extent(1);
  std::size_t base_w = config.base_width ? config.base_width : stack[0][0].extent(2);

  std::vector<Tensor<Scalar>> fused;
  for (int k = 0; k < config.scale_count; ++k) {
    std::vector<Tensor<Scalar>> patches;
    for (const auto& y : stack[static_cast<std::size_t>(k)]) patches.push_back(aggregate_hierarchy(y, config.patch_size));
    fused.push_back(fuse_hierarchies(std::span<const Tensor<Scalar>>(patches), config.align_corners));
  }
  return fuse_scales(std::span<const Tensor<Scalar>>(fused), config.scale_count, base_h, base_w,
                     config.align_corners);
}

}  // namespace pfad
