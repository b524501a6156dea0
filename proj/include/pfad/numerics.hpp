#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "pfad/tensor.hpp"

namespace pfad {

/// xoshiro256** seeded through splitmix64. Normal deviates use Box-Muller, so
/// a seed yields the same stream on every platform with an IEEE libm.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed);
  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

  std::vector<int> permutation(int n) {
    std::vector<int> p(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
    shuffle(p);
    return p;
  }

  template <typename Scalar>
  Mat<Scalar> normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev = 1.0) {
    Mat<Scalar> m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = static_cast<Scalar>(stddev * normal());
    return m;
  }

  template <typename Scalar>
  Mat<Scalar> uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound) {
    Mat<Scalar> m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = static_cast<Scalar>(uniform(-bound, bound));
    return m;
  }

 private:
  std::uint64_t seed_ = 0;
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

template <typename DerivedA, typename DerivedB>
auto matmul(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  if (a.cols() != b.rows())
    throw DataError("matmul: inner dimensions differ (" + std::to_string(a.rows()) + "x" +
                    std::to_string(a.cols()) + " times " + std::to_string(b.rows()) + "x" +
                    std::to_string(b.cols()) + ")");
  Mat<Scalar> out(a.rows(), b.cols());
  out.noalias() = a * b;
  return out;
}

namespace detail {

struct LerpTap {
  std::size_t lo = 0;
  std::size_t hi = 0;
  double frac = 0.0;
};

inline std::vector<LerpTap> lerp_taps(std::size_t in, std::size_t out, bool align_corners) {
  std::vector<LerpTap> taps(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src;
    if (align_corners)
      src = out == 1 ? 0.0 : static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
    else
      src = (static_cast<double>(i) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    auto lo = static_cast<std::size_t>(std::floor(src));
    taps[i] = {lo, std::min(lo + 1, in - 1), src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace detail

/// Per-channel bilinear resampling of a C x H x W map. The result at every
/// output pixel is clamped to the range of its four source taps, so
/// interpolated values never exceed the input extremes through rounding.
template <typename Scalar>
Tensor<Scalar> bilinear_resize(const Tensor<Scalar>& x, std::size_t out_h, std::size_t out_w,
                               bool align_corners = true) {
  if (x.ndim() != 3) throw DataError("bilinear_resize expects a C x H x W map, got " + shape_string(x.dims()));
  if (out_h == 0 || out_w == 0) throw DataError("bilinear_resize: target extent must be >= 1");
  const std::size_t channels = x.extent(0), in_h = x.extent(1), in_w = x.extent(2);
  if (in_h == out_h && in_w == out_w) return x;

  auto rows = detail::lerp_taps(in_h, out_h, align_corners);
  auto cols = detail::lerp_taps(in_w, out_w, align_corners);
  Tensor<Scalar> out({channels, out_h, out_w});
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < out_h; ++i) {
      const auto& r = rows[i];
      const auto fy = static_cast<Scalar>(r.frac);
      for (std::size_t j = 0; j < out_w; ++j) {
        const auto& q = cols[j];
        const auto fx = static_cast<Scalar>(q.frac);
        const Scalar v00 = x(c, r.lo, q.lo), v01 = x(c, r.lo, q.hi);
        const Scalar v10 = x(c, r.hi, q.lo), v11 = x(c, r.hi, q.hi);
        const Scalar top = v00 + fx * (v01 - v00);
        const Scalar bottom = v10 + fx * (v11 - v10);
        const Scalar v = top + fy * (bottom - top);
        const Scalar lo = std::min({v00, v01, v10, v11});
        const Scalar hi = std::max({v00, v01, v10, v11});
        out(c, i, j) = std::clamp(v, lo, hi);
      }
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> concat_channels(std::span<const Tensor<Scalar>> maps) {
  if (maps.empty()) throw DataError("concat_channels: no inputs");
  const std::size_t h = maps[0].extent(1), w = maps[0].extent(2);
  std::size_t channels = 0;
  for (const auto& m : maps) {
    if (m.ndim() != 3) throw DataError("concat_channels expects C x H x W maps");
    if (m.extent(1) != h || m.extent(2) != w)
      throw DataError("concat_channels: spatial size " + shape_string(m.dims()) +
                      " does not match " + shape_string(maps[0].dims()));
    channels += m.extent(0);
  }
  Tensor<Scalar> out({channels, h, w});
  Eigen::Index offset = 0;
  for (const auto& m : maps) {
    auto n = static_cast<Eigen::Index>(m.size());
    out.values().segment(offset, n) = m.values();
    offset += n;
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> concat_channels(const std::vector<Tensor<Scalar>>& maps) {
  return concat_channels(std::span<const Tensor<Scalar>>(maps));
}

}  // namespace pfad
