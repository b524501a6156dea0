#include <doctest.h>

#include <set>

#include "pfad/numerics.hpp"
#include "support.hpp"

using namespace pfad;

namespace {

Mat<double> naive_matmul(const Mat<double>& a, const Mat<double>& b) {
  Mat<double> c = Mat<double>::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j)
      for (Eigen::Index k = 0; k < a.cols(); ++k) c(i, j) += a(i, k) * b(k, j);
  return c;
}

// Textbook bilinear sample of one channel at a fractional source position.
double sample(const Tensor<double>& x, std::size_t c, double sy, double sx) {
  const double h = static_cast<double>(x.extent(1)) - 1, w = static_cast<double>(x.extent(2)) - 1;
  sy = std::min(std::max(sy, 0.0), h);
  sx = std::min(std::max(sx, 0.0), w);
  const auto y0 = static_cast<std::size_t>(sy), x0 = static_cast<std::size_t>(sx);
  const auto y1 = std::min<std::size_t>(y0 + 1, x.extent(1) - 1), x1 = std::min<std::size_t>(x0 + 1, x.extent(2) - 1);
  const double dy = sy - static_cast<double>(y0), dx = sx - static_cast<double>(x0);
  return (1 - dy) * (1 - dx) * x(c, y0, x0) + (1 - dy) * dx * x(c, y0, x1) + dy * (1 - dx) * x(c, y1, x0) +
         dy * dx * x(c, y1, x1);
}

}  // namespace

TEST_SUITE("numerics") {
  TEST_CASE("rng streams are reproducible and seed-dependent") {
    Rng a(5), b(5), c(6);
    std::vector<std::uint64_t> va, vb, vc;
    for (int i = 0; i < 16; ++i) {
      va.push_back(a.next_u64());
      vb.push_back(b.next_u64());
      vc.push_back(c.next_u64());
    }
    CHECK(va == vb);
    CHECK(va != vc);
    a.reseed(5);
    CHECK(a.next_u64() == va[0]);
  }

  TEST_CASE("uniform, below and normal have the right support and moments") {
    Rng rng(1);
    const int n = 200000;
    double sum = 0, sq = 0;
    std::vector<int> counts(7, 0);
    for (int i = 0; i < n; ++i) {
      double u = rng.uniform();
      REQUIRE(u >= 0.0);
      REQUIRE(u < 1.0);
      auto k = rng.below(7);
      REQUIRE(k < 7);
      ++counts[k];
      double z = rng.normal();
      sum += z;
      sq += z * z;
    }
    CHECK(std::abs(sum / n) < 0.01);
    CHECK(std::abs(sq / n - 1.0) < 0.02);
    for (int c : counts) CHECK(std::abs(c - n / 7.0) < 5 * std::sqrt(n / 7.0));
  }

  TEST_CASE("permutation is a bijection") {
    Rng rng(3);
    for (int n : {1, 2, 17, 64}) {
      auto p = rng.permutation(n);
      std::set<int> s(p.begin(), p.end());
      CHECK(static_cast<int>(s.size()) == n);
      CHECK(*s.begin() == 0);
      CHECK(*s.rbegin() == n - 1);
    }
  }

  TEST_CASE("matmul agrees with a triple loop") {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
      auto m = 1 + static_cast<Eigen::Index>(rng.below(9));
      auto k = 1 + static_cast<Eigen::Index>(rng.below(9));
      auto n = 1 + static_cast<Eigen::Index>(rng.below(9));
      Mat<double> a = rng.normal_matrix<double>(m, k), b = rng.normal_matrix<double>(k, n);
      CHECK((matmul(a, b) - naive_matmul(a, b)).cwiseAbs().maxCoeff() < 1e-12);
    }
    Mat<double> a(2, 3), b(4, 2);
    CHECK_THROWS_AS(matmul(a, b), DataError);
  }

  TEST_CASE("bilinear resize matches a per-pixel oracle") {
    Rng rng(21);
    auto x = test::random_tensor<double>(rng, {2, 4, 5});
    for (auto [oh, ow] : {std::pair<std::size_t, std::size_t>{8, 10}, {7, 3}, {4, 9}, {1, 1}, {2, 2}}) {
      for (bool align : {true, false}) {
        auto y = bilinear_resize(x, oh, ow, align);
        REQUIRE(y.dims() == Shape{2, oh, ow});
        double err = 0;
        for (std::size_t c = 0; c < 2; ++c)
          for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
              double sy, sx;
              if (align) {
                sy = oh == 1 ? 0.0 : double(i) * 3.0 / double(oh - 1);
                sx = ow == 1 ? 0.0 : double(j) * 4.0 / double(ow - 1);
              } else {
                sy = (double(i) + 0.5) * 4.0 / double(oh) - 0.5;
                sx = (double(j) + 0.5) * 5.0 / double(ow) - 0.5;
              }
              err = std::max(err, std::abs(y(c, i, j) - sample(x, c, sy, sx)));
            }
        CHECK(err < 1e-12);
      }
    }
  }

  TEST_CASE("bilinear resize preserves constants, extremes and identity") {
    auto c = Tensor<float>::constant({3, 5, 7}, 0.3f);
    auto up = bilinear_resize(c, 11, 13);
    CHECK((up.values().array() == 0.3f).all());
    Rng rng(2);
    auto x = test::random_tensor<float>(rng, {1, 6, 6});
    auto y = bilinear_resize(x, 16, 21);
    CHECK(y.values().maxCoeff() == x.values().maxCoeff());
    CHECK(y.values().minCoeff() == x.values().minCoeff());
    auto off_grid = bilinear_resize(x, 17, 23);
    CHECK(off_grid.values().maxCoeff() <= x.values().maxCoeff());
    CHECK(off_grid.values().minCoeff() >= x.values().minCoeff());
    CHECK(bilinear_resize(x, 6, 6) == x);
    CHECK_THROWS_AS(bilinear_resize(x, 0, 3), DataError);
    CHECK_THROWS_AS(bilinear_resize(Tensor<float>({6, 6}), 3, 3), DataError);
  }

  TEST_CASE("concat_channels stacks in order and checks spatial size") {
    std::vector<Tensor<double>> maps = {Tensor<double>::constant({1, 2, 2}, 1.0), Tensor<double>::constant({2, 2, 2}, 2.0)};
    auto out = concat_channels(maps);
    CHECK(out.dims() == Shape{3, 2, 2});
    CHECK(out(0, 1, 1) == 1.0);
    CHECK(out(2, 0, 0) == 2.0);
    maps.push_back(Tensor<double>({1, 3, 2}));
    CHECK_THROWS_AS(concat_channels(maps), DataError);
  }
}
