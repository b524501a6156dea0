#include <doctest.h>

#include "metric_oracles.hpp"
#include "pfad/metrics.hpp"
#include "support.hpp"

using namespace pfad;

namespace {

Tensor<double> mask_from(const std::vector<std::string>& rows) {
  Tensor<double> m({rows.size(), rows[0].size()});
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c] == '#' ? 1.0 : 0.0;
  return m;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("auroc examples") {
    std::vector<int> labels = {0, 0, 1, 1};
    CHECK(auroc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, labels) == 1.0);
    CHECK(auroc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, labels) == 0.0);
    CHECK(auroc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, labels) == 0.5);
    CHECK(auroc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, labels) == 0.75);
    CHECK_THROWS_AS(auroc(std::vector<double>{1, 2}, std::vector<int>{1, 1}), DataError);
    CHECK_THROWS_AS(auroc(std::vector<double>{1, 2}, std::vector<int>{0, 2}), DataError);
    CHECK_THROWS_AS(auroc(std::vector<double>{1}, std::vector<int>{0, 1}), DataError);
  }

  TEST_CASE("auroc equals the pairwise statistic exactly, ties included") {
    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t n = 2 + rng.below(499);
      std::vector<double> scores(n);
      std::vector<int> labels(n);
      const bool coarse = trial % 2 == 0;
      for (std::size_t i = 0; i < n; ++i) {
        labels[i] = static_cast<int>(rng.below(2));
        scores[i] = coarse ? static_cast<double>(rng.below(7)) : rng.normal() + 0.5 * labels[i];
      }
      labels[0] = 0;
      labels[1] = 1;
      CHECK(auroc(scores, labels) == test::brute_force_auroc(scores, labels));
    }
  }

  TEST_CASE("auroc is invariant to monotone transforms and flips under negation") {
    Rng rng(2);
    std::vector<double> s(60), t(60), neg(60);
    std::vector<int> l(60);
    for (std::size_t i = 0; i < 60; ++i) {
      l[i] = static_cast<int>(i % 2);
      s[i] = rng.normal() + l[i];
      t[i] = std::exp(3 * s[i]) + 1;
      neg[i] = -s[i];
    }
    CHECK(auroc(s, l) == auroc(t, l));
    CHECK(auroc(neg, l) == doctest::Approx(1.0 - auroc(s, l)).epsilon(1e-15));
  }

  TEST_CASE("roc curve runs from the origin to (1, 1) and integrates to the auroc") {
    Rng rng(3);
    std::vector<double> s(40);
    std::vector<int> l(40);
    for (std::size_t i = 0; i < 40; ++i) {
      l[i] = i < 15 ? 1 : 0;
      s[i] = std::round(4 * rng.normal()) + l[i];
    }
    auto c = roc_curve(s, l);
    CHECK(c.fpr.front() == 0.0);
    CHECK(c.tpr.front() == 0.0);
    CHECK(c.fpr.back() == 1.0);
    CHECK(c.tpr.back() == 1.0);
    double area = 0;
    for (std::size_t k = 1; k < c.fpr.size(); ++k) area += (c.fpr[k] - c.fpr[k - 1]) * (c.tpr[k] + c.tpr[k - 1]) / 2;
    CHECK(area == doctest::Approx(c.auroc).epsilon(1e-12));
  }

  TEST_CASE("components use 8-connectivity") {
    auto m = mask_from({
        "#..#",
        ".#..",
        "...#",
        "##.#",
    });
    auto c = label_components(m);
    CHECK(c.count == 4);
    CHECK(c.labels[0] == c.labels[5]);
    CHECK(c.labels[3] != c.labels[11]);
    CHECK(c.labels[11] == c.labels[15]);
    CHECK(c.sizes == std::vector<std::size_t>{2, 1, 2, 2});
    Tensor<double> bad({1, 2});
    bad(0, 1) = 0.5;
    CHECK_THROWS_AS(label_components(bad), DataError);
  }

  TEST_CASE("components agree with a flood fill on random masks") {
    Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
      Tensor<double> m({1 + rng.below(12), 1 + rng.below(12)});
      for (std::size_t i = 0; i < m.size(); ++i) m(i) = rng.uniform() < 0.4 ? 1.0 : 0.0;
      int count = 0;
      auto oracle = test::flood_fill_labels(m, count);
      auto got = label_components(m);
      REQUIRE(got.count == count);
      // Flood fill also labels in raster order of first pixel.
      CHECK(got.labels == oracle);
    }
  }

  TEST_CASE("aupro of a perfect map is one and of an inverted map is zero") {
    auto mask = mask_from({"....", ".##.", ".##.", "...."});
    CHECK(aupro({mask}, {mask}) == doctest::Approx(1.0));
    Tensor<double> inverted(mask.dims());
    inverted.values() = 1.0 - mask.values().array();
    CHECK(aupro({inverted}, {mask}) == 0.0);
  }

  TEST_CASE("aupro equals an exhaustive threshold sweep on 8x8 maps") {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t images = 1 + rng.below(3);
      std::vector<Tensor<double>> maps, masks;
      for (std::size_t i = 0; i < images; ++i) {
        Tensor<double> mask({8, 8}), map({8, 8});
        const std::size_t blobs = rng.below(3);
        for (std::size_t b = 0; b < blobs; ++b) {
          auto r0 = rng.below(7), c0 = rng.below(7), hh = 1 + rng.below(3), ww = 1 + rng.below(3);
          for (std::size_t r = r0; r < std::min<std::size_t>(8, r0 + hh); ++r)
            for (std::size_t c = c0; c < std::min<std::size_t>(8, c0 + ww); ++c) mask(r, c) = 1.0;
        }
        for (std::size_t p = 0; p < 64; ++p) {
          const double base = trial % 3 == 0 ? std::round(rng.uniform() * 5) : rng.normal();
          map(p) = base + 1.5 * mask(p);
        }
        maps.push_back(map);
        masks.push_back(mask);
      }
      if (masks[0].values().sum() == 0) masks[0](27) = 1.0;
      for (double limit : {0.3, 0.05, 1.0}) {
        INFO("trial " << trial << " limit " << limit);
        CHECK(std::abs(aupro(maps, masks, limit) - test::exhaustive_aupro(maps, masks, limit)) <= 1e-9);
      }
    }
  }

  TEST_CASE("pro curve starts at the origin and stops at the limit") {
    Rng rng(6);
    auto mask = mask_from({"##......", "##......", "........", "......##", "......##", "........", "........",
                           "........"});
    Tensor<double> map({8, 8});
    for (std::size_t p = 0; p < 64; ++p) map(p) = rng.normal() + mask(p);
    auto curve = pro_curve({map}, {mask}, 0.3);
    CHECK(curve.fpr.front() == 0.0);
    CHECK(curve.pro.front() == 0.0);
    CHECK(curve.fpr.back() == doctest::Approx(0.3));
    CHECK(std::is_sorted(curve.fpr.begin(), curve.fpr.end()));
    CHECK(std::is_sorted(curve.pro.begin(), curve.pro.end()));
  }

  TEST_CASE("aupro input checks") {
    Tensor<double> map({4, 4}), empty({4, 4}), full = Tensor<double>::constant({4, 4}, 1.0);
    CHECK_THROWS_AS(aupro({map}, {empty}), DataError);
    CHECK_THROWS_AS(aupro({map}, {full}), DataError);
    CHECK_THROWS_AS(aupro({map}, {Tensor<double>({4, 5})}), DataError);
    CHECK_THROWS_AS(aupro({map}, {}), DataError);
  }

  TEST_CASE("capped area interpolates at the limit") {
    std::vector<double> x = {0.0, 0.2, 0.4}, y = {0.0, 1.0, 1.0};
    // Triangle to 0.2 (0.1) plus a 0.1-wide unit strip, over 0.3.
    CHECK(capped_area(x, y, 0.3) == doctest::Approx(0.2 / 0.3));
    CHECK(capped_area(x, y, 0.1) == doctest::Approx(0.25 * 0.1 / 0.1));
  }

  TEST_CASE("confusion counts treat normal as the positive class") {
    auto c = confusion_from_counts(34, 3, 0, 33);
    CHECK(c.accuracy == doctest::Approx(67.0 / 70.0));
    CHECK(c.f1_normal == doctest::Approx(68.0 / 71.0));
    CHECK(std::round(c.accuracy * 10000) / 100 == 95.71);
    CHECK(std::round(c.f1_normal * 10000) / 100 == 95.77);

    std::vector<double> scores = {0.1, 0.2, 0.9, 0.3, 0.95};
    std::vector<int> labels = {0, 0, 0, 1, 1};
    auto d = confusion(scores, labels, 0.5);
    CHECK(d.tp == 2);
    CHECK(d.fn == 1);
    CHECK(d.fp == 1);
    CHECK(d.tn == 1);
    CHECK(confusion(scores, labels, 0.9).fn == 0);  // strictly greater flags anomalous
    CHECK_THROWS_AS(confusion_from_counts(0, 0, 0, 0), DataError);
  }
}
