#include "pfad/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

namespace pfad {

const char* to_string(ThresholdKind k) {
  switch (k) {
    case ThresholdKind::train_max: return "train-max";
    case ThresholdKind::train_quantile: return "train-quantile";
    case ThresholdKind::fixed: return "fixed";
  }
  return "?";
}

ThresholdKind parse_threshold_kind(const std::string& s) {
  if (s == "train-max") return ThresholdKind::train_max;
  if (s == "train-quantile") return ThresholdKind::train_quantile;
  if (s == "fixed") return ThresholdKind::fixed;
  throw UsageError("unknown threshold policy '" + s + "' (expected train-max|train-quantile|fixed)");
}

double calibrate_threshold(std::vector<double> train_scores, const ThresholdPolicy& policy) {
  policy.validate();
  if (policy.kind == ThresholdKind::fixed) return policy.parameter;
  if (train_scores.empty()) throw DataError("calibrate_threshold: no training scores");
  std::sort(train_scores.begin(), train_scores.end());
  if (policy.kind == ThresholdKind::train_max) return train_scores.back();
  // Nearest rank: the smallest score with at least q * n scores at or below it.
  const double n = static_cast<double>(train_scores.size());
  auto rank = static_cast<std::size_t>(std::ceil(policy.parameter * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, train_scores.size());
  return train_scores[rank - 1];
}

Tensor<double> threshold_mask(const Tensor<double>& map, double threshold) {
  Tensor<double> mask(map.dims());
  mask.values() = (map.values().array() > threshold).cast<double>();
  return mask;
}

void write_pgm(const Tensor<double>& map, const std::filesystem::path& path) {
  if (map.ndim() != 2) throw DataError("write_pgm expects an H x W map");
  const double lo = map.values().minCoeff(), hi = map.values().maxCoeff();
  const double span = hi - lo;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "P5\n" << map.extent(1) << " " << map.extent(0) << "\n65535\n";
  for (std::size_t i = 0; i < map.size(); ++i) {
    double unit = span > 0 ? (map(i) - lo) / span : 0.0;
    auto v = static_cast<std::uint16_t>(std::lround(std::clamp(unit, 0.0, 1.0) * 65535.0));
    const char bytes[2] = {static_cast<char>(v >> 8), static_cast<char>(v & 0xFF)};
    out.write(bytes, 2);
  }
  if (!out) throw DataError("failed writing " + path.string());

  std::ofstream side(path.string() + ".txt", std::ios::trunc);
  side << std::setprecision(17) << "min " << lo << "\nmax " << hi << "\n";
}

void write_pbm(const Tensor<double>& mask, const std::filesystem::path& path) {
  if (mask.ndim() != 2) throw DataError("write_pbm expects an H x W mask");
  const std::size_t h = mask.extent(0), w = mask.extent(1);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "P4\n" << w << " " << h << "\n";
  std::vector<unsigned char> row((w + 7) / 8);
  for (std::size_t r = 0; r < h; ++r) {
    std::fill(row.begin(), row.end(), 0);
    for (std::size_t c = 0; c < w; ++c)
      if (mask(r, c) != 0.0) row[c / 8] |= static_cast<unsigned char>(0x80 >> (c % 8));
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw DataError("failed writing " + path.string());
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string magic;
  GrayImage img;
  in >> magic >> img.width >> img.height >> img.maxval;
  if (magic != "P5" || !in) throw DataError(path.string() + " is not a binary PGM");
  in.get();
  const bool wide = img.maxval > 255;
  img.pixels.resize(img.width * img.height);
  for (auto& p : img.pixels) {
    unsigned char b[2] = {0, 0};
    in.read(reinterpret_cast<char*>(b), wide ? 2 : 1);
    p = wide ? static_cast<std::uint16_t>((b[0] << 8) | b[1]) : b[0];
  }
  if (!in) throw DataError(path.string() + ": truncated PGM payload");
  return img;
}

}  // namespace pfad
