#pragma once

#include <filesystem>
#include <vector>

#include <json.hpp>

#include "pfad/aggregation.hpp"
#include "pfad/config.hpp"

namespace pfad {

struct HierarchyShape {
  std::size_t channels = 0, height = 0, width = 0;
};

/// Synthetic stand-in for backbone activations. Normal patch features are
/// drawn from a K-component Gaussian mixture (one component per image);
/// anomalous images get a disc-shaped blob inside which every feature
/// coordinate is shifted by delta * sigma, weighted by how much of each
/// feature cell the disc covers.
struct SynthSpec {
  // scales[k][j]: shape of hierarchy j at scale k.
  std::vector<std::vector<HierarchyShape>> scales = {
      {{16, 16, 16}, {16, 8, 8}},
      {{16, 12, 12}, {16, 6, 6}},
      {{16, 8, 8}, {16, 4, 4}},
  };
  std::size_t image_height = 64;
  std::size_t image_width = 64;
  int components = 2;
  double mean_spread = 1.0;  // stddev of the mixture means around 0
  double sigma = 1.0;        // per-coordinate noise stddev
  double delta = 3.0;        // anomaly shift in units of sigma
  double blob_radius = 10.0;  // in image pixels
  int train_count = 60;
  int test_normal = 20;
  int test_anomalous = 20;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const SynthSpec& s);
SynthSpec synth_spec_from_json(const nlohmann::json& j, SynthSpec base = {});

/// Filled disc: pixel (y, x) is set when its centre (y + 0.5, x + 0.5) lies
/// within `radius` of (cy, cx).
Tensor<double> disc_mask(std::size_t height, std::size_t width, double cy, double cx, double radius);

/// Fraction of each cell of an h x w grid laid over `mask` that is covered.
/// Image pixels are assigned to the cell containing their centre.
Tensor<double> cell_coverage(const Tensor<double>& mask, std::size_t h, std::size_t w);

/// Dataset-wide mixture parameters: means[k][j][component].
struct SynthMixture {
  std::vector<std::vector<std::vector<Vec<double>>>> means;
};

SynthMixture make_mixture(const SynthSpec& spec, Rng& rng);

struct SynthImage {
  FeatureStack<float> stack;
  Tensor<double> mask;  // image_height x image_width, all zero for normal images
  int component = 0;
};

SynthImage make_image(const SynthSpec& spec, const SynthMixture& mixture, Rng& rng, bool anomalous);

struct SynthOutput {
  std::filesystem::path train_manifest;
  std::filesystem::path test_manifest;
  std::filesystem::path config;
};

/// Writes features/<id>/scale{k}_hier{j}.pftn, masks/<id>.pftn, train.json,
/// test.json, spec.json and a matching run config (config.json) under `out`.
SynthOutput generate(const SynthSpec& spec, const std::filesystem::path& out);

/// Run configuration matched to a synthetic dataset: image size, three
/// scales and a 32-channel adapter.
RunConfig synth_run_config(const SynthSpec& spec);

}  // namespace pfad
