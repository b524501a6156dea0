#include "pfad/synth.hpp"

#include <cstdio>
#include <fstream>

#include "pfad/tensor_io.hpp"

namespace pfad {

void SynthSpec::validate() const {
  if (scales.empty() || scales.size() > 3) throw UsageError("synth: need 1 to 3 scales");
  for (const auto& scale : scales) {
    if (scale.size() != scales[0].size()) throw UsageError("synth: every scale needs the same hierarchy count");
    for (std::size_t j = 0; j < scale.size(); ++j) {
      const auto& s = scale[j];
      if (s.channels == 0 || s.height == 0 || s.width == 0) throw UsageError("synth: hierarchy extents must be >= 1");
      if (s.channels != scales[0][j].channels) throw UsageError("synth: hierarchy channels must match across scales");
      if (j > 0 && (s.height > scale[j - 1].height || s.width > scale[j - 1].width))
        throw UsageError("synth: deeper hierarchies cannot be larger than shallower ones");
    }
  }
  if (image_height == 0 || image_width == 0) throw UsageError("synth: image size must be positive");
  if (components < 1) throw UsageError("synth: components must be >= 1");
  if (!(sigma > 0.0)) throw UsageError("synth: sigma must be positive");
  if (mean_spread < 0.0) throw UsageError("synth: mean_spread must be >= 0");
  if (delta < 0.0) throw UsageError("synth: delta must be >= 0");
  if (!(blob_radius > 0.0) || 2.0 * blob_radius > static_cast<double>(std::min(image_height, image_width)))
    throw UsageError("synth: blob_radius must be positive and the blob must fit inside the " +
                     std::to_string(image_height) + "x" + std::to_string(image_width) + " image");
  if (train_count < 1 || test_normal < 1 || test_anomalous < 1)
    throw UsageError("synth: every split needs at least one image");
}

nlohmann::json to_json(const SynthSpec& s) {
  nlohmann::json scales = nlohmann::json::array();
  for (const auto& scale : s.scales) {
    nlohmann::json hs = nlohmann::json::array();
    for (const auto& h : scale) hs.push_back({h.channels, h.height, h.width});
    scales.push_back(std::move(hs));
  }
  return {{"scales", scales},
          {"image_height", s.image_height},
          {"image_width", s.image_width},
          {"components", s.components},
          {"mean_spread", s.mean_spread},
          {"sigma", s.sigma},
          {"delta", s.delta},
          {"blob_radius", s.blob_radius},
          {"train_count", s.train_count},
          {"test_normal", s.test_normal},
          {"test_anomalous", s.test_anomalous},
          {"seed", s.seed}};
}

SynthSpec synth_spec_from_json(const nlohmann::json& j, SynthSpec s) {
  if (!j.is_object()) throw UsageError("synth spec must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "scales") {
        s.scales.clear();
        for (const auto& scale : value) {
          std::vector<HierarchyShape> hs;
          for (const auto& h : scale) {
            auto dims = h.get<std::vector<std::size_t>>();
            if (dims.size() != 3) throw UsageError("synth: hierarchy shapes are [channels, height, width]");
            hs.push_back({dims[0], dims[1], dims[2]});
          }
          s.scales.push_back(std::move(hs));
        }
      } else if (key == "image_height") {
        s.image_height = value.get<std::size_t>();
      } else if (key == "image_width") {
        s.image_width = value.get<std::size_t>();
      } else if (key == "components") {
        s.components = value.get<int>();
      } else if (key == "mean_spread") {
        s.mean_spread = value.get<double>();
      } else if (key == "sigma") {
        s.sigma = value.get<double>();
      } else if (key == "delta") {
        s.delta = value.get<double>();
      } else if (key == "blob_radius") {
        s.blob_radius = value.get<double>();
      } else if (key == "train_count") {
        s.train_count = value.get<int>();
      } else if (key == "test_normal") {
        s.test_normal = value.get<int>();
      } else if (key == "test_anomalous") {
        s.test_anomalous = value.get<int>();
      } else if (key == "seed") {
        s.seed = value.get<std::uint64_t>();
      } else {
        throw UsageError("synth: unknown spec key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("synth: malformed spec: ") + e.what());
  }
  return s;
}

Tensor<double> disc_mask(std::size_t height, std::size_t width, double cy, double cx, double radius) {
  Tensor<double> mask({height, width});
  const double r2 = radius * radius;
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const double dy = static_cast<double>(y) + 0.5 - cy, dx = static_cast<double>(x) + 0.5 - cx;
      mask(y, x) = dy * dy + dx * dx <= r2 ? 1.0 : 0.0;
    }
  return mask;
}

Tensor<double> cell_coverage(const Tensor<double>& mask, std::size_t h, std::size_t w) {
  const std::size_t height = mask.extent(0), width = mask.extent(1);
  Tensor<double> sum({h, w}), count({h, w});
  for (std::size_t y = 0; y < height; ++y) {
    auto cy = static_cast<std::size_t>((static_cast<double>(y) + 0.5) * static_cast<double>(h) / static_cast<double>(height));
    for (std::size_t x = 0; x < width; ++x) {
      auto cx = static_cast<std::size_t>((static_cast<double>(x) + 0.5) * static_cast<double>(w) / static_cast<double>(width));
      sum(cy, cx) += mask(y, x);
      count(cy, cx) += 1.0;
    }
  }
  Tensor<double> out({h, w});
  for (std::size_t i = 0; i < out.size(); ++i) out(i) = count(i) > 0 ? sum(i) / count(i) : 0.0;
  return out;
}

SynthMixture make_mixture(const SynthSpec& spec, Rng& rng) {
  SynthMixture m;
  for (const auto& scale : spec.scales) {
    std::vector<std::vector<Vec<double>>> per_hier;
    for (const auto& h : scale) {
      std::vector<Vec<double>> comps;
      for (int c = 0; c < spec.components; ++c)
        comps.push_back(rng.normal_matrix<double>(static_cast<Eigen::Index>(h.channels), 1, spec.mean_spread));
      per_hier.push_back(std::move(comps));
    }
    m.means.push_back(std::move(per_hier));
  }
  return m;
}

SynthImage make_image(const SynthSpec& spec, const SynthMixture& mixture, Rng& rng, bool anomalous) {
  SynthImage img;
  img.component = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.components)));
  img.mask = Tensor<double>({spec.image_height, spec.image_width});
  if (anomalous) {
    const double r = spec.blob_radius;
    const double cy = rng.uniform(r, static_cast<double>(spec.image_height) - r);
    const double cx = rng.uniform(r, static_cast<double>(spec.image_width) - r);
    img.mask = disc_mask(spec.image_height, spec.image_width, cy, cx, r);
  }
  for (std::size_t k = 0; k < spec.scales.size(); ++k) {
    std::vector<Tensor<float>> hierarchies;
    for (std::size_t j = 0; j < spec.scales[k].size(); ++j) {
      const auto& shape = spec.scales[k][j];
      const auto c = static_cast<Eigen::Index>(shape.channels);
      const Vec<double>& mean = mixture.means[k][j][static_cast<std::size_t>(img.component)];
      Tensor<float> y({shape.channels, shape.height, shape.width});
      Mat<double> noise = rng.normal_matrix<double>(c, static_cast<Eigen::Index>(shape.height * shape.width), spec.sigma);
      Mat<double> values = noise.colwise() + mean;
      if (anomalous) {
        auto coverage = cell_coverage(img.mask, shape.height, shape.width);
        values.array().rowwise() += (spec.delta * spec.sigma * coverage.values()).transpose().array();
      }
      y.matrix() = values.cast<float>();
      hierarchies.push_back(std::move(y));
    }
    img.stack.push_back(std::move(hierarchies));
  }
  return img;
}

RunConfig synth_run_config(const SynthSpec& spec) {
  RunConfig c;
  c.image = {spec.image_height, spec.image_width};
  c.aggregation.scale_count = static_cast<int>(spec.scales.size());
  c.adapter_channels = 32;
  c.train.seed = spec.seed;
  return c;
}

namespace {

std::string indexed(const char* prefix, int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03d", i);
  return std::string(prefix) + buf;
}

}  // namespace

SynthOutput generate(const SynthSpec& spec, const std::filesystem::path& out) {
  spec.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out / "features");
  fs::create_directories(out / "masks");

  Rng rng(spec.seed);
  const auto mixture = make_mixture(spec, rng);

  auto emit = [&](const std::string& id, bool anomalous, bool with_mask) {
    auto img = make_image(spec, mixture, rng, anomalous);
    ManifestEntry e;
    e.image_id = id;
    e.label = anomalous ? Label::anomalous : Label::normal;
    e.feature_path = out / "features" / id;
    for (std::size_t k = 0; k < img.stack.size(); ++k) {
      fs::create_directories(e.feature_path);
      for (std::size_t j = 0; j < img.stack[k].size(); ++j)
        save_tensor(img.stack[k][j], e.feature_path / ("scale" + std::to_string(k) + "_hier" + std::to_string(j) + ".pftn"));
    }
    if (with_mask) {
      e.mask_path = out / "masks" / (id + ".pftn");
      save_tensor(img.mask.cast<float>(), *e.mask_path);
    }
    return e;
  };

  Manifest train;
  train.split = Split::train;
  for (int i = 0; i < spec.train_count; ++i) train.entries.push_back(emit(indexed("train_", i), false, false));
  Manifest test;
  test.split = Split::test;
  for (int i = 0; i < spec.test_normal; ++i) test.entries.push_back(emit(indexed("test_normal_", i), false, true));
  for (int i = 0; i < spec.test_anomalous; ++i)
    test.entries.push_back(emit(indexed("test_anomalous_", i), true, true));

  SynthOutput result{out / "train.json", out / "test.json", out / "config.json"};
  save_manifest(train, result.train_manifest);
  save_manifest(test, result.test_manifest);
  {
    std::ofstream f(out / "spec.json", std::ios::trunc);
    f << to_json(spec).dump(2) << "\n";
  }
  {
    auto config = to_json(synth_run_config(spec));
    config.erase("train_manifest");
    std::ofstream f(result.config, std::ios::trunc);
    f << config.dump(2) << "\n";
  }
  return result;
}

}  // namespace pfad
