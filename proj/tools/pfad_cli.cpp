#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "pfad/engine.hpp"
#include "pfad/synth.hpp"

namespace {

using namespace pfad;

struct TrainArgs {
  std::string manifest, config, out;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs, flow_steps, scales, threads;
  std::optional<double> lr;
  std::optional<std::int64_t> adapter_channels;
  std::optional<std::string> precision;
};

struct ScoreArgs {
  std::string model, features, heatmap_out;
  int threads = 1;
};

struct EvalArgs {
  std::string model, manifest, report, train_manifest;
  std::vector<std::string> ablate;
  std::optional<int> threads;
};

struct SynthArgs {
  std::string spec, out;
  std::optional<std::uint64_t> seed;
};

void log_line(const std::string& s) { std::cerr << s << "\n"; }

void write_json(const nlohmann::json& j, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f << j.dump(2) << "\n";
}

int run_train(const TrainArgs& a) {
  RunConfig config = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  if (a.seed) config.train.seed = *a.seed;
  if (a.epochs) config.train.epochs = *a.epochs;
  if (a.lr) config.train.learning_rate = *a.lr;
  if (a.flow_steps) config.flow.steps = *a.flow_steps;
  if (a.scales) config.aggregation.scale_count = *a.scales;
  if (a.adapter_channels) config.adapter_channels = *a.adapter_channels;
  if (a.precision) config.train.precision = parse_precision(*a.precision);
  if (a.threads) config.threads = *a.threads;
  config.train_manifest = fs::absolute(a.manifest).lexically_normal().string();
  config.validate();

  auto manifest = load_manifest(a.manifest);
  auto ck = train_checkpoint(manifest, config, log_line);
  fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_checkpoint(ck, out);

  fs::path csv = fs::path(out).replace_extension(".loss.csv");
  std::ofstream f(csv, std::ios::trunc);
  f << "epoch,loss\n";
  const auto history = ck.meta["loss_history"].get<std::vector<double>>();
  for (std::size_t e = 0; e < history.size(); ++e) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", e + 1, history[e]);
    f << buf;
  }
  log_line("wrote " + out.string() + " and " + csv.string());
  return 0;
}

int run_score(const ScoreArgs& a) {
  auto ck = load_checkpoint(a.model);
  std::vector<ManifestEntry> entries;
  if (fs::is_directory(a.features)) {
    ManifestEntry e;
    e.feature_path = a.features;
    e.image_id = fs::path(a.features).lexically_normal().filename().string();
    if (e.image_id.empty()) e.image_id = fs::path(a.features).lexically_normal().parent_path().filename().string();
    entries.push_back(std::move(e));
  } else {
    entries = load_manifest(a.features).entries;
  }
  auto results = score_checkpoint(ck, entries, a.threads);
  if (!a.heatmap_out.empty()) fs::create_directories(a.heatmap_out);
  for (const auto& r : results) {
    std::printf("%s\t%.9g\n", r.image_id.c_str(), r.image_score);
    if (!a.heatmap_out.empty()) write_pgm(r.map, fs::path(a.heatmap_out) / (r.image_id + ".pgm"));
  }
  return 0;
}

int run_eval(const EvalArgs& a) {
  auto ck = load_checkpoint(a.model);
  auto config = run_config_from_json(ck.config);
  if (a.threads) config.threads = *a.threads;
  auto test = load_manifest(a.manifest);
  auto report = evaluate_checkpoint(ck, test, config.threads);
  if (!a.ablate.empty()) {
    std::string train_path = a.train_manifest.empty() ? config.train_manifest : a.train_manifest;
    if (train_path.empty()) throw UsageError("--ablate needs the training manifest; pass --train-manifest");
    auto train = load_manifest(train_path);
    for (const auto& spec : a.ablate) {
      auto [name, values] = parse_ablation(spec);
      report["ablation"][name] = run_ablation(config, train, test, name, values, log_line);
    }
  }
  write_json(report, a.report);
  std::printf("auroc\t%.6f\n", report["auroc"].get<double>());
  if (report.contains("aupro")) std::printf("aupro\t%.6f\n", report["aupro"].get<double>());
  return 0;
}

int run_synth(const SynthArgs& a) {
  SynthSpec spec;
  if (!a.spec.empty()) {
    std::ifstream in(a.spec);
    if (!in) throw UsageError("cannot open synth spec " + a.spec);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw UsageError("synth spec " + a.spec + " is not valid JSON: " + e.what());
    }
    spec = synth_spec_from_json(j);
  }
  if (a.seed) spec.seed = *a.seed;
  auto out = generate(spec, a.out);
  std::printf("%s\n%s\n%s\n", out.train_manifest.c_str(), out.test_manifest.c_str(), out.config.c_str());
  return 0;
}

int run_inspect(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  char magic[4] = {};
  in.read(magic, 4);
  in.seekg(0);
  if (std::equal(magic, magic + 4, kTensorMagic)) {
    auto t = read_tensor(in);
    std::visit(
        [](const auto& x) {
          std::printf("tensor dtype=%s shape=%s\n", dtype_name(dtype_of(TensorF{x})), shape_string(x.dims()).c_str());
          if (x.size() > 0)
            std::printf("min=%.9g max=%.9g mean=%.9g\n", double(x.values().minCoeff()), double(x.values().maxCoeff()),
                        double(x.values().mean()));
        },
        t);
  } else if (std::equal(magic, magic + 4, kCheckpointMagic)) {
    auto ck = read_checkpoint(in);
    std::printf("checkpoint version=%u seed=%llu\n", ck.format_version,
                static_cast<unsigned long long>(ck.rng_seed));
    std::printf("config %s\n", ck.config.dump().c_str());
    std::printf("meta %s\n", ck.meta.dump().c_str());
    for (const auto& [name, t] : ck.tensors)
      std::printf("  %-32s %s %s\n", name.c_str(), dtype_name(dtype_of(t)), shape_string(dims_of(t)).c_str());
  } else {
    throw DataError(path + " is neither a PFTN tensor nor a PFCK checkpoint");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Patch-level normalizing-flow anomaly detector"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Fit adapter and flow on a normal-only manifest");
  train->add_option("--manifest", ta.manifest, "Training manifest (split \"train\")")->required();
  train->add_option("--config", ta.config, "RunConfig JSON");
  train->add_option("--out", ta.out, "Checkpoint path")->required();
  train->add_option("--seed", ta.seed);
  train->add_option("--epochs", ta.epochs);
  train->add_option("--lr", ta.lr);
  train->add_option("--flow-steps", ta.flow_steps);
  train->add_option("--scales", ta.scales);
  train->add_option("--adapter-channels", ta.adapter_channels);
  train->add_option("--precision", ta.precision)->check(CLI::IsMember({"f32", "f64"}));
  train->add_option("--threads", ta.threads);

  ScoreArgs sa;
  auto* score = app.add_subcommand("score", "Print image scores and optionally write heatmaps");
  score->add_option("--model", sa.model)->required();
  score->add_option("--features", sa.features, "Manifest or a single feature directory")->required();
  score->add_option("--heatmap-out", sa.heatmap_out, "Directory for PGM heatmaps");
  score->add_option("--threads", sa.threads)->check(CLI::PositiveNumber);

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Compute AUROC/AUPRO and confusion metrics");
  eval->add_option("--model", ea.model)->required();
  eval->add_option("--manifest", ea.manifest)->required();
  eval->add_option("--report", ea.report, "Output JSON path")->required();
  eval->add_option("--ablate", ea.ablate, "flow_steps=LO..HI or scales=LO..HI; repeatable");
  eval->add_option("--train-manifest", ea.train_manifest, "Overrides the manifest recorded in the checkpoint");
  eval->add_option("--threads", ea.threads)->check(CLI::PositiveNumber);

  SynthArgs ya;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic feature dataset");
  synth->add_option("--spec", ya.spec, "Synth spec JSON (defaults used when omitted)");
  synth->add_option("--out", ya.out)->required();
  synth->add_option("--seed", ya.seed);

  std::string inspect_path;
  auto* inspect = app.add_subcommand("inspect", "Print the header of a tensor or checkpoint file");
  inspect->add_option("path", inspect_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train) return run_train(ta);
    if (*score) return run_score(sa);
    if (*eval) return run_eval(ea);
    if (*synth) return run_synth(ya);
    if (*inspect) return run_inspect(inspect_path);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
