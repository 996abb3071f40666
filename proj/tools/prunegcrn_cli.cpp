#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "prunegcrn/config.hpp"
#include "prunegcrn/csv.hpp"
#include "prunegcrn/errors.hpp"
#include "prunegcrn/experiment.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace prunegcrn;

namespace {

enum ExitCode {
  kOk = 0,
  kUnexpected = 1,
  kUsage = 2,
  kConfigFailure = 3,
  kDataFailure = 4,
  kNumericFailure = 5,
  kTrainingFailure = 6,
  kDimensionFailure = 7,
  kDomainFailure = 8,
};

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::kConfig: return kConfigFailure;
    case ErrorKind::kData:
    case ErrorKind::kParse: return kDataFailure;
    case ErrorKind::kNumeric: return kNumericFailure;
    case ErrorKind::kTraining: return kTrainingFailure;
    case ErrorKind::kDimension: return kDimensionFailure;
    case ErrorKind::kDomain: return kDomainFailure;
  }
  return kUnexpected;
}

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::size_t> workers;
  std::optional<std::string> fractions;
  std::optional<std::string> methods;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "INI config, or a JSON report to re-run");
  cmd->add_option("--set", o.overrides, "Override a field: section.key=value (repeatable)");
  cmd->add_option("--seed", o.seed, "Base seed");
  cmd->add_option("--out-dir", o.out_dir, "Output directory");
  cmd->add_option("--workers", o.workers, "Concurrent runs");
  cmd->add_option("--fractions", o.fractions, "Comma-separated pruning fractions");
  cmd->add_option("--methods", o.methods, "Comma-separated methods: learned,random,correlation");
}

ExperimentConfig resolve(const CommonOptions& o) {
  ExperimentConfig c;
  if (!o.config_path.empty()) c = load_config(o.config_path);
  for (const auto& s : o.overrides) {
    const auto eq = s.find('=');
    const auto dot = s.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
      throw ConfigError("--set: expected section.key=value, got '" + s + "'");
    }
    set_field(c, s.substr(0, dot), s.substr(dot + 1, eq - dot - 1), s.substr(eq + 1));
  }
  if (o.seed) c.run.seed = *o.seed;
  if (o.out_dir) c.run.out_dir = *o.out_dir;
  if (o.workers) c.run.workers = *o.workers;
  if (o.fractions) c.run.fractions = parse_fraction_list(*o.fractions);
  if (o.methods) c.run.methods = parse_method_list(*o.methods);
  c.validate();
  return c;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::string run_stem(const RunResult& r) {
  return std::string(to_string(r.spec.method)) + "_f" + format_double(r.spec.fraction) + "_r" +
         std::to_string(r.spec.index);
}

void save_run_artifacts(const fs::path& dir, const RunResult& r) {
  if (!r.model) return;
  fs::create_directories(dir / "checkpoints");
  fs::create_directories(dir / "masks");
  save_checkpoint((dir / "checkpoints" / (run_stem(r) + ".ckpt")).string(), *r.model);
  write_mask_csv(dir / "masks" / (run_stem(r) + ".csv"), *r.model->mask);
}

void progress(const RunResult& r) {
  std::fprintf(stderr, "%s fraction=%s run=%zu test_mae=%.4f kept=%zu/%zu %.1fs\n", to_string(r.spec.method),
               format_double(r.spec.fraction).c_str(), r.spec.index, r.test.mae, r.selected.size(), r.nodes,
               r.wall_seconds);
}

int cmd_train(const CommonOptions& o) {
  const ExperimentConfig c = resolve(o);
  const fs::path dir = c.run.out_dir;
  fs::create_directories(dir);
  const PruningMethod method = c.pruning.method;
  const double fraction = c.pruning.fraction;
  const auto specs = plan_runs(c, std::span(&method, 1), std::span(&fraction, 1));
  const auto runs = run_all(c, specs, c.run.workers, progress);
  for (const auto& r : runs) save_run_artifacts(dir, r);
  write_json(dir / "train_report.json", make_report("train", c, runs));
  return kOk;
}

int cmd_evaluate(const CommonOptions& o, const std::string& checkpoint) {
  const ExperimentConfig c = resolve(o);
  const ModelParams params = load_checkpoint(checkpoint);
  const auto ds = load_dataset(c, c.data.synthetic_seed);
  if (ds.nodes != params.config.nodes) {
    throw DimensionError("evaluate: checkpoint has " + std::to_string(params.config.nodes) + " nodes, dataset " +
                         std::to_string(ds.nodes));
  }
  const auto windows = split_and_window(ds, params.config.window, params.config.horizon);
  const auto ev = evaluate(params, windows.test, c.training.batch_size * 2);
  json report{{"command", "evaluate"},
              {"checkpoint", checkpoint},
              {"config", config_to_json(c)},
              {"test", {{"mae", ev.metrics.mae},
                        {"rmse", ev.metrics.rmse},
                        {"mape", ev.metrics.mape},
                        {"mape_excluded", ev.metrics.mape_excluded},
                        {"node_mae", ev.metrics.node_mae}}}};
  if (params.mask) report["selected"] = selected_nodes(*params.mask);
  fs::create_directories(c.run.out_dir);
  write_json(fs::path(c.run.out_dir) / "evaluate_report.json", report);
  std::printf("test MAE %.6f RMSE %.6f MAPE %.4f%%\n", ev.metrics.mae, ev.metrics.rmse, ev.metrics.mape);
  return kOk;
}

int cmd_compare(const CommonOptions& o) {
  const ExperimentConfig c = resolve(o);
  const fs::path dir = c.run.out_dir;
  fs::create_directories(dir);
  const auto specs = plan_runs(c, c.run.methods, c.run.fractions);
  const auto runs = run_all(c, specs, c.run.workers, progress);
  for (const auto& r : runs) save_run_artifacts(dir, r);
  write_grid_csv(dir / "grid.csv", runs, c.run.methods, c.run.fractions);
  write_json(dir / "compare_report.json", make_report("compare-pruning", c, runs));
  return kOk;
}

int cmd_benchmark(const CommonOptions& o) {
  const ExperimentConfig c = resolve(o);
  const fs::path dir = c.run.out_dir;
  fs::create_directories(dir);
  const auto rows = run_benchmark(c, c.run.fractions);
  write_benchmark_csv(dir / "benchmark.csv", rows);
  write_json(dir / "benchmark_report.json",
             json{{"command", "benchmark"}, {"config", config_to_json(c)}, {"rows", benchmark_to_json(rows)},
                  {"peak_rss_kb", peak_rss_kb()}});
  for (const auto& r : rows) {
    std::printf("fraction %-5s kept %4zu params %9zu activations %11zu median %.4fs\n",
                format_double(r.fraction).c_str(), r.kept, r.parameters, r.peak_activations, r.median_seconds);
  }
  return kOk;
}

std::vector<fs::path> expand_mask_paths(const std::vector<std::string>& inputs) {
  std::vector<fs::path> out;
  for (const auto& s : inputs) {
    if (fs::is_directory(s)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(s)) {
        if (e.path().extension() == ".csv") files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      out.insert(out.end(), files.begin(), files.end());
    } else {
      out.emplace_back(s);
    }
  }
  return out;
}

int cmd_analyze(const CommonOptions& o, const std::vector<std::string>& mask_inputs,
                const std::vector<std::string>& reports, bool spatial) {
  const ExperimentConfig c = resolve(o);
  std::vector<std::vector<bool>> masks;
  for (const auto& p : expand_mask_paths(mask_inputs)) masks.push_back(read_mask_csv(p).selected);
  std::vector<double> node_error;
  std::size_t error_runs = 0;
  for (const auto& path : reports) {
    std::ifstream in(path);
    if (!in) throw DataError("analyze: cannot open report " + path);
    json rep;
    try {
      rep = json::parse(in);
    } catch (const json::exception& e) {
      throw DataError("analyze: " + path + ": " + e.what());
    }
    for (const auto& r : runs_from_report(rep)) {
      if (node_error.empty()) node_error.assign(r.test.node_mae.size(), 0.0);
      if (r.test.node_mae.size() != node_error.size()) throw DimensionError("analyze: reports disagree on node count");
      for (std::size_t i = 0; i < node_error.size(); ++i) node_error[i] += r.test.node_mae[i];
      ++error_runs;
      if (mask_inputs.empty()) {
        std::vector<bool> m(r.nodes, false);
        for (auto i : r.selected) m[i] = true;
        masks.push_back(std::move(m));
      }
    }
  }
  for (double& e : node_error) e /= static_cast<double>(std::max<std::size_t>(error_runs, 1));
  std::optional<SpatioTemporalDataset> geo;
  if (spatial) geo = load_dataset(c, c.data.synthetic_seed);
  const auto a = analyze_masks(c, masks, node_error, geo ? &*geo : nullptr);
  const fs::path dir = c.run.out_dir;
  fs::create_directories(dir);
  json report = analysis_to_json(a);
  report["command"] = "analyze";
  report["config"] = config_to_json(c);
  write_json(dir / "analysis_report.json", report);
  if (a.geojson) write_json(dir / "nodes.geojson", *a.geojson);
  std::printf("runs %zu kept_in_all %zu chi2 p %.3g\n", a.usage.runs, a.usage.kept_in_all, a.chi_square.p_value);
  return kOk;
}

int cmd_gen_synthetic(const CommonOptions& o, std::size_t nodes, std::size_t steps, std::size_t drivers) {
  ExperimentConfig c = resolve(o);
  if (nodes == 0 || steps == 0 || drivers == 0 || drivers > nodes) {
    throw ConfigError("gen-synthetic: need nodes > 0, steps > 0 and 1 <= drivers <= nodes");
  }
  const auto syn = gen_synthetic(nodes, steps, drivers, c.run.seed);
  const fs::path dir = c.run.out_dir;
  fs::create_directories(dir);
  write_series_csv(dir / "series.csv", syn.dataset);
  write_coords_csv(dir / "coords.csv", syn.dataset);
  std::ofstream truth(dir / "drivers.txt");
  for (auto d : syn.drivers) truth << syn.dataset.node_ids[d] << '\n';
  if (!truth) throw DataError("cannot write " + (dir / "drivers.txt").string());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph-convolutional recurrent forecasting with learned node pruning"};
  app.require_subcommand(1);
  CommonOptions common;

  auto* train = app.add_subcommand("train", "Train runs of the configured method and fraction");
  add_common(train, common);

  auto* eval = app.add_subcommand("evaluate", "Evaluate a checkpoint on the test split");
  add_common(eval, common);
  std::string checkpoint;
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();

  auto* compare = app.add_subcommand("compare-pruning", "Method x fraction x seed grid");
  add_common(compare, common);

  auto* bench = app.add_subcommand("benchmark", "Compact-model size and inference time per fraction");
  add_common(bench, common);

  auto* analyze = app.add_subcommand("analyze", "Mask usage frequency and spatial autocorrelation");
  add_common(analyze, common);
  std::vector<std::string> mask_inputs, reports;
  bool no_spatial = false;
  analyze->add_option("--masks", mask_inputs, "Mask CSV files or directories");
  analyze->add_option("--reports", reports, "Run reports supplying per-node errors");
  analyze->add_flag("--no-spatial", no_spatial, "Skip Moran's I and GeoJSON");

  auto* gen = app.add_subcommand("gen-synthetic", "Write a synthetic dataset");
  add_common(gen, common);
  std::size_t gen_nodes = 20, gen_steps = 4000, gen_drivers = 4;
  gen->add_option("--nodes", gen_nodes, "Node count");
  gen->add_option("--steps", gen_steps, "Timesteps");
  gen->add_option("--drivers", gen_drivers, "Driver nodes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return cmd_train(common);
    if (*eval) return cmd_evaluate(common, checkpoint);
    if (*compare) return cmd_compare(common);
    if (*bench) return cmd_benchmark(common);
    if (*analyze) {
      if (mask_inputs.empty() && reports.empty()) throw ConfigError("analyze: give --masks or --reports");
      return cmd_analyze(common, mask_inputs, reports, !no_spatial);
    }
    if (*gen) return cmd_gen_synthetic(common, gen_nodes, gen_steps, gen_drivers);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUnexpected;
  }
  return kUsage;
}
