#include "prunegcrn/experiment.hpp"

#include <sys/resource.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <thread>

#include "prunegcrn/csv.hpp"
#include "prunegcrn/errors.hpp"

namespace prunegcrn {

using json = nlohmann::json;

long peak_rss_kb() {
  rusage usage{};
  if (getrusage(RUSAGE_SELF, &usage) != 0) return 0;
  return usage.ru_maxrss;
}

SpatioTemporalDataset load_dataset(const ExperimentConfig& config, std::uint64_t data_seed) {
  if (!config.data.series.empty()) {
    std::optional<std::filesystem::path> coords;
    if (!config.data.coords.empty()) coords = config.data.coords;
    return load_csv(config.data.series, coords);
  }
  return gen_synthetic(config.data.synthetic_nodes, config.data.synthetic_steps,
                       config.data.synthetic_drivers, data_seed)
      .dataset;
}

NodeMask initial_mask(PruningMethod method, const SpatioTemporalDataset& ds, double fraction,
                      std::uint64_t seed, CorrelationMode mode) {
  const std::size_t k = kept_for_fraction(ds.nodes, fraction);
  switch (method) {
    case PruningMethod::kLearned: return NodeMask::initial(ds.nodes, ds.channels);
    case PruningMethod::kRandom: return random_mask(ds.nodes, k, derive_seed(seed, 0x6d61736b), ds.channels);
    case PruningMethod::kCorrelation: return correlation_mask(ds, k, mode);
  }
  throw DomainError("initial_mask: unknown method");
}

std::vector<RunSpec> plan_runs(const ExperimentConfig& config, std::span<const PruningMethod> methods,
                               std::span<const double> fractions) {
  std::vector<RunSpec> specs;
  for (auto m : methods) {
    for (double f : fractions) {
      for (std::size_t i = 0; i < config.run.runs; ++i) {
        RunSpec s;
        s.method = m;
        s.fraction = f;
        s.index = i;
        s.seed = derive_seed(config.run.seed, i);
        s.data_seed = config.data.synthetic_seed + (config.data.vary_synthetic_seed ? i : 0);
        specs.push_back(s);
      }
    }
  }
  return specs;
}

RunResult run_single(const ExperimentConfig& config, const RunSpec& spec, const SpatioTemporalDataset* dataset) {
  const auto start = std::chrono::steady_clock::now();
  std::optional<SpatioTemporalDataset> owned;
  if (!dataset) {
    owned = load_dataset(config, spec.data_seed);
    dataset = &*owned;
  }
  const SplitWindows windows = split_and_window(*dataset, config.data.window, config.data.horizon);

  ModelConfig mc = config.model;
  mc.nodes = dataset->nodes;
  mc.channels = dataset->channels;
  mc.window = config.data.window;
  mc.horizon = config.data.horizon;
  mc.masked = true;
  ModelParams params = ModelParams::init(mc, spec.seed);
  NodeMask mask = initial_mask(spec.method, *dataset, spec.fraction, spec.seed, config.pruning.correlation_mode);
  mask.ste_window = mc.ste_window;
  params.mask = std::move(mask);

  TrainingConfig tc = config.training;
  tc.gamma = 1.0 - spec.fraction;
  tc.seed = spec.seed;
  FitResult fitted = fit(windows, params, tc);

  RunResult r;
  r.spec = spec;
  r.test = evaluate(fitted.best, windows.test, tc.batch_size * 2).metrics;
  r.nodes = dataset->nodes;
  r.selected = selected_nodes(*fitted.best.mask);
  r.sparsity = sparsity(r.selected.size(), r.nodes);
  r.best_epoch = fitted.best_epoch;
  r.stop_epoch = fitted.stop_epoch;
  r.early_stopped = fitted.early_stopped;
  r.best_val_mae = fitted.best_val_mae;
  r.curve = std::move(fitted.curve);
  r.model = std::move(fitted.best);
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  r.peak_rss_kb = peak_rss_kb();
  return r;
}

std::vector<RunResult> run_all(const ExperimentConfig& config, const std::vector<RunSpec>& specs,
                               std::size_t workers, const std::function<void(const RunResult&)>& on_done) {
  std::vector<RunResult> results(specs.size());
  std::atomic<std::size_t> next{0};
  std::mutex lock;
  std::exception_ptr failure;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= specs.size()) return;
      {
        std::lock_guard<std::mutex> g(lock);
        if (failure) return;
      }
      try {
        results[i] = run_single(config, specs[i]);
        if (on_done) {
          std::lock_guard<std::mutex> g(lock);
          on_done(results[i]);
        }
      } catch (...) {
        std::lock_guard<std::mutex> g(lock);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(specs.size(), 1));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  return results;
}

Aggregate aggregate(std::span<const double> values) {
  Aggregate a;
  a.count = values.size();
  if (values.empty()) return a;
  a.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return a;
}

namespace {

json epoch_to_json(const EpochRecord& e) {
  return json{{"epoch", e.epoch}, {"finetune", e.finetune}, {"train_loss", e.train_loss},
              {"val_mae", e.val_mae}, {"kept", e.kept},         {"eligible", e.eligible}};
}

EpochRecord epoch_from_json(const json& j) {
  EpochRecord e;
  e.epoch = j.at("epoch").get<std::size_t>();
  e.finetune = j.at("finetune").get<bool>();
  e.train_loss = j.at("train_loss").get<double>();
  e.val_mae = j.at("val_mae").get<double>();
  e.kept = j.at("kept").get<std::size_t>();
  e.eligible = j.at("eligible").get<bool>();
  return e;
}

std::string cell_key(PruningMethod m, double f) { return std::string(to_string(m)) + "@" + format_double(f); }

}  // namespace

json run_to_json(const RunResult& r) {
  json curve = json::array();
  for (const auto& e : r.curve) curve.push_back(epoch_to_json(e));
  return json{
      {"method", to_string(r.spec.method)},
      {"fraction", r.spec.fraction},
      {"index", r.spec.index},
      {"seed", r.spec.seed},
      {"data_seed", r.spec.data_seed},
      {"test", {{"mae", r.test.mae},
                {"rmse", r.test.rmse},
                {"mape", r.test.mape},
                {"mape_excluded", r.test.mape_excluded},
                {"node_mae", r.test.node_mae}}},
      {"nodes", r.nodes},
      {"selected", r.selected},
      {"sparsity", r.sparsity},
      {"best_epoch", r.best_epoch},
      {"stop_epoch", r.stop_epoch},
      {"early_stopped", r.early_stopped},
      {"best_val_mae", r.best_val_mae},
      {"curve", curve},
      {"wall_seconds", r.wall_seconds},
      {"peak_rss_kb", r.peak_rss_kb},
  };
}

RunResult run_from_json(const json& j) {
  RunResult r;
  r.spec.method = parse_method(j.at("method").get<std::string>());
  r.spec.fraction = j.at("fraction").get<double>();
  r.spec.index = j.at("index").get<std::size_t>();
  r.spec.seed = j.at("seed").get<std::uint64_t>();
  r.spec.data_seed = j.at("data_seed").get<std::uint64_t>();
  const json& t = j.at("test");
  r.test.mae = t.at("mae").get<double>();
  r.test.rmse = t.at("rmse").get<double>();
  r.test.mape = t.at("mape").get<double>();
  r.test.mape_excluded = t.at("mape_excluded").get<std::size_t>();
  r.test.node_mae = t.at("node_mae").get<std::vector<double>>();
  r.nodes = j.at("nodes").get<std::size_t>();
  r.selected = j.at("selected").get<std::vector<std::size_t>>();
  r.sparsity = j.at("sparsity").get<double>();
  r.best_epoch = j.at("best_epoch").get<std::size_t>();
  r.stop_epoch = j.at("stop_epoch").get<std::size_t>();
  r.early_stopped = j.at("early_stopped").get<bool>();
  r.best_val_mae = j.at("best_val_mae").get<double>();
  for (const auto& e : j.at("curve")) r.curve.push_back(epoch_from_json(e));
  r.wall_seconds = j.at("wall_seconds").get<double>();
  r.peak_rss_kb = j.at("peak_rss_kb").get<long>();
  return r;
}

json make_report(const std::string& command, const ExperimentConfig& config, const std::vector<RunResult>& runs) {
  json report;
  report["command"] = command;
  report["config"] = config_to_json(config);
  report["runs"] = json::array();
  std::map<std::string, std::vector<const RunResult*>> cells;
  std::vector<std::string> order;
  for (const auto& r : runs) {
    report["runs"].push_back(run_to_json(r));
    const std::string key = cell_key(r.spec.method, r.spec.fraction);
    if (!cells.count(key)) order.push_back(key);
    cells[key].push_back(&r);
  }
  report["aggregates"] = json::array();
  for (const auto& key : order) {
    const auto& members = cells[key];
    std::vector<double> mae, rmse, mape, sp;
    for (const auto* r : members) {
      mae.push_back(r->test.mae);
      rmse.push_back(r->test.rmse);
      mape.push_back(r->test.mape);
      sp.push_back(r->sparsity);
    }
    auto agg = [](std::span<const double> v) {
      const Aggregate a = aggregate(v);
      return json{{"mean", a.mean}, {"std", a.stddev}, {"count", a.count}};
    };
    report["aggregates"].push_back(json{{"method", to_string(members.front()->spec.method)},
                                        {"fraction", members.front()->spec.fraction},
                                        {"mae", agg(mae)},
                                        {"rmse", agg(rmse)},
                                        {"mape", agg(mape)},
                                        {"sparsity", agg(sp)}});
  }
  return report;
}

std::vector<RunResult> runs_from_report(const json& report) {
  std::vector<RunResult> out;
  for (const auto& r : report.at("runs")) out.push_back(run_from_json(r));
  return out;
}

void write_grid_csv(const std::filesystem::path& path, const std::vector<RunResult>& runs,
                    std::span<const PruningMethod> methods, std::span<const double> fractions) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "method,metric";
  for (double f : fractions) out << ',' << format_double(f);
  out << '\n';
  const char* metric_names[] = {"mae", "rmse", "mape"};
  for (auto m : methods) {
    for (int k = 0; k < 3; ++k) {
      out << to_string(m) << ',' << metric_names[k];
      for (double f : fractions) {
        std::vector<double> v;
        for (const auto& r : runs) {
          if (r.spec.method != m || r.spec.fraction != f) continue;
          v.push_back(k == 0 ? r.test.mae : k == 1 ? r.test.rmse : r.test.mape);
        }
        out << ',';
        if (v.empty()) continue;
        const Aggregate a = aggregate(v);
        out << format_double(a.mean) << "±" << format_double(a.stddev);
      }
      out << '\n';
    }
  }
}

std::vector<BenchmarkRow> run_benchmark(const ExperimentConfig& config, std::span<const double> fractions) {
  const auto& b = config.benchmark;
  const std::size_t n = b.nodes;
  const auto syn = gen_synthetic(n, b.steps, std::max<std::size_t>(1, n / 5), config.run.seed);
  const SplitWindows windows = split_and_window(syn.dataset, config.data.window, config.data.horizon);
  ModelConfig mc = config.model;
  mc.nodes = n;
  mc.channels = 1;
  mc.window = config.data.window;
  mc.horizon = config.data.horizon;
  mc.masked = true;
  const ModelParams full = ModelParams::init(mc, config.run.seed);

  std::vector<BenchmarkRow> rows;
  for (double f : fractions) {
    if (!(f >= 0 && f < 1)) throw DomainError("benchmark: fraction must lie in [0, 1), got " + format_double(f));
    BenchmarkRow row;
    row.fraction = f;
    row.kept = kept_for_fraction(n, f);
    ModelParams model = full;
    WindowSet test = windows.test;
    if (f > 0) {
      const NodeMask mask = random_mask(n, row.kept, derive_seed(config.run.seed, 0x6d61736b));
      model = compact_rebuild(full, mask);
      test = windows.test.select_nodes(selected_nodes(mask));
    }
    const ModelFootprint fp = count_params_and_activations(mc, f, b.batch_size);
    row.parameters = model.parameter_count();
    row.peak_activations = fp.peak_activation_elements;
    {
      std::vector<double> in, tg;
      std::vector<std::size_t> idx(std::min(b.batch_size, test.count));
      std::iota(idx.begin(), idx.end(), 0);
      gather_batch(test, idx, in, tg);
      ad::Tape t(false);
      forward(t, model, in, idx.size());
      row.measured_activations = t.elements_emitted();
    }
    for (std::size_t rep = 0; rep < b.repetitions; ++rep) {
      const auto start = std::chrono::steady_clock::now();
      evaluate(model, test, b.batch_size);
      row.seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    }
    std::vector<double> sorted = row.seconds;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t m = sorted.size();
    row.median_seconds = m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_benchmark_csv(const std::filesystem::path& path, const std::vector<BenchmarkRow>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "fraction,kept_nodes,parameters,peak_activations,measured_activations,median_seconds\n";
  for (const auto& r : rows) {
    out << format_double(r.fraction) << ',' << r.kept << ',' << r.parameters << ',' << r.peak_activations << ','
        << r.measured_activations << ',' << format_double(r.median_seconds) << '\n';
  }
}

json benchmark_to_json(const std::vector<BenchmarkRow>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    out.push_back(json{{"fraction", r.fraction},
                       {"kept_nodes", r.kept},
                       {"parameters", r.parameters},
                       {"peak_activations", r.peak_activations},
                       {"measured_activations", r.measured_activations},
                       {"median_seconds", r.median_seconds},
                       {"seconds", r.seconds}});
  }
  return out;
}

AnalysisResult analyze_masks(const ExperimentConfig& config, const std::vector<std::vector<bool>>& masks,
                             std::span<const double> node_error, const SpatioTemporalDataset* geo) {
  if (masks.empty()) throw DataError("analyze: no masks given");
  AnalysisResult a;
  a.usage = usage_frequency(masks);
  a.keep_probability = a.usage.mean_count / static_cast<double>(a.usage.runs);
  a.chi_square = binomial_profile_test(a.usage, a.keep_probability);
  if (!node_error.empty() && node_error.size() != masks.front().size()) {
    throw DimensionError("analyze: " + std::to_string(node_error.size()) + " node errors for " +
                         std::to_string(masks.front().size()) + " nodes");
  }
  if (!geo) return a;
  if (!geo->coords) throw DataError("analyze: spatial analysis needs node coordinates");
  if (geo->nodes != masks.front().size()) {
    throw DimensionError("analyze: coordinates cover " + std::to_string(geo->nodes) + " nodes, masks " +
                         std::to_string(masks.front().size()));
  }
  std::vector<double> values;
  if (!node_error.empty()) {
    a.moran_variable = "mean_error";
    values.assign(node_error.begin(), node_error.end());
  } else {
    a.moran_variable = "usage_count";
    for (auto c : a.usage.counts) values.push_back(static_cast<double>(c));
  }
  const auto& an = config.analysis;
  a.distance_km = an.distance_km > 0 ? an.distance_km : default_distance_threshold(*geo->coords);
  a.knn_k = an.knn_k;
  const bool varies = std::any_of(values.begin(), values.end(), [&](double v) { return v != values.front(); });
  if (varies) {
    const auto wd = build_weights(*geo, WeightScheme::kDistance, a.distance_km, an.row_standardize);
    const auto wk = build_weights(*geo, WeightScheme::kKnn, static_cast<double>(an.knn_k), an.row_standardize);
    a.moran_distance = morans_i(values, wd, an.permutations, config.run.seed, an.p_value_mode, config.run.workers);
    a.moran_knn = morans_i(values, wk, an.permutations, config.run.seed, an.p_value_mode, config.run.workers);
  }
  std::vector<bool> selected(masks.front().size());
  for (std::size_t i = 0; i < selected.size(); ++i) selected[i] = a.usage.counts[i] * 2 > a.usage.runs;
  std::vector<double> err = node_error.empty() ? std::vector<double>(selected.size(), 0.0)
                                               : std::vector<double>(node_error.begin(), node_error.end());
  a.geojson = nodes_geojson(*geo, selected, err, a.usage.counts);
  return a;
}

json analysis_to_json(const AnalysisResult& a) {
  json j;
  j["usage_frequency"] = json{{"runs", a.usage.runs},
                              {"counts", a.usage.counts},
                              {"histogram", a.usage.histogram},
                              {"kept_in_all", a.usage.kept_in_all},
                              {"kept_in_90pct", a.usage.kept_in_90pct},
                              {"kept_in_50pct", a.usage.kept_in_50pct},
                              {"mean_count", a.usage.mean_count}};
  j["binomial_profile_test"] = json{{"keep_probability", a.keep_probability},
                                    {"statistic", a.chi_square.statistic},
                                    {"dof", a.chi_square.dof},
                                    {"p_value", a.chi_square.p_value},
                                    {"observed", a.chi_square.observed},
                                    {"expected", a.chi_square.expected}};
  if (a.moran_distance || a.moran_knn) {
    auto moran = [](const MoranResult& m) {
      return json{{"index", m.index},
                  {"expected", m.expected},
                  {"p_value", m.p_value},
                  {"permutations", m.permutations},
                  {"mode", m.mode == PValueMode::kPermutation ? "permutation" : "normal"}};
    };
    j["morans_i"] = json{{"variable", a.moran_variable}};
    if (a.moran_distance) {
      j["morans_i"]["distance"] = moran(*a.moran_distance);
      j["morans_i"]["distance"]["threshold_km"] = a.distance_km;
    }
    if (a.moran_knn) {
      j["morans_i"]["knn"] = moran(*a.moran_knn);
      j["morans_i"]["knn"]["k"] = a.knn_k;
    }
  }
  return j;
}

}  // namespace prunegcrn
