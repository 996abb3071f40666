#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prunegcrn/analysis.hpp"
#include "prunegcrn/config.hpp"
#include "prunegcrn/metrics.hpp"
#include "prunegcrn/model.hpp"
#include "prunegcrn/training.hpp"

namespace prunegcrn {

struct RunSpec {
  PruningMethod method = PruningMethod::kLearned;
  double fraction = 0.0;
  std::size_t index = 0;        // run index within its (method, fraction) cell
  std::uint64_t seed = 0;       // model init, shuffling and random masks
  std::uint64_t data_seed = 0;  // synthetic generator
};

struct RunResult {
  RunSpec spec;
  MetricSet test;
  std::vector<std::size_t> selected;
  std::size_t nodes = 0;
  double sparsity = 0.0;
  std::size_t best_epoch = 0;
  std::size_t stop_epoch = 0;
  bool early_stopped = false;
  double best_val_mae = 0.0;
  std::vector<EpochRecord> curve;
  double wall_seconds = 0.0;
  long peak_rss_kb = 0;
  /// Trained parameters; not serialized into reports.
  std::optional<ModelParams> model;
};

/// The configured CSV dataset, or the synthetic one generated from `data_seed`.
SpatioTemporalDataset load_dataset(const ExperimentConfig& config, std::uint64_t data_seed);

/// Keep_k mask for a baseline method; learned returns the all-ones initial mask.
NodeMask initial_mask(PruningMethod method, const SpatioTemporalDataset& ds, double fraction,
                      std::uint64_t seed, CorrelationMode mode);

/// Specs for every (method, fraction) cell × config.run.runs seeds. Run i of a
/// cell uses seed derive_seed(run.seed, i), so cells share seeds.
std::vector<RunSpec> plan_runs(const ExperimentConfig& config, std::span<const PruningMethod> methods,
                               std::span<const double> fractions);

/// Trains one model and evaluates its best checkpoint on the test split.
/// `dataset` overrides loading; it must match `spec.data_seed`.
RunResult run_single(const ExperimentConfig& config, const RunSpec& spec,
                     const SpatioTemporalDataset* dataset = nullptr);

/// Runs every spec on `workers` threads; results come back in spec order.
std::vector<RunResult> run_all(const ExperimentConfig& config, const std::vector<RunSpec>& specs,
                               std::size_t workers,
                               const std::function<void(const RunResult&)>& on_done = {});

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;  // sample (n - 1); 0 for a single value
  std::size_t count = 0;
};

Aggregate aggregate(std::span<const double> values);

nlohmann::json run_to_json(const RunResult& r);
RunResult run_from_json(const nlohmann::json& j);

/// Report: {command, config, runs[], aggregates[]}, aggregates per (method, fraction).
nlohmann::json make_report(const std::string& command, const ExperimentConfig& config,
                           const std::vector<RunResult>& runs);
/// Per-run entries of a report.
std::vector<RunResult> runs_from_report(const nlohmann::json& report);

/// Rows method/metric (mae, rmse, mape), columns fraction, cells "mean±std".
void write_grid_csv(const std::filesystem::path& path, const std::vector<RunResult>& runs,
                    std::span<const PruningMethod> methods, std::span<const double> fractions);

struct BenchmarkRow {
  double fraction = 0.0;
  std::size_t kept = 0;
  std::size_t parameters = 0;
  std::size_t peak_activations = 0;      // closed form at the benchmark batch size
  std::size_t measured_activations = 0;  // elements recorded by one forward pass
  double median_seconds = 0.0;           // full test split inference
  std::vector<double> seconds;
};

/// Compact models over random keep-sets of a synthetic benchmark.nodes graph,
/// with fresh weights.
std::vector<BenchmarkRow> run_benchmark(const ExperimentConfig& config, std::span<const double> fractions);
void write_benchmark_csv(const std::filesystem::path& path, const std::vector<BenchmarkRow>& rows);
nlohmann::json benchmark_to_json(const std::vector<BenchmarkRow>& rows);

struct AnalysisResult {
  UsageFrequency usage;
  ChiSquareResult chi_square;
  double keep_probability = 0.0;
  /// Values tested for spatial autocorrelation: mean per-node error when
  /// available, usage counts otherwise.
  std::string moran_variable;
  std::optional<MoranResult> moran_distance;
  std::optional<MoranResult> moran_knn;
  double distance_km = 0.0;
  std::size_t knn_k = 0;
  std::optional<nlohmann::json> geojson;
};

/// Usage statistics over `masks`, and with coordinates, Moran's I under both
/// weight schemes plus GeoJSON. `node_error` may be empty.
AnalysisResult analyze_masks(const ExperimentConfig& config, const std::vector<std::vector<bool>>& masks,
                             std::span<const double> node_error, const SpatioTemporalDataset* geo);
nlohmann::json analysis_to_json(const AnalysisResult& a);

/// Process peak resident set size in kilobytes, or 0 if unavailable.
long peak_rss_kb();

}  // namespace prunegcrn
