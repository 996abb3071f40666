#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prunegcrn/analysis.hpp"
#include "prunegcrn/data.hpp"
#include "prunegcrn/model.hpp"
#include "prunegcrn/training.hpp"

namespace prunegcrn {

struct DataSection {
  /// Series CSV; empty selects the generated synthetic dataset.
  std::string series;
  std::string coords;
  std::size_t synthetic_nodes = 20;
  std::size_t synthetic_steps = 4000;
  std::size_t synthetic_drivers = 4;
  std::uint64_t synthetic_seed = 0;
  /// Run i generates its dataset from synthetic_seed + i.
  bool vary_synthetic_seed = false;
  std::size_t window = 12;
  std::size_t horizon = 12;
};

enum class PruningMethod { kLearned, kRandom, kCorrelation };

struct PruningSection {
  PruningMethod method = PruningMethod::kLearned;
  double fraction = 0.0;
  CorrelationMode correlation_mode = CorrelationMode::kAbsolute;
};

struct RunSection {
  std::size_t runs = 1;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::string out_dir = "out";
  std::vector<PruningMethod> methods{PruningMethod::kLearned, PruningMethod::kRandom,
                                     PruningMethod::kCorrelation};
  std::vector<double> fractions{0.0, 0.25, 0.5, 0.75, 0.9, 0.95};
};

struct AnalysisSection {
  /// 0 picks the smallest threshold giving a median degree of 2.
  double distance_km = 0.0;
  std::size_t knn_k = 2;
  std::size_t permutations = 999;
  bool row_standardize = false;
  PValueMode p_value_mode = PValueMode::kPermutation;
};

struct BenchmarkSection {
  std::size_t nodes = 300;
  std::size_t steps = 1000;
  std::size_t repetitions = 5;
  std::size_t batch_size = 64;
};

struct ExperimentConfig {
  DataSection data;
  ModelConfig model;
  TrainingConfig training;
  PruningSection pruning;
  RunSection run;
  AnalysisSection analysis;
  BenchmarkSection benchmark;

  /// Throws ConfigError naming the first offending field.
  void validate() const;
};

/// Sets `section.key` from its text form. Unknown keys and unparsable values
/// raise ConfigError naming the field.
void set_field(ExperimentConfig& config, const std::string& section, const std::string& key,
               const std::string& value);

/// Every field, grouped by section, with enums and lists in text form.
nlohmann::json config_to_json(const ExperimentConfig& config);
/// Overlays the given sections onto `base`.
ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig base = {});

/// INI file with [section] headers, or a JSON file: either a bare config
/// object or a report carrying one under "config".
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {});

/// Derived, independent seed for run `index` of an experiment seeded with `base`.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

const char* to_string(PruningMethod m);
PruningMethod parse_method(const std::string& s);
std::vector<double> parse_fraction_list(const std::string& s);
std::vector<PruningMethod> parse_method_list(const std::string& s);

}  // namespace prunegcrn
