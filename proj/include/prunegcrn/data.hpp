#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "prunegcrn/mask.hpp"

namespace prunegcrn {

struct Coordinate {
  double lat = 0.0;  // degrees
  double lon = 0.0;  // degrees
};

/// Node-major time series, values laid out steps × nodes × channels.
struct SpatioTemporalDataset {
  std::string name;
  std::size_t steps = 0;
  std::size_t nodes = 0;
  std::size_t channels = 1;
  std::vector<double> values;
  double timestep_minutes = 5.0;
  std::vector<std::string> node_ids;
  std::optional<std::vector<Coordinate>> coords;

  double at(std::size_t t, std::size_t node, std::size_t ch = 0) const {
    return values[(t * nodes + node) * channels + ch];
  }
  /// Copy restricted to the listed node columns, in the given order.
  SpatioTemporalDataset select_nodes(const std::vector<std::size_t>& keep) const;
};

/// Series CSV: a header of node ids, then one row of reals per timestep.
/// Optional coords CSV: `node_id,lat,lon`, covering exactly the header ids.
SpatioTemporalDataset load_csv(const std::filesystem::path& series,
                               const std::optional<std::filesystem::path>& coords = std::nullopt);
void write_series_csv(const std::filesystem::path& path, const SpatioTemporalDataset& ds);
void write_coords_csv(const std::filesystem::path& path, const SpatioTemporalDataset& ds);

/// z-score statistics taken from the training split.
struct Normalizer {
  double mean = 0.0;
  double stddev = 1.0;

  double normalize(double x) const { return (x - mean) / stddev; }
  double denormalize(double z) const { return z * stddev + mean; }
};

struct SplitBounds {
  std::size_t train_end = 0;  // [0, train_end)
  std::size_t val_end = 0;    // [train_end, val_end); test is [val_end, steps)
};

/// 6:2:2 temporal split of `steps`.
SplitBounds split_bounds(std::size_t steps);

/// Sliding windows over one split, in normalized space.
struct WindowSet {
  std::size_t count = 0;
  std::size_t window = 0;
  std::size_t horizon = 0;
  std::size_t nodes = 0;
  std::size_t channels = 1;
  std::size_t first_step = 0;  // absolute timestep of window 0's first input
  std::vector<double> inputs;   // count × window × nodes × channels
  std::vector<double> targets;  // count × horizon × nodes × channels
  Normalizer stats;

  std::size_t input_stride() const { return window * nodes * channels; }
  std::size_t target_stride() const { return horizon * nodes * channels; }
  /// Copy restricted to the listed nodes.
  WindowSet select_nodes(const std::vector<std::size_t>& keep) const;
};

struct SplitWindows {
  WindowSet train;
  WindowSet val;
  WindowSet test;
  Normalizer stats;
  SplitBounds bounds;
};

/// Normalizes with training-split statistics and windows each split.
SplitWindows split_and_window(const SpatioTemporalDataset& ds, std::size_t window,
                              std::size_t horizon);

struct SyntheticDataset {
  SpatioTemporalDataset dataset;
  std::vector<std::size_t> drivers;  // ascending
  /// For each node: its primary driver (itself for drivers) and lag (0 for drivers).
  std::vector<std::size_t> primary_driver;
  std::vector<std::size_t> lag;
};

/// `k_informative` driver nodes carry a distinct-period sinusoid plus AR(1)
/// noise; every other node is a lagged (1-3 steps) weighted mix of one or two
/// drivers plus white noise. Coordinates
/// cluster each follower around its primary driver.
SyntheticDataset gen_synthetic(std::size_t n, std::size_t steps, std::size_t k_informative,
                               std::uint64_t seed);

/// Uniformly random keep_k-subset, frozen.
NodeMask random_mask(std::size_t n, std::size_t keep_k, std::uint64_t seed, std::size_t channels = 1);

enum class CorrelationMode { kAbsolute, kSigned };

struct CorrelationScores {
  std::vector<double> scores;                // mean over j != i of (|)rho_ij(|)
  std::vector<std::size_t> constant_nodes;   // series with zero variance
};

/// Pearson-correlation scores of channel 0 over timesteps [begin, end).
CorrelationScores correlation_scores(const SpatioTemporalDataset& ds, std::size_t begin,
                                     std::size_t end, CorrelationMode mode);

/// Keeps the keep_k lowest-scoring nodes (ties to the lower index), scored on
/// the training split. Frozen.
NodeMask correlation_mask(const SpatioTemporalDataset& ds, std::size_t keep_k,
                          CorrelationMode mode = CorrelationMode::kAbsolute,
                          CorrelationScores* scores_out = nullptr);

/// Keep-set of the `keep_k` lowest scores, ties to the lower index.
std::vector<bool> lowest_k(const std::vector<double>& scores, std::size_t keep_k);

}  // namespace prunegcrn
