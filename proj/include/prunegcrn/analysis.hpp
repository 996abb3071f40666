#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prunegcrn/data.hpp"

namespace prunegcrn {

/// How often each node was kept across R training runs.
struct UsageFrequency {
  std::size_t runs = 0;
  std::vector<std::size_t> counts;     // per node, 0..runs
  std::vector<std::size_t> histogram;  // runs + 1 bins, total mass = nodes
  std::size_t kept_in_all = 0;
  std::size_t kept_in_90pct = 0;
  std::size_t kept_in_50pct = 0;
  double mean_count = 0.0;
};

UsageFrequency usage_frequency(const std::vector<std::vector<bool>>& masks);

struct ChiSquareResult {
  double statistic = 0.0;
  std::size_t dof = 0;
  double p_value = 1.0;
  std::vector<double> observed;  // pooled bins
  std::vector<double> expected;
};

/// Goodness of fit of a usage histogram against the profile of independent
/// random masks, where each node's count is Binomial(runs, keep_probability).
/// Adjacent bins are pooled until every expected count is at least 5 (or
/// fewer bins remain).
ChiSquareResult binomial_profile_test(const UsageFrequency& usage, double keep_probability);

enum class WeightScheme { kDistance, kKnn };

struct SpatialWeights {
  std::size_t n = 0;
  std::vector<double> w;  // n × n, zero diagonal
  WeightScheme scheme = WeightScheme::kDistance;
  double param = 0.0;  // threshold km, or k
  bool row_standardized = false;

  double at(std::size_t i, std::size_t j) const { return w[i * n + j]; }
};

/// Great-circle distance in kilometers.
double haversine_km(const Coordinate& a, const Coordinate& b);

/// Binary weights: distance links every pair within `param` km, knn links
/// each node to its `param` nearest others (directed).
SpatialWeights build_weights(const std::vector<Coordinate>& coords, WeightScheme scheme, double param,
                             bool row_standardize = false);
SpatialWeights build_weights(const SpatioTemporalDataset& ds, WeightScheme scheme, double param,
                             bool row_standardize = false);

/// Smallest pairwise-distance threshold whose median node degree is >= 2.
double default_distance_threshold(const std::vector<Coordinate>& coords);

enum class PValueMode { kPermutation, kNormal };

struct MoranResult {
  double index = 0.0;
  double expected = 0.0;  // -1 / (n - 1)
  double p_value = 1.0;
  std::size_t permutations = 0;
  PValueMode mode = PValueMode::kPermutation;
};

/// Global Moran's I = (n / S0) · Σ w_ij z_i z_j / Σ z_i².
double morans_i_statistic(std::span<const double> x, const SpatialWeights& w);

/// Two-sided p-value: permutation p = (1 + #{|I_perm - E| >= |I_obs - E|}) / (1 + P),
/// each permutation drawn from its own (seed, index) substream so the result
/// does not depend on `workers`. kNormal uses the normality-assumption variance.
MoranResult morans_i(std::span<const double> x, const SpatialWeights& w, std::size_t permutations = 999,
                     std::uint64_t seed = 0, PValueMode mode = PValueMode::kPermutation,
                     std::size_t workers = 1);

/// GeoJSON FeatureCollection of point features with properties
/// {node_id, selected, mean_error, usage_count}.
nlohmann::json nodes_geojson(const SpatioTemporalDataset& ds, const std::vector<bool>& selected,
                             std::span<const double> mean_error,
                             std::span<const std::size_t> usage_count);

const char* to_string(WeightScheme s);

}  // namespace prunegcrn
