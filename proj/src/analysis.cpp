#include "prunegcrn/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <thread>

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/chi_squared.hpp>

#include "prunegcrn/errors.hpp"

namespace prunegcrn {

UsageFrequency usage_frequency(const std::vector<std::vector<bool>>& masks) {
  if (masks.empty()) throw DomainError("usage_frequency: no masks");
  const std::size_t n = masks.front().size();
  UsageFrequency u;
  u.runs = masks.size();
  u.counts.assign(n, 0);
  for (const auto& m : masks) {
    if (m.size() != n) {
      throw DimensionError("usage_frequency: masks over " + std::to_string(n) + " and " +
                           std::to_string(m.size()) + " nodes");
    }
    for (std::size_t i = 0; i < n; ++i) u.counts[i] += m[i] ? 1 : 0;
  }
  u.histogram.assign(u.runs + 1, 0);
  double total = 0;
  for (std::size_t c : u.counts) {
    ++u.histogram[c];
    total += static_cast<double>(c);
    if (c == u.runs) ++u.kept_in_all;
    if (10 * c >= 9 * u.runs) ++u.kept_in_90pct;
    if (2 * c >= u.runs) ++u.kept_in_50pct;
  }
  u.mean_count = n ? total / static_cast<double>(n) : 0.0;
  return u;
}

ChiSquareResult binomial_profile_test(const UsageFrequency& usage, double keep_probability) {
  if (!(keep_probability > 0.0 && keep_probability < 1.0)) {
    throw DomainError("binomial_profile_test: keep probability must lie in (0, 1)");
  }
  const auto n = static_cast<double>(usage.counts.size());
  boost::math::binomial_distribution<double> binom(static_cast<double>(usage.runs), keep_probability);
  ChiSquareResult r;
  double obs = 0, exp = 0;
  for (std::size_t k = 0; k <= usage.runs; ++k) {
    obs += static_cast<double>(usage.histogram[k]);
    exp += n * boost::math::pdf(binom, static_cast<double>(k));
    if (exp >= 5.0) {
      r.observed.push_back(obs);
      r.expected.push_back(exp);
      obs = exp = 0;
    }
  }
  if (exp > 0 || obs > 0) {
    if (r.expected.empty()) {
      r.observed.push_back(obs);
      r.expected.push_back(exp);
    } else {
      r.observed.back() += obs;
      r.expected.back() += exp;
    }
  }
  for (std::size_t b = 0; b < r.observed.size(); ++b) {
    const double d = r.observed[b] - r.expected[b];
    r.statistic += d * d / r.expected[b];
  }
  if (r.observed.size() < 2) return r;
  r.dof = r.observed.size() - 1;
  boost::math::chi_squared_distribution<double> chi(static_cast<double>(r.dof));
  r.p_value = boost::math::cdf(boost::math::complement(chi, r.statistic));
  return r;
}

double haversine_km(const Coordinate& a, const Coordinate& b) {
  constexpr double kEarthRadiusKm = 6371.0088;
  constexpr double kRad = std::numbers::pi / 180.0;
  const double dlat = (b.lat - a.lat) * kRad;
  const double dlon = (b.lon - a.lon) * kRad;
  const double h = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(a.lat * kRad) * std::cos(b.lat * kRad) * std::sin(dlon / 2) * std::sin(dlon / 2);
  return 2 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

namespace {

std::vector<double> distance_matrix(const std::vector<Coordinate>& coords) {
  const std::size_t n = coords.size();
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) d[i * n + j] = d[j * n + i] = haversine_km(coords[i], coords[j]);
  }
  return d;
}

double median_degree(const std::vector<double>& dist, std::size_t n, double threshold) {
  std::vector<std::size_t> deg(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) deg[i] += (i != j && dist[i * n + j] <= threshold) ? 1 : 0;
  }
  std::sort(deg.begin(), deg.end());
  return n % 2 ? static_cast<double>(deg[n / 2])
               : 0.5 * static_cast<double>(deg[n / 2 - 1] + deg[n / 2]);
}

}  // namespace

SpatialWeights build_weights(const std::vector<Coordinate>& coords, WeightScheme scheme, double param,
                             bool row_standardize) {
  const std::size_t n = coords.size();
  SpatialWeights sw;
  sw.n = n;
  sw.scheme = scheme;
  sw.param = param;
  sw.row_standardized = row_standardize;
  sw.w.assign(n * n, 0.0);
  const auto dist = distance_matrix(coords);
  if (scheme == WeightScheme::kDistance) {
    if (!(param >= 0)) throw DomainError("build_weights: distance threshold must be non-negative");
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) sw.w[i * n + j] = (i != j && dist[i * n + j] <= param) ? 1.0 : 0.0;
    }
  } else {
    const auto k = static_cast<std::size_t>(param);
    if (k == 0 || static_cast<double>(k) != param) throw DomainError("build_weights: knn k must be a positive integer");
    if (k >= n) {
      throw DomainError("build_weights: knn k=" + std::to_string(k) + " needs more than " +
                        std::to_string(n) + " nodes");
    }
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::size_t> others;
      for (std::size_t j = 0; j < n; ++j) {
        if (j != i) others.push_back(j);
      }
      std::stable_sort(others.begin(), others.end(),
                       [&](std::size_t a, std::size_t b) { return dist[i * n + a] < dist[i * n + b]; });
      for (std::size_t j = 0; j < k; ++j) sw.w[i * n + others[j]] = 1.0;
    }
  }
  if (row_standardize) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < n; ++j) s += sw.w[i * n + j];
      if (s > 0) {
        for (std::size_t j = 0; j < n; ++j) sw.w[i * n + j] /= s;
      }
    }
  }
  return sw;
}

SpatialWeights build_weights(const SpatioTemporalDataset& ds, WeightScheme scheme, double param,
                             bool row_standardize) {
  if (!ds.coords) {
    throw DataError("dataset " + ds.name + " has no coordinates; spatial weights need a coords file");
  }
  return build_weights(*ds.coords, scheme, param, row_standardize);
}

double default_distance_threshold(const std::vector<Coordinate>& coords) {
  const std::size_t n = coords.size();
  if (n < 3) throw DomainError("default_distance_threshold: need at least 3 nodes");
  const auto dist = distance_matrix(coords);
  std::vector<double> candidates;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) candidates.push_back(dist[i * n + j]);
  }
  std::sort(candidates.begin(), candidates.end());
  std::size_t lo = 0, hi = candidates.size() - 1;
  while (lo < hi) {
    const std::size_t mid = (lo + hi) / 2;
    if (median_degree(dist, n, candidates[mid]) >= 2.0) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  return candidates[lo];
}

double morans_i_statistic(std::span<const double> x, const SpatialWeights& w) {
  const std::size_t n = x.size();
  if (n != w.n) {
    throw DimensionError("morans_i: " + std::to_string(n) + " values for " + std::to_string(w.n) +
                         "-node weights");
  }
  if (n < 3) throw DomainError("morans_i: need at least 3 nodes");
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  std::vector<double> z(n);
  double den = 0;
  for (std::size_t i = 0; i < n; ++i) {
    z[i] = x[i] - mean;
    den += z[i] * z[i];
  }
  if (den == 0.0) throw DomainError("morans_i: values are constant");
  const double s0 = std::accumulate(w.w.begin(), w.w.end(), 0.0);
  if (s0 == 0.0) throw DomainError("morans_i: weights are empty (S0 = 0)");
  double num = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0;
    for (std::size_t j = 0; j < n; ++j) row += w.w[i * n + j] * z[j];
    num += z[i] * row;
  }
  return static_cast<double>(n) / s0 * num / den;
}

MoranResult morans_i(std::span<const double> x, const SpatialWeights& w, std::size_t permutations,
                     std::uint64_t seed, PValueMode mode, std::size_t workers) {
  MoranResult r;
  r.index = morans_i_statistic(x, w);
  const std::size_t n = x.size();
  r.expected = -1.0 / static_cast<double>(n - 1);
  r.mode = mode;
  if (mode == PValueMode::kNormal) {
    const auto nd = static_cast<double>(n);
    double s0 = 0, s1 = 0, s2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double row = 0, col = 0;
      for (std::size_t j = 0; j < n; ++j) {
        s0 += w.at(i, j);
        const double sym = w.at(i, j) + w.at(j, i);
        s1 += 0.5 * sym * sym;
        row += w.at(i, j);
        col += w.at(j, i);
      }
      s2 += (row + col) * (row + col);
    }
    const double var = (nd * nd * s1 - nd * s2 + 3 * s0 * s0) / ((nd * nd - 1) * s0 * s0) -
                       r.expected * r.expected;
    const double zscore = (r.index - r.expected) / std::sqrt(var);
    r.p_value = std::erfc(std::fabs(zscore) / std::numbers::sqrt2);
    return r;
  }

  r.permutations = permutations;
  const double observed = std::fabs(r.index - r.expected);
  std::vector<std::size_t> extreme(std::max<std::size_t>(workers, 1), 0);
  auto run = [&](std::size_t worker, std::size_t begin, std::size_t end) {
    std::vector<double> perm(x.begin(), x.end());
    for (std::size_t k = begin; k < end; ++k) {
      std::seed_seq ss{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                       static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
      std::mt19937_64 rng(ss);
      std::copy(x.begin(), x.end(), perm.begin());
      std::shuffle(perm.begin(), perm.end(), rng);
      if (std::fabs(morans_i_statistic(perm, w) - r.expected) >= observed) ++extreme[worker];
    }
  };
  if (extreme.size() == 1) {
    run(0, 0, permutations);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (permutations + extreme.size() - 1) / extreme.size();
    for (std::size_t t = 0; t < extreme.size(); ++t) {
      const std::size_t b = std::min(permutations, t * chunk), e = std::min(permutations, b + chunk);
      pool.emplace_back(run, t, b, e);
    }
    for (auto& th : pool) th.join();
  }
  const auto hits = std::accumulate(extreme.begin(), extreme.end(), std::size_t{0});
  r.p_value = static_cast<double>(1 + hits) / static_cast<double>(1 + permutations);
  return r;
}

nlohmann::json nodes_geojson(const SpatioTemporalDataset& ds, const std::vector<bool>& selected,
                             std::span<const double> mean_error,
                             std::span<const std::size_t> usage_count) {
  if (!ds.coords) throw DataError("dataset " + ds.name + " has no coordinates; GeoJSON needs a coords file");
  const std::size_t n = ds.nodes;
  if (selected.size() != n || mean_error.size() != n || usage_count.size() != n) {
    throw DimensionError("nodes_geojson: per-node inputs do not cover " + std::to_string(n) + " nodes");
  }
  nlohmann::json features = nlohmann::json::array();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = (*ds.coords)[i];
    features.push_back({
        {"type", "Feature"},
        {"geometry", {{"type", "Point"}, {"coordinates", {c.lon, c.lat}}}},
        {"properties",
         {{"node_id", ds.node_ids[i]},
          {"selected", static_cast<bool>(selected[i])},
          {"mean_error", mean_error[i]},
          {"usage_count", usage_count[i]}}},
    });
  }
  return {{"type", "FeatureCollection"}, {"features", std::move(features)}};
}

const char* to_string(WeightScheme s) { return s == WeightScheme::kDistance ? "distance" : "knn"; }

}  // namespace prunegcrn
