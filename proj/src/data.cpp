#include "prunegcrn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <unordered_map>

#include "prunegcrn/csv.hpp"
#include "prunegcrn/errors.hpp"

namespace prunegcrn {

SpatioTemporalDataset SpatioTemporalDataset::select_nodes(const std::vector<std::size_t>& keep) const {
  SpatioTemporalDataset out;
  out.name = name;
  out.steps = steps;
  out.nodes = keep.size();
  out.channels = channels;
  out.timestep_minutes = timestep_minutes;
  out.values.resize(steps * keep.size() * channels);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t j = 0; j < keep.size(); ++j) {
      for (std::size_t c = 0; c < channels; ++c) {
        out.values[(t * out.nodes + j) * channels + c] = at(t, keep[j], c);
      }
    }
  }
  for (std::size_t j : keep) out.node_ids.push_back(node_ids.at(j));
  if (coords) {
    std::vector<Coordinate> cs;
    for (std::size_t j : keep) cs.push_back(coords->at(j));
    out.coords = std::move(cs);
  }
  return out;
}

SpatioTemporalDataset load_csv(const std::filesystem::path& series,
                               const std::optional<std::filesystem::path>& coords) {
  const CsvTable table = read_csv(series);
  SpatioTemporalDataset ds;
  ds.name = series.stem().string();
  ds.node_ids = table.header;
  ds.nodes = table.header.size();
  ds.steps = table.rows.size();
  ds.channels = 1;
  ds.values.reserve(ds.steps * ds.nodes);
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    for (const auto& cell : table.rows[r]) ds.values.push_back(parse_double(cell, series, r + 2));
  }
  if (coords) {
    const CsvTable ct = read_csv(*coords);
    if (ct.header != std::vector<std::string>{"node_id", "lat", "lon"}) {
      throw ParseError(coords->string() + ": expected header node_id,lat,lon");
    }
    std::unordered_map<std::string, Coordinate> by_id;
    for (std::size_t r = 0; r < ct.rows.size(); ++r) {
      by_id[ct.rows[r][0]] = Coordinate{parse_double(ct.rows[r][1], *coords, r + 2),
                                        parse_double(ct.rows[r][2], *coords, r + 2)};
    }
    if (by_id.size() != ds.nodes) {
      throw DataError(coords->string() + ": covers " + std::to_string(by_id.size()) +
                      " nodes, series has " + std::to_string(ds.nodes));
    }
    std::vector<Coordinate> cs;
    for (const auto& id : ds.node_ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) throw DataError(coords->string() + ": no coordinates for node " + id);
      cs.push_back(it->second);
    }
    ds.coords = std::move(cs);
  }
  return ds;
}

void write_series_csv(const std::filesystem::path& path, const SpatioTemporalDataset& ds) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::size_t i = 0; i < ds.nodes; ++i) out << (i ? "," : "") << ds.node_ids[i];
  out << '\n';
  for (std::size_t t = 0; t < ds.steps; ++t) {
    for (std::size_t i = 0; i < ds.nodes; ++i) out << (i ? "," : "") << format_double(ds.at(t, i));
    out << '\n';
  }
}

void write_coords_csv(const std::filesystem::path& path, const SpatioTemporalDataset& ds) {
  if (!ds.coords) throw DataError("dataset " + ds.name + " has no coordinates");
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "node_id,lat,lon\n";
  for (std::size_t i = 0; i < ds.nodes; ++i) {
    out << ds.node_ids[i] << ',' << format_double((*ds.coords)[i].lat) << ','
        << format_double((*ds.coords)[i].lon) << '\n';
  }
}

SplitBounds split_bounds(std::size_t steps) {
  SplitBounds b;
  b.train_end = steps * 6 / 10;
  b.val_end = b.train_end + steps * 2 / 10;
  return b;
}

namespace {

WindowSet make_windows(const SpatioTemporalDataset& ds, std::size_t begin, std::size_t end,
                       std::size_t window, std::size_t horizon, const Normalizer& stats,
                       const char* split) {
  const std::size_t len = end - begin;
  if (len < window + horizon) {
    throw DataError(std::string(split) + " split has " + std::to_string(len) +
                    " steps; at least window + horizon = " + std::to_string(window + horizon) +
                    " required");
  }
  WindowSet w;
  w.count = len - window - horizon + 1;
  w.window = window;
  w.horizon = horizon;
  w.nodes = ds.nodes;
  w.channels = ds.channels;
  w.first_step = begin;
  w.stats = stats;
  const std::size_t frame = ds.nodes * ds.channels;
  w.inputs.resize(w.count * window * frame);
  w.targets.resize(w.count * horizon * frame);
  for (std::size_t k = 0; k < w.count; ++k) {
    const double* src = ds.values.data() + (begin + k) * frame;
    double* in = w.inputs.data() + k * window * frame;
    for (std::size_t j = 0; j < window * frame; ++j) in[j] = stats.normalize(src[j]);
    double* tg = w.targets.data() + k * horizon * frame;
    for (std::size_t j = 0; j < horizon * frame; ++j) tg[j] = stats.normalize(src[window * frame + j]);
  }
  return w;
}

}  // namespace

WindowSet WindowSet::select_nodes(const std::vector<std::size_t>& keep) const {
  WindowSet out = *this;
  out.nodes = keep.size();
  auto slice = [&](const std::vector<double>& src, std::size_t frames) {
    std::vector<double> dst(count * frames * keep.size() * channels);
    for (std::size_t f = 0; f < count * frames; ++f) {
      for (std::size_t j = 0; j < keep.size(); ++j) {
        for (std::size_t c = 0; c < channels; ++c) {
          dst[(f * keep.size() + j) * channels + c] = src[(f * nodes + keep[j]) * channels + c];
        }
      }
    }
    return dst;
  };
  out.inputs = slice(inputs, window);
  out.targets = slice(targets, horizon);
  return out;
}

SplitWindows split_and_window(const SpatioTemporalDataset& ds, std::size_t window,
                              std::size_t horizon) {
  const SplitBounds b = split_bounds(ds.steps);
  if (b.train_end == 0) throw DataError("dataset " + ds.name + " has an empty training split");
  const std::size_t frame = ds.nodes * ds.channels;
  const std::size_t count = b.train_end * frame;
  double mean = 0;
  for (std::size_t i = 0; i < count; ++i) mean += ds.values[i];
  mean /= static_cast<double>(count);
  double var = 0;
  for (std::size_t i = 0; i < count; ++i) var += (ds.values[i] - mean) * (ds.values[i] - mean);
  var /= static_cast<double>(count);
  if (!(var > 0)) throw DataError("dataset " + ds.name + ": training split has zero variance");
  const Normalizer stats{mean, std::sqrt(var)};
  SplitWindows out;
  out.stats = stats;
  out.bounds = b;
  out.train = make_windows(ds, 0, b.train_end, window, horizon, stats, "training");
  out.val = make_windows(ds, b.train_end, b.val_end, window, horizon, stats, "validation");
  out.test = make_windows(ds, b.val_end, ds.steps, window, horizon, stats, "test");
  return out;
}

SyntheticDataset gen_synthetic(std::size_t n, std::size_t steps, std::size_t k_informative,
                               std::uint64_t seed) {
  if (n == 0 || k_informative < 1 || k_informative > n) {
    throw DomainError("gen_synthetic: need 1 <= k_informative <= n, got k=" +
                      std::to_string(k_informative) + ", n=" + std::to_string(n));
  }
  if (steps == 0) throw DomainError("gen_synthetic: steps must be positive");
  constexpr std::size_t kMaxLag = 3;
  constexpr double kLevel = 50.0;
  constexpr double kFollowerNoise = 1.0;
  constexpr double kDriverPersistence = 0.95;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SyntheticDataset out;
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  std::shuffle(ids.begin(), ids.end(), rng);
  out.drivers.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k_informative));
  std::sort(out.drivers.begin(), out.drivers.end());

  // Driver signals, with kMaxLag steps of history before t = 0.
  const std::size_t total = steps + kMaxLag;
  std::vector<std::vector<double>> driver(k_informative, std::vector<double>(total));
  for (std::size_t q = 0; q < k_informative; ++q) {
    const double period = 30.0 + 17.0 * static_cast<double>(q);
    const double phase = 2 * std::numbers::pi * unit(rng);
    double ar = 0;
    for (std::size_t burn = 0; burn < 200; ++burn) ar = kDriverPersistence * ar + gauss(rng);
    for (std::size_t t = 0; t < total; ++t) {
      ar = kDriverPersistence * ar + gauss(rng);
      driver[q][t] = 2.0 * std::sin(2 * std::numbers::pi * static_cast<double>(t) / period + phase) + ar;
    }
  }

  SpatioTemporalDataset& ds = out.dataset;
  ds.name = "synthetic";
  ds.steps = steps;
  ds.nodes = n;
  ds.channels = 1;
  ds.values.assign(steps * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) ds.node_ids.push_back(std::to_string(i));
  out.primary_driver.assign(n, 0);
  out.lag.assign(n, 0);

  std::vector<Coordinate> coords(n);
  std::vector<Coordinate> centers(k_informative);
  for (std::size_t q = 0; q < k_informative; ++q) {
    const double a = 2 * std::numbers::pi * static_cast<double>(q) / static_cast<double>(k_informative);
    centers[q] = Coordinate{37.30 + 0.08 * std::cos(a), -121.90 + 0.10 * std::sin(a)};
  }

  std::vector<int> driver_slot(n, -1);
  for (std::size_t q = 0; q < k_informative; ++q) driver_slot[out.drivers[q]] = static_cast<int>(q);

  for (std::size_t i = 0; i < n; ++i) {
    if (driver_slot[i] >= 0) {
      const auto q = static_cast<std::size_t>(driver_slot[i]);
      for (std::size_t t = 0; t < steps; ++t) ds.values[t * n + i] = kLevel + driver[q][t + kMaxLag];
      out.primary_driver[i] = i;
      coords[i] = Coordinate{centers[q].lat + 0.002 * gauss(rng), centers[q].lon + 0.002 * gauss(rng)};
      continue;
    }
    const std::size_t p = static_cast<std::size_t>(unit(rng) * static_cast<double>(k_informative)) % k_informative;
    const std::size_t lag_p = 1 + static_cast<std::size_t>(unit(rng) * kMaxLag) % kMaxLag;
    const double w_p = 0.7 + 0.3 * unit(rng);
    const bool two = k_informative > 1 && unit(rng) < 0.5;
    std::size_t s = p;
    std::size_t lag_s = lag_p;
    double w_s = 0.0;
    if (two) {
      s = (p + 1 + static_cast<std::size_t>(unit(rng) * static_cast<double>(k_informative - 1)) % (k_informative - 1)) % k_informative;
      lag_s = 1 + static_cast<std::size_t>(unit(rng) * kMaxLag) % kMaxLag;
      w_s = 0.2 + 0.3 * unit(rng);
    }
    for (std::size_t t = 0; t < steps; ++t) {
      double v = w_p * driver[p][t + kMaxLag - lag_p] + kFollowerNoise * gauss(rng);
      if (two) v += w_s * driver[s][t + kMaxLag - lag_s];
      ds.values[t * n + i] = kLevel + v;
    }
    out.primary_driver[i] = out.drivers[p];
    out.lag[i] = lag_p;
    coords[i] = Coordinate{centers[p].lat + 0.015 * gauss(rng), centers[p].lon + 0.015 * gauss(rng)};
  }
  ds.coords = std::move(coords);
  return out;
}

NodeMask random_mask(std::size_t n, std::size_t keep_k, std::uint64_t seed, std::size_t channels) {
  if (keep_k > n) {
    throw DomainError("random_mask: keep_k=" + std::to_string(keep_k) + " exceeds n=" + std::to_string(n));
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  std::shuffle(ids.begin(), ids.end(), rng);
  std::vector<bool> keep(n, false);
  for (std::size_t j = 0; j < keep_k; ++j) keep[ids[j]] = true;
  return NodeMask::fixed(keep, channels);
}

CorrelationScores correlation_scores(const SpatioTemporalDataset& ds, std::size_t begin,
                                     std::size_t end, CorrelationMode mode) {
  const std::size_t n = ds.nodes;
  if (n < 2) throw DomainError("correlation scores need at least 2 nodes");
  if (end <= begin + 1 || end > ds.steps) throw DomainError("correlation scores need >= 2 timesteps");
  const std::size_t len = end - begin;
  std::vector<std::vector<double>> centered(n, std::vector<double>(len));
  std::vector<double> norm(n, 0.0);
  CorrelationScores out;
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0;
    for (std::size_t t = 0; t < len; ++t) mean += ds.at(begin + t, i);
    mean /= static_cast<double>(len);
    for (std::size_t t = 0; t < len; ++t) {
      centered[i][t] = ds.at(begin + t, i) - mean;
      norm[i] += centered[i][t] * centered[i][t];
    }
    norm[i] = std::sqrt(norm[i]);
    if (norm[i] == 0.0) out.constant_nodes.push_back(i);
  }
  std::vector<double> rho(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (norm[i] == 0.0 || norm[j] == 0.0) continue;
      double dot = 0;
      for (std::size_t t = 0; t < len; ++t) dot += centered[i][t] * centered[j][t];
      rho[i * n + j] = rho[j * n + i] = dot / (norm[i] * norm[j]);
    }
  }
  out.scores.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      s += mode == CorrelationMode::kAbsolute ? std::fabs(rho[i * n + j]) : rho[i * n + j];
    }
    out.scores[i] = s / static_cast<double>(n - 1);
  }
  return out;
}

std::vector<bool> lowest_k(const std::vector<double>& scores, std::size_t keep_k) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&scores](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<bool> keep(scores.size(), false);
  for (std::size_t j = 0; j < keep_k && j < order.size(); ++j) keep[order[j]] = true;
  return keep;
}

NodeMask correlation_mask(const SpatioTemporalDataset& ds, std::size_t keep_k, CorrelationMode mode,
                          CorrelationScores* scores_out) {
  if (keep_k > ds.nodes) {
    throw DomainError("correlation_mask: keep_k=" + std::to_string(keep_k) + " exceeds n=" +
                      std::to_string(ds.nodes));
  }
  auto scores = correlation_scores(ds, 0, split_bounds(ds.steps).train_end, mode);
  NodeMask mask = NodeMask::fixed(lowest_k(scores.scores, keep_k), ds.channels);
  if (scores_out) *scores_out = std::move(scores);
  return mask;
}

}  // namespace prunegcrn
