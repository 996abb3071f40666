#include "prunegcrn/metrics.hpp"

#include <cmath>

#include "prunegcrn/errors.hpp"

namespace prunegcrn {

MetricSet metrics(std::span<const double> pred, std::span<const double> target, std::size_t nodes,
                  std::size_t horizon) {
  if (pred.size() != target.size()) {
    throw DimensionError("metrics: prediction has " + std::to_string(pred.size()) +
                         " values, target " + std::to_string(target.size()));
  }
  if (pred.empty()) throw DomainError("metrics: empty input");
  if (nodes == 0) throw DomainError("metrics: nodes must be positive");
  if (horizon == 0) horizon = pred.size() / nodes;
  if (horizon == 0 || pred.size() % (nodes * horizon) != 0) {
    throw DimensionError("metrics: size " + std::to_string(pred.size()) + " is not a multiple of " +
                         std::to_string(nodes) + " nodes x " + std::to_string(horizon) + " steps");
  }
  MetricSet m;
  m.node_mae.assign(nodes, 0.0);
  double abs_sum = 0, sq_sum = 0, pct_sum = 0;
  std::size_t pct_count = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double err = target[i] - pred[i];
    abs_sum += std::fabs(err);
    sq_sum += err * err;
    m.node_mae[(i / horizon) % nodes] += std::fabs(err);
    if (target[i] == 0.0) {
      ++m.mape_excluded;
    } else {
      pct_sum += std::fabs(err / target[i]);
      ++pct_count;
    }
  }
  const auto count = static_cast<double>(pred.size());
  m.mae = abs_sum / count;
  m.rmse = std::sqrt(sq_sum / count);
  m.mape = pct_count ? 100.0 * pct_sum / static_cast<double>(pct_count) : 0.0;
  const double per_node = count / static_cast<double>(nodes);
  for (double& v : m.node_mae) v /= per_node;
  return m;
}

double sparsity(std::size_t kept, std::size_t total) {
  if (total == 0) throw DomainError("sparsity: total must be positive");
  if (kept > total) throw DomainError("sparsity: kept exceeds total");
  return 1.0 - static_cast<double>(kept) / static_cast<double>(total);
}

double fidelity(std::span<const double> full, std::span<const double> reduced) {
  if (full.size() != reduced.size()) {
    throw DimensionError("fidelity: " + std::to_string(full.size()) + " vs " +
                         std::to_string(reduced.size()) + " node outputs");
  }
  if (full.empty()) throw DomainError("fidelity: empty input");
  double s = 0;
  for (std::size_t i = 0; i < full.size(); ++i) s += std::fabs(full[i] - reduced[i]);
  return s / static_cast<double>(full.size());
}

double infidelity(std::span<const double> full, std::span<const double> reduced) {
  return fidelity(full, reduced);
}

}  // namespace prunegcrn
