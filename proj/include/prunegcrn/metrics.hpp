#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace prunegcrn {

struct MetricSet {
  double mae = 0.0;
  double rmse = 0.0;
  double mape = 0.0;  // percent
  /// Terms with a zero target, left out of the MAPE mean.
  std::size_t mape_excluded = 0;
  std::vector<double> node_mae;
};

/// MAE, RMSE and MAPE over aligned arrays laid out batch × nodes × horizon.
/// With the defaults every element belongs to one node.
MetricSet metrics(std::span<const double> pred, std::span<const double> target,
                  std::size_t nodes = 1, std::size_t horizon = 0);

/// 1 - kept/total.
double sparsity(std::size_t kept, std::size_t total);

/// Mean over nodes of |f_full - f_reduced|. Fidelity and infidelity share the
/// formula; they differ in which elements the reduced graph removed.
double fidelity(std::span<const double> full, std::span<const double> reduced);
double infidelity(std::span<const double> full, std::span<const double> reduced);

}  // namespace prunegcrn
