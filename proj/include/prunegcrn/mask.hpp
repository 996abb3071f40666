#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "prunegcrn/autodiff.hpp"

namespace prunegcrn {

/// Learned node-pruning state.
///
/// `raw` thresholds at zero into the binary keep/drop vector; `graph_bias`
/// holds the per-node, per-channel substitute fed to the network in place of
/// a dropped node's input. A frozen mask keeps `raw` out of optimization (the
/// random and correlation baselines).
struct NodeMask {
  ad::Var raw;         // n
  ad::Var graph_bias;  // n × c
  double ste_window = 1.0;

  /// Every node kept: raw = 1, bias = 0.
  static NodeMask initial(std::size_t n, std::size_t c);
  /// Fixed mask with raw = +1 on kept nodes and -1 elsewhere; raw is frozen.
  static NodeMask fixed(const std::vector<bool>& keep, std::size_t c);

  std::size_t nodes() const { return raw->size(); }
  std::size_t channels() const { return graph_bias->shape.at(1); }
  bool frozen() const { return !raw->requires_grad; }
  void freeze() { raw->requires_grad = false; }

  /// Binary vector evaluated without a tape.
  std::vector<double> binary() const;
  std::size_t kept_count() const;
  NodeMask clone() const;
};

ad::Var make_binary(ad::Tape& t, const NodeMask& mask);

/// X̃[i] = b_i·X[i] + (1 - b_i)·graph_bias[i] for X of shape n×c or B×n×c.
ad::Var apply_mask(ad::Tape& t, const ad::Var& x, const NodeMask& mask);
ad::Var apply_mask(ad::Tape& t, const ad::Var& x, const ad::Var& binary, const NodeMask& mask);

/// max(0, mean(binary) - gamma); the unclamped form returns mean(binary) - gamma.
///
/// Differences within 1e-12 of zero count as on-budget, so a target written
/// as 1 - fraction does not leave a rounding-sized penalty behind.
ad::Var mask_loss(ad::Tape& t, const NodeMask& mask, double gamma, bool clamped = true);
ad::Var mask_loss(ad::Tape& t, const ad::Var& binary, double gamma, bool clamped = true);

std::vector<std::size_t> selected_nodes(const NodeMask& mask);

/// Keeps the k largest raw values (lower index wins ties): raw becomes +1 on
/// them and -1 elsewhere. The returned mask shares nothing with the input.
NodeMask project_to_exact_k(const NodeMask& mask, std::size_t k);

/// Clips raw into [-bound, bound] in place.
void clip_raw(NodeMask& mask, double bound);

/// Node count kept at a pruning fraction: round(n·(1 - fraction)), at least 1
/// when fraction < 1.
std::size_t kept_for_fraction(std::size_t n, double fraction);

struct MaskRecord {
  std::vector<bool> selected;
  std::vector<double> raw;
};

/// CSV with header `node_id,selected,raw_value`, one row per node.
void write_mask_csv(const std::filesystem::path& path, const NodeMask& mask);
MaskRecord read_mask_csv(const std::filesystem::path& path);

}  // namespace prunegcrn
