#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "prunegcrn/autodiff.hpp"
#include "prunegcrn/graph_learning.hpp"
#include "prunegcrn/mask.hpp"

namespace prunegcrn {

/// kStandard: both gates on (I + L), h_t = z ⊙ h_{t-1} + (1 - z) ⊙ ĥ_t.
/// kLiteral: update gate on L alone, reset gate on I alone, h_t = ĥ_{t-1}.
enum class GateMode { kStandard, kLiteral };

/// kShared: one units×horizon map for every node. kPerNode: embedding-factorized
/// per-node map, like the gate filters.
enum class ProjectionMode { kShared, kPerNode };

struct ModelConfig {
  std::size_t nodes = 0;
  std::size_t channels = 1;
  std::size_t embed_dim = 10;
  std::size_t units = 64;
  std::size_t layers = 2;
  std::size_t window = 12;
  std::size_t horizon = 12;
  GateMode gate_mode = GateMode::kStandard;
  ProjectionMode projection = ProjectionMode::kShared;
  /// False for compact models: no mask and no graph bias exist.
  bool masked = true;
  double ste_window = 1.0;

  void validate() const;
};

struct GruLayerParams {
  WeightPool gate;       // (cin + units) → 2·units, split into update and reset
  WeightPool candidate;  // (cin + units) → units
};

/// Every learnable tensor of the network. Copying shares tensors; use clone()
/// for an independent snapshot.
struct ModelParams {
  ModelConfig config;
  ad::Var embeddings;  // n × d, shared by graph learning and every filter
  std::vector<GruLayerParams> layers;
  ad::Var proj_weight;  // units × horizon (shared) or d × units × horizon (per node)
  ad::Var proj_bias;    // horizon (shared) or d × horizon (per node)
  std::optional<NodeMask> mask;

  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  /// Name → tensor registry, in a fixed order.
  std::vector<std::pair<std::string, ad::Var>> named() const;
  /// Tensors the optimizer updates; a frozen mask's raw vector is excluded.
  std::vector<ad::Var> trainable() const;
  ModelParams clone() const;
  std::size_t parameter_count() const;
  /// Copies values (not identity) from another parameter set of equal shapes.
  void assign_from(const ModelParams& other);
};

/// Per-layer recurrent state; `candidate` is only used by GateMode::kLiteral.
struct HiddenState {
  std::vector<ad::Var> h;
  std::vector<ad::Var> candidate;
};

/// Convolution filters of one layer, prepared once per forward pass.
struct GruFilters {
  NaplFilter update;  // kStandard: shared with reset
  NaplFilter reset;
  NaplFilter candidate;
};

GruFilters prepare_gru(ad::Tape& t, const ad::Var& support, const ad::Var& embeddings,
                       const GruLayerParams& layer, GateMode mode);

struct GruStep {
  ad::Var h;
  ad::Var candidate;
  ad::Var update_gate;
  ad::Var reset_gate;
};

/// One recurrent step on x[...×n×cin] and h_prev[...×n×units].
GruStep gru_step(ad::Tape& t, const GruFilters& filters, const ad::Var& x, const ad::Var& h_prev,
                 const ad::Var& candidate_prev, std::size_t units, GateMode mode);

/// Convenience single step that builds filters from a learned support.
ad::Var gru_cell(ad::Tape& t, const ad::Var& x, const ad::Var& h_prev, const ad::Var& support,
                 const ad::Var& embeddings, const GruLayerParams& layer);

struct ForwardResult {
  ad::Var prediction;  // batch × n × horizon, normalized space
  ad::Var binary;      // n, null for compact models
};

/// Runs the stacked encoder over `inputs` (batch × window × n × c windows,
/// row-major) and projects the top hidden state to the horizon.
/// `binary_shift`, if given, is subtracted from the mask value only: the
/// gradient still reaches the raw mask unchanged.
ForwardResult forward(ad::Tape& t, const ModelParams& params, std::span<const double> inputs,
                      std::size_t batch, std::span<const double> binary_shift = {});

/// Model over the kept nodes only: embedding rows are sliced, the mask and
/// graph bias are dropped, everything else is copied.
ModelParams compact_rebuild(const ModelParams& params, const NodeMask& mask);

struct ModelFootprint {
  std::size_t parameters = 0;
  std::size_t peak_activation_elements = 0;
  /// Entries of the units×units recurrent blocks inside the gate pools.
  std::size_t recurrent_gate_parameters = 0;
};

/// Closed-form parameter and activation counts. `pruning_fraction` > 0 means
/// the compact model over the kept nodes; activations are the elements of
/// every intermediate produced by one forward pass at `batch`.
ModelFootprint count_params_and_activations(const ModelConfig& config, double pruning_fraction,
                                            std::size_t batch = 32);

/// Checkpoint container: magic line `PRUNEGCRN-CKPT-1`, a config line, then
/// one `param` record per tensor with its shape and row-major values.
void save_checkpoint(const std::string& path, const ModelParams& params);
ModelParams load_checkpoint(const std::string& path);

}  // namespace prunegcrn
