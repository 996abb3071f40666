#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "prunegcrn/autodiff.hpp"
#include "prunegcrn/data.hpp"
#include "prunegcrn/metrics.hpp"
#include "prunegcrn/model.hpp"

namespace prunegcrn {

struct LossTerms {
  ad::Var total;
  ad::Var mae;
  ad::Var mask_penalty;  // null without a mask
};

/// MAE(pred, target) · (1 + mask_loss(binary, gamma)); plain MAE when
/// `binary` is null. Computed in normalized space.
LossTerms composite_loss_terms(ad::Tape& t, const ad::Var& pred, std::span<const double> target,
                               const ad::Var& binary, double gamma, bool clamped = true);
ad::Var composite_loss(ad::Tape& t, const ad::Var& pred, std::span<const double> target,
                       const ad::Var& binary, double gamma, bool clamped = true);

enum class OptimizerKind { kRAdam, kAdam, kSgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kRAdam;
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Heavy-ball momentum for kSgd.
  double momentum = 0.9;
};

/// Adaptive-moment optimizer with bias correction. RAdam applies the variance
/// rectification once the approximated SMA length exceeds 5 and takes an
/// un-adapted momentum step before that. kSgd is plain heavy-ball momentum.
class Optimizer {
 public:
  Optimizer(OptimizerConfig config, std::vector<ad::Var> params);

  /// Overrides the step size for one parameter tensor.
  void set_learning_rate(const ad::Var& param, double lr);
  /// Applies one update from the current gradients. Throws NumericError
  /// naming the tensor on a non-finite gradient.
  void step();
  void zero_grad();
  std::size_t steps() const { return steps_; }

 private:
  struct Slot {
    ad::Var param;
    std::vector<double> m;
    std::vector<double> v;
    double lr;
  };
  OptimizerConfig config_;
  std::vector<Slot> slots_;
  std::size_t steps_ = 0;
};

/// Rescales gradients so their global L2 norm is at most `max_norm`. Returns
/// the norm before scaling.
double clip_grad_norm(std::span<const ad::Var> params, double max_norm);

enum class MaskBudgetMode { kCoupled, kDecoupled };

struct TrainingConfig {
  /// Share of nodes usable without penalty.
  double gamma = 1.0;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 100;
  std::size_t patience = 25;
  /// Epochs of training with the mask frozen after the exact-k projection.
  std::size_t finetune_epochs = 5;
  /// Snap the learned mask to exactly round(gamma·n) nodes before fine-tuning.
  bool exact_k = true;
  /// Caps the number of training batches per epoch (0 = every batch).
  std::size_t batches_per_epoch = 0;
  double grad_clip = 5.0;
  double mask_clip = 1.0;
  /// Separate optimizer for the raw mask.
  OptimizerConfig mask_optimizer{OptimizerKind::kSgd, 1.0, 0.9, 0.999, 1e-8, 0.0};
  /// While the mask learns, each kept node is dropped from a batch with this
  /// probability; its mask gradient is then taken at the dropped state.
  double mask_dropout = 0.0;
  /// Epochs at the start during which the mask is not updated.
  std::size_t mask_warmup_epochs = 3;
  /// Coupled: the raw mask follows the full composite-loss gradient.
  /// Decoupled: the optimizer sees only the data part of that gradient, and
  /// every raw value inside the STE window is lowered by lambda · mask
  /// learning rate per step, where lambda >= 0 grows by
  /// budget_rate · (mean(b) - gamma) per step.
  MaskBudgetMode mask_budget = MaskBudgetMode::kDecoupled;
  double budget_rate = 5e-6;
  /// A masked epoch is eligible for model selection only if mean(binary) <= gamma + tolerance.
  double budget_tolerance = 0.02;
  bool clamped_mask_loss = true;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  bool finetune = false;
  double train_loss = 0.0;
  double val_mae = 0.0;
  std::size_t kept = 0;
  bool eligible = true;
  /// Per node, share of this epoch's optimizer steps on which it was kept.
  std::vector<double> kept_share;
};

struct FitResult {
  ModelParams best;
  std::vector<EpochRecord> curve;
  std::size_t best_epoch = 0;   // 1-based over all epochs, fine-tune included
  std::size_t stop_epoch = 0;   // last epoch of the mask-learning phase
  bool early_stopped = false;
  double best_val_mae = 0.0;
};

/// Trains `params` in place and returns the checkpoint with the lowest
/// validation MAE (denormalized).
FitResult fit(const SplitWindows& data, ModelParams params, const TrainingConfig& config,
              const std::function<void(const EpochRecord&)>& on_epoch = {});

struct Evaluation {
  MetricSet metrics;
  std::vector<double> prediction;  // count × nodes × horizon, denormalized
  std::vector<double> target;
};

/// Forward over every window without gradients, in chunks of `batch_size`.
Evaluation evaluate(const ModelParams& params, const WindowSet& windows, std::size_t batch_size = 64);

/// Gathers windows `indices` into model input and target (batch × n × horizon,
/// channel 0) buffers.
void gather_batch(const WindowSet& windows, std::span<const std::size_t> indices,
                  std::vector<double>& inputs, std::vector<double>& targets);

}  // namespace prunegcrn
