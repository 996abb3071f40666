#include "prunegcrn/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>

#include "prunegcrn/errors.hpp"

namespace prunegcrn {

LossTerms composite_loss_terms(ad::Tape& t, const ad::Var& pred, std::span<const double> target,
                               const ad::Var& binary, double gamma, bool clamped) {
  if (pred->size() != target.size()) {
    throw DimensionError("composite_loss: prediction " + ad::shape_str(pred->shape) + " vs " +
                         std::to_string(target.size()) + " target values");
  }
  auto y = ad::constant(pred->shape, std::vector<double>(target.begin(), target.end()));
  LossTerms out;
  out.mae = ad::mean_all(t, ad::abs(t, ad::sub(t, pred, y)));
  if (!binary) {
    out.total = out.mae;
    return out;
  }
  out.mask_penalty = mask_loss(t, binary, gamma, clamped);
  out.total = ad::mul(t, out.mae, ad::add_scalar(t, out.mask_penalty, 1.0));
  return out;
}

ad::Var composite_loss(ad::Tape& t, const ad::Var& pred, std::span<const double> target,
                       const ad::Var& binary, double gamma, bool clamped) {
  return composite_loss_terms(t, pred, target, binary, gamma, clamped).total;
}

Optimizer::Optimizer(OptimizerConfig config, std::vector<ad::Var> params) : config_(config) {
  if (!(config_.learning_rate > 0)) throw ConfigError("optimizer learning_rate must be positive");
  for (auto& p : params) {
    slots_.push_back(Slot{p, std::vector<double>(p->size(), 0.0), std::vector<double>(p->size(), 0.0),
                          config_.learning_rate});
  }
}

void Optimizer::set_learning_rate(const ad::Var& param, double lr) {
  if (!(lr > 0)) throw ConfigError("optimizer learning rate must be positive");
  for (auto& s : slots_) {
    if (s.param == param) s.lr = lr;
  }
}

void Optimizer::zero_grad() {
  for (auto& s : slots_) s.param->zero_grad();
}

void Optimizer::step() {
  for (const auto& s : slots_) {
    for (double g : s.param->grad) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + s.param->name);
    }
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double bc1 = 1.0 - std::pow(b1, t);
  const double bc2 = 1.0 - std::pow(b2, t);

  bool adaptive = true;
  double rect = 1.0;
  if (config_.kind == OptimizerKind::kRAdam) {
    const double rho_inf = 2.0 / (1.0 - b2) - 1.0;
    const double rho_t = rho_inf - 2.0 * t * std::pow(b2, t) / bc2;
    adaptive = rho_t > 5.0;
    if (adaptive) {
      rect = std::sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf /
                       ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
    }
  }
  if (config_.kind == OptimizerKind::kSgd) {
    for (auto& s : slots_) {
      auto& w = s.param->value;
      const auto& g = s.param->grad;
      for (std::size_t i = 0; i < w.size(); ++i) {
        s.m[i] = config_.momentum * s.m[i] + g[i];
        w[i] -= s.lr * s.m[i];
      }
    }
    return;
  }
  for (auto& s : slots_) {
    auto& w = s.param->value;
    const auto& g = s.param->grad;
    for (std::size_t i = 0; i < w.size(); ++i) {
      s.m[i] = b1 * s.m[i] + (1.0 - b1) * g[i];
      s.v[i] = b2 * s.v[i] + (1.0 - b2) * g[i] * g[i];
      const double m_hat = s.m[i] / bc1;
      if (adaptive) {
        const double v_hat = std::sqrt(s.v[i] / bc2);
        w[i] -= s.lr * rect * m_hat / (v_hat + config_.epsilon);
      } else {
        w[i] -= s.lr * m_hat;
      }
    }
  }
}

double clip_grad_norm(std::span<const ad::Var> params, double max_norm) {
  double sq = 0;
  for (const auto& p : params) {
    for (double g : p->grad) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& p : params) {
      for (double& g : p->grad) g *= s;
    }
  }
  return norm;
}

void TrainingConfig::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("training.gamma must lie in [0, 1]");
  if (batch_size == 0) throw ConfigError("training.batch_size must be positive");
  if (max_epochs == 0) throw ConfigError("training.max_epochs must be positive");
  if (patience == 0) throw ConfigError("training.patience must be positive");
  if (!(optimizer.learning_rate > 0)) throw ConfigError("training.learning_rate must be positive");
  if (!(mask_optimizer.learning_rate > 0)) throw ConfigError("training.mask_learning_rate must be positive");
  if (!(mask_clip > 0)) throw ConfigError("training.mask_clip must be positive");
  if (!(mask_dropout >= 0 && mask_dropout < 1)) throw ConfigError("training.mask_dropout must lie in [0, 1)");
  if (!(budget_rate >= 0)) throw ConfigError("training.budget_rate must be non-negative");
}

void gather_batch(const WindowSet& windows, std::span<const std::size_t> indices,
                  std::vector<double>& inputs, std::vector<double>& targets) {
  const std::size_t n = windows.nodes, c = windows.channels, tau = windows.horizon;
  const std::size_t in_stride = windows.input_stride(), tg_stride = windows.target_stride();
  inputs.resize(indices.size() * in_stride);
  targets.resize(indices.size() * n * tau);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const std::size_t k = indices[b];
    std::copy_n(windows.inputs.data() + k * in_stride, in_stride, inputs.data() + b * in_stride);
    const double* tg = windows.targets.data() + k * tg_stride;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t h = 0; h < tau; ++h) targets[(b * n + i) * tau + h] = tg[(h * n + i) * c];
    }
  }
}

Evaluation evaluate(const ModelParams& params, const WindowSet& windows, std::size_t batch_size) {
  if (windows.nodes != params.config.nodes) {
    throw DimensionError("evaluate: windows over " + std::to_string(windows.nodes) +
                         " nodes, model over " + std::to_string(params.config.nodes));
  }
  if (windows.count == 0) throw DataError("evaluate: no windows");
  Evaluation ev;
  const std::size_t per = windows.nodes * windows.horizon;
  ev.prediction.reserve(windows.count * per);
  ev.target.reserve(windows.count * per);
  std::vector<std::size_t> idx;
  std::vector<double> in, tg;
  for (std::size_t begin = 0; begin < windows.count; begin += batch_size) {
    const std::size_t end = std::min(windows.count, begin + batch_size);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    gather_batch(windows, idx, in, tg);
    ad::Tape t(false);
    auto out = forward(t, params, in, idx.size());
    for (double v : out.prediction->value) ev.prediction.push_back(windows.stats.denormalize(v));
    for (double v : tg) ev.target.push_back(windows.stats.denormalize(v));
  }
  ev.metrics = metrics(ev.prediction, ev.target, windows.nodes, windows.horizon);
  return ev;
}

namespace {

/// Per raw entry: 1 inside the STE window, else 0.
std::vector<double> window_indicator(const std::vector<double>& raw, double window) {
  std::vector<double> out(raw.size(), 0.0);
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = std::fabs(raw[i]) <= window ? 1.0 : 0.0;
  return out;
}

struct EpochRunner {
  const SplitWindows& data;
  const TrainingConfig& config;
  std::mt19937_64& rng;
  // Dual variable of the usage constraint mean(b) <= gamma.
  double& budget_multiplier;

  double train_epoch(ModelParams& params, Optimizer& opt, Optimizer* mask_opt,
                     std::vector<double>* kept_share = nullptr) {
    const WindowSet& train = data.train;
    std::vector<std::size_t> order(train.count);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t batches = train.count / config.batch_size;
    if (config.batches_per_epoch) batches = std::min(batches, config.batches_per_epoch);
    if (batches == 0) throw DataError("training split has fewer windows than one batch");
    const auto trainable = params.trainable();
    const bool learn_mask = params.mask && !params.mask->frozen();
    std::vector<double> in, tg;
    double loss_sum = 0;
    for (std::size_t b = 0; b < batches; ++b) {
      std::span<const std::size_t> idx(order.data() + b * config.batch_size, config.batch_size);
      gather_batch(train, idx, in, tg);
      ad::Tape t;
      std::vector<double> shift;
      if (learn_mask && mask_opt && config.mask_dropout > 0) {
        const auto& raw = params.mask->raw->value;
        shift.assign(raw.size(), 0.0);
        std::bernoulli_distribution drop(config.mask_dropout);
        for (std::size_t i = 0; i < raw.size(); ++i) shift[i] = raw[i] > 0 && drop(rng) ? 1.0 : 0.0;
      }
      auto out = forward(t, params, in, idx.size(), shift);
      auto terms = composite_loss_terms(t, out.prediction, tg, out.binary, config.gamma,
                                        config.clamped_mask_loss);
      auto& loss = terms.total;
      opt.zero_grad();
      if (mask_opt) mask_opt->zero_grad();
      t.backward(loss);
      std::vector<double> pushed;
      if (learn_mask && mask_opt && config.mask_budget == MaskBudgetMode::kDecoupled) {
        pushed = window_indicator(params.mask->raw->value, params.mask->ste_window);
        // Remove the penalty's share, MAE · d(mean b)/d raw, from the raw gradient.
        if (terms.mask_penalty->value[0] != 0.0) {
          const double per_node = terms.mae->value[0] / static_cast<double>(pushed.size());
          for (std::size_t i = 0; i < pushed.size(); ++i) params.mask->raw->grad[i] -= per_node * pushed[i];
        }
        const double usage = static_cast<double>(params.mask->kept_count()) /
                             static_cast<double>(params.mask->nodes());
        budget_multiplier = std::max(0.0, budget_multiplier + config.budget_rate * (usage - config.gamma));
      }
      clip_grad_norm(trainable, config.grad_clip);
      opt.step();
      if (learn_mask && mask_opt) {
        mask_opt->step();
        if (!pushed.empty()) {
          const double step = budget_multiplier * config.mask_optimizer.learning_rate;
          for (std::size_t i = 0; i < pushed.size(); ++i) params.mask->raw->value[i] -= step * pushed[i];
        }
        clip_raw(*params.mask, config.mask_clip);
      }
      loss_sum += loss->value[0];
      if (kept_share && out.binary) {
        kept_share->resize(out.binary->size());
        for (std::size_t i = 0; i < out.binary->size(); ++i) {
          (*kept_share)[i] += out.binary->value[i] / static_cast<double>(batches);
        }
      }
    }
    return loss_sum / static_cast<double>(batches);
  }

  /// Everything trainable except the raw mask.
  Optimizer make_optimizer(const ModelParams& params) const {
    std::vector<ad::Var> ps;
    for (auto& v : params.trainable()) {
      if (!params.mask || v != params.mask->raw) ps.push_back(v);
    }
    return Optimizer(config.optimizer, std::move(ps));
  }
};

}  // namespace

FitResult fit(const SplitWindows& data, ModelParams params, const TrainingConfig& config,
              const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  if (data.train.count == 0) throw DataError("fit: empty training split");
  std::mt19937_64 rng(config.seed);
  double budget_multiplier = 0.0;
  EpochRunner runner{data, config, rng, budget_multiplier};
  const std::size_t n = params.config.nodes;
  if (params.mask && !params.mask->frozen() && config.gamma >= 1.0) {
    // No budget to meet: the mask stays as initialized.
    params.mask = params.mask->clone();
    params.mask->freeze();
  }
  const bool learn_mask = params.mask && !params.mask->frozen();

  FitResult result;
  result.best_val_mae = std::numeric_limits<double>::infinity();
  bool have_best = false;
  std::size_t since_best = 0;
  std::size_t epoch = 0;

  auto record = [&](const ModelParams& p, double loss, bool finetune, std::vector<double> share) {
    EpochRecord r;
    r.kept_share = std::move(share);
    r.epoch = epoch;
    r.finetune = finetune;
    r.train_loss = loss;
    r.val_mae = evaluate(p, data.val, config.batch_size * 2).metrics.mae;
    if (!std::isfinite(r.val_mae)) {
      throw TrainingError("validation MAE diverged at epoch " + std::to_string(epoch));
    }
    r.kept = p.mask ? p.mask->kept_count() : n;
    r.eligible = !learn_mask || finetune ||
                 static_cast<double>(r.kept) <= (config.gamma + config.budget_tolerance) * static_cast<double>(n);
    result.curve.push_back(r);
    if (on_epoch) on_epoch(r);
    return r;
  };

  {
    Optimizer opt = runner.make_optimizer(params);
    std::optional<Optimizer> mask_opt;
    if (learn_mask) mask_opt.emplace(config.mask_optimizer, std::vector<ad::Var>{params.mask->raw});
    while (epoch < config.max_epochs) {
      ++epoch;
      std::vector<double> share;
      Optimizer* mask_step = mask_opt && epoch > config.mask_warmup_epochs ? &*mask_opt : nullptr;
      const double loss = runner.train_epoch(params, opt, mask_step, &share);
      const EpochRecord r = record(params, loss, false, std::move(share));
      if (r.eligible && r.val_mae < result.best_val_mae) {
        result.best = params.clone();
        result.best_val_mae = r.val_mae;
        result.best_epoch = epoch;
        have_best = true;
        since_best = 0;
      } else if (have_best && ++since_best >= config.patience) {
        result.early_stopped = true;
        break;
      }
    }
  }
  result.stop_epoch = epoch;
  if (!have_best) {
    result.best = params.clone();
    result.best_val_mae = result.curve.back().val_mae;
    result.best_epoch = epoch;
  }

  const bool project = learn_mask && config.exact_k;
  if (!project && config.finetune_epochs == 0) return result;

  ModelParams tuned = result.best.clone();
  if (project) {
    const auto k = static_cast<std::size_t>(std::llround(config.gamma * static_cast<double>(n)));
    NodeMask snapped = project_to_exact_k(*tuned.mask, std::clamp<std::size_t>(k, 1, n));
    snapped.freeze();
    tuned.mask = std::move(snapped);
    // The projected mask replaces the selection; its pre-tuning score is a candidate too.
    result.best = tuned.clone();
    result.best_val_mae = evaluate(tuned, data.val, config.batch_size * 2).metrics.mae;
    result.best_epoch = epoch;
  }
  if (tuned.mask) tuned.mask->freeze();
  if (result.best.mask) result.best.mask->freeze();
  Optimizer opt = runner.make_optimizer(tuned);
  for (std::size_t f = 0; f < config.finetune_epochs; ++f) {
    ++epoch;
    const double loss = runner.train_epoch(tuned, opt, nullptr);
    const EpochRecord r = record(tuned, loss, true, {});
    if (r.val_mae < result.best_val_mae) {
      result.best = tuned.clone();
      result.best_val_mae = r.val_mae;
      result.best_epoch = epoch;
    }
  }
  return result;
}

}  // namespace prunegcrn
