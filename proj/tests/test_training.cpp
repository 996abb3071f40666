#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "prunegcrn/errors.hpp"
#include "prunegcrn/training.hpp"

using namespace prunegcrn;
using namespace prunegcrn::ad;

namespace {

struct TinySetup {
  SplitWindows data;
  ModelConfig model;
};

TinySetup tiny(std::size_t n = 10, std::uint64_t seed = 0) {
  TinySetup s;
  const auto syn = gen_synthetic(n, 400, 2, seed);
  s.data = split_and_window(syn.dataset, 4, 2);
  s.model.nodes = n;
  s.model.embed_dim = 2;
  s.model.units = 4;
  s.model.layers = 1;
  s.model.window = 4;
  s.model.horizon = 2;
  return s;
}

TrainingConfig quick(double gamma) {
  TrainingConfig c;
  c.gamma = gamma;
  c.max_epochs = 6;
  c.batches_per_epoch = 4;
  c.finetune_epochs = 1;
  c.mask_warmup_epochs = 1;
  c.optimizer.learning_rate = 0.01;
  return c;
}

}  // namespace

TEST(Training, PerfectPredictionHasZeroLoss) {
  const std::vector<double> y{0.5, -1.0, 2.0, 0.25};
  auto pred = constant({4}, y);
  auto binary = constant({4}, {1, 1, 1, 1});
  Tape t;
  EXPECT_EQ(composite_loss(t, pred, y, binary, 0.25)->value[0], 0.0);
  EXPECT_EQ(composite_loss(t, pred, y, nullptr, 0.25)->value[0], 0.0);
}

TEST(Training, CompositeLossScalesMaeByPenalty) {
  auto pred = constant({2}, {1.0, 3.0});
  auto binary = constant({4}, {1, 1, 1, 0});
  Tape t;
  const auto terms = composite_loss_terms(t, pred, std::vector<double>{0.0, 1.0}, binary, 0.25);
  EXPECT_DOUBLE_EQ(terms.mae->value[0], 1.5);
  EXPECT_DOUBLE_EQ(terms.mask_penalty->value[0], 0.5);
  EXPECT_DOUBLE_EQ(terms.total->value[0], 1.5 * 1.5);
  EXPECT_THROW(composite_loss(t, pred, std::vector<double>{0.0}, nullptr, 0.5), DimensionError);
}

TEST(Training, CompositeLossGradients) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> pv(12), y(12), bv(6);
  for (double& v : pv) v = g(rng);
  for (double& v : y) v = g(rng);
  for (double& v : bv) v = 0.3 + 0.1 * g(rng);
  auto pred = leaf({12}, pv, true, "pred");
  auto b = leaf({6}, bv, true, "binary");
  auto fn = [&](Tape& t) { return composite_loss(t, pred, y, b, 0.1, false); };
  const auto r = grad_check(fn, std::vector<Var>{pred, b}, 1e-5, 1e-4);
  EXPECT_TRUE(r.passed) << r.worst_param << " " << r.max_rel_error;
}

TEST(Training, OptimizerDescendsQuadraticBowl) {
  for (auto kind : {OptimizerKind::kRAdam, OptimizerKind::kAdam}) {
    auto w = leaf({2}, {3.0, -2.0}, true, "w");
    OptimizerConfig oc;
    oc.kind = kind;
    oc.learning_rate = 0.01;
    Optimizer opt(oc, {w});
    double norm = 1.0;
    std::size_t steps = 0;
    while (steps < 2000) {
      opt.zero_grad();
      Tape t;
      t.backward(sum_all(t, mul(t, w, w)));
      opt.step();
      ++steps;
      norm = std::hypot(w->value[0], w->value[1]);
      if (norm < 1e-3) break;
    }
    EXPECT_LT(norm, 1e-3) << static_cast<int>(kind) << " after " << steps;
  }
}

TEST(Training, SgdWithMomentumDescends) {
  auto w = leaf({2}, {3.0, -2.0}, true, "w");
  Optimizer opt({OptimizerKind::kSgd, 0.01, 0.9, 0.999, 1e-8, 0.9}, {w});
  for (int i = 0; i < 2000; ++i) {
    opt.zero_grad();
    Tape t;
    t.backward(sum_all(t, mul(t, w, w)));
    opt.step();
  }
  EXPECT_LT(std::hypot(w->value[0], w->value[1]), 1e-3);
}

TEST(Training, OptimizerRejectsNonFiniteGradient) {
  auto w = leaf({2}, {1.0, 1.0}, true, "weights");
  Optimizer opt({}, {w});
  w->grad = {NAN, 0.0};
  try {
    opt.step();
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("weights"), std::string::npos);
  }
}

TEST(Training, ClipGradNorm) {
  auto a = leaf({2}, {0, 0}, true), b = leaf({1}, {0}, true);
  a->grad = {3.0, 0.0};
  b->grad = {4.0};
  const std::vector<Var> ps{a, b};
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 1.0), 5.0);
  EXPECT_NEAR(a->grad[0], 0.6, 1e-15);
  EXPECT_NEAR(b->grad[0], 0.8, 1e-15);
  EXPECT_NEAR(clip_grad_norm(ps, 10.0), 1.0, 1e-15);
  EXPECT_NEAR(a->grad[0], 0.6, 1e-15);
}

TEST(Training, PatienceStopsAtBestPlusPatience) {
  auto s = tiny();
  s.model.masked = false;
  auto p = ModelParams::init(s.model, 1);
  TrainingConfig c;
  c.max_epochs = 100;
  c.patience = 25;
  c.finetune_epochs = 0;
  c.batches_per_epoch = 1;
  // Steps too small to move any weight: validation never improves after epoch 1.
  c.optimizer.learning_rate = 1e-300;
  const auto r = fit(s.data, p, c);
  EXPECT_TRUE(r.early_stopped);
  EXPECT_EQ(r.best_epoch, 1u);
  EXPECT_EQ(r.stop_epoch, 26u);
  EXPECT_EQ(r.curve.size(), 26u);
}

TEST(Training, FullBudgetKeepsEveryNode) {
  auto s = tiny();
  auto p = ModelParams::init(s.model, 2);
  const auto r = fit(s.data, p, quick(1.0));
  ASSERT_TRUE(r.best.mask.has_value());
  EXPECT_EQ(r.best.mask->kept_count(), s.model.nodes);
  for (const auto& e : r.curve) EXPECT_EQ(e.kept, s.model.nodes);
}

TEST(Training, BudgetedFitKeepsTheBudgetedShare) {
  auto s = tiny(20, 1);
  auto p = ModelParams::init(s.model, 3);
  auto c = quick(0.2);
  c.max_epochs = 12;
  const auto r = fit(s.data, p, c);
  const auto b = r.best.mask->binary();
  double mean = 0;
  for (double v : b) {
    EXPECT_TRUE(v == 0.0 || v == 1.0);
    mean += v;
  }
  mean /= static_cast<double>(b.size());
  EXPECT_GE(mean, 0.18);
  EXPECT_LE(mean, 0.25);
  EXPECT_TRUE(r.best.mask->frozen());
}

TEST(Training, LowerBudgetNeverKeepsMore) {
  auto s = tiny(12, 2);
  std::size_t prev = SIZE_MAX;
  for (double gamma : {0.9, 0.6, 0.4, 0.2}) {
    auto p = ModelParams::init(s.model, 4);
    const auto r = fit(s.data, p, quick(gamma));
    const auto kept = r.best.mask->kept_count();
    EXPECT_LE(kept, prev) << gamma;
    prev = kept;
  }
}

TEST(Training, FitIsDeterministic) {
  auto s = tiny();
  auto c = quick(0.5);
  c.seed = 9;
  const auto a = fit(s.data, ModelParams::init(s.model, 5), c);
  const auto b = fit(s.data, ModelParams::init(s.model, 5), c);
  EXPECT_EQ(a.best_val_mae, b.best_val_mae);
  EXPECT_EQ(a.best.mask->binary(), b.best.mask->binary());
}

TEST(Training, ConfigValidation) {
  TrainingConfig c;
  c.gamma = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.patience = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.optimizer.learning_rate = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Training, EvaluateDenormalizes) {
  auto s = tiny();
  auto p = ModelParams::init(s.model, 6);
  const auto ev = evaluate(p, s.data.test);
  ASSERT_EQ(ev.target.size(), s.data.test.count * s.model.nodes * s.model.horizon);
  // Window 0, node 1, horizon step 1.
  const double raw = s.data.test.stats.denormalize(s.data.test.targets[(1 * s.model.nodes + 1)]);
  EXPECT_NEAR(ev.target[1 * s.model.horizon + 1], raw, 1e-12);
  EXPECT_EQ(ev.metrics.node_mae.size(), s.model.nodes);
}
