#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "prunegcrn/errors.hpp"
#include "prunegcrn/model.hpp"

using namespace prunegcrn;
using namespace prunegcrn::ad;

namespace {

ModelConfig small_config(std::size_t n = 6) {
  ModelConfig c;
  c.nodes = n;
  c.embed_dim = 3;
  c.units = 8;
  c.layers = 2;
  c.window = 4;
  c.horizon = 3;
  return c;
}

std::vector<double> random_inputs(std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(size);
  for (double& x : v) x = g(rng);
  return v;
}

}  // namespace

TEST(Model, GruCellGradients) {
  std::mt19937_64 rng(5);
  const std::size_t n = 6, d = 3, u = 8;
  auto p = ModelParams::init(small_config(), 5);
  auto x = leaf({n, 1}, random_inputs(n, 1), true, "x");
  auto h = leaf({n, u}, random_inputs(n * u, 2), true, "h");
  const auto& layer = p.layers[0];
  auto fn = [&](Tape& t) {
    auto s = adaptive_support(t, p.embeddings);
    auto out = gru_cell(t, x, h, s, p.embeddings, layer);
    return sum_all(t, mul(t, out, out));
  };
  const std::vector<Var> params{x, h, p.embeddings, layer.gate.weights, layer.gate.bias,
                                layer.candidate.weights, layer.candidate.bias};
  const auto r = grad_check(fn, params, 1e-5, 1e-4);
  EXPECT_TRUE(r.passed) << r.worst_param << " " << r.max_rel_error;
  EXPECT_EQ(p.embeddings->shape, (Shape{n, d}));
}

TEST(Model, LiteralGateModeRuns) {
  auto c = small_config();
  c.gate_mode = GateMode::kLiteral;
  c.projection = ProjectionMode::kPerNode;
  auto p = ModelParams::init(c, 3);
  const auto in = random_inputs(2 * c.window * c.nodes, 4);
  Tape t(false);
  auto r = forward(t, p, in, 2);
  EXPECT_EQ(r.prediction->shape, (Shape{2, c.nodes, c.horizon}));
}

TEST(Model, ParameterCountMatchesClosedForm) {
  for (auto gate : {GateMode::kStandard, GateMode::kLiteral}) {
    for (auto proj : {ProjectionMode::kShared, ProjectionMode::kPerNode}) {
      auto c = small_config(7);
      c.gate_mode = gate;
      c.projection = proj;
      auto p = ModelParams::init(c, 1);
      std::size_t total = 0;
      for (const auto& [name, v] : p.named()) total += v->size();
      EXPECT_EQ(p.parameter_count(), total);
      EXPECT_EQ(count_params_and_activations(c, 0.0).parameters, total);
    }
  }
}

TEST(Model, ActivationCountMatchesTape) {
  for (auto gate : {GateMode::kStandard, GateMode::kLiteral}) {
    for (auto proj : {ProjectionMode::kShared, ProjectionMode::kPerNode}) {
      auto c = small_config(7);
      c.gate_mode = gate;
      c.projection = proj;
      auto p = ModelParams::init(c, 1);
      const std::size_t batch = 3;
      const auto in = random_inputs(batch * c.window * c.nodes, 9);
      Tape t(false);
      forward(t, p, in, batch);
      EXPECT_EQ(count_params_and_activations(c, 0.0, batch).peak_activation_elements, t.elements_emitted())
          << static_cast<int>(gate) << " " << static_cast<int>(proj);
    }
  }
}

TEST(Model, CompactFootprintMatchesRebuild) {
  auto c = small_config(10);
  auto p = ModelParams::init(c, 2);
  const auto mask = NodeMask::fixed({true, false, false, true, false, true, false, false, false, false}, 1);
  auto compact = compact_rebuild(p, mask);
  EXPECT_EQ(compact.config.nodes, 3u);
  EXPECT_FALSE(compact.mask.has_value());
  const auto fp = count_params_and_activations(c, 0.7, 2);
  EXPECT_EQ(fp.parameters, compact.parameter_count());
  Tape t(false);
  forward(t, compact, random_inputs(2 * c.window * 3, 3), 2);
  EXPECT_EQ(fp.peak_activation_elements, t.elements_emitted());
  EXPECT_LT(fp.parameters, count_params_and_activations(c, 0.0).parameters);
}

TEST(Model, FootprintStrictlyDecreasesWithFraction) {
  auto c = small_config(300);
  c.units = 64;
  c.embed_dim = 10;
  std::size_t prev_p = SIZE_MAX, prev_a = SIZE_MAX;
  for (double f : {0.0, 0.25, 0.5, 0.75, 0.9, 0.95}) {
    const auto fp = count_params_and_activations(c, f);
    EXPECT_LT(fp.parameters, prev_p);
    EXPECT_LT(fp.peak_activation_elements, prev_a);
    prev_p = fp.parameters;
    prev_a = fp.peak_activation_elements;
  }
}

TEST(Model, PrunedNodeInputDoesNotChangeOutput) {
  auto c = small_config();
  auto p = ModelParams::init(c, 4);
  p.mask = NodeMask::fixed({true, true, false, true, false, true}, 1);
  auto in = random_inputs(2 * c.window * c.nodes, 5);
  Tape t1(false);
  const auto base = forward(t1, p, in, 2).prediction->value;
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g(0.0, 50.0);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t w = 0; w < c.window; ++w) {
      in[(b * c.window + w) * c.nodes + 2] = g(rng);
      in[(b * c.window + w) * c.nodes + 4] = g(rng);
    }
  }
  Tape t2(false);
  const auto moved = forward(t2, p, in, 2).prediction->value;
  EXPECT_EQ(base, moved);
  in[1] += 1.0;
  Tape t3(false);
  EXPECT_NE(forward(t3, p, in, 2).prediction->value, base);
}

TEST(Model, ForwardRejectsBadShapes) {
  auto c = small_config();
  auto p = ModelParams::init(c, 4);
  Tape t(false);
  EXPECT_THROW(forward(t, p, std::vector<double>(5, 0.0), 1), DimensionError);
  const std::vector<double> shift(3, 0.0);
  EXPECT_THROW(forward(t, p, random_inputs(c.window * c.nodes, 1), 1, shift), DimensionError);
}

TEST(Model, CheckpointRoundTripIsExact) {
  auto c = small_config();
  c.projection = ProjectionMode::kPerNode;
  auto p = ModelParams::init(c, 8);
  p.mask->raw->value[1] = -0.123456789012345;
  const auto path = (std::filesystem::temp_directory_path() / "prunegcrn_model.ckpt").string();
  save_checkpoint(path, p);
  const auto q = load_checkpoint(path);
  const auto a = p.named(), b = q.named();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    EXPECT_EQ(a[i].second->shape, b[i].second->shape);
    EXPECT_EQ(a[i].second->value, b[i].second->value);
  }
  EXPECT_EQ(q.config.projection, ProjectionMode::kPerNode);
  const auto in = random_inputs(c.window * c.nodes, 2);
  Tape t1(false), t2(false);
  EXPECT_EQ(forward(t1, p, in, 1).prediction->value, forward(t2, q, in, 1).prediction->value);
  std::filesystem::remove(path);
}

TEST(Model, CloneIsIndependent) {
  auto p = ModelParams::init(small_config(), 1);
  auto q = p.clone();
  q.embeddings->value[0] += 1.0;
  EXPECT_NE(p.embeddings->value[0], q.embeddings->value[0]);
  p.assign_from(q);
  EXPECT_EQ(p.embeddings->value, q.embeddings->value);
}

TEST(Model, InitIsDeterministic) {
  auto a = ModelParams::init(small_config(), 3), b = ModelParams::init(small_config(), 3);
  EXPECT_EQ(a.layers[1].gate.weights->value, b.layers[1].gate.weights->value);
  EXPECT_THROW(ModelParams::init(ModelConfig{}, 0), ConfigError);
}
