#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "prunegcrn/graph_learning.hpp"

using namespace prunegcrn;
using namespace prunegcrn::ad;

namespace {

Var rand_leaf(Shape shape, std::mt19937_64& rng, const std::string& name) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = g(rng);
  return leaf(std::move(shape), std::move(v), true, name);
}

}  // namespace

TEST(GraphLearning, SupportIsRowStochasticAndMatchesOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t n = 4 + trial, d = 3;
    auto e = rand_leaf({n, d}, rng, "e");
    Tape t(false);
    auto s = adaptive_support(t, e);
    ASSERT_EQ(s->shape, (Shape{n, n}));
    for (std::size_t i = 0; i < n; ++i) {
      double row = 0;
      for (std::size_t j = 0; j < n; ++j) {
        EXPECT_GE(s->value[i * n + j], 0.0);
        row += s->value[i * n + j];
      }
      EXPECT_NEAR(row, 1.0, 1e-12);
    }
    EXPECT_LT(oracle::max_abs_diff(s->value, oracle::adaptive_support(e->value, n, d)), 1e-12);
  }
}

TEST(GraphLearning, ZeroEmbeddingsGiveUniformSupport) {
  auto e = zeros({5, 2});
  Tape t(false);
  auto s = adaptive_support(t, e);
  for (double v : s->value) EXPECT_DOUBLE_EQ(v, 0.2);
}

TEST(GraphLearning, NaplConvMatchesNaiveLoops) {
  std::mt19937_64 rng(12);
  const std::size_t n = 6, d = 3, c = 2, f = 5;
  auto pool = make_weight_pool(d, c, f, rng, "pool");
  auto e = rand_leaf({n, d}, rng, "e");
  auto x = rand_leaf({n, c}, rng, "x");
  Tape t(false);
  auto s = adaptive_support(t, e);
  auto z = napl_conv(t, x, s, e, pool);
  ASSERT_EQ(z->shape, (Shape{n, f}));
  const auto ref = oracle::napl_conv(x->value, s->value, e->value, pool.weights->value, pool.bias->value, n, c, d, f);
  EXPECT_LT(oracle::max_abs_diff(z->value, ref), 1e-12);
}

TEST(GraphLearning, BatchedNaplMatchesPerSample) {
  std::mt19937_64 rng(13);
  const std::size_t n = 5, d = 3, c = 2, f = 4, batch = 3;
  auto pool = make_weight_pool(d, c, f, rng, "pool");
  auto e = rand_leaf({n, d}, rng, "e");
  auto xb = rand_leaf({batch, n, c}, rng, "x");
  Tape t(false);
  auto s = adaptive_support(t, e);
  auto zb = napl_conv(t, xb, s, e, pool);
  for (std::size_t b = 0; b < batch; ++b) {
    auto xs = constant({n, c}, std::vector<double>(xb->value.begin() + b * n * c, xb->value.begin() + (b + 1) * n * c));
    auto zs = napl_conv(t, xs, s, e, pool);
    for (std::size_t i = 0; i < n * f; ++i) EXPECT_NEAR(zb->value[b * n * f + i], zs->value[i], 1e-13);
  }
}

TEST(GraphLearning, NaplGradients) {
  std::mt19937_64 rng(14);
  const std::size_t n = 6, d = 3, c = 2, f = 3;
  auto pool = make_weight_pool(d, c, f, rng, "pool");
  auto e = rand_leaf({n, d}, rng, "e");
  auto x = rand_leaf({n, c}, rng, "x");
  auto fn = [&](Tape& t) {
    auto z = napl_conv(t, x, adaptive_support(t, e), e, pool);
    return sum_all(t, mul(t, z, z));
  };
  const auto r = grad_check(fn, std::vector<Var>{x, e, pool.weights, pool.bias});
  EXPECT_TRUE(r.passed) << r.worst_param << " " << r.max_rel_error;
}

TEST(GraphLearning, ParamCountFormula) {
  EXPECT_EQ(napl_param_count(10, 2, 3, 4), 2u * 3 * 4 + 10 * 2);
  std::mt19937_64 rng(0);
  auto pool = make_weight_pool(2, 3, 4, rng, "p");
  EXPECT_EQ(pool.weights->shape, (Shape{2, 3, 4}));
  EXPECT_EQ(pool.bias->shape, (Shape{2, 4}));
}
