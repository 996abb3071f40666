#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "prunegcrn/autodiff.hpp"
#include "prunegcrn/errors.hpp"

using namespace prunegcrn;
using namespace prunegcrn::ad;

namespace {

Var rand_leaf(Shape shape, std::mt19937_64& rng, const std::string& name, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = u(rng);
  return leaf(std::move(shape), std::move(v), true, name);
}

void expect_grads(const std::function<Var(Tape&)>& f, std::vector<Var> params) {
  const auto r = grad_check(f, params, 1e-5, 1e-6);
  EXPECT_TRUE(r.passed) << "worst " << r.worst_param << "[" << r.worst_index << "] rel " << r.max_rel_error;
  EXPECT_GT(r.checked, 0u);
}

}  // namespace

TEST(Autodiff, MatmulAndTransposeGradients) {
  std::mt19937_64 rng(1);
  auto a = rand_leaf({3, 4}, rng, "a");
  auto b = rand_leaf({4, 2}, rng, "b");
  expect_grads([&](Tape& t) { return sum_all(t, mul(t, matmul(t, a, b), matmul(t, a, b))); }, {a, b});
  expect_grads([&](Tape& t) { return sum_all(t, mul(t, transpose(t, a), transpose(t, a))); }, {a});
}

TEST(Autodiff, MatmulValues) {
  auto a = constant({2, 2}, {1, 2, 3, 4});
  auto b = constant({2, 2}, {5, 6, 7, 8});
  Tape t;
  auto c = matmul(t, a, b);
  EXPECT_EQ(c->value, (std::vector<double>{19, 22, 43, 50}));
}

TEST(Autodiff, MatmulRejectsMismatch) {
  auto a = constant({2, 3}, std::vector<double>(6, 1.0));
  auto b = constant({2, 3}, std::vector<double>(6, 1.0));
  Tape t;
  EXPECT_THROW(matmul(t, a, b), DimensionError);
}

TEST(Autodiff, BatchedAndNodeMatmulGradients) {
  std::mt19937_64 rng(2);
  auto s = rand_leaf({3, 3}, rng, "s");
  auto x = rand_leaf({2, 3, 2}, rng, "x");
  auto theta = rand_leaf({3, 2, 4}, rng, "theta");
  expect_grads(
      [&](Tape& t) {
        auto h = batched_left_matmul(t, s, x);
        auto z = node_matmul(t, h, theta);
        return sum_all(t, mul(t, z, z));
      },
      {s, x, theta});
}

TEST(Autodiff, ElementwiseGradientsWithBroadcast) {
  std::mt19937_64 rng(3);
  auto a = rand_leaf({2, 3, 4}, rng, "a");
  auto b = rand_leaf({3, 4}, rng, "b", 0.5, 1.5);
  auto c = rand_leaf({4}, rng, "c");
  expect_grads(
      [&](Tape& t) {
        auto x = add(t, a, b);
        x = mul(t, x, c);
        x = sub(t, x, b);
        x = add_scalar(t, scale(t, x, 0.7), 0.1);
        auto y = add(t, sigmoid(t, x), tanh(t, mul(t, x, x)));
        return mean_all(t, mul(t, y, abs(t, x)));
      },
      {a, b, c});
}

TEST(Autodiff, SigmoidAndTanhValues) {
  auto x = constant({5}, {-30.0, -1.0, 0.0, 2.0, 40.0});
  Tape t;
  auto s = sigmoid(t, x);
  auto h = tanh(t, x);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_NEAR(s->value[i], 1.0 / (1.0 + std::exp(-x->value[i])), 1e-15);
    EXPECT_NEAR(h->value[i], std::tanh(x->value[i]), 1e-15);
  }
}

TEST(Autodiff, ReluSoftmaxGradients) {
  std::mt19937_64 rng(4);
  auto a = rand_leaf({4, 5}, rng, "a");
  auto w = rand_leaf({4, 5}, rng, "w");
  expect_grads([&](Tape& t) { return sum_all(t, mul(t, rowsoftmax(t, relu(t, a)), w)); }, {a});
}

TEST(Autodiff, SoftmaxRowsSumToOneUnderLargeInputs) {
  auto a = constant({2, 3}, {1000.0, 1001.0, 999.0, -5.0, 0.0, 5.0});
  Tape t;
  auto s = rowsoftmax(t, a);
  for (std::size_t r = 0; r < 2; ++r) {
    double sum = 0;
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_TRUE(std::isfinite(s->value[r * 3 + c]));
      sum += s->value[r * 3 + c];
    }
    EXPECT_NEAR(sum, 1.0, 1e-15);
  }
}

TEST(Autodiff, ConcatSliceReshapeGradients) {
  std::mt19937_64 rng(5);
  auto a = rand_leaf({2, 3, 2}, rng, "a");
  auto b = rand_leaf({2, 3, 3}, rng, "b");
  expect_grads(
      [&](Tape& t) {
        auto c = concat_last(t, a, b);
        auto s = slice_last(t, c, 1, 3);
        auto r = reshape(t, s, {6, 3});
        return sum_all(t, mul(t, r, r));
      },
      {a, b});
}

TEST(Autodiff, MaskedBlendGradients) {
  std::mt19937_64 rng(6);
  auto x = rand_leaf({2, 4, 2}, rng, "x");
  auto w = rand_leaf({4}, rng, "w");
  auto fill = rand_leaf({4, 2}, rng, "fill");
  expect_grads([&](Tape& t) { return sum_all(t, mul(t, masked_blend(t, x, w, fill), x)); }, {x, w, fill});
}

TEST(Autodiff, StraightThroughWindow) {
  auto raw = leaf({4}, {0.5, -0.5, 2.0, -3.0}, true, "raw");
  Tape t;
  auto b = binary_clamp_ste(t, raw, 1.0);
  EXPECT_EQ(b->value, (std::vector<double>{1, 0, 1, 0}));
  auto w = constant({4}, {1, 2, 3, 4});
  t.backward(sum_all(t, mul(t, b, w)));
  EXPECT_EQ(raw->grad, (std::vector<double>{1, 2, 0, 0}));
}

TEST(Autodiff, GradientsAccumulateAcrossUses) {
  auto x = leaf({1}, {3.0}, true, "x");
  Tape t;
  t.backward(sum_all(t, add(t, mul(t, x, x), x)));
  EXPECT_DOUBLE_EQ(x->grad[0], 7.0);
}

TEST(Autodiff, NoGradTapeRetainsNothingButCountsElements) {
  auto a = leaf({3, 3}, std::vector<double>(9, 0.5), true, "a");
  Tape off(false);
  auto y = matmul(off, a, a);
  EXPECT_EQ(off.size(), 0u);
  EXPECT_EQ(off.elements_emitted(), 9u);
  Tape on;
  matmul(on, a, a);
  EXPECT_EQ(on.size(), 1u);
  EXPECT_EQ(on.elements_emitted(), 9u);
}

TEST(Autodiff, GradCheckFlagsWrongGradient) {
  auto x = leaf({2}, {0.3, -0.7}, true, "x");
  // A custom op whose backward is deliberately wrong by a factor of 2.
  auto bad = [&](Tape& t) {
    auto out = t.emit({2}, {x->value[0] * x->value[0], x->value[1] * x->value[1]}, true, [xx = x](const Node& o) {
      for (std::size_t i = 0; i < 2; ++i) xx->grad[i] += 4 * xx->value[i] * o.grad[i];
    });
    return sum_all(t, out);
  };
  const auto r = grad_check(bad, std::vector<Var>{x}, 1e-5, 1e-4);
  EXPECT_FALSE(r.passed);
  EXPECT_NEAR(r.max_rel_error, 0.5, 1e-6);
}
