#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "prunegcrn/errors.hpp"
#include "prunegcrn/mask.hpp"

using namespace prunegcrn;
using namespace prunegcrn::ad;

TEST(Mask, BinaryIsZeroOrOne) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> g(0.0, 2.0);
  NodeMask m = NodeMask::initial(50, 1);
  for (double& v : m.raw->value) v = g(rng);
  m.raw->value[0] = 0.0;
  Tape t;
  auto b = make_binary(t, m);
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_TRUE(b->value[i] == 0.0 || b->value[i] == 1.0);
    EXPECT_EQ(b->value[i], m.raw->value[i] > 0 ? 1.0 : 0.0);
  }
  EXPECT_EQ(b->value[0], 0.0);
}

TEST(Mask, LossOfAllOnesAtQuarterBudgetIsThreeQuarters) {
  NodeMask m = NodeMask::initial(8, 1);
  Tape t;
  EXPECT_EQ(mask_loss(t, m, 0.25)->value[0], 0.75);
}

TEST(Mask, LossClampsBelowBudget) {
  NodeMask m = NodeMask::fixed({true, false, false, false}, 1);
  Tape t;
  EXPECT_EQ(mask_loss(t, m, 0.5)->value[0], 0.0);
  EXPECT_EQ(mask_loss(t, m, 0.5, false)->value[0], -0.25);
  EXPECT_EQ(mask_loss(t, m, 0.25)->value[0], 0.0);
  EXPECT_THROW(mask_loss(t, m, 1.5), ConfigError);
}

TEST(Mask, LossGradientReachesRawThroughWindow) {
  NodeMask m = NodeMask::initial(4, 1);
  m.raw->value = {0.5, -0.5, 3.0, 0.2};
  Tape t;
  auto l = mask_loss(t, m, 0.0);
  t.backward(l);
  EXPECT_EQ(m.raw->grad, (std::vector<double>{0.25, 0.25, 0.0, 0.25}));
}

TEST(Mask, PrunedNodeTakesGraphBias) {
  NodeMask m = NodeMask::fixed({true, false, true}, 2);
  m.graph_bias->value = {9, 9, 7, 8, 9, 9};
  auto x = constant({3, 2}, {1, 2, 3, 4, 5, 6});
  Tape t;
  auto y = apply_mask(t, x, m);
  EXPECT_EQ(y->value, (std::vector<double>{1, 2, 7, 8, 5, 6}));
  EXPECT_THROW(apply_mask(t, constant({4, 2}, std::vector<double>(8, 0.0)), m), DimensionError);
}

TEST(Mask, FixedMaskIsFrozen) {
  NodeMask m = NodeMask::fixed({true, false}, 1);
  EXPECT_TRUE(m.frozen());
  EXPECT_FALSE(NodeMask::initial(2, 1).frozen());
  EXPECT_EQ(m.kept_count(), 1u);
}

TEST(Mask, ProjectionKeepsLargestRawWithLowerIndexTies) {
  NodeMask m = NodeMask::initial(6, 1);
  m.raw->value = {0.3, 0.9, 0.3, -0.2, 0.9, 0.1};
  NodeMask p = project_to_exact_k(m, 3);
  EXPECT_EQ(selected_nodes(p), (std::vector<std::size_t>{0, 1, 4}));
  EXPECT_EQ(p.kept_count(), 3u);
  p.raw->value[0] = 5.0;
  EXPECT_EQ(m.raw->value[0], 0.3);
  EXPECT_THROW(project_to_exact_k(m, 7), DomainError);
}

TEST(Mask, ClipBoundsRaw) {
  NodeMask m = NodeMask::initial(3, 1);
  m.raw->value = {-4.0, 0.2, 2.5};
  clip_raw(m, 1.5);
  EXPECT_EQ(m.raw->value, (std::vector<double>{-1.5, 0.2, 1.5}));
}

TEST(Mask, KeptForFraction) {
  EXPECT_EQ(kept_for_fraction(20, 0.8), 4u);
  EXPECT_EQ(kept_for_fraction(20, 0.0), 20u);
  EXPECT_EQ(kept_for_fraction(300, 0.95), 15u);
  EXPECT_EQ(kept_for_fraction(10, 0.99), 1u);
  EXPECT_THROW(kept_for_fraction(10, 1.0), ConfigError);
}

TEST(Mask, CsvRoundTrip) {
  NodeMask m = NodeMask::initial(5, 1);
  m.raw->value = {0.1234567890123, -1.0, 1e-17, -0.0, 0.7};
  const auto path = std::filesystem::temp_directory_path() / "prunegcrn_mask_rt.csv";
  write_mask_csv(path, m);
  const auto rec = read_mask_csv(path);
  EXPECT_EQ(rec.raw, m.raw->value);
  EXPECT_EQ(rec.selected, (std::vector<bool>{true, false, true, false, true}));
  std::filesystem::remove(path);
}

TEST(Mask, CsvRejectsBadHeader) {
  const auto path = std::filesystem::temp_directory_path() / "prunegcrn_mask_bad.csv";
  {
    std::ofstream out(path);
    out << "id,keep\n0,1\n";
  }
  EXPECT_THROW(read_mask_csv(path), ParseError);
  std::filesystem::remove(path);
}
