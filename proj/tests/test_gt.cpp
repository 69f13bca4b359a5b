#include <gtest/gtest.h>

#include "mcam/gt.hpp"
#include "support/gt_oracle.hpp"

namespace mcam {
namespace {

LabelMap from_rows(const std::vector<std::vector<int>>& rows) {
  LabelMap m(rows[0].size(), rows.size(), 0);
  for (std::size_t y = 0; y < rows.size(); ++y)
    for (std::size_t x = 0; x < rows[y].size(); ++x) m.at(x, y) = static_cast<std::uint16_t>(rows[y][x]);
  return m;
}

DepthMap flat_depth(const LabelMap& m, const std::vector<float>& z_of_label) {
  DepthMap d(m.width, m.height, 0.0f);
  for (std::size_t i = 0; i < m.size(); ++i) d[i] = z_of_label[m[i]];
  return d;
}

// Filled w x h rectangle at (x0, y0) with label l.
void fill(LabelMap& m, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h, std::uint16_t l) {
  for (std::size_t y = y0; y < y0 + h; ++y)
    for (std::size_t x = x0; x < x0 + w; ++x) m.at(x, y) = l;
}

std::size_t count(const BinaryMap& b) {
  std::size_t n = 0;
  for (auto v : b.data) n += v;
  return n;
}

bool within_dilation(const BinaryMap& o, const BinaryMap& b) {
  for (long y = 0; y < static_cast<long>(o.height); ++y)
    for (long x = 0; x < static_cast<long>(o.width); ++x) {
      if (!o.at(x, y)) continue;
      bool near = false;
      for (long v = y - 1; v <= y + 1; ++v)
        for (long u = x - 1; u <= x + 1; ++u)
          if (u >= 0 && v >= 0 && u < static_cast<long>(o.width) && v < static_cast<long>(o.height) && b.at(u, v))
            near = true;
      if (!near) return false;
    }
  return true;
}

TEST(InstanceMap, Validation) {
  EXPECT_EQ(check_instance_map(from_rows({{0, 1}, {2, 2}})), 2u);
  EXPECT_EQ(check_instance_map(LabelMap(3, 3, 0)), 0u);
  EXPECT_THROW(check_instance_map(from_rows({{0, 1}, {3, 3}})), std::invalid_argument);
}

TEST(Boundaries, SingleInstanceOnBackground) {
  LabelMap m(8, 8, 0);
  fill(m, 2, 2, 4, 4, 1);
  const BinaryMap b = boundaries(m);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) {
      const bool ring = m.at(x, y) == 1 && (x == 2 || x == 5 || y == 2 || y == 5);
      EXPECT_EQ(b.at(x, y), ring ? 1 : 0) << x << "," << y;
    }
}

TEST(Boundaries, ImageBorderIsNotBoundary) {
  const LabelMap m(6, 5, 1);
  EXPECT_EQ(count(boundaries(m)), 0u);
  EXPECT_EQ(count(boundaries(LabelMap(4, 4, 0))), 0u);
}

TEST(Boundaries, EightConnectivityAddsDiagonals) {
  const LabelMap m = from_rows({{1, 1, 1}, {1, 1, 1}, {1, 1, 0}});
  EXPECT_EQ(boundaries(m, 4).at(1, 1), 0);
  EXPECT_EQ(boundaries(m, 8).at(1, 1), 1);
  EXPECT_THROW(boundaries(m, 6), std::invalid_argument);
}

TEST(Boundaries, MatchesBruteForceOnRandomTwoInstanceMaps) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    LabelMap m(16, 16, 0);
    for (auto& l : m.data) l = static_cast<std::uint16_t>(rng.uniform_int(0, 2));
    for (int c : {4, 8}) EXPECT_EQ(boundaries(m, c), oracle::brute_boundaries(m, c));
  }
}

TEST(OccludingSides, LeftOverRight) {
  LabelMap m(8, 8, 0);
  fill(m, 0, 0, 4, 8, 1);
  fill(m, 4, 0, 4, 8, 2);
  const DepthMap z = flat_depth(m, {0.0f, 2.0f, 1.0f});
  const BinaryMap o = occluding_sides(m, z, 2);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) EXPECT_EQ(o.at(x, y), x == 3 ? 1 : 0) << x << "," << y;
  EXPECT_EQ(o, oracle::brute_occluding_sides(m, z, 2));

  // Swapping the depths moves the side across the interface.
  const BinaryMap swapped = occluding_sides(m, flat_depth(m, {0.0f, 1.0f, 2.0f}), 2);
  for (std::size_t y = 0; y < 8; ++y) EXPECT_EQ(swapped.at(4, y), 1);
  EXPECT_EQ(count(swapped), 8u);
}

TEST(OccludingSides, SingleInstanceEqualsBoundary) {
  LabelMap m(12, 10, 0);
  fill(m, 3, 2, 5, 6, 1);
  // Background depth is ignored even when it is numerically higher.
  DepthMap z(12, 10, 100.0f);
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i]) z[i] = 1.0f;
  EXPECT_EQ(occluding_sides(m, z, 2), boundaries(m));
}

TEST(OccludingSides, ThreeLabelWindowsContributeNothing) {
  // T-junction: top half 1, bottom-left 2, bottom-right 3. With r = 16 every window covers
  // the whole image and holds three labels.
  LabelMap m(16, 16, 0);
  fill(m, 0, 0, 16, 8, 1);
  fill(m, 0, 8, 8, 8, 2);
  fill(m, 8, 8, 8, 8, 3);
  const DepthMap z = flat_depth(m, {0.0f, 3.0f, 2.0f, 1.0f});
  EXPECT_EQ(count(occluding_sides(m, z, 16)), 0u);

  // Away from the junction the two-label rule applies as usual.
  const BinaryMap o = occluding_sides(m, z, 2);
  EXPECT_EQ(o.at(1, 7), 1);
  EXPECT_EQ(o.at(14, 7), 1);
  EXPECT_EQ(o.at(3, 8), 0);
  EXPECT_EQ(o, oracle::brute_occluding_sides(m, z, 2));
}

TEST(OccludingSides, TiedMeansSetNothing) {
  LabelMap m(8, 4, 1);
  fill(m, 4, 0, 4, 4, 2);
  EXPECT_EQ(count(occluding_sides(m, flat_depth(m, {0.0f, 1.0f, 1.0f}), 2)), 0u);
}

TEST(OccludingSides, Errors) {
  const LabelMap m(4, 4, 0);
  EXPECT_THROW(occluding_sides(m, DepthMap(4, 4), 0), std::invalid_argument);
  EXPECT_THROW(occluding_sides(m, DepthMap(4, 5), 2), std::invalid_argument);
}

TEST(OccludingSides, MatchesBruteForceOnRandomScenes) {
  Rng rng(2024);
  for (int trial = 0; trial < 60; ++trial) {
    const auto s = oracle::random_scene(32, 32, rng, 10);
    const std::size_t r = static_cast<std::size_t>(rng.uniform_int(1, 3));
    const BinaryMap o = occluding_sides(s.inst, s.depth, r);
    ASSERT_EQ(o, oracle::brute_occluding_sides(s.inst, s.depth, static_cast<long>(r))) << "trial " << trial;
    EXPECT_TRUE(within_dilation(o, boundaries(s.inst)));
  }
}

TEST(OccludingSides, PseudoDepthMatchesMetricWhenOrderAgrees) {
  Rng rng(77);
  for (int trial = 0; trial < 40; ++trial) {
    const auto s = oracle::random_scene(32, 32, rng, 10);
    const DepthMap p = pseudo_depth(s.inst, s.depth);
    EXPECT_EQ(occluding_sides(s.inst, s.depth, 2), occluding_sides(s.inst, p, 2)) << "trial " << trial;
  }
}

TEST(PseudoDepth, RanksAreConstantPerInstance) {
  LabelMap m(6, 2, 0);
  fill(m, 0, 0, 2, 2, 1);
  fill(m, 2, 0, 2, 2, 2);
  fill(m, 4, 0, 2, 2, 3);
  DepthMap z = flat_depth(m, {0.0f, 5.0f, 1.0f, 3.0f});
  z.at(0, 0) = 5.5f;
  const DepthMap p = pseudo_depth(m, z);
  EXPECT_FLOAT_EQ(p.at(0, 0), 3.0f);
  EXPECT_FLOAT_EQ(p.at(1, 1), 3.0f);
  EXPECT_FLOAT_EQ(p.at(2, 0), 1.0f);
  EXPECT_FLOAT_EQ(p.at(5, 1), 2.0f);
}

TEST(UnoccludedMask, LoneInstance) {
  LabelMap m(10, 10, 0);
  fill(m, 2, 3, 5, 4, 1);
  const DepthMap z = flat_depth(m, {0.0f, 1.0f});
  const GroundTruth gt = generate_gt(m, z);
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(gt.y[i], m[i] ? 1 : 0);
}

TEST(UnoccludedMask, HalfOccludedInstanceExcluded) {
  // Background | A (far) | C (near), all full height. A has 6 boundary pixels against the
  // background and 6 against C, so its ratio is exactly 0.5.
  LabelMap m(10, 6, 0);
  fill(m, 2, 0, 4, 6, 1);
  fill(m, 6, 0, 4, 6, 2);
  const DepthMap z = flat_depth(m, {0.0f, 1.0f, 2.0f});
  const BinaryMap b = boundaries(m);
  const BinaryMap o = occluding_sides(m, z, 2);
  std::size_t ba = 0, oa = 0;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i] == 1) {
      ba += b[i];
      oa += o[i];
    }
  EXPECT_EQ(ba, 12u);
  EXPECT_EQ(oa, 6u);
  const BinaryMap y = unoccluded_mask(m, b, o, 0.95);
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(y[i], m[i] == 2 ? 1 : 0);
  // The rule is a plain threshold on the ratio.
  const BinaryMap y_half = unoccluded_mask(m, b, o, 0.5);
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(y_half[i], m[i] ? 1 : 0);
}

TEST(UnoccludedMask, EmptySceneAndZeroPerimeter) {
  const LabelMap empty(5, 5, 0);
  EXPECT_EQ(count(generate_gt(empty, DepthMap(5, 5)).y), 0u);
  const LabelMap full(5, 5, 1);
  EXPECT_THROW(generate_gt(full, DepthMap(5, 5)), std::domain_error);
}

TEST(UnoccludedMask, ThresholdRuleIsExact) {
  Rng rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    const auto s = oracle::random_scene(32, 32, rng, 10);
    const GroundTruth gt = generate_gt(s.inst, s.depth);
    const std::size_t k = check_instance_map(s.inst);
    std::vector<double> nb(k + 1), no(k + 1);
    for (std::size_t i = 0; i < s.inst.size(); ++i) {
      nb[s.inst[i]] += gt.b[i];
      no[s.inst[i]] += gt.o[i];
    }
    for (std::size_t i = 0; i < s.inst.size(); ++i) {
      const auto l = s.inst[i];
      if (l == 0) {
        EXPECT_EQ(gt.y[i], 0);
        continue;
      }
      EXPECT_EQ(gt.y[i], no[l] / nb[l] >= 0.95 ? 1 : 0);
    }
  }
}

TEST(JunctionFraction, Examples) {
  LabelMap two(8, 8, 1);
  fill(two, 4, 0, 4, 8, 2);
  EXPECT_DOUBLE_EQ(junction_fraction(two), 1.0);

  LabelMap quad(8, 8, 1);
  fill(quad, 4, 0, 4, 4, 2);
  fill(quad, 0, 4, 4, 4, 3);
  fill(quad, 4, 4, 4, 4, 4);
  const double f = junction_fraction(quad);
  EXPECT_LT(f, 1.0);
  EXPECT_GE(f, 0.0);

  EXPECT_DOUBLE_EQ(junction_fraction(LabelMap(4, 4, 0)), 1.0);
}

}  // namespace
}  // namespace mcam
