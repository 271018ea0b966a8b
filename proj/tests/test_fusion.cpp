#include <gtest/gtest.h>

#include <cmath>

#include "cisru/fusion.hpp"
#include "oracles.hpp"
#include "synthetic_maps.hpp"

using namespace cisru;
using namespace cisru::fusion;

namespace {

GridMap rectangle_map(int w, int h, int c0, int r0, int size) {
  GridMap g(w, h, 1.0, {}, CellState::Free);
  for (int r = r0; r < r0 + size; ++r) {
    for (int c = c0; c < c0 + size; ++c) g.set(CellIndex{c, r}, CellState::Obstacle);
  }
  return g;
}

// Rotates a square grid by +90 degrees: cell (c, r) -> (n-1-r, c).
GridMap rot90(const GridMap& g) {
  const int n = g.width();
  GridMap out(n, n, g.resolution(), g.origin(), CellState::Unknown);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) out.set(CellIndex{n - 1 - r, c}, g.at(CellIndex{c, r}));
  }
  return out;
}

bool has_keypoint_near(const std::vector<Keypoint>& kps, int c, int r, int tol) {
  for (const auto& k : kps) {
    if (std::abs(k.col - c) <= tol && std::abs(k.row - r) <= tol) return true;
  }
  return false;
}

}  // namespace

TEST(Keypoints, UniformGridHasNone) {
  EXPECT_TRUE(detect_keypoints(GridMap(20, 20, 1.0, {}, CellState::Free)).empty());
  EXPECT_TRUE(detect_keypoints(GridMap(20, 20, 1.0, {}, CellState::Obstacle)).empty());
}

TEST(Keypoints, RectangleHasFourCorners) {
  const GridMap g = rectangle_map(30, 30, 8, 10, 10);
  const auto kps = detect_keypoints(g);
  ASSERT_EQ(kps.size(), 4u);
  std::vector<char> mask(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) mask[i] = g.at(i) == CellState::Obstacle;
  for (const auto& [c, r] : oracle::convex_corners(mask, 30, 30)) EXPECT_TRUE(has_keypoint_near(kps, c, r, 1));
}

TEST(Keypoints, RotationEquivariant) {
  const GridMap g = synth::boulder_field(40, 40, 5, 30);
  const GridMap h = rot90(g);
  const auto kg = detect_keypoints(g);
  const auto kh = detect_keypoints(h);
  EXPECT_EQ(kg.size(), kh.size());
  // Plateau ties in suppression resolve by scan order, which rotation changes.
  std::size_t found = 0;
  for (const auto& k : kg) found += has_keypoint_near(kh, 39 - k.row, k.col, 1);
  EXPECT_GE(found * 20, kg.size() * 19);
}

TEST(Describe, DeterministicAndZeroOnFreePatch) {
  const GridMap g = rectangle_map(40, 40, 14, 14, 10);
  const auto kps = detect_keypoints(g);
  ASSERT_FALSE(kps.empty());
  EXPECT_EQ(describe(g, kps[0]), describe(g, kps[0]));
  const GridMap free(40, 40, 1.0, {}, CellState::Free);
  EXPECT_TRUE(describe(free, Keypoint{20, 20, 0.7, 1.0}).none());
}

TEST(Describe, RotatedGridGivesCloseDescriptor) {
  const GridMap g = synth::boulder_field(48, 48, 11, 40);
  const GridMap h = rot90(g);
  const auto fg = extract_features(g);
  const auto kh = detect_keypoints(h);
  ASSERT_FALSE(fg.keypoints.empty());
  for (std::size_t i = 0; i < fg.keypoints.size(); ++i) {
    const auto& k = fg.keypoints[i];
    const Keypoint* twin = nullptr;
    for (const auto& q : kh) {
      if (q.col == 47 - k.row && q.row == k.col) twin = &q;
    }
    if (!twin) continue;
    const auto dh = describe(h, *twin);
    EXPECT_LE(static_cast<int>((fg.descriptors[i] ^ dh).count()), 25) << k.col << "," << k.row;
  }
}

TEST(Describe, BorderKeypointsSkipped) {
  const GridMap g = rectangle_map(20, 20, 1, 1, 5);
  const auto f = extract_features(g);
  EXPECT_TRUE(f.keypoints.empty());
  EXPECT_GT(f.stats.skipped_border, 0u);
}

TEST(Match, IdentityAndEmpty) {
  const GridMap g = synth::boulder_field(48, 48, 3, 40);
  const auto f = extract_features(g);
  ASSERT_GE(f.descriptors.size(), 3u);
  const auto m = match(f.descriptors, f.descriptors);
  for (const auto& x : m) {
    EXPECT_EQ(x.index_a, x.index_b);
    EXPECT_EQ(x.distance, 0);
  }
  EXPECT_TRUE(match({}, f.descriptors).empty());
  EXPECT_TRUE(match(f.descriptors, {}).empty());
}

TEST(Match, RatioRule) {
  Descriptor a, b_close, b_far;
  for (int i = 0; i < 100; ++i) a.set(i);
  b_close = a;
  for (int i = 0; i < 5; ++i) b_close.flip(i);
  b_far = a;
  for (int i = 0; i < 50; ++i) b_far.flip(i);
  auto m = match({a}, {b_close, b_far});
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0].index_b, 0u);
  EXPECT_EQ(m[0].distance, 5);
  // Two equally good candidates: ambiguous, rejected.
  EXPECT_TRUE(match({a}, {b_close, b_close}).empty());
}

TEST(EstimateTransform, SelfIsIdentity) {
  const auto p = synth::make_pair(4, 64, 16.0);
  const auto est = register_maps(p.a, p.a);
  ASSERT_TRUE(est.has_value());
  EXPECT_LE(std::abs(est->transform.rotation) * 180.0 / kPi, 0.5);
  EXPECT_LE(est->transform.translation.norm(), 0.25);
}

TEST(EstimateTransform, QuarterTurnWithShift) {
  // B = A rotated by 90 degrees about the origin then shifted (5, 3) cells.
  const GridMap field = synth::boulder_field(64, 64, 21, 90);
  const int n = 64;
  GridMap a(n, n, 1.0, {}, CellState::Free), b(n, n, 1.0, {}, CellState::Free);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) a.set(CellIndex{c, r}, field.at(CellIndex{c, r}));
  }
  // a = R90 * b + (5,3) + centre offsets: with cell centres x+0.5, B cell (c, r)
  // lands on A cell (-r - 1 + 5, c + 3).
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const CellIndex ac{-r - 1 + 5 + n - 1, c + 3};
      b.set(CellIndex{c, r}, a.in_bounds(ac) ? a.at(ac) : CellState::Free);
    }
  }
  const auto est = register_maps(a, b);
  ASSERT_TRUE(est.has_value());
  EXPECT_NEAR(est->transform.rotation * 180.0 / kPi, 90.0, 2.0);
  const Vec2 truth = RigidTransform2D{kPi / 2, {5.0 + n - 1, 3.0}}.apply({0.0, 0.0});
  EXPECT_LE(distance(est->transform.apply({0.0, 0.0}), truth), 1.0);
}

TEST(EstimateTransform, UnrelatedMapsInsufficientOverlap) {
  const GridMap a = synth::boulder_field(64, 64, 1, 90);
  const GridMap b = synth::boulder_field(64, 64, 2, 90);
  EXPECT_FALSE(register_maps(a, b).has_value());
}

TEST(EstimateTransform, SeededPairsMostlyRecovered) {
  int ok = 0;
  for (std::uint32_t s = 0; s < 20; ++s) {
    const auto p = synth::make_pair(s, 64, 16.0);
    ASSERT_GE(p.overlap, 0.4);
    const auto est = register_maps(p.a, p.b);
    if (!est) continue;
    const double dr = std::abs(normalize_angle(est->transform.rotation - p.rotation)) * 180.0 / kPi;
    const double dt = distance(est->transform.translation, {p.tx, p.ty});
    ok += dr <= 2.0 && dt <= 1.0;
  }
  EXPECT_GE(ok, 18);
}

TEST(Fuse, IdentityIsIdempotent) {
  GridMap a = synth::boulder_field(30, 30, 9, 20);
  for (int c = 0; c < 30; ++c) a.set(CellIndex{c, 29}, CellState::Unknown);
  a.set_label(CellIndex{3, 3}, SemLabel::Regolith);
  EXPECT_EQ(fuse(a, a, RigidTransform2D::identity()), a);
}

TEST(Fuse, PrecedenceRules) {
  GridMap a = grid_from_rows({"?#.?"}, 1.0);
  GridMap b = grid_from_rows({"...."}, 1.0);
  b.set(CellIndex{3, 0}, CellState::Unknown);
  a.set_label(CellIndex{1, 0}, SemLabel::Rock);
  const GridMap f = fuse(a, b, RigidTransform2D::identity());
  EXPECT_EQ(f.at(CellIndex{0, 0}), CellState::Free);      // Unknown + Free
  EXPECT_EQ(f.at(CellIndex{1, 0}), CellState::Obstacle);  // Obstacle + Free
  EXPECT_EQ(f.label(CellIndex{1, 0}), SemLabel::Rock);
  EXPECT_EQ(f.at(CellIndex{2, 0}), CellState::Free);
  EXPECT_EQ(f.at(CellIndex{3, 0}), CellState::Unknown);
}

TEST(Fuse, KnownCountMonotone) {
  for (std::uint32_t s = 0; s < 10; ++s) {
    const auto p = synth::make_pair(s, 64, 16.0);
    const GridMap f = fuse(p.a, p.b, RigidTransform2D{p.rotation, {p.tx, p.ty}});
    EXPECT_GE(f.known_count(), p.a.known_count());
    EXPECT_GE(f.known_count(), p.b.known_count());
  }
}

TEST(Fuse, ExtendsToCoverShiftedMap) {
  GridMap a = grid_from_rows({".."}, 1.0);
  GridMap b = grid_from_rows({"#."}, 1.0);
  const GridMap f = fuse(a, b, RigidTransform2D{0.0, {2.0, 0.0}});
  ASSERT_EQ(f.width(), 4);
  EXPECT_EQ(f.at(CellIndex{2, 0}), CellState::Obstacle);
  EXPECT_EQ(f.at(CellIndex{3, 0}), CellState::Free);
}
