#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "cycledeform/chamfer.hpp"
#include "cycledeform/kdtree.hpp"
#include "oracles.hpp"

using namespace cycledeform;

TEST(KdTree, MatchesExhaustiveSearchOnRandomQueries) {
  std::mt19937_64 rng(11);
  const auto pts = oracle::random_points(rng, 500);
  const KdTree<double> tree{PointCloud(pts)};
  for (const auto& q : oracle::random_points(rng, 1000, -1.5, 1.5))
    EXPECT_EQ(tree.nearest(q).index, oracle::nearest(pts, q));
}

TEST(KdTree, TiesResolveToSmallestIndex) {
  // Duplicates and a lattice produce many exact ties.
  oracle::Pts pts;
  for (int rep = 0; rep < 3; ++rep)
    for (int x = 0; x < 4; ++x)
      for (int y = 0; y < 4; ++y) pts.emplace_back(x, y, 0);
  for (int leaf : {1, 2, 8}) {
    const KdTree<double> tree(PointCloud(pts).matrix(), static_cast<std::size_t>(leaf));
    for (double x = -0.5; x <= 3.5; x += 0.5)
      for (double y = -0.5; y <= 3.5; y += 0.5) {
        const Eigen::Vector3d q(x, y, 0.25);
        EXPECT_EQ(tree.nearest(q).index, oracle::nearest(pts, q)) << x << "," << y << " leaf " << leaf;
      }
  }
}

TEST(KdTree, SinglePrecisionAgreesWithExhaustive) {
  std::mt19937_64 rng(12);
  const auto pts = oracle::random_points(rng, 300);
  const KdTree<float> tree(PointCloud(pts).as<float>());
  oracle::Pts as_float;
  for (const auto& p : pts) as_float.push_back(p.cast<float>().cast<double>());
  for (const auto& q : oracle::random_points(rng, 200)) {
    const Eigen::Vector3d qf = q.cast<float>().cast<double>();
    // Exhaustive search in float arithmetic.
    std::size_t best = 0;
    float bd = std::numeric_limits<float>::infinity();
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const float dx = float(as_float[i].x()) - float(qf.x()), dy = float(as_float[i].y()) - float(qf.y()),
                  dz = float(as_float[i].z()) - float(qf.z());
      const float d = dx * dx + dy * dy + dz * dz;
      if (d < bd) {
        bd = d;
        best = i;
      }
    }
    EXPECT_EQ(tree.nearest(q).index, best);
  }
}

namespace {

template <typename S>
void expect_scan_matches_tree(const oracle::Pts& pts, const oracle::Pts& queries) {
  const KdTree<S> tree(PointCloud(pts).as<S>());
  const Points<S> q = PointCloud(queries).as<S>();
  ASSERT_LE(tree.size(), KdTree<S>::kScanLimit);
  EXPECT_EQ(tree.nearest_indices(q), tree.nearest_indices_by_tree(q));
}

}  // namespace

TEST(KdTree, BatchScanAgreesWithTreeSearch) {
  std::mt19937_64 rng(13);
  const auto spread = oracle::random_points(rng, 512);
  // A clumped cloud, like an untrained deformation, queried from far away.
  auto clump = oracle::random_points(rng, 512, -0.01, 0.01);
  for (std::size_t i = 0; i < 64; ++i) clump.push_back(clump[i]);
  oracle::Pts lattice;
  for (int x = 0; x < 8; ++x)
    for (int y = 0; y < 8; ++y) lattice.emplace_back(0.25 * x, 0.25 * y, 0);
  oracle::Pts lattice_q;
  for (double x = -0.125; x <= 2.0; x += 0.125)
    for (double y = -0.125; y <= 2.0; y += 0.125) lattice_q.emplace_back(x, y, 0.5);
  const auto far = oracle::random_points(rng, 700, -1.5, 1.5);
  expect_scan_matches_tree<double>(spread, far);
  expect_scan_matches_tree<float>(spread, far);
  expect_scan_matches_tree<double>(clump, far);
  expect_scan_matches_tree<float>(clump, far);
  expect_scan_matches_tree<double>(lattice, lattice_q);
  expect_scan_matches_tree<float>(lattice, lattice_q);
}

TEST(Project, MemberPointsProjectToThemselves) {
  std::mt19937_64 rng(13);
  const auto pts = oracle::random_points(rng, 64);
  const KdTree<double> tree{PointCloud(pts)};
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto [idx, p] = project(pts[i], tree);
    EXPECT_EQ(idx, i);
    EXPECT_EQ(p, pts[i]);
  }
}

TEST(Project, NearerPointWins) {
  const KdTree<double> tree{PointCloud(oracle::Pts{{1, 0, 0}, {0, 2, 0}})};
  const auto [idx, p] = project(Point3(0, 0, 0), tree);
  EXPECT_EQ(idx, 0u);
  EXPECT_EQ(p, Point3(1, 0, 0));
}

TEST(Chamfer, HandCases) {
  const PointCloud x(oracle::Pts{{0, 0, 0}});
  const PointCloud y(oracle::Pts{{1, 0, 0}});
  EXPECT_DOUBLE_EQ(chamfer_asym(x, y), 1.0);
  EXPECT_DOUBLE_EQ(chamfer_sym(x, y), 2.0);
  EXPECT_EQ(chamfer_asym(x, x), 0.0);
  EXPECT_EQ(chamfer_sym(y, y), 0.0);
}

TEST(Chamfer, MatchesDoubleLoopOracle) {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = oracle::random_points(rng, 64), b = oracle::random_points(rng, 64);
    EXPECT_NEAR(chamfer_asym(PointCloud(a), PointCloud(b)), oracle::chamfer_asym(a, b), 1e-12);
    EXPECT_NEAR(chamfer_sym(PointCloud(a), PointCloud(b)), oracle::chamfer_sym(a, b), 1e-12);
  }
}

TEST(Chamfer, NormalizesBySummedSet) {
  // Target of 2 points, source of 1: the mean runs over the target.
  const PointCloud source(oracle::Pts{{0, 0, 0}});
  const PointCloud target(oracle::Pts{{1, 0, 0}, {3, 0, 0}});
  EXPECT_DOUBLE_EQ(chamfer_asym(source, target), 2.0);
  EXPECT_DOUBLE_EQ(chamfer_asym(target, source), 1.0);
}

TEST(Chamfer, ZeroIffSubset) {
  std::mt19937_64 rng(15);
  auto big = oracle::random_points(rng, 30);
  oracle::Pts sub(big.begin(), big.begin() + 10);
  EXPECT_EQ(chamfer_asym(PointCloud(big), PointCloud(sub)), 0.0);
  EXPECT_GT(chamfer_asym(PointCloud(sub), PointCloud(big)), 0.0);
}

TEST(Chamfer, SymmetricAndPermutationInvariant) {
  std::mt19937_64 rng(16);
  auto a = oracle::random_points(rng, 50), b = oracle::random_points(rng, 70);
  const double ab = chamfer_sym(PointCloud(a), PointCloud(b));
  EXPECT_NEAR(ab, chamfer_sym(PointCloud(b), PointCloud(a)), 1e-15);
  std::shuffle(a.begin(), a.end(), rng);
  std::shuffle(b.begin(), b.end(), rng);
  EXPECT_NEAR(ab, chamfer_sym(PointCloud(a), PointCloud(b)), 1e-12);
}
