#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "cycledeform/geometry.hpp"
#include "oracles.hpp"

using namespace cycledeform;

namespace {

PointCloud cloud_of(const oracle::Pts& pts) { return PointCloud(pts); }

PointCloud cube_corners() {
  oracle::Pts pts;
  for (int x : {-1, 1})
    for (int y : {-1, 1})
      for (int z : {-1, 1}) pts.emplace_back(x, y, z);
  return cloud_of(pts);
}

}  // namespace

TEST(PointCloud, RejectsEmptyAndNonFinite) {
  EXPECT_THROW(PointCloud(Points<double>(0, 3)), InvalidArgument);
  oracle::Pts bad{{0, 0, 0}, {std::nan(""), 0, 0}};
  EXPECT_THROW(cloud_of(bad), NonFiniteValue);
  bad[1] = {std::numeric_limits<double>::infinity(), 0, 0};
  EXPECT_THROW(cloud_of(bad), NonFiniteValue);
}

TEST(LabeledPointCloud, ValidatesLabels) {
  const PointCloud c = cube_corners();
  EXPECT_THROW(LabeledPointCloud(c, Labels(7, 0), 2), LengthMismatch);
  EXPECT_THROW(LabeledPointCloud(c, Labels(8, 2), 2), LabelSpaceMismatch);
  EXPECT_THROW(LabeledPointCloud(c, Labels(8, -1), 2), LabelSpaceMismatch);
  EXPECT_NO_THROW(LabeledPointCloud(c, Labels(8, 1), 2));
}

TEST(NormalizeBbox, CubeCornersUnchanged) {
  const PointCloud c = cube_corners();
  EXPECT_EQ(normalize_bbox(c), c);
}

TEST(NormalizeBbox, SegmentIsHalvedAndCentered) {
  const PointCloud out = normalize_bbox(cloud_of({{0, 0, 0}, {4, 0, 0}}));
  EXPECT_EQ(out.point(0), Point3(-1, 0, 0));
  EXPECT_EQ(out.point(1), Point3(1, 0, 0));
}

TEST(NormalizeBbox, RandomCloudCheckedByDirectScan) {
  std::mt19937_64 rng(3);
  auto pts = oracle::random_points(rng, 100, -3, 7);
  const PointCloud out = normalize_bbox(cloud_of(pts));
  Eigen::Vector3d lo = out.point(0), hi = out.point(0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    lo = lo.cwiseMin(out.point(i));
    hi = hi.cwiseMax(out.point(i));
  }
  EXPECT_NEAR((hi - lo).maxCoeff(), 2.0, 1e-9);
  for (int a = 0; a < 3; ++a) EXPECT_NEAR(lo[a] + hi[a], 0.0, 1e-9);
  // Aspect ratios kept.
  Eigen::Vector3d in_lo = pts[0], in_hi = pts[0];
  for (const auto& p : pts) {
    in_lo = in_lo.cwiseMin(p);
    in_hi = in_hi.cwiseMax(p);
  }
  const Eigen::Vector3d r_in = (in_hi - in_lo) / (in_hi - in_lo).maxCoeff();
  const Eigen::Vector3d r_out = (hi - lo) / (hi - lo).maxCoeff();
  EXPECT_TRUE(r_in.isApprox(r_out, 1e-12));
}

TEST(NormalizeBbox, IdempotentAndDegenerate) {
  std::mt19937_64 rng(4);
  const PointCloud once = normalize_bbox(cloud_of(oracle::random_points(rng, 50, 0, 5)));
  const PointCloud twice = normalize_bbox(once);
  EXPECT_TRUE(once.matrix().isApprox(twice.matrix(), 1e-14));
  EXPECT_THROW(normalize_bbox(cloud_of({{1, 2, 3}, {1, 2, 3}})), DegenerateCloud);
}

TEST(Augmentation, IdentityOnNormalizedInput) {
  std::mt19937_64 rng(5);
  const PointCloud c = normalize_bbox(cloud_of(oracle::random_points(rng, 40)));
  const PointCloud out = apply_augmentation(c, AugmentationTransform::identity(true));
  EXPECT_TRUE(out.matrix().isApprox(c.matrix(), 1e-14));
}

TEST(Augmentation, RangesEnforced) {
  const Eigen::Vector3d one = Eigen::Vector3d::Ones();
  EXPECT_THROW(AugmentationTransform(std::numbers::pi / 2, one, Point3::Zero(), true), InvalidArgument);
  EXPECT_THROW(AugmentationTransform(0, Eigen::Vector3d(0.7, 1, 1), Point3::Zero(), true), InvalidArgument);
  EXPECT_THROW(AugmentationTransform(0, Eigen::Vector3d(1, 1.3, 1), Point3::Zero(), true), InvalidArgument);
  EXPECT_THROW(AugmentationTransform(0, one, Point3(0.03, 0, 0), true), InvalidArgument);
  EXPECT_NO_THROW(AugmentationTransform(40.0 * std::numbers::pi / 180, Eigen::Vector3d(0.75, 1.25, 1), Point3(0.029, 0, 0), true));
}

TEST(Augmentation, MatchesHandComposedMatrices) {
  const double theta = 30.0 * std::numbers::pi / 180;
  const AugmentationTransform psi(theta, Eigen::Vector3d(0.8, 1.2, 1.0), Point3(0.01, 0, 0), true);
  oracle::Pts corners;
  for (int x : {-1, 1})
    for (int y : {-1, 1})
      for (int z : {-1, 1}) corners.emplace_back(x, y, z);

  const Eigen::Matrix4d lin = oracle::scaling(0.8, 1.2, 1.0) * oracle::rotation_z(theta);
  const oracle::Pts stage = oracle::transform(lin, corners);
  const Eigen::Matrix4d full = oracle::translation(0.01, 0, 0) * oracle::bbox_normalizer(stage) * lin;
  const oracle::Pts expected = oracle::transform(full, corners);

  const PointCloud out = apply_augmentation(cloud_of(corners), psi);
  ASSERT_EQ(out.size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_TRUE(out.point(i).isApprox(expected[i], 1e-12)) << i;
}

TEST(Augmentation, SampledWithinRanges) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 1000; ++i) {
    const auto psi = AugmentationTransform::sample(rng, i % 2 == 0);
    EXPECT_LE(std::abs(psi.theta_z()), AugmentationTransform::kMaxAngle);
    EXPECT_TRUE(psi.applies_bbox_norm());
    for (int a = 0; a < 3; ++a) {
      EXPECT_GE(psi.scale()[a], 0.75);
      EXPECT_LE(psi.scale()[a], 1.25);
      EXPECT_LT(std::abs(psi.translation()[a]), 0.03);
      if (i % 2) EXPECT_EQ(psi.translation()[a], 0.0);
    }
  }
}

TEST(Resample, DrawsRowsWithLabels) {
  std::mt19937_64 rng(7);
  const PointCloud c = cloud_of(oracle::random_points(rng, 10));
  Labels in{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, out;
  const PointCloud r = resample(c, 25, rng, &out, &in);
  ASSERT_EQ(r.size(), 25u);
  ASSERT_EQ(out.size(), 25u);
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_EQ(r.point(i), c.point(static_cast<std::size_t>(out[i])));
}
