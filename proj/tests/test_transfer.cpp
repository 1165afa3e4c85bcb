#include <gtest/gtest.h>

#include <numbers>
#include <random>
#include <set>

#include "cycledeform/transfer.hpp"
#include "oracles.hpp"

using namespace cycledeform;

namespace {

/// A labeled cloud whose label is the octant sign of x (0 or 1) plus 2 when z > 0.
LabeledPointCloud labeled_blob(std::uint64_t seed, int n, Eigen::Vector3d stretch = {1.0, 0.5, 0.25}) {
  std::mt19937_64 rng(seed);
  auto pts = oracle::random_points(rng, n);
  Labels l;
  for (auto& p : pts) {
    p = p.cwiseProduct(stretch);
    l.push_back((p.x() > 0 ? 1 : 0) + (p.z() > 0 ? 2 : 0));
  }
  return LabeledPointCloud(PointCloud(pts), l, 4);
}

/// Moves the source onto the target centroid.
struct CentroidDeformer {
  PointCloud map(const PointCloud& s, const PointCloud& t) const {
    const Eigen::RowVector3d shift = t.matrix().colwise().mean() - s.matrix().colwise().mean();
    return PointCloud(Points<double>(s.matrix().rowwise() + shift));
  }
};

PointCloud translated(const PointCloud& c, const Eigen::Vector3d& t) {
  return PointCloud(Points<double>(c.matrix().rowwise() + t.transpose()));
}

}  // namespace

TEST(Transfer, NearestLabelsHandCase) {
  const PointCloud carrier(oracle::Pts{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}});
  const PointCloud target(oracle::Pts{{0.9, 0.1, 0}, {0.1, 0.8, 0}, {0.1, 0.1, 0}, {0.5, 0.0, 0}});
  EXPECT_EQ(nearest_labels(carrier, Labels{5, 6, 7}, target), (Labels{6, 7, 5, 5}));  // (0.5,0,0) ties: lower index
  EXPECT_THROW(nearest_labels(carrier, Labels{1}, target), LengthMismatch);
}

TEST(Transfer, SelfTransferIsPerfect) {
  const auto s = labeled_blob(1, 200);
  for (Method m : {Method::Ours, Method::Identity, Method::Icp}) {
    const Labels pred = transfer_with(m, IdentityDeformer{}, s, s.cloud());
    EXPECT_EQ(miou(pred, s.labels(), 4), 1.0) << to_string(m);
  }
}

TEST(Transfer, DeformerIsApplied) {
  const auto s = labeled_blob(2, 150);
  const Eigen::Vector3d t(0.8, -0.3, 0.2);
  const PointCloud target = translated(s.cloud(), t);
  EXPECT_EQ(transfer_labels(CentroidDeformer{}, s, target), s.labels());
  EXPECT_LT(miou(identity_baseline(s, target), s.labels(), 4), 1.0);
}

TEST(Transfer, IcpBaselineUndoesRigidMotion) {
  const auto s = labeled_blob(3, 300);
  const auto motion = RigidTransform::about_z(15.0 * std::numbers::pi / 180, Point3(0.05, -0.02, 0));
  const PointCloud target = motion.apply(s.cloud());
  EXPECT_EQ(miou(icp_baseline(s, target), s.labels(), 4), 1.0);
}

TEST(Scores, NearestNeighborMatchesOracle) {
  std::vector<SourceShape> pool;
  std::vector<oracle::Pts> raw;
  for (std::size_t i = 0; i < 8; ++i) {
    pool.push_back({i * 10, labeled_blob(10 + i, 40)});
    raw.push_back(oracle::to_pts(pool.back().shape.cloud().matrix()));
  }
  pool.push_back({5, pool[3].shape});  // duplicate geometry, smaller id
  raw.push_back(raw[3]);
  const auto target = labeled_blob(99, 40);
  const auto traw = oracle::to_pts(target.cloud().matrix());

  const auto chosen = select_sources(IdentityDeformer{}, pool, target.cloud(), Criterion::NearestNeighbor, 20);
  ASSERT_EQ(chosen.size(), pool.size());
  for (std::size_t r = 1; r < chosen.size(); ++r) EXPECT_LE(chosen[r - 1].score, chosen[r].score);
  for (const auto& c : chosen) {
    const auto it = std::find_if(pool.begin(), pool.end(), [&](const SourceShape& s) { return s.id == c.id; });
    EXPECT_NEAR(c.score, oracle::chamfer_sym(raw[static_cast<std::size_t>(it - pool.begin())], traw), 1e-12);
  }
  // The two copies of shape 30 sit next to each other, id 5 first.
  for (std::size_t r = 0; r + 1 < chosen.size(); ++r)
    if (chosen[r].id == 30) FAIL() << "id 30 ranked before its equal-score copy";
    else if (chosen[r].id == 5) {
      EXPECT_EQ(chosen[r + 1].id, 30u);
      break;
    }
  EXPECT_EQ(select_sources(IdentityDeformer{}, pool, target.cloud(), Criterion::NearestNeighbor, 3).size(), 3u);
  EXPECT_THROW(select_sources(IdentityDeformer{}, pool, target.cloud(), Criterion::NearestNeighbor, 0), InvalidArgument);
}

TEST(Scores, DeformationDistancePrefersAlignableShape) {
  const auto target = labeled_blob(20, 80);
  std::vector<SourceShape> pool{{0, labeled_blob(21, 80)},
                                {1, LabeledPointCloud(translated(target.cloud(), {0.5, 0.5, 0}), target.labels(), 4)}};
  const auto by_def = select_sources(CentroidDeformer{}, pool, target.cloud(), Criterion::DeformationDistance, 1);
  EXPECT_EQ(by_def[0].id, 1u);
  EXPECT_NEAR(by_def[0].score, 0.0, 1e-12);
}

TEST(Scores, CycleResidualWithIdentity) {
  const auto a = labeled_blob(30, 50), b = labeled_blob(31, 60);
  const double expected = oracle::chamfer_asym(oracle::to_pts(b.cloud().matrix()), oracle::to_pts(a.cloud().matrix()));
  EXPECT_NEAR(cycle_residual(IdentityDeformer{}, a.cloud(), b.cloud()), expected, 1e-12);
  EXPECT_NEAR(cycle_residual(CentroidDeformer{}, a.cloud(), a.cloud()), 0.0, 1e-12);
}

TEST(Scores, CosineDistance) {
  EXPECT_NEAR(cosine_distance(Eigen::Vector2d(1, 2), Eigen::Vector2d(2, 4)), 0.0, 1e-15);
  EXPECT_NEAR(cosine_distance(Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 3)), 1.0, 1e-15);
  EXPECT_NEAR(cosine_distance(Eigen::Vector2d(1, 0), Eigen::Vector2d(-1, 0)), 2.0, 1e-15);
  EXPECT_EQ(cosine_distance(Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero()), 0.0);
  EXPECT_EQ(cosine_distance(Eigen::Vector2d::Zero(), Eigen::Vector2d(1, 0)), 1.0);
  EXPECT_THROW(score_source(IdentityDeformer{}, labeled_blob(1, 5), labeled_blob(2, 5).cloud(), Criterion::CosineDistance),
               InvalidArgument);
}

TEST(Scores, CosineUsesModelEncoder) {
  const auto model = Model<double>::initialized(Architecture::toy(8), 3);
  const ModelDeformer<double> d(model);
  const auto a = labeled_blob(40, 30), b = labeled_blob(41, 30);
  const double expected = cosine_distance(encoding(model, a.cloud(), 0), encoding(model, b.cloud(), 0));
  EXPECT_EQ(score_source(d, a, b.cloud(), Criterion::CosineDistance), expected);
}

TEST(Voting, PluralityWithTies) {
  const std::vector<Labels> votes{{0, 1, 2, 3}, {1, 1, 3, 2}, {1, 0, 2, 1}};
  EXPECT_EQ(plurality_vote(votes, 4), (Labels{1, 1, 2, 1}));
  EXPECT_EQ(plurality_vote({{3, 2}, {2, 3}}, 4), (Labels{2, 2}));
  EXPECT_THROW(plurality_vote({}, 2), InvalidArgument);
  EXPECT_THROW(plurality_vote({{0, 1}, {0}}, 2), LengthMismatch);

  const auto a = labeled_blob(50, 20);
  const LabeledPointCloud b(a.cloud(), Labels(20, 0), 2);
  EXPECT_THROW(vote_labels(IdentityDeformer{}, {a, b}, a.cloud()), LabelSpaceMismatch);
  EXPECT_EQ(vote_labels(IdentityDeformer{}, {a, a, a}, a.cloud()), a.labels());
}

TEST(Oracle, PicksBestSource) {
  const auto target = labeled_blob(60, 100);
  std::vector<SourceShape> pool{{7, labeled_blob(61, 100)}, {3, target}, {9, labeled_blob(62, 100)}};
  const auto best = oracle_select(IdentityDeformer{}, pool, target.cloud(), target.labels(), Method::Identity);
  EXPECT_EQ(best.id, 3u);
  EXPECT_EQ(best.miou, 1.0);
  EXPECT_THROW(oracle_select(IdentityDeformer{}, {}, target.cloud(), target.labels()), InvalidArgument);
}

TEST(FewShot, ShotSampling) {
  const auto a = sample_shots(30, 10, 4), b = sample_shots(30, 10, 4), c = sample_shots(30, 10, 5);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(std::set<std::size_t>(a.begin(), a.end()).size(), 10u);
  EXPECT_THROW(sample_shots(5, 6, 0), InvalidArgument);
  EXPECT_THROW(sample_shots(5, 0, 0), InvalidArgument);
}

TEST(FewShot, RunScoresEveryTargetAndIsThreadInvariant) {
  std::vector<LabeledPointCloud> labeled, targets;
  for (int i = 0; i < 6; ++i) labeled.push_back(labeled_blob(70 + static_cast<std::uint64_t>(i), 60));
  targets = labeled;  // every target has an exact copy in the pool
  FewShotOptions opt;
  opt.shots = 6;
  opt.method = Method::Identity;
  const auto run = few_shot_run(IdentityDeformer{}, labeled, targets, opt, 11);
  ASSERT_EQ(run.per_target_miou.size(), 6u);
  EXPECT_EQ(run.mean_miou, 1.0);

  opt.shots = 3;
  opt.votes = 2;
  opt.threads = 4;
  const auto threaded = few_shot_run(IdentityDeformer{}, labeled, targets, opt, 12);
  opt.threads = 1;
  const auto serial = few_shot_run(IdentityDeformer{}, labeled, targets, opt, 12);
  EXPECT_EQ(threaded.predictions, serial.predictions);
  EXPECT_EQ(threaded.shot_ids, serial.shot_ids);
  for (std::size_t t = 0; t < 6; ++t)
    EXPECT_NEAR(serial.per_target_miou[t], oracle::miou(serial.predictions[t], targets[t].labels(), 4), 1e-12);

  opt.selection = Selection::oracle();
  const auto best = few_shot_run(IdentityDeformer{}, labeled, targets, opt, 12);
  for (std::size_t t = 0; t < 6; ++t) EXPECT_GE(best.per_target_miou[t], serial.per_target_miou[t] - 1e-12);
}

TEST(FewShot, MeanStdAndParsing) {
  const auto ms = mean_std({2, 4, 4, 4, 5, 5, 7, 9});
  EXPECT_EQ(ms.mean, 5.0);
  EXPECT_EQ(ms.std, 2.0);
  EXPECT_EQ(parse_criterion("cycle"), Criterion::CycleConsistency);
  EXPECT_THROW(parse_criterion("best"), InvalidArgument);
  EXPECT_EQ(parse_method("icp"), Method::Icp);
  EXPECT_THROW(parse_method("magic"), InvalidArgument);
  EXPECT_EQ(Selection::parse("oracle").name(), "oracle");
  EXPECT_EQ(Selection::parse("deformation").name(), "deformation");
}
