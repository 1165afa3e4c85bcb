#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "cycledeform/model.hpp"
#include "oracles.hpp"

using namespace cycledeform;

namespace {

PointCloud random_cloud(std::uint64_t seed, int n) {
  std::mt19937_64 rng(seed);
  return PointCloud(oracle::random_points(rng, n));
}

PointCloud permuted(const PointCloud& c, const std::vector<std::size_t>& perm) {
  oracle::Pts pts;
  for (auto i : perm) pts.push_back(c.point(i));
  return PointCloud(pts);
}

}  // namespace

TEST(Architecture, PairParameterCount) {
  EXPECT_EQ(Architecture{}.pair_param_count(), 774);
  EXPECT_EQ(Architecture{}.latent(), 512);
  const Architecture toy = Architecture::toy(8);
  EXPECT_EQ(toy.pair_param_count(), 2 * 3 + 6 * 2 * 8);
  EXPECT_EQ(Architecture::from_descriptor(toy.descriptor()), toy);
  EXPECT_THROW(Architecture::from_descriptor({3, 3, 4}), InvalidArgument);
}

TEST(Model, TensorShapes) {
  const Model<double> m(Architecture{});
  const auto& t = m.tensors();
  ASSERT_EQ(t.size(), 6u * 2 + 4 + 7);
  EXPECT_EQ(t[m.predictor_offset()].rows(), 512);
  EXPECT_EQ(t[m.predictor_offset()].cols(), 1024);
  EXPECT_EQ(t[m.predictor_offset() + 2].rows(), 774);
  EXPECT_EQ(t[m.deform_offset()].cols(), 3);
  EXPECT_EQ(t[m.deform_offset() + 6].rows(), 3);
}

TEST(Model, InitializationIsSeededWithUnitScales) {
  const auto a = Model<double>::initialized(Architecture::toy(8), 11);
  const auto b = Model<double>::initialized(Architecture::toy(8), 11);
  const auto c = Model<double>::initialized(Architecture::toy(8), 12);
  EXPECT_EQ(a.tensors(), b.tensors());
  EXPECT_NE(a.tensors(), c.tensors());
  const std::size_t out_bias = a.predictor_offset() + 3;
  for (std::size_t i = 0; i < a.tensors().size(); ++i)
    if (a.tensors()[i].rows() == 1 && i != out_bias) EXPECT_TRUE(a.tensors()[i].isZero()) << "tensor " << i;
  // Scale slots start at 1 and bias slots at 0, module by module.
  const auto& ob = a.tensors()[out_bias];
  ASSERT_EQ(ob.cols(), 2 * 3 + 6 * 2 * 8);
  for (Eigen::Index j = 0; j < 3; ++j) {
    EXPECT_EQ(ob(0, j), 1.0);
    EXPECT_EQ(ob(0, 3 + j), 0.0);
  }
  for (int k = 1; k < 7; ++k)
    for (Eigen::Index j = 0; j < 8; ++j) {
      EXPECT_EQ(ob(0, 6 + 16 * (k - 1) + j), 1.0);
      EXPECT_EQ(ob(0, 6 + 16 * (k - 1) + 8 + j), 0.0);
    }
}

TEST(Model, UntrainedMapIsNotConstant) {
  const auto m = Model<double>::initialized(Architecture::toy(16), 4);
  const PointCloud s = random_cloud(5, 30), t = random_cloud(6, 30);
  const auto out = map(m, s, t).matrix();
  EXPECT_GT((out.rowwise() - out.colwise().mean()).norm(), 1e-2);
}

TEST(Encoder, PermutationInvariant) {
  const auto m = Model<double>::initialized(Architecture::toy(16), 3);
  const PointCloud c = random_cloud(1, 40);
  std::vector<std::size_t> perm(40);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(9));
  for (int slot : {0, 1}) EXPECT_EQ(encoding(m, c, slot), encoding(m, permuted(c, perm), slot));
}

TEST(Encoder, SinglePointMatchesDirectEvaluation) {
  auto m = Model<double>::initialized(Architecture::toy(6), 4);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  for (auto& t : m.tensors())
    if (t.rows() == 1)
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = u(rng);

  const Eigen::Vector3d p(0.3, -0.7, 0.1);
  Eigen::VectorXd h = p;
  const auto& t = m.tensors();
  for (int l = 0; l < 3; ++l) {
    const Eigen::MatrixXd w = t[static_cast<std::size_t>(2 * l)];
    const Eigen::VectorXd b = t[static_cast<std::size_t>(2 * l + 1)].transpose();
    h = (w * h + b).cwiseMax(0.0);
  }
  const Eigen::VectorXd got = encoding(m, PointCloud(oracle::Pts{p}), 0);
  EXPECT_TRUE(got.isApprox(h, 1e-14) || (got - h).norm() < 1e-15);
}

TEST(Deform, TwoModuleHandEvaluation) {
  Architecture arch = Architecture::toy(2);
  arch.modules = 2;
  Model<double> m(arch);
  m.tensors()[m.deform_offset()] << 1, -1, 0, 0.5, 2, 1;  // 2 x 3
  m.tensors()[m.deform_offset() + 1] << 1, 0, 0, 1, -1, 2;  // 3 x 2

  ad::Tape<double> tape;
  BoundModel<double> bound(m, tape, false);
  ad::Tensor<double> flat(1, arch.pair_param_count());
  // s1 (3), b1 (3), s2 (2), b2 (2)
  flat << 2, 1, 1, 0, 0.5, 0, 1, 0.5, 0, -1;
  const auto params = split_pair_params(arch, tape.constant(flat));
  ad::Tensor<double> x(1, 3);
  x << 0.25, 0.5, -1;
  const double y = deform(bound, params, tape.constant(x)).value()(0, 2);

  // u = s1*x + b1 = (0.5, 1.0, -1); W1 u = (0.5 - 1.0, 0.25 + 2 - 1) = (-0.5, 1.25)
  // relu -> (0, 1.25); s2*h + b2 = (0, 0.625 - 1) = (0, -0.375)
  // W2 row 2 = (-1, 2) -> -0.75 -> tanh
  EXPECT_NEAR(y, std::tanh(-0.75), 1e-15);
  const auto out = deform(bound, params, tape.constant(x)).value();
  EXPECT_NEAR(out(0, 0), std::tanh(0.0), 1e-15);
  EXPECT_NEAR(out(0, 1), std::tanh(-0.375), 1e-15);
}

TEST(Map, DeterministicRowAlignedAndBounded) {
  const auto m = Model<double>::initialized(Architecture::toy(16), 7);
  const PointCloud s = random_cloud(2, 30), t = random_cloud(3, 50);
  const PointCloud a = map(m, s, t), b = map(m, s, t);
  EXPECT_EQ(a, b);
  ASSERT_EQ(a.size(), s.size());
  EXPECT_TRUE((a.matrix().array().abs() < 1.0).all());

  // Permuting the source only permutes the mapped rows.
  std::vector<std::size_t> perm(30);
  std::iota(perm.rbegin(), perm.rend(), 0);
  const PointCloud p = map(m, permuted(s, perm), t);
  for (std::size_t i = 0; i < 30; ++i) EXPECT_TRUE(p.point(i).isApprox(a.point(perm[i]), 1e-12));
}

TEST(Map, DirectionMatters) {
  const auto m = Model<double>::initialized(Architecture::toy(16), 8);
  const PointCloud s = random_cloud(4, 20), t = random_cloud(5, 20);
  EXPECT_NE(map(m, s, t), map(m, t, s));
}

TEST(Map, ZeroDeformationWeightsGiveOrigin) {
  auto m = Model<double>::initialized(Architecture::toy(8), 9);
  for (int k = 0; k < m.architecture().modules; ++k) m.tensors()[m.deform_offset() + static_cast<std::size_t>(k)].setZero();
  const PointCloud out = map(m, random_cloud(6, 10), random_cloud(7, 10));
  EXPECT_TRUE(out.matrix().isZero());
}

TEST(Map, SinglePrecisionTracksDouble) {
  const auto m = Model<double>::initialized(Architecture::toy(16), 10);
  const PointCloud s = random_cloud(8, 25), t = random_cloud(9, 25);
  const PointCloud d = map(m, s, t), f = map(m.cast<float>(), s, t);
  EXPECT_LT((d.matrix() - f.matrix()).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(BoundModel, RejectsWrongNodeCount) {
  const Model<double> m(Architecture::toy(4));
  ad::Tape<double> tape;
  EXPECT_THROW(BoundModel<double>(m, tape, std::vector<ad::Var<double>>{}), ShapeMismatch);
}

TEST(Encode, ShapeChecks) {
  const Model<double> m(Architecture::toy(4));
  ad::Tape<double> tape;
  BoundModel<double> bound(m, tape, false);
  EXPECT_THROW(encode(bound, 0, tape.constant(ad::Tensor<double>::Zero(4, 2))), ShapeMismatch);
  EXPECT_THROW(predict_flat_params(bound, tape.constant(ad::Tensor<double>::Zero(1, 3)),
                                   tape.constant(ad::Tensor<double>::Zero(1, 4))),
               ShapeMismatch);
}
