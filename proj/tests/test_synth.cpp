#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "cycledeform/synth.hpp"

using namespace cycledeform;

namespace {

/// Surface area from the full dimensions of a primitive.
double area_from_dims(const Primitive& p) {
  if (p.kind == Primitive::Kind::Box) {
    const double a = 2 * p.half_extent.x(), b = 2 * p.half_extent.y(), c = 2 * p.half_extent.z();
    return 2 * a * b + 2 * b * c + 2 * a * c;
  }
  const double d = 2 * p.radius;
  double area = std::numbers::pi * d * p.height;
  if (p.bottom_cap) area += std::numbers::pi * d * d / 4;
  if (p.top_cap) area += std::numbers::pi * d * d / 4;
  return area;
}

}  // namespace

TEST(Synth, FamiliesAndParts) {
  EXPECT_EQ(part_names(Family::Table), (std::vector<std::string>{"top", "leg"}));
  EXPECT_EQ(part_names(Family::Chair), (std::vector<std::string>{"seat", "back", "leg"}));
  EXPECT_EQ(part_names(Family::Lamp), (std::vector<std::string>{"base", "pole", "shade"}));
  EXPECT_EQ(parse_family("chair"), Family::Chair);
  EXPECT_THROW(parse_family("sofa"), InvalidArgument);
}

TEST(Synth, SpecValidation) {
  auto s = SynthSpec::for_family(Family::Table);
  EXPECT_NO_THROW(s.validate());
  s.ranges["bogus"] = {0, 1};
  EXPECT_THROW(s.validate(), InvalidArgument);
  s = SynthSpec::for_family(Family::Table);
  s.ranges["top_width"] = {2, 1};
  EXPECT_THROW(s.validate(), InvalidArgument);
  s = SynthSpec::for_family(Family::Lamp);
  s.ranges.erase("pole_radius");
  EXPECT_THROW(s.validate(), InvalidArgument);
  s = SynthSpec::for_family(Family::Table);
  s.count = 0;
  EXPECT_THROW(s.validate(), InvalidArgument);
  s = SynthSpec::for_family(Family::Table);
  s.three_leg_probability = 1.5;
  EXPECT_THROW(s.validate(), InvalidArgument);
}

TEST(Synth, SeededAndNormalized) {
  auto spec = SynthSpec::for_family(Family::Chair);
  spec.count = 5;
  spec.points_per_shape = 300;
  spec.seed = 7;
  const auto a = generate_synthetic(spec), b = generate_synthetic(spec);
  spec.seed = 8;
  const auto c = generate_synthetic(spec);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].cloud(), b[i].cloud());
    EXPECT_EQ(a[i].labels(), b[i].labels());
    EXPECT_NE(a[i].cloud(), c[i].cloud());
    const auto& m = a[i].cloud().matrix();
    const Eigen::RowVector3d lo = m.colwise().minCoeff(), hi = m.colwise().maxCoeff();
    EXPECT_NEAR((hi - lo).maxCoeff(), 2.0, 1e-12);
    EXPECT_NEAR((hi + lo).cwiseAbs().maxCoeff(), 0.0, 1e-12);
  }
}

TEST(Synth, EveryLabelPresentEvenWithFewPoints) {
  for (Family f : {Family::Table, Family::Chair, Family::Lamp}) {
    auto spec = SynthSpec::for_family(f);
    spec.count = 20;
    spec.points_per_shape = 4;
    for (const auto& s : generate_synthetic(spec)) {
      ASSERT_EQ(s.size(), 4u);
      for (int l = 0; l < s.part_count(); ++l)
        EXPECT_NE(std::find(s.labels().begin(), s.labels().end(), l), s.labels().end()) << to_string(f);
    }
  }
}

TEST(Synth, AreaFormulaMatchesDimensions) {
  for (Family f : {Family::Table, Family::Chair, Family::Lamp}) {
    auto spec = SynthSpec::for_family(f);
    spec.count = 10;
    spec.points_per_shape = 16;
    for (const auto& s : generate_synthetic_detailed(spec))
      for (const auto& p : s.parts) EXPECT_NEAR(surface_area(p), area_from_dims(p), 1e-12);
  }
}

TEST(Synth, PartFractionsFollowSurfaceArea) {
  for (Family f : {Family::Table, Family::Chair, Family::Lamp}) {
    auto spec = SynthSpec::for_family(f);
    spec.count = 40;
    spec.points_per_shape = 2048;
    spec.seed = 21;
    const auto shapes = generate_synthetic_detailed(spec);
    const int parts = static_cast<int>(part_names(f).size());
    std::vector<double> observed(static_cast<std::size_t>(parts)), expected(observed.size()), variance(observed.size());
    for (const auto& s : shapes) {
      double total = 0;
      std::vector<double> area(observed.size());
      for (const auto& p : s.parts) {
        area[static_cast<std::size_t>(p.label)] += area_from_dims(p);
        total += area_from_dims(p);
      }
      const double n = static_cast<double>(s.shape.size());
      for (int l = 0; l < parts; ++l) {
        const double q = area[static_cast<std::size_t>(l)] / total;
        expected[static_cast<std::size_t>(l)] += n * q;
        variance[static_cast<std::size_t>(l)] += n * q * (1 - q);
      }
      for (int x : s.shape.labels()) observed[static_cast<std::size_t>(x)] += 1;
    }
    for (int l = 0; l < parts; ++l) {
      const auto k = static_cast<std::size_t>(l);
      EXPECT_LE(std::abs(observed[k] - expected[k]), 3 * std::sqrt(variance[k])) << to_string(f) << " part " << l;
    }
  }
}

TEST(Synth, SamplesLieOnTheSurface) {
  std::mt19937_64 rng(3);
  Primitive box;
  box.kind = Primitive::Kind::Box;
  box.center = {0.5, -1, 2};
  box.half_extent = {0.5, 1.0, 1.5};
  std::array<int, 3> face_hits{};
  const int n = 60000;
  for (int i = 0; i < n; ++i) {
    const Point3 q = detail::sample_on(box, rng) - box.center;
    const Point3 r = q.cwiseAbs() - box.half_extent;
    ASSERT_LE(r.maxCoeff(), 1e-12);
    int on = -1;
    for (int a = 0; a < 3; ++a)
      if (std::abs(r[a]) < 1e-12) on = a;
    ASSERT_GE(on, 0);
    ++face_hits[static_cast<std::size_t>(on)];
  }
  // Face pairs normal to x, y, z have areas 2*(2*3), 2*(1*3), 2*(1*2) out of 22.
  const double p[3] = {12.0 / 22, 6.0 / 22, 4.0 / 22};
  for (int a = 0; a < 3; ++a)
    EXPECT_LE(std::abs(face_hits[static_cast<std::size_t>(a)] - n * p[a]), 3 * std::sqrt(n * p[a] * (1 - p[a])));

  Primitive cyl;
  cyl.kind = Primitive::Kind::Cylinder;
  cyl.center = {0, 0, 1};
  cyl.radius = 0.5;
  cyl.height = 2;
  cyl.bottom_cap = true;
  cyl.top_cap = false;
  int caps = 0;
  for (int i = 0; i < n; ++i) {
    const Point3 q = detail::sample_on(cyl, rng) - cyl.center;
    const double rad = std::hypot(q.x(), q.y());
    if (std::abs(q.z()) < 1e-12 && rad <= 0.5 + 1e-12) {
      ++caps;
    } else {
      ASSERT_NEAR(rad, 0.5, 1e-12);
      ASSERT_GE(q.z(), -1e-12);
      ASSERT_LE(q.z(), 2 + 1e-12);
    }
  }
  const double pc = (std::numbers::pi * 0.25) / (std::numbers::pi * 0.25 + 2 * std::numbers::pi * 0.5 * 2);
  EXPECT_LE(std::abs(caps - n * pc), 3 * std::sqrt(n * pc * (1 - pc)));
}

TEST(Synth, ThreeLegProbability) {
  auto spec = SynthSpec::for_family(Family::Table);
  spec.count = 400;
  spec.points_per_shape = 8;
  spec.seed = 5;
  int three = 0;
  for (const auto& s : generate_synthetic_detailed(spec)) {
    EXPECT_TRUE(s.leg_count == 3 || s.leg_count == 4);
    EXPECT_EQ(static_cast<int>(s.parts.size()), 1 + s.leg_count);
    three += s.leg_count == 3;
  }
  EXPECT_LE(std::abs(three - 120.0), 3 * std::sqrt(400 * 0.3 * 0.7));
  spec.three_leg_probability = 0;
  for (const auto& s : generate_synthetic_detailed(spec)) EXPECT_EQ(s.leg_count, 4);
}
