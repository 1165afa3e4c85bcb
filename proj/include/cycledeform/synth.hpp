#pragma once

// Parametric labeled shapes built from boxes and cylinders. Points are drawn
// uniformly by surface area, so each part's share of the points follows its
// share of the total area.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "cycledeform/geometry.hpp"

namespace cycledeform {

enum class Family { Table, Chair, Lamp };

inline std::string to_string(Family f) {
  switch (f) {
    case Family::Table: return "table";
    case Family::Chair: return "chair";
    case Family::Lamp: return "lamp";
  }
  return "?";
}

inline Family parse_family(const std::string& s) {
  if (s == "table") return Family::Table;
  if (s == "chair") return Family::Chair;
  if (s == "lamp") return Family::Lamp;
  throw InvalidArgument("unknown family '" + s + "' (table, chair, lamp)");
}

/// Part names in label order.
inline std::vector<std::string> part_names(Family f) {
  switch (f) {
    case Family::Table: return {"top", "leg"};
    case Family::Chair: return {"seat", "back", "leg"};
    case Family::Lamp: return {"base", "pole", "shade"};
  }
  return {};
}

struct Range {
  double lo = 0, hi = 0;
};

/// Default parameter ranges, in pre-normalization units.
inline std::map<std::string, Range> default_ranges(Family f) {
  switch (f) {
    case Family::Table:
      return {{"top_width", {1.0, 2.0}},     {"top_depth", {0.6, 1.2}},     {"top_thickness", {0.03, 0.10}},
              {"leg_height", {0.5, 1.1}},    {"leg_thickness", {0.04, 0.12}}, {"leg_inset", {0.0, 0.15}}};
    case Family::Chair:
      return {{"seat_width", {0.8, 1.2}},    {"seat_depth", {0.8, 1.2}},     {"seat_thickness", {0.05, 0.12}},
              {"leg_height", {0.7, 1.0}},    {"leg_thickness", {0.05, 0.10}}, {"back_height", {0.6, 1.2}},
              {"back_thickness", {0.04, 0.10}}};
    case Family::Lamp:
      return {{"base_radius", {0.3, 0.6}},   {"base_height", {0.03, 0.10}}, {"pole_radius", {0.02, 0.05}},
              {"pole_height", {0.8, 1.6}},   {"shade_radius", {0.25, 0.6}}, {"shade_height", {0.25, 0.6}}};
  }
  return {};
}

struct SynthSpec {
  Family family = Family::Table;
  std::size_t count = 1;
  std::uint64_t seed = 0;
  std::size_t points_per_shape = 1024;
  double three_leg_probability = 0.3;  // tables only
  std::map<std::string, Range> ranges = default_ranges(Family::Table);

  static SynthSpec for_family(Family f) {
    SynthSpec s;
    s.family = f;
    s.ranges = default_ranges(f);
    return s;
  }

  void validate() const {
    if (count < 1 || points_per_shape < 1) throw InvalidArgument("count and points per shape must be positive");
    if (!(three_leg_probability >= 0 && three_leg_probability <= 1))
      throw InvalidArgument("three-leg probability must lie in [0, 1]");
    const auto defaults = default_ranges(family);
    for (const auto& [key, r] : ranges) {
      if (!defaults.count(key)) throw InvalidArgument("unknown parameter '" + key + "' for " + to_string(family));
      if (!(r.lo >= 0 && r.lo <= r.hi) || !std::isfinite(r.hi))
        throw InvalidArgument("parameter '" + key + "' needs 0 <= lo <= hi");
    }
    for (const auto& [key, r] : defaults)
      if (!ranges.count(key)) throw InvalidArgument("missing parameter range '" + key + "'");
  }
};

/// One surface piece of a synthetic shape. Boxes are closed; cylinders are
/// z-aligned with optional caps.
struct Primitive {
  enum class Kind { Box, Cylinder } kind = Kind::Box;
  int label = 0;
  Point3 center = Point3::Zero();        // box center, or cylinder bottom-cap center
  Point3 half_extent = Point3::Zero();   // boxes
  double radius = 0, height = 0;         // cylinders
  bool bottom_cap = true, top_cap = true;
};

struct SynthShape {
  LabeledPointCloud shape;
  std::vector<Primitive> parts;  // before normalization
  int leg_count = 0;             // tables and chairs
};

namespace detail {

inline double piece_area(const Primitive& p) {
  if (p.kind == Primitive::Kind::Box) {
    const Point3& h = p.half_extent;
    return 8.0 * (h.x() * h.y() + h.y() * h.z() + h.x() * h.z());
  }
  double a = 2.0 * std::numbers::pi * p.radius * p.height;
  const double cap = std::numbers::pi * p.radius * p.radius;
  return a + (p.bottom_cap ? cap : 0.0) + (p.top_cap ? cap : 0.0);
}

template <typename Rng>
Point3 sample_on(const Primitive& p, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (p.kind == Primitive::Kind::Box) {
    const Point3& h = p.half_extent;
    const double ax = h.y() * h.z(), ay = h.x() * h.z(), az = h.x() * h.y();
    const double pick = u(rng) * (ax + ay + az);
    const int axis = pick < ax ? 0 : (pick < ax + ay ? 1 : 2);
    Point3 q;
    for (int a = 0; a < 3; ++a) q[a] = (2.0 * u(rng) - 1.0) * h[a];
    q[axis] = u(rng) < 0.5 ? -h[axis] : h[axis];
    return p.center + q;
  }
  const double side = 2.0 * std::numbers::pi * p.radius * p.height;
  const double cap = std::numbers::pi * p.radius * p.radius;
  const double pick = u(rng) * (side + (p.bottom_cap ? cap : 0.0) + (p.top_cap ? cap : 0.0));
  const double phi = 2.0 * std::numbers::pi * u(rng);
  if (pick < side) return p.center + Point3(p.radius * std::cos(phi), p.radius * std::sin(phi), p.height * u(rng));
  // Uniform on a disk: radius ~ sqrt(u).
  const double r = p.radius * std::sqrt(u(rng));
  const bool top = pick >= side + (p.bottom_cap ? cap : 0.0);
  return p.center + Point3(r * std::cos(phi), r * std::sin(phi), top ? p.height : 0.0);
}

inline Primitive box(int label, Point3 center, Point3 half) {
  Primitive p;
  p.kind = Primitive::Kind::Box;
  p.label = label;
  p.center = center;
  p.half_extent = half;
  return p;
}

inline Primitive cylinder(int label, Point3 base, double radius, double height, bool bottom, bool top) {
  Primitive p;
  p.kind = Primitive::Kind::Cylinder;
  p.label = label;
  p.center = base;
  p.radius = radius;
  p.height = height;
  p.bottom_cap = bottom;
  p.top_cap = top;
  return p;
}

template <typename Rng>
std::vector<Primitive> table_parts(const std::map<std::string, Range>& r, double three_leg_p, Rng& rng, int& legs) {
  auto draw = [&](const char* k) { return std::uniform_real_distribution<double>(r.at(k).lo, r.at(k).hi)(rng); };
  const double w = draw("top_width"), d = draw("top_depth"), t = draw("top_thickness");
  const double h = draw("leg_height"), lt = draw("leg_thickness"), inset = draw("leg_inset");
  legs = std::bernoulli_distribution(three_leg_p)(rng) ? 3 : 4;
  std::vector<Primitive> parts{box(0, {0, 0, h + t / 2}, {w / 2, d / 2, t / 2})};
  const double x = std::max(w / 2 - inset - lt / 2, 0.0), y = std::max(d / 2 - inset - lt / 2, 0.0);
  std::vector<std::pair<double, double>> feet{{-x, -y}, {-x, y}};
  if (legs == 4) {
    feet.push_back({x, -y});
    feet.push_back({x, y});
  } else {
    feet.push_back({x, 0.0});
  }
  for (auto [fx, fy] : feet) parts.push_back(box(1, {fx, fy, h / 2}, {lt / 2, lt / 2, h / 2}));
  return parts;
}

template <typename Rng>
std::vector<Primitive> chair_parts(const std::map<std::string, Range>& r, Rng& rng) {
  auto draw = [&](const char* k) { return std::uniform_real_distribution<double>(r.at(k).lo, r.at(k).hi)(rng); };
  const double w = draw("seat_width"), d = draw("seat_depth"), t = draw("seat_thickness");
  const double h = draw("leg_height"), lt = draw("leg_thickness");
  const double bh = draw("back_height"), bt = draw("back_thickness");
  std::vector<Primitive> parts{box(0, {0, 0, h + t / 2}, {w / 2, d / 2, t / 2}),
                               box(1, {0, -d / 2 + bt / 2, h + t + bh / 2}, {w / 2, bt / 2, bh / 2})};
  const double x = w / 2 - lt / 2, y = d / 2 - lt / 2;
  for (double fx : {-x, x})
    for (double fy : {-y, y}) parts.push_back(box(2, {fx, fy, h / 2}, {lt / 2, lt / 2, h / 2}));
  return parts;
}

template <typename Rng>
std::vector<Primitive> lamp_parts(const std::map<std::string, Range>& r, Rng& rng) {
  auto draw = [&](const char* k) { return std::uniform_real_distribution<double>(r.at(k).lo, r.at(k).hi)(rng); };
  const double br = draw("base_radius"), bh = draw("base_height");
  const double pr = draw("pole_radius"), ph = draw("pole_height");
  const double sr = draw("shade_radius"), sh = draw("shade_height");
  return {cylinder(0, {0, 0, 0}, br, bh, true, true), cylinder(1, {0, 0, bh}, pr, ph, false, false),
          cylinder(2, {0, 0, bh + ph - sh / 2}, std::max(sr, pr), sh, false, false)};
}

}  // namespace detail

/// Area of one primitive's sampled surface.
inline double surface_area(const Primitive& p) { return detail::piece_area(p); }

/// Generates `spec.count` shapes from one seeded stream. Each shape is
/// normalized to its bounding box. If a part received no point (possible
/// only for tiny point counts) one point of the largest part is redrawn on
/// it, so every label in [0, L) occurs.
inline std::vector<SynthShape> generate_synthetic_detailed(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const int part_count = static_cast<int>(part_names(spec.family).size());
  std::vector<SynthShape> out;
  out.reserve(spec.count);
  for (std::size_t s = 0; s < spec.count; ++s) {
    SynthShape shape;
    switch (spec.family) {
      case Family::Table:
        shape.parts = detail::table_parts(spec.ranges, spec.three_leg_probability, rng, shape.leg_count);
        break;
      case Family::Chair:
        shape.parts = detail::chair_parts(spec.ranges, rng);
        shape.leg_count = 4;
        break;
      case Family::Lamp: shape.parts = detail::lamp_parts(spec.ranges, rng); break;
    }
    std::vector<double> areas;
    for (const auto& p : shape.parts) areas.push_back(detail::piece_area(p));
    std::discrete_distribution<std::size_t> piece(areas.begin(), areas.end());

    std::vector<Point3> pts(spec.points_per_shape);
    Labels labels(spec.points_per_shape);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const auto& p = shape.parts[piece(rng)];
      pts[i] = detail::sample_on(p, rng);
      labels[i] = p.label;
    }
    for (int l = 0; l < part_count; ++l) {
      if (std::find(labels.begin(), labels.end(), l) != labels.end()) continue;
      std::vector<std::size_t> per(static_cast<std::size_t>(part_count));
      for (int x : labels) ++per[static_cast<std::size_t>(x)];
      const int donor = static_cast<int>(std::max_element(per.begin(), per.end()) - per.begin());
      const auto slot = static_cast<std::size_t>(std::find(labels.begin(), labels.end(), donor) - labels.begin());
      const auto it = std::find_if(shape.parts.begin(), shape.parts.end(), [&](const Primitive& p) { return p.label == l; });
      pts[slot] = detail::sample_on(*it, rng);
      labels[slot] = l;
    }
    shape.shape = LabeledPointCloud(normalize_bbox(PointCloud(pts)), std::move(labels), part_count);
    out.push_back(std::move(shape));
  }
  return out;
}

inline std::vector<LabeledPointCloud> generate_synthetic(const SynthSpec& spec) {
  std::vector<LabeledPointCloud> out;
  for (auto& s : generate_synthetic_detailed(spec)) out.push_back(std::move(s.shape));
  return out;
}

}  // namespace cycledeform
