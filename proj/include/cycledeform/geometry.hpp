#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "cycledeform/errors.hpp"

namespace cycledeform {

using Point3 = Eigen::Vector3d;

// n x 3 row-major coordinate block; row i is point i.
template <typename Scalar>
using Points = Eigen::Matrix<Scalar, Eigen::Dynamic, 3, Eigen::RowMajor>;

using Labels = std::vector<int>;

/// Ordered, non-empty set of finite 3D points in double precision.
class PointCloud {
 public:
  PointCloud() = default;

  explicit PointCloud(Points<double> points) : points_(std::move(points)) {
    if (points_.rows() < 1) throw InvalidArgument("point cloud must contain at least one point");
    if (!points_.allFinite()) throw NonFiniteValue("point cloud contains non-finite coordinates");
  }

  explicit PointCloud(const std::vector<Point3>& points) : PointCloud(from_vector(points)) {}

  std::size_t size() const noexcept { return static_cast<std::size_t>(points_.rows()); }
  bool empty() const noexcept { return points_.rows() == 0; }

  Point3 point(std::size_t i) const { return points_.row(static_cast<Eigen::Index>(i)).transpose(); }
  const Points<double>& matrix() const noexcept { return points_; }

  template <typename Scalar>
  Points<Scalar> as() const {
    return points_.template cast<Scalar>();
  }

  Point3 bbox_min() const { return points_.colwise().minCoeff().transpose(); }
  Point3 bbox_max() const { return points_.colwise().maxCoeff().transpose(); }

  friend bool operator==(const PointCloud& a, const PointCloud& b) {
    return a.points_.rows() == b.points_.rows() && a.points_ == b.points_;
  }

 private:
  static Points<double> from_vector(const std::vector<Point3>& points) {
    Points<double> m(static_cast<Eigen::Index>(points.size()), 3);
    for (std::size_t i = 0; i < points.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = points[i].transpose();
    return m;
  }

  Points<double> points_;
};

/// A cloud with one part id per point, every id in [0, part_count).
class LabeledPointCloud {
 public:
  LabeledPointCloud() = default;

  LabeledPointCloud(PointCloud cloud, Labels labels, int part_count)
      : cloud_(std::move(cloud)), labels_(std::move(labels)), part_count_(part_count) {
    if (labels_.size() != cloud_.size())
      throw LengthMismatch("label count " + std::to_string(labels_.size()) + " != point count " +
                           std::to_string(cloud_.size()));
    if (part_count_ < 1) throw InvalidArgument("part count must be >= 1");
    for (int l : labels_)
      if (l < 0 || l >= part_count_) throw LabelSpaceMismatch("label " + std::to_string(l) + " outside [0, L)");
  }

  const PointCloud& cloud() const noexcept { return cloud_; }
  const Labels& labels() const noexcept { return labels_; }
  int part_count() const noexcept { return part_count_; }
  std::size_t size() const noexcept { return cloud_.size(); }

 private:
  PointCloud cloud_;
  Labels labels_;
  int part_count_ = 1;
};

/// Centers the axis-aligned bounding box at the origin and scales uniformly
/// so that its longest edge has length 2.
inline PointCloud normalize_bbox(const PointCloud& cloud) {
  const Point3 lo = cloud.bbox_min();
  const Point3 hi = cloud.bbox_max();
  const double longest = (hi - lo).maxCoeff();
  if (!(longest > 0.0)) throw DegenerateCloud("cannot normalize a cloud whose points all coincide");
  const Eigen::RowVector3d center = (0.5 * (lo + hi)).transpose();
  const double scale = 2.0 / longest;
  Points<double> out = (cloud.matrix().rowwise() - center) * scale;
  return PointCloud(std::move(out));
}

/// Rotation about Z, anisotropic scale, optional bbox normalization, then a
/// small translation. Ranges are checked on construction.
class AugmentationTransform {
 public:
  static constexpr double kMaxAngle = 40.0 * std::numbers::pi / 180.0;
  static constexpr double kMinScale = 0.75;
  static constexpr double kMaxScale = 1.25;
  static constexpr double kMaxTranslation = 0.03;

  AugmentationTransform() = default;

  AugmentationTransform(double theta_z, const Eigen::Vector3d& scale, const Point3& translation,
                        bool apply_bbox_norm)
      : theta_z_(theta_z), scale_(scale), translation_(translation), bbox_norm_(apply_bbox_norm) {
    // Small slack so that degree-to-radian round-off at the boundary is accepted.
    if (!(std::abs(theta_z_) <= kMaxAngle + 1e-12)) throw InvalidArgument("rotation angle outside [-40deg, 40deg]");
    for (int a = 0; a < 3; ++a) {
      if (!(scale_[a] >= kMinScale && scale_[a] <= kMaxScale))
        throw InvalidArgument("scale factor outside [0.75, 1.25]");
      if (!(std::abs(translation_[a]) < kMaxTranslation))
        throw InvalidArgument("translation component magnitude must be < 0.03");
    }
  }

  static AugmentationTransform identity(bool apply_bbox_norm = false) {
    return AugmentationTransform(0.0, Eigen::Vector3d::Ones(), Point3::Zero(), apply_bbox_norm);
  }

  /// Draws every parameter uniformly over its range. Without translation the
  /// draw matches the self-reconstruction deformation (rotate, scale, rescale).
  template <typename Rng>
  static AugmentationTransform sample(Rng& rng, bool with_translation) {
    std::uniform_real_distribution<double> angle(-kMaxAngle, kMaxAngle);
    std::uniform_real_distribution<double> scale(kMinScale, kMaxScale);
    std::uniform_real_distribution<double> shift(-kMaxTranslation, kMaxTranslation);
    const double theta = angle(rng);
    Eigen::Vector3d s;
    for (int a = 0; a < 3; ++a) s[a] = scale(rng);
    Point3 t = Point3::Zero();
    if (with_translation) {
      for (int a = 0; a < 3; ++a) {
        double v = shift(rng);
        // uniform_real_distribution is half-open at the top; keep |t| strictly below the bound.
        if (std::abs(v) >= kMaxTranslation) v = 0.0;
        t[a] = v;
      }
    }
    return AugmentationTransform(theta, s, t, true);
  }

  double theta_z() const noexcept { return theta_z_; }
  const Eigen::Vector3d& scale() const noexcept { return scale_; }
  const Point3& translation() const noexcept { return translation_; }
  bool applies_bbox_norm() const noexcept { return bbox_norm_; }

  Eigen::Matrix3d linear_part() const {
    const double c = std::cos(theta_z_), s = std::sin(theta_z_);
    Eigen::Matrix3d rot;
    rot << c, -s, 0, s, c, 0, 0, 0, 1;
    return scale_.asDiagonal() * rot;
  }

 private:
  double theta_z_ = 0.0;
  Eigen::Vector3d scale_ = Eigen::Vector3d::Ones();
  Point3 translation_ = Point3::Zero();
  bool bbox_norm_ = false;
};

inline PointCloud apply_augmentation(const PointCloud& cloud, const AugmentationTransform& psi) {
  const Eigen::Matrix3d lin = psi.linear_part();
  Points<double> pts = cloud.matrix() * lin.transpose();
  PointCloud out(std::move(pts));
  if (psi.applies_bbox_norm()) out = normalize_bbox(out);
  Points<double> shifted = out.matrix().rowwise() + psi.translation().transpose();
  return PointCloud(std::move(shifted));
}

/// Draws `count` rows uniformly with replacement.
template <typename Rng>
PointCloud resample(const PointCloud& cloud, std::size_t count, Rng& rng, Labels* labels_out = nullptr,
                    const Labels* labels_in = nullptr) {
  std::uniform_int_distribution<std::size_t> pick(0, cloud.size() - 1);
  Points<double> out(static_cast<Eigen::Index>(count), 3);
  if (labels_out) labels_out->resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = pick(rng);
    out.row(static_cast<Eigen::Index>(i)) = cloud.matrix().row(static_cast<Eigen::Index>(j));
    if (labels_out && labels_in) (*labels_out)[i] = (*labels_in)[j];
  }
  return PointCloud(std::move(out));
}

}  // namespace cycledeform
