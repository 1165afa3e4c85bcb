#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Core>
#include <Eigen/LU>
#include <Eigen/SVD>

#include "cycledeform/kdtree.hpp"

namespace cycledeform {

struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static RigidTransform identity() { return {}; }

  static RigidTransform about_z(double theta, const Eigen::Vector3d& t) {
    RigidTransform r;
    const double c = std::cos(theta), s = std::sin(theta);
    r.rotation << c, -s, 0, s, c, 0, 0, 0, 1;
    r.translation = t;
    return r;
  }

  Point3 apply(const Point3& p) const { return rotation * p + translation; }

  PointCloud apply(const PointCloud& cloud) const {
    Points<double> out = (cloud.matrix() * rotation.transpose()).rowwise() + translation.transpose();
    return PointCloud(std::move(out));
  }

  /// (*this) after `first`.
  RigidTransform compose(const RigidTransform& first) const {
    return {rotation * first.rotation, rotation * first.translation + translation};
  }
};

namespace detail {
// A rotation is determined once the second singular value is clear of zero.
inline bool full_rank_2(const Eigen::Vector3d& sv) { return sv[1] > 1e-12 * std::max(1.0, sv[0]); }
}  // namespace detail

/// Least-squares rotation and translation taking rows of `from` onto the
/// matching rows of `to` (Kabsch: SVD of the cross-covariance).
inline RigidTransform best_fit_rigid(const Points<double>& from, const Points<double>& to) {
  if (from.rows() != to.rows()) throw LengthMismatch("rigid fit needs equally many correspondences");
  if (from.rows() < 3) throw DegenerateCloud("rigid fit needs at least 3 correspondences");
  const Eigen::RowVector3d cf = from.colwise().mean();
  const Eigen::RowVector3d ct = to.colwise().mean();
  const Eigen::Matrix3d cov = (from.rowwise() - cf).transpose() * (to.rowwise() - ct);
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (!detail::full_rank_2(svd.singularValues()))
    throw DegenerateCloud("rigid fit is rank-deficient (collinear or coincident correspondences)");
  Eigen::Matrix3d fix = Eigen::Matrix3d::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0) fix(2, 2) = -1.0;
  RigidTransform out;
  out.rotation = svd.matrixV() * fix * svd.matrixU().transpose();
  out.translation = ct.transpose() - out.rotation * cf.transpose();
  return out;
}

struct IcpOptions {
  int max_iterations = 50;
  double tolerance = 1e-6;  // on the change of RMS residual
};

struct IcpResult {
  RigidTransform transform;
  PointCloud aligned;
  std::vector<double> rms_history;  // residual before each update, plus the final one
  int iterations = 0;
};

inline double rms_residual(const Points<double>& a, const Points<double>& b) {
  return std::sqrt((a - b).rowwise().squaredNorm().mean());
}

/// Point-to-point ICP of `source` onto `target`, starting from identity.
inline IcpResult icp_align(const PointCloud& source, const KdTree<double>& target, const IcpOptions& opt = {}) {
  if (source.size() < 3 || target.size() < 3) throw DegenerateCloud("ICP needs at least 3 points per cloud");
  IcpResult res;
  Points<double> current = source.matrix();
  {
    const Points<double> c = current.rowwise() - current.colwise().mean();
    if (!detail::full_rank_2(Eigen::JacobiSVD<Eigen::Matrix3d>(c.transpose() * c).singularValues()))
      throw DegenerateCloud("ICP source is collinear or coincident");
  }
  Points<double> matched(current.rows(), 3);
  auto correspond = [&] {
    for (Eigen::Index i = 0; i < current.rows(); ++i)
      matched.row(i) = target.points().row(static_cast<Eigen::Index>(target.nearest(current.row(i).data()).index));
    return rms_residual(current, matched);
  };

  double rms = correspond();
  res.rms_history.push_back(rms);
  for (int it = 0; it < opt.max_iterations; ++it) {
    RigidTransform step;
    try {
      step = best_fit_rigid(current, matched);
    } catch (const DegenerateCloud&) {
      break;  // correspondences collapsed onto a line or a point; keep the last pose
    }
    current = (current * step.rotation.transpose()).rowwise() + step.translation.transpose();
    res.transform = step.compose(res.transform);
    res.iterations = it + 1;
    const double next = correspond();
    res.rms_history.push_back(next);
    const bool converged = std::abs(rms - next) < opt.tolerance;
    rms = next;
    if (converged) break;
  }
  res.aligned = PointCloud(std::move(current));
  return res;
}

inline IcpResult icp_align(const PointCloud& source, const PointCloud& target, const IcpOptions& opt = {}) {
  return icp_align(source, KdTree<double>(target), opt);
}

}  // namespace cycledeform
