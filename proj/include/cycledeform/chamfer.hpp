#pragma once

#include <cmath>

#include "cycledeform/kdtree.hpp"

namespace cycledeform {

/// Mean over `target` points of the distance to the nearest `source` point.
/// Not symmetric: every target point must be explained by the source.
inline double chamfer_asym(const KdTree<double>& source, const PointCloud& target) {
  double sum = 0.0;
  const auto& q = target.matrix();
  for (Eigen::Index i = 0; i < q.rows(); ++i) sum += std::sqrt(source.nearest(q.row(i).data()).squared_distance);
  return sum / static_cast<double>(target.size());
}

inline double chamfer_asym(const PointCloud& source, const PointCloud& target) {
  return chamfer_asym(KdTree<double>(source), target);
}

inline double chamfer_sym(const PointCloud& a, const PointCloud& b) {
  return chamfer_asym(a, b) + chamfer_asym(b, a);
}

inline double chamfer_sym(const KdTree<double>& tree_a, const PointCloud& a, const KdTree<double>& tree_b,
                          const PointCloud& b) {
  return chamfer_asym(tree_a, b) + chamfer_asym(tree_b, a);
}

}  // namespace cycledeform
