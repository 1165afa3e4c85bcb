#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

#include "cycledeform/geometry.hpp"

namespace cycledeform {

template <typename Scalar>
struct Neighbor {
  std::size_t index = 0;
  Scalar squared_distance = 0;
};

/// Immutable 3-d tree over a copy of the input coordinates.
///
/// Queries return the exact nearest point under Euclidean distance; among
/// equidistant points the smallest index wins, so results coincide with an
/// exhaustive scan using the same distance arithmetic.
template <typename Scalar>
class KdTree {
 public:
  KdTree() = default;

  explicit KdTree(Points<Scalar> points, std::size_t leaf_size = 8)
      : points_(std::move(points)), leaf_size_(std::max<std::size_t>(1, leaf_size)) {
    if (points_.rows() < 1) throw InvalidArgument("cannot build a KdTree over an empty cloud");
    order_.resize(static_cast<std::size_t>(points_.rows()));
    std::iota(order_.begin(), order_.end(), std::uint32_t{0});
    nodes_.reserve(2 * order_.size() / leaf_size_ + 1);
    build(0, static_cast<std::uint32_t>(order_.size()));
  }

  explicit KdTree(const PointCloud& cloud, std::size_t leaf_size = 8)
      : KdTree(cloud.template as<Scalar>(), leaf_size) {}

  std::size_t size() const noexcept { return static_cast<std::size_t>(points_.rows()); }
  const Points<Scalar>& points() const noexcept { return points_; }

  static Scalar squared_distance(const Scalar* p, const Scalar* q) {
    const Scalar dx = p[0] - q[0];
    const Scalar dy = p[1] - q[1];
    const Scalar dz = p[2] - q[2];
    return dx * dx + dy * dy + dz * dz;
  }

  Neighbor<Scalar> nearest(const Scalar* q) const {
    Neighbor<Scalar> best{std::numeric_limits<std::size_t>::max(), std::numeric_limits<Scalar>::infinity()};
    search(0, q, best);
    return best;
  }

  template <typename Derived>
  Neighbor<Scalar> nearest(const Eigen::MatrixBase<Derived>& q) const {
    const Scalar buf[3] = {static_cast<Scalar>(q(0)), static_cast<Scalar>(q(1)), static_cast<Scalar>(q(2))};
    return nearest(buf);
  }

  /// Below this size a batch of queries scans every point instead of
  /// descending the tree. Training clouds have a few hundred points, and a
  /// clumped (early, untrained) deformed cloud makes tree searches visit most
  /// leaves anyway.
  static constexpr std::size_t kScanLimit = 1024;

  /// Nearest-neighbor index for every row of `queries`.
  template <typename QScalar>
  std::vector<std::uint32_t> nearest_indices(const Points<QScalar>& queries) const {
    std::vector<std::uint32_t> out(static_cast<std::size_t>(queries.rows()));
    if (size() <= kScanLimit) {
      scan_all(queries, out);
      return out;
    }
    for (Eigen::Index i = 0; i < queries.rows(); ++i) {
      const Scalar q[3] = {static_cast<Scalar>(queries(i, 0)), static_cast<Scalar>(queries(i, 1)),
                           static_cast<Scalar>(queries(i, 2))};
      out[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(nearest(q).index);
    }
    return out;
  }

  /// Tree-based answer for every row, regardless of size (for testing the scan).
  template <typename QScalar>
  std::vector<std::uint32_t> nearest_indices_by_tree(const Points<QScalar>& queries) const {
    std::vector<std::uint32_t> out(static_cast<std::size_t>(queries.rows()));
    for (Eigen::Index i = 0; i < queries.rows(); ++i) {
      const Scalar q[3] = {static_cast<Scalar>(queries(i, 0)), static_cast<Scalar>(queries(i, 1)),
                           static_cast<Scalar>(queries(i, 2))};
      out[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(nearest(q).index);
    }
    return out;
  }

 private:
  // Same arithmetic as squared_distance, laid out so the distance loop vectorizes.
  // The first minimum in index order is the smallest index among ties.
  template <typename QScalar>
  void scan_all(const Points<QScalar>& queries, std::vector<std::uint32_t>& out) const {
    const std::size_t n = size();
    std::vector<Scalar> xs(n), ys(n), zs(n), d(n);
    for (std::size_t i = 0; i < n; ++i) {
      xs[i] = points_(static_cast<Eigen::Index>(i), 0);
      ys[i] = points_(static_cast<Eigen::Index>(i), 1);
      zs[i] = points_(static_cast<Eigen::Index>(i), 2);
    }
    for (Eigen::Index r = 0; r < queries.rows(); ++r) {
      const Scalar qx = static_cast<Scalar>(queries(r, 0)), qy = static_cast<Scalar>(queries(r, 1)),
                   qz = static_cast<Scalar>(queries(r, 2));
      for (std::size_t i = 0; i < n; ++i) {
        const Scalar dx = qx - xs[i];
        const Scalar dy = qy - ys[i];
        const Scalar dz = qz - zs[i];
        d[i] = dx * dx + dy * dy + dz * dz;
      }
      // Lane-wise minima vectorize where a single running minimum does not.
      constexpr std::size_t kLanes = 16;
      Scalar lane[kLanes];
      std::fill(lane, lane + kLanes, std::numeric_limits<Scalar>::infinity());
      std::size_t i = 0;
      for (; i + kLanes <= n; i += kLanes)
        for (std::size_t l = 0; l < kLanes; ++l) lane[l] = d[i + l] < lane[l] ? d[i + l] : lane[l];
      Scalar best = *std::min_element(lane, lane + kLanes);
      for (; i < n; ++i) best = d[i] < best ? d[i] : best;
      out[static_cast<std::size_t>(r)] = static_cast<std::uint32_t>(std::find(d.begin(), d.end(), best) - d.begin());
    }
  }

  struct Node {
    std::uint32_t begin = 0, end = 0;  // range in order_ (leaves only)
    std::int32_t left = -1, right = -1;
    std::uint8_t axis = 0;
    Scalar split = 0;
    bool leaf() const { return left < 0; }
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end) {
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back(Node{begin, end});
    if (end - begin <= leaf_size_) return id;

    Eigen::Matrix<Scalar, 1, 3> lo = points_.row(order_[begin]);
    Eigen::Matrix<Scalar, 1, 3> hi = lo;
    for (std::uint32_t i = begin + 1; i < end; ++i) {
      lo = lo.cwiseMin(points_.row(order_[i]));
      hi = hi.cwiseMax(points_.row(order_[i]));
    }
    Eigen::Index axis = 0;
    (hi - lo).maxCoeff(&axis);
    if (!(hi[axis] > lo[axis])) return id;  // all coincide: keep as a leaf

    const std::uint32_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::uint32_t a, std::uint32_t b) { return points_(a, axis) < points_(b, axis); });
    const Scalar split = points_(order_[mid], axis);
    const std::int32_t l = build(begin, mid);
    const std::int32_t r = build(mid, end);
    Node& n = nodes_[static_cast<std::size_t>(id)];
    n.left = l;
    n.right = r;
    n.axis = static_cast<std::uint8_t>(axis);
    n.split = split;
    return id;
  }

  // Left subtree holds coordinates <= split, right subtree >= split.
  void search(std::int32_t node_id, const Scalar* q, Neighbor<Scalar>& best) const {
    const Node& n = nodes_[static_cast<std::size_t>(node_id)];
    if (n.leaf()) {
      for (std::uint32_t k = n.begin; k < n.end; ++k) {
        const std::uint32_t i = order_[k];
        const Scalar d = squared_distance(q, points_.row(i).data());
        if (d < best.squared_distance || (d == best.squared_distance && i < best.index)) best = {i, d};
      }
      return;
    }
    const Scalar diff = q[n.axis] - n.split;
    const std::int32_t near = diff <= 0 ? n.left : n.right;
    const std::int32_t far = diff <= 0 ? n.right : n.left;
    search(near, q, best);
    // Visit the far side on equality as well so that index ties resolve exactly.
    if (diff * diff <= best.squared_distance) search(far, q, best);
  }

  Points<Scalar> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
  std::size_t leaf_size_ = 8;
};

/// Shape projection: nearest point of the indexed cloud and its index.
inline std::pair<std::size_t, Point3> project(const Point3& q, const KdTree<double>& target) {
  const auto nb = target.nearest(q);
  return {nb.index, target.points().row(static_cast<Eigen::Index>(nb.index)).transpose()};
}

}  // namespace cycledeform
