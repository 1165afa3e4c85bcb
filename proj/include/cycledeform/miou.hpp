#pragma once

#include <vector>

#include "cycledeform/geometry.hpp"

namespace cycledeform {

/// Mean over parts of |pred ∩ gt| / |pred ∪ gt|. A part absent from both
/// label sets counts as IoU 1.
inline double miou(const Labels& pred, const Labels& gt, int part_count) {
  if (pred.size() != gt.size())
    throw LengthMismatch("prediction has " + std::to_string(pred.size()) + " labels, ground truth " +
                         std::to_string(gt.size()));
  if (part_count < 1) throw InvalidArgument("part count must be >= 1");
  std::vector<std::size_t> inter(static_cast<std::size_t>(part_count), 0);
  std::vector<std::size_t> uni(static_cast<std::size_t>(part_count), 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int p = pred[i], g = gt[i];
    if (p < 0 || p >= part_count || g < 0 || g >= part_count)
      throw LabelSpaceMismatch("label outside [0, " + std::to_string(part_count) + ")");
    if (p == g) {
      ++inter[static_cast<std::size_t>(p)];
      ++uni[static_cast<std::size_t>(p)];
    } else {
      ++uni[static_cast<std::size_t>(p)];
      ++uni[static_cast<std::size_t>(g)];
    }
  }
  double total = 0.0;
  for (std::size_t l = 0; l < inter.size(); ++l)
    total += uni[l] == 0 ? 1.0 : static_cast<double>(inter[l]) / static_cast<double>(uni[l]);
  return total / static_cast<double>(part_count);
}

}  // namespace cycledeform
