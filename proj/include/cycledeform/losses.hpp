#pragma once

// Training objectives: asymmetric Chamfer reconstruction, 2- and 3-cycle
// consistency through the projection operator, self-reconstruction and the
// optional per-part Chamfer variant.
//
// Projections are hard nearest-neighbor selections. The selected index is a
// constant of the pass: a cycle term differentiates the outer map at the
// projected points, while the inner map only chooses which points those are.

#include <array>
#include <cmath>
#include <concepts>
#include <limits>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "cycledeform/autodiff.hpp"
#include "cycledeform/kdtree.hpp"
#include "cycledeform/model.hpp"

namespace cycledeform {

/// One cloud as seen by the losses: coordinates, a search tree over them and
/// optional per-point labels. `id` must be unique within a loss evaluation.
template <typename T>
struct LossCloud {
  int id = 0;
  ad::Tensor<T> points;
  KdTree<T> tree;
  Labels labels;

  static LossCloud make(int id, const PointCloud& cloud, Labels labels = {}) {
    if (!labels.empty() && labels.size() != cloud.size()) throw LengthMismatch("labels do not match cloud size");
    Points<T> pts = cloud.as<T>();
    return LossCloud{id, ad::Tensor<T>(pts), KdTree<T>(pts), std::move(labels)};
  }

  std::size_t size() const { return static_cast<std::size_t>(points.rows()); }
};

template <typename M, typename T>
concept PairMapper = requires(M& m, ad::Tape<T>& tape, const LossCloud<T>& c, const ad::Var<T>& v) {
  { m.map(tape, c, c) } -> std::same_as<ad::Var<T>>;
  { m.map_points(tape, c, c, v) } -> std::same_as<ad::Var<T>>;
};

/// f_{X,Y}(p) = p for every pair; used to pin loss identities.
template <typename T>
struct IdentityMapper {
  ad::Var<T> map(ad::Tape<T>& tape, const LossCloud<T>& src, const LossCloud<T>&) { return tape.constant(src.points); }
  ad::Var<T> map_points(ad::Tape<T>&, const LossCloud<T>&, const LossCloud<T>&, const ad::Var<T>& pts) { return pts; }
};

/// The learned mapping. Encodings and pair parameters are computed once per
/// cloud / ordered pair and reused by every term of the pass.
template <typename T>
class ModelMapper {
 public:
  explicit ModelMapper(const BoundModel<T>& model) : model_(&model) {}

  ad::Var<T> map(ad::Tape<T>& tape, const LossCloud<T>& src, const LossCloud<T>& tgt) {
    return deform(*model_, params(tape, src, tgt), points(tape, src));
  }

  ad::Var<T> map_points(ad::Tape<T>& tape, const LossCloud<T>& src, const LossCloud<T>& tgt, const ad::Var<T>& pts) {
    return deform(*model_, params(tape, src, tgt), pts);
  }

  const PairParams<T>& params(ad::Tape<T>& tape, const LossCloud<T>& src, const LossCloud<T>& tgt) {
    const auto key = std::make_pair(src.id, tgt.id);
    auto it = params_.find(key);
    if (it == params_.end())
      it = params_.emplace(key, predict_params(*model_, encoding(tape, 0, src), encoding(tape, 1, tgt))).first;
    return it->second;
  }

  ad::Var<T> encoding(ad::Tape<T>& tape, int slot, const LossCloud<T>& c) {
    const auto key = std::make_pair(slot, c.id);
    auto it = encodings_.find(key);
    if (it == encodings_.end()) it = encodings_.emplace(key, encode(*model_, slot, points(tape, c))).first;
    return it->second;
  }

 private:
  ad::Var<T> points(ad::Tape<T>& tape, const LossCloud<T>& c) {
    auto it = points_.find(c.id);
    if (it == points_.end()) it = points_.emplace(c.id, tape.constant(c.points)).first;
    return it->second;
  }

  const BoundModel<T>* model_;
  std::map<int, ad::Var<T>> points_;
  std::map<std::pair<int, int>, ad::Var<T>> encodings_;
  std::map<std::pair<int, int>, PairParams<T>> params_;
};

/// Evaluates loss terms over a fixed list of clouds, sharing mapped clouds
/// and projections between terms. Clouds are addressed by list position.
template <typename T, PairMapper<T> Mapper>
class LossContext {
 public:
  using Var = ad::Var<T>;

  LossContext(ad::Tape<T>& tape, Mapper& mapper, std::vector<const LossCloud<T>*> clouds)
      : tape_(&tape), mapper_(&mapper), clouds_(std::move(clouds)) {
    const std::size_t n = clouds_.size();
    mapped_.resize(n * n);
    projections_.resize(n * n);
    constants_.resize(n);
  }

  ad::Tape<T>& tape() const { return *tape_; }
  const LossCloud<T>& cloud(std::size_t i) const { return *clouds_.at(i); }

  /// f_{X_i, X_j}(X_i).
  Var mapped(std::size_t i, std::size_t j) {
    auto& slot = mapped_[i * clouds_.size() + j];
    if (!slot) slot = mapper_->map(*tape_, cloud(i), cloud(j));
    return *slot;
  }

  Var points(std::size_t i) {
    auto& slot = constants_[i];
    if (!slot) slot = tape_->constant(cloud(i).points);
    return *slot;
  }

  /// π_{X_j}(f_{X_i,X_j}(p)) for every p in X_i, as indices into X_j.
  const ad::Index& projection(std::size_t i, std::size_t j) {
    auto& slot = projections_[i * clouds_.size() + j];
    if (!slot) {
      ad::Index idx = cloud(j).tree.nearest_indices(Points<T>(mapped(i, j).value()));
      if (auto* log = tape_->decisions()) log->exchange(idx);
      slot = std::move(idx);
    }
    return *slot;
  }

  /// Ch(f_{X_i,X_j}(X_i), X_j): mean over points q of X_j of the distance to
  /// the nearest deformed point.
  Var chamfer(std::size_t i, std::size_t j) {
    const Var deformed = mapped(i, j);
    const KdTree<T> tree{Points<T>(deformed.value())};
    ad::Index idx = tree.nearest_indices(Points<T>(cloud(j).points));
    if (auto* log = tape_->decisions()) log->exchange(idx);
    return mean_distance(ad::select_rows(deformed, std::move(idx)), points(j));
  }

  /// Per-part variant: each target point only searches deformed source points
  /// carrying its label, or the whole deformed source when none does.
  Var chamfer_per_part(std::size_t i, std::size_t j) {
    const Labels& src = cloud(i).labels;
    const Labels& tgt = cloud(j).labels;
    if (src.empty() || tgt.empty()) throw LabelSpaceMismatch("per-part Chamfer needs labels on both clouds");
    const Var deformed = mapped(i, j);
    const Points<T> def_pts(deformed.value());
    std::map<int, std::vector<std::uint32_t>> rows_of;
    for (std::size_t r = 0; r < src.size(); ++r) rows_of[src[r]].push_back(static_cast<std::uint32_t>(r));
    std::map<int, KdTree<T>> trees;
    const KdTree<T> whole(def_pts);
    ad::Index idx(tgt.size());
    const auto& q = cloud(j).points;
    for (std::size_t r = 0; r < tgt.size(); ++r) {
      const auto rows = rows_of.find(tgt[r]);
      if (rows == rows_of.end()) {
        idx[r] = static_cast<std::uint32_t>(whole.nearest(q.row(static_cast<Eigen::Index>(r)).data()).index);
        continue;
      }
      auto tree = trees.find(tgt[r]);
      if (tree == trees.end()) {
        Points<T> sub(static_cast<Eigen::Index>(rows->second.size()), 3);
        for (std::size_t k = 0; k < rows->second.size(); ++k)
          sub.row(static_cast<Eigen::Index>(k)) = def_pts.row(rows->second[k]);
        tree = trees.emplace(tgt[r], KdTree<T>(std::move(sub))).first;
      }
      idx[r] = rows->second[tree->second.nearest(q.row(static_cast<Eigen::Index>(r)).data()).index];
    }
    if (auto* log = tape_->decisions()) log->exchange(idx);
    return mean_distance(ad::select_rows(deformed, std::move(idx)), points(j));
  }

  /// Cy2(X_i, X_j) = mean_p |p - f_{j,i}(π_j(f_{i,j}(p)))|.
  Var cy2(std::size_t i, std::size_t j) {
    // f_{j,i} is pointwise, so its value at a point of X_j is the matching row of f_{j,i}(X_j).
    return mean_distance(points(i), ad::select_rows(mapped(j, i), projection(i, j)));
  }

  /// Cy3(X_i, X_j, X_k) = mean_p |p - f_{k,i}(π_k(f_{j,k}(π_j(f_{i,j}(p)))))|.
  Var cy3(std::size_t i, std::size_t j, std::size_t k) {
    const ad::Index& first = projection(i, j);
    const ad::Index& second = projection(j, k);
    ad::Index composed(first.size());
    for (std::size_t r = 0; r < first.size(); ++r) composed[r] = second[first[r]];
    return mean_distance(points(i), ad::select_rows(mapped(k, i), std::move(composed)));
  }

  /// SR(X_i, ψ) with X_s = ψ(X_i) row-aligned: mean_p |f_{i,s}(p) - ψ(p)|.
  Var self_reconstruction(std::size_t i, std::size_t s) {
    if (cloud(i).size() != cloud(s).size()) throw LengthMismatch("self-reconstruction target must align with source");
    return mean_distance(mapped(i, s), points(s));
  }

 private:
  static Var mean_distance(const Var& a, const Var& b) { return ad::mean(ad::euclid_norm_rows(ad::sub(a, b))); }

  ad::Tape<T>* tape_;
  Mapper* mapper_;
  std::vector<const LossCloud<T>*> clouds_;
  std::vector<std::optional<Var>> mapped_;
  std::vector<std::optional<ad::Index>> projections_;
  std::vector<std::optional<Var>> constants_;
};

/// Sum of terms and how many went in.
template <typename T>
struct LossSum {
  ad::Var<T> value;
  int terms = 0;
};

template <typename T>
ad::Var<T> add_all(const std::vector<ad::Var<T>>& terms) {
  ad::Var<T> acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = ad::add(acc, terms[i]);
  return acc;
}

// The triplet (A, B, C) occupies positions 0, 1, 2 of a context.
inline constexpr std::array<std::array<std::size_t, 3>, 6> kTripletPermutations{
    {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};

inline constexpr std::array<std::array<std::size_t, 2>, 3> kTripletPairs{{{0, 1}, {0, 2}, {1, 2}}};

template <typename T>
struct CycleSums {
  LossSum<T> two;
  LossSum<T> three;
  int terms() const { return two.terms + three.terms; }
};

/// Cycle terms over every ordering (X, Y, Z) of the triplet: Cy2(X, Y) + Cy3(X, Y, Z).
template <typename T, typename Mapper>
CycleSums<T> l_cy_terms(LossContext<T, Mapper>& ctx) {
  std::vector<ad::Var<T>> two, three;
  for (const auto& p : kTripletPermutations) {
    two.push_back(ctx.cy2(p[0], p[1]));
    three.push_back(ctx.cy3(p[0], p[1], p[2]));
  }
  return {{add_all(two), static_cast<int>(two.size())}, {add_all(three), static_cast<int>(three.size())}};
}

template <typename T, typename Mapper>
LossSum<T> l_cy(LossContext<T, Mapper>& ctx) {
  auto sums = l_cy_terms(ctx);
  return {ad::add(sums.two.value, sums.three.value), sums.terms()};
}

/// Asymmetric Chamfer in both directions for each unordered pair.
template <typename T, typename Mapper>
LossSum<T> l_ch(LossContext<T, Mapper>& ctx, bool per_part = false) {
  std::vector<ad::Var<T>> terms;
  for (const auto& p : kTripletPairs) {
    if (per_part) {
      terms.push_back(ctx.chamfer_per_part(p[0], p[1]));
      terms.push_back(ctx.chamfer_per_part(p[1], p[0]));
    } else {
      terms.push_back(ctx.chamfer(p[0], p[1]));
      terms.push_back(ctx.chamfer(p[1], p[0]));
    }
  }
  return {add_all(terms), static_cast<int>(terms.size())};
}

template <typename T, typename Mapper>
LossSum<T> l_ch_perpart(LossContext<T, Mapper>& ctx) {
  return l_ch(ctx, true);
}

/// SR over the triplet; positions 3, 4, 5 hold ψ(A), ψ'(B), ψ''(C).
template <typename T, typename Mapper>
LossSum<T> l_sr(LossContext<T, Mapper>& ctx) {
  std::vector<ad::Var<T>> terms;
  for (std::size_t i = 0; i < 3; ++i) terms.push_back(ctx.self_reconstruction(i, i + 3));
  return {add_all(terms), 3};
}

struct LossWeights {
  double lambda_cy = 1.0;  // +inf keeps only the cycle terms
  int sr_cutoff_epoch = 30;
  bool per_part_chamfer = false;

  bool cycle_only() const { return std::isinf(lambda_cy); }
  bool sr_active(int epoch) const { return !cycle_only() && epoch < sr_cutoff_epoch; }
};

struct LossReport {
  double l_ch = 0, l_cy2 = 0, l_cy3 = 0, l_sr = 0, l_total = 0;
  bool sr_active = false;
  bool cycle_only = false;

  double l_cy() const { return l_cy2 + l_cy3; }

  LossReport& operator+=(const LossReport& o) {
    l_ch += o.l_ch;
    l_cy2 += o.l_cy2;
    l_cy3 += o.l_cy3;
    l_sr += o.l_sr;
    l_total += o.l_total;
    return *this;
  }
  LossReport& operator/=(double d) {
    l_ch /= d;
    l_cy2 /= d;
    l_cy3 /= d;
    l_sr /= d;
    l_total /= d;
    return *this;
  }
};

template <typename T>
struct TotalLoss {
  ad::Var<T> value;
  LossReport report;
};

/// L_total = L_Ch + λ·L_Cy + [epoch < cutoff]·L_SR, or L_Cy alone when λ = ∞.
/// The context must hold A, B, C at 0..2 and, while SR is active, the
/// self-reconstruction targets at 3..5.
template <typename T, typename Mapper>
TotalLoss<T> l_total(LossContext<T, Mapper>& ctx, int epoch, const LossWeights& w) {
  if (!(w.lambda_cy >= 0)) throw InvalidArgument("lambda_cy must be >= 0");
  TotalLoss<T> out;
  const auto ch = l_ch(ctx, w.per_part_chamfer);
  const auto cy = l_cy_terms(ctx);
  const ad::Var<T> cy_sum = ad::add(cy.two.value, cy.three.value);
  out.report.l_ch = static_cast<double>(ch.value.scalar());
  out.report.l_cy2 = static_cast<double>(cy.two.value.scalar());
  out.report.l_cy3 = static_cast<double>(cy.three.value.scalar());
  out.report.cycle_only = w.cycle_only();
  out.report.sr_active = w.sr_active(epoch);

  if (w.cycle_only()) {
    out.value = cy_sum;
  } else {
    out.value = w.lambda_cy == 0 ? ch.value : ad::add(ch.value, ad::scale(cy_sum, static_cast<T>(w.lambda_cy)));
    if (out.report.sr_active) {
      const auto sr = l_sr(ctx);
      out.report.l_sr = static_cast<double>(sr.value.scalar());
      out.value = ad::add(out.value, sr.value);
    }
  }
  out.report.l_total = static_cast<double>(out.value.scalar());
  return out;
}

}  // namespace cycledeform
