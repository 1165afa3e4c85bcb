#pragma once

// Few-shot label transfer: rank labeled sources for a target, deform the
// chosen sources onto it and vote per target point.

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "cycledeform/chamfer.hpp"
#include "cycledeform/icp.hpp"
#include "cycledeform/losses.hpp"
#include "cycledeform/miou.hpp"
#include "cycledeform/model.hpp"

namespace cycledeform {

enum class Criterion { NearestNeighbor, DeformationDistance, CosineDistance, CycleConsistency };

inline constexpr Criterion kAllCriteria[] = {Criterion::NearestNeighbor, Criterion::DeformationDistance,
                                             Criterion::CosineDistance, Criterion::CycleConsistency};

inline std::string to_string(Criterion c) {
  switch (c) {
    case Criterion::NearestNeighbor: return "nn";
    case Criterion::DeformationDistance: return "deformation";
    case Criterion::CosineDistance: return "cosine";
    case Criterion::CycleConsistency: return "cycle";
  }
  return "?";
}

inline Criterion parse_criterion(const std::string& s) {
  for (Criterion c : kAllCriteria)
    if (to_string(c) == s) return c;
  throw InvalidArgument("unknown criterion '" + s + "' (nn, deformation, cosine, cycle)");
}

/// A pairwise mapping usable for transfer: `map(S, T)` returns f_{S,T}(S)
/// with row i the image of source point i.
template <typename D>
concept Deformer = requires(const D& d, const PointCloud& c) {
  { d.map(c, c) } -> std::convertible_to<PointCloud>;
};

/// Learned deformation backed by a trained model.
template <typename T>
class ModelDeformer {
 public:
  explicit ModelDeformer(const Model<T>& model) : model_(&model) {}

  PointCloud map(const PointCloud& source, const PointCloud& target) const { return cycledeform::map(*model_, source, target); }

  /// Slot-0 (source-side) encoding, used for both shapes of a cosine comparison.
  Eigen::VectorXd encode(const PointCloud& cloud) const { return encoding(*model_, cloud, 0); }

 private:
  const Model<T>* model_;
};

/// f_{S,T}(p) = p.
struct IdentityDeformer {
  PointCloud map(const PointCloud& source, const PointCloud&) const { return source; }
};

struct SourceShape {
  std::size_t id = 0;
  LabeledPointCloud shape;
};

struct SourceScore {
  std::size_t id = 0;
  Criterion criterion = Criterion::NearestNeighbor;
  double score = 0;  // lower is better
};

/// Cy2(S, T) computed from the mapping alone.
template <Deformer D>
double cycle_residual(const D& deformer, const PointCloud& s, const PointCloud& t) {
  const PointCloud forward = deformer.map(s, t);
  const PointCloud backward = deformer.map(t, s);
  const KdTree<double> tree(t);
  double sum = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto j = tree.nearest(forward.matrix().row(static_cast<Eigen::Index>(i)).data()).index;
    sum += (s.point(i) - backward.point(j)).norm();
  }
  return sum / static_cast<double>(s.size());
}

inline double cosine_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0 || nb == 0) return a == b ? 0.0 : 1.0;
  return 1.0 - a.dot(b) / (na * nb);
}

template <Deformer D>
double score_source(const D& deformer, const LabeledPointCloud& source, const PointCloud& target, Criterion c) {
  switch (c) {
    case Criterion::NearestNeighbor: return chamfer_sym(source.cloud(), target);
    case Criterion::DeformationDistance: return chamfer_sym(deformer.map(source.cloud(), target), target);
    case Criterion::CosineDistance:
      if constexpr (requires { deformer.encode(target); }) {
        return cosine_distance(deformer.encode(source.cloud()), deformer.encode(target));
      } else {
        throw InvalidArgument("cosine criterion needs a deformer with an encoder");
      }
    case Criterion::CycleConsistency: return cycle_residual(deformer, source.cloud(), target);
  }
  throw InvalidArgument("unknown criterion");
}

/// The k best sources for `target`, ascending score, equal scores by id.
template <Deformer D>
std::vector<SourceScore> select_sources(const D& deformer, const std::vector<SourceShape>& pool,
                                        const PointCloud& target, Criterion c, std::size_t k) {
  if (k < 1) throw InvalidArgument("k must be >= 1");
  std::vector<SourceScore> scores;
  scores.reserve(pool.size());
  for (const auto& s : pool) scores.push_back({s.id, c, score_source(deformer, s.shape, target, c)});
  std::sort(scores.begin(), scores.end(),
            [](const SourceScore& a, const SourceScore& b) { return std::tie(a.score, a.id) < std::tie(b.score, b.id); });
  scores.resize(std::min(k, scores.size()));
  return scores;
}

/// Each target point takes the label of its nearest point in `carrier`,
/// whose rows carry `labels` index-wise.
inline Labels nearest_labels(const PointCloud& carrier, const Labels& labels, const PointCloud& target) {
  if (carrier.size() != labels.size()) throw LengthMismatch("carrier cloud and labels differ in length");
  const KdTree<double> tree(carrier);
  Labels out(target.size());
  for (std::size_t i = 0; i < target.size(); ++i)
    out[i] = labels[tree.nearest(target.matrix().row(static_cast<Eigen::Index>(i)).data()).index];
  return out;
}

template <Deformer D>
Labels transfer_labels(const D& deformer, const LabeledPointCloud& source, const PointCloud& target) {
  return nearest_labels(deformer.map(source.cloud(), target), source.labels(), target);
}

inline Labels identity_baseline(const LabeledPointCloud& source, const PointCloud& target) {
  return nearest_labels(source.cloud(), source.labels(), target);
}

inline Labels icp_baseline(const LabeledPointCloud& source, const PointCloud& target, const IcpOptions& opt = {}) {
  return nearest_labels(icp_align(source.cloud(), target, opt).aligned, source.labels(), target);
}

/// Plurality vote per point; ties go to the smallest label.
inline Labels plurality_vote(const std::vector<Labels>& votes, int part_count) {
  if (votes.empty()) throw InvalidArgument("nothing to vote on");
  const std::size_t n = votes.front().size();
  Labels out(n);
  std::vector<int> tally(static_cast<std::size_t>(part_count));
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(tally.begin(), tally.end(), 0);
    for (const auto& v : votes) {
      if (v.size() != n) throw LengthMismatch("votes differ in length");
      ++tally[static_cast<std::size_t>(v[i])];
    }
    out[i] = static_cast<int>(std::max_element(tally.begin(), tally.end()) - tally.begin());
  }
  return out;
}

template <Deformer D>
Labels vote_labels(const D& deformer, const std::vector<LabeledPointCloud>& sources, const PointCloud& target) {
  if (sources.empty()) throw InvalidArgument("vote_labels needs at least one source");
  const int parts = sources.front().part_count();
  std::vector<Labels> votes;
  for (const auto& s : sources) {
    if (s.part_count() != parts) throw LabelSpaceMismatch("voting sources have different part counts");
    votes.push_back(transfer_labels(deformer, s, target));
  }
  return plurality_vote(votes, parts);
}

/// How labels move from one source to a target.
enum class Method { Ours, Identity, Icp };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::Ours: return "ours";
    case Method::Identity: return "identity";
    case Method::Icp: return "icp";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "ours") return Method::Ours;
  if (s == "identity") return Method::Identity;
  if (s == "icp") return Method::Icp;
  throw InvalidArgument("unknown method '" + s + "' (ours, identity, icp)");
}

template <Deformer D>
Labels transfer_with(Method m, const D& deformer, const LabeledPointCloud& source, const PointCloud& target) {
  switch (m) {
    case Method::Ours: return transfer_labels(deformer, source, target);
    case Method::Identity: return identity_baseline(source, target);
    case Method::Icp: return icp_baseline(source, target);
  }
  throw InvalidArgument("unknown method");
}

struct OracleChoice {
  std::size_t id = 0;
  double miou = 0;
  Labels labels;
};

/// Evaluation-only: the source whose transfer best matches ground truth.
template <Deformer D>
OracleChoice oracle_select(const D& deformer, const std::vector<SourceShape>& pool, const PointCloud& target,
                           const Labels& gt, Method method = Method::Ours) {
  if (pool.empty()) throw InvalidArgument("oracle selection needs a non-empty pool");
  std::optional<OracleChoice> best;
  for (const auto& s : pool) {
    Labels pred = transfer_with(method, deformer, s.shape, target);
    const double m = miou(pred, gt, s.shape.part_count());
    if (!best || m > best->miou || (m == best->miou && s.id < best->id)) best = OracleChoice{s.id, m, std::move(pred)};
  }
  return *best;
}

/// Source choice for a few-shot run: a criterion or the ground-truth oracle.
struct Selection {
  std::optional<Criterion> criterion = Criterion::NearestNeighbor;  // empty: oracle

  static Selection oracle() { return Selection{std::nullopt}; }
  static Selection parse(const std::string& s) { return s == "oracle" ? oracle() : Selection{parse_criterion(s)}; }
  std::string name() const { return criterion ? to_string(*criterion) : "oracle"; }
};

struct FewShotOptions {
  std::size_t shots = 10;
  std::size_t votes = 1;  // k best sources voting
  Selection selection;
  Method method = Method::Ours;
  int threads = 1;
};

struct FewShotRun {
  std::uint64_t seed = 0;
  std::vector<std::size_t> shot_ids;
  std::vector<double> per_target_miou;
  std::vector<Labels> predictions;
  double mean_miou = 0;
};

/// Draws `shots` distinct labeled shapes with `seed`.
inline std::vector<std::size_t> sample_shots(std::size_t available, std::size_t shots, std::uint64_t seed) {
  if (shots < 1 || shots > available) throw InvalidArgument("cannot draw " + std::to_string(shots) + " shots from " +
                                                          std::to_string(available) + " labeled shapes");
  std::vector<std::size_t> ids(available);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(shots);
  std::sort(ids.begin(), ids.end());
  return ids;
}

/// Labels for one target given a pool of labeled sources.
template <Deformer D>
Labels predict_target(const D& deformer, const std::vector<SourceShape>& pool, const LabeledPointCloud& target,
                      const FewShotOptions& opt) {
  if (!opt.selection.criterion) return oracle_select(deformer, pool, target.cloud(), target.labels(), opt.method).labels;
  const auto chosen = select_sources(deformer, pool, target.cloud(), *opt.selection.criterion, opt.votes);
  std::vector<Labels> votes;
  for (const auto& c : chosen) {
    const auto it = std::find_if(pool.begin(), pool.end(), [&](const SourceShape& s) { return s.id == c.id; });
    votes.push_back(transfer_with(opt.method, deformer, it->shape, target.cloud()));
  }
  return plurality_vote(votes, target.part_count());
}

/// One few-shot run: sample shots from `labeled`, label every target and
/// score it against its ground truth.
template <Deformer D>
FewShotRun few_shot_run(const D& deformer, const std::vector<LabeledPointCloud>& labeled,
                        const std::vector<LabeledPointCloud>& targets, const FewShotOptions& opt, std::uint64_t seed) {
  FewShotRun run;
  run.seed = seed;
  run.shot_ids = sample_shots(labeled.size(), opt.shots, seed);
  std::vector<SourceShape> pool;
  for (auto id : run.shot_ids) pool.push_back({id, labeled[id]});

  run.predictions.resize(targets.size());
  auto work = [&](std::size_t t) { run.predictions[t] = predict_target(deformer, pool, targets[t], opt); };
  if (opt.threads <= 1) {
    for (std::size_t t = 0; t < targets.size(); ++t) work(t);
  } else {
    std::vector<std::future<void>> jobs;
    for (std::size_t t = 0; t < targets.size(); ++t) {
      jobs.push_back(std::async(std::launch::async, work, t));
      if (jobs.size() >= static_cast<std::size_t>(opt.threads)) {
        for (auto& j : jobs) j.get();
        jobs.clear();
      }
    }
    for (auto& j : jobs) j.get();
  }
  for (std::size_t t = 0; t < targets.size(); ++t)
    run.per_target_miou.push_back(miou(run.predictions[t], targets[t].labels(), targets[t].part_count()));
  run.mean_miou = run.per_target_miou.empty()
                      ? 0.0
                      : std::accumulate(run.per_target_miou.begin(), run.per_target_miou.end(), 0.0) /
                            static_cast<double>(run.per_target_miou.size());
  return run;
}

struct MeanStd {
  double mean = 0;
  double std = 0;  // population standard deviation
};

inline MeanStd mean_std(const std::vector<double>& v) {
  if (v.empty()) return {};
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(v.size()))};
}

}  // namespace cycledeform
