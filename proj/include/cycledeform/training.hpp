#pragma once

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "cycledeform/chamfer.hpp"
#include "cycledeform/config.hpp"
#include "cycledeform/losses.hpp"
#include "cycledeform/model.hpp"

namespace cycledeform {

/// For every shape, its nearest training shapes under symmetric Chamfer,
/// closest first. Self is excluded; equal distances resolve by index.
struct KnnGraph {
  std::vector<std::vector<std::size_t>> neighbors;

  std::size_t size() const { return neighbors.size(); }
};

/// Symmetric Chamfer distance for all pairs; entry (i, j) == (j, i).
inline std::vector<std::vector<double>> pairwise_chamfer(const std::vector<PointCloud>& shapes) {
  const std::size_t n = shapes.size();
  std::vector<KdTree<double>> trees;
  trees.reserve(n);
  for (const auto& s : shapes) trees.emplace_back(s);
  std::vector<std::vector<double>> d(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) d[i][j] = d[j][i] = chamfer_sym(trees[i], shapes[i], trees[j], shapes[j]);
  return d;
}

inline KnnGraph knn_from_distances(const std::vector<std::vector<double>>& d, int k) {
  const std::size_t n = d.size();
  if (n < 2) throw InsufficientShapes("a KNN graph needs at least 2 shapes");
  if (k < 1) throw InvalidArgument("knn k must be >= 1");
  const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(k), n - 1);
  KnnGraph g;
  g.neighbors.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> others;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) others.push_back(j);
    std::partial_sort(others.begin(), others.begin() + static_cast<std::ptrdiff_t>(keep), others.end(),
                      [&](std::size_t a, std::size_t b) { return std::tie(d[i][a], a) < std::tie(d[i][b], b); });
    others.resize(keep);
    g.neighbors[i] = std::move(others);
  }
  return g;
}

inline KnnGraph build_knn_graph(const std::vector<PointCloud>& shapes, int k) {
  if (shapes.size() < 2) throw InsufficientShapes("a KNN graph needs at least 2 shapes");
  return knn_from_distances(pairwise_chamfer(shapes), k);
}

struct Triplet {
  std::size_t a = 0, b = 0, c = 0;
};

/// B and C for anchor `a`: two distinct draws from a's neighbor list, or
/// from all other shapes when `whole_set` is set. With a single candidate
/// B = C.
template <typename Rng>
Triplet sample_partners(const KnnGraph& graph, std::size_t a, Rng& rng, bool whole_set = false) {
  std::vector<std::size_t> pool;
  if (whole_set) {
    for (std::size_t j = 0; j < graph.size(); ++j)
      if (j != a) pool.push_back(j);
  } else {
    pool = graph.neighbors.at(a);
  }
  if (pool.empty()) throw InsufficientShapes("shape has no neighbors to sample from");
  if (pool.size() == 1) return {a, pool[0], pool[0]};
  std::uniform_int_distribution<std::size_t> first(0, pool.size() - 1);
  const std::size_t i = first(rng);
  std::uniform_int_distribution<std::size_t> second(0, pool.size() - 2);
  std::size_t j = second(rng);
  if (j >= i) ++j;
  return {a, pool[i], pool[j]};
}

/// Anchor uniform over the training set, partners from its neighbor list.
template <typename Rng>
Triplet sample_triplet(const KnnGraph& graph, Rng& rng, bool whole_set = false) {
  std::uniform_int_distribution<std::size_t> anchor(0, graph.size() - 1);
  return sample_partners(graph, anchor(rng), rng, whole_set);
}

/// Adam with bias correction.
template <typename T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<ad::Tensor<T>> m, v;

  static AdamState zeros_like(const std::vector<ad::Tensor<T>>& params) {
    AdamState s;
    for (const auto& p : params) {
      s.m.push_back(ad::Tensor<T>::Zero(p.rows(), p.cols()));
      s.v.push_back(ad::Tensor<T>::Zero(p.rows(), p.cols()));
    }
    return s;
  }

  /// One step at rate `lr`, times `rate_scale[i]` for tensor i when given.
  void update(std::vector<ad::Tensor<T>>& params, const std::vector<ad::Tensor<T>>& grads, double lr,
              const std::vector<double>& rate_scale = {}) {
    if (grads.size() != params.size() || m.size() != params.size()) throw ShapeMismatch("Adam state does not match parameters");
    if (!rate_scale.empty() && rate_scale.size() != params.size()) throw ShapeMismatch("one rate scale per tensor expected");
    ++step;
    const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
    const T c1 = static_cast<T>(1.0 - std::pow(beta1, static_cast<double>(step)));
    const T c2 = static_cast<T>(1.0 - std::pow(beta2, static_cast<double>(step)));
    const T e = static_cast<T>(eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const T rate = static_cast<T>(rate_scale.empty() ? lr : lr * rate_scale[i]);
      auto g = grads[i].array();
      m[i].array() = b1 * m[i].array() + (T(1) - b1) * g;
      v[i].array() = b2 * v[i].array() + (T(1) - b2) * g * g;
      params[i].array() -= rate * (m[i].array() / c1) / ((v[i].array() / c2).sqrt() + e);
    }
  }
};

struct EpochStats {
  int epoch = 0;
  LossReport mean;  // averaged over the epoch's triplets
  double lr = 0;
};

/// Serialized training state; every tensor is held in double precision,
/// which represents single-precision values exactly.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  TrainConfig config;
  Architecture architecture;
  int epoch = 0;  // next epoch to run
  std::vector<ad::Tensor<double>> parameters;
  std::uint64_t adam_step = 0;
  std::vector<ad::Tensor<double>> adam_m, adam_v;
  std::string rng_state;

  template <typename T>
  Model<T> model() const {
    Model<T> m(architecture);
    if (parameters.size() != m.tensors().size()) throw CorruptFile("checkpoint tensor count does not match architecture");
    for (std::size_t i = 0; i < parameters.size(); ++i) {
      if (parameters[i].rows() != m.tensors()[i].rows() || parameters[i].cols() != m.tensors()[i].cols())
        throw CorruptFile("checkpoint tensor " + std::to_string(i) + " has the wrong shape");
      m.tensors()[i] = parameters[i].template cast<T>();
    }
    return m;
  }
};

/// One sampled, augmented and resampled training triplet, plus the
/// self-reconstruction targets while that loss is active.
template <typename T>
struct PreparedTriplet {
  Triplet ids;
  std::vector<LossCloud<T>> clouds;
};

template <typename T>
struct TripletGradient {
  std::vector<ad::Tensor<T>> grads;
  LossReport report;
};

/// Loss and parameter gradient of one prepared triplet on a fresh tape.
template <typename T>
TripletGradient<T> triplet_gradient(const Model<T>& model, const PreparedTriplet<T>& t, int epoch, const LossWeights& w) {
  ad::Tape<T> tape;
  BoundModel<T> bound(model, tape, true);
  ModelMapper<T> mapper(bound);
  std::vector<const LossCloud<T>*> ptrs;
  for (const auto& c : t.clouds) ptrs.push_back(&c);
  LossContext<T, ModelMapper<T>> ctx(tape, mapper, std::move(ptrs));
  auto total = l_total(ctx, epoch, w);
  tape.backward(total.value);
  TripletGradient<T> out;
  out.report = total.report;
  out.grads.reserve(bound.vars().size());
  for (const auto& v : bound.vars()) out.grads.push_back(std::move(tape.grad_mut(v.id())));
  return out;
}

/// Epoch loop: each shape anchors one triplet per epoch in shuffled order;
/// triplets are grouped into batches whose averaged gradient drives one
/// Adam step.
template <typename T>
class Trainer {
 public:
  Trainer(TrainConfig cfg, Architecture arch, std::vector<PointCloud> shapes, std::vector<Labels> labels = {})
      : cfg_(std::move(cfg)), shapes_(std::move(shapes)), labels_(std::move(labels)) {
    cfg_.validate();
    check_dataset();
    model_ = Model<T>::initialized(std::move(arch), cfg_.seed);
    adam_ = AdamState<T>::zeros_like(model_.tensors());
    std::seed_seq seq{static_cast<std::uint32_t>(cfg_.seed), static_cast<std::uint32_t>(cfg_.seed >> 32), 0x5eedu};
    rng_.seed(seq);
    graph_ = build_knn_graph(shapes_, cfg_.knn_k);
  }

  /// Continues from a checkpoint; `threads` is a runtime setting and may differ.
  Trainer(const Checkpoint& ck, std::vector<PointCloud> shapes, std::vector<Labels> labels = {}, int threads = 1)
      : cfg_(ck.config), shapes_(std::move(shapes)), labels_(std::move(labels)) {
    cfg_.threads = threads;
    cfg_.validate();
    check_dataset();
    model_ = ck.model<T>();
    adam_.step = ck.adam_step;
    for (const auto& m : ck.adam_m) adam_.m.push_back(m.template cast<T>());
    for (const auto& v : ck.adam_v) adam_.v.push_back(v.template cast<T>());
    if (adam_.m.size() != model_.tensors().size() || adam_.v.size() != model_.tensors().size())
      throw CorruptFile("checkpoint Adam state does not match the model");
    std::istringstream is(ck.rng_state);
    is >> rng_;
    if (!is) throw CorruptFile("unreadable RNG state in checkpoint");
    epoch_ = ck.epoch;
    graph_ = build_knn_graph(shapes_, cfg_.knn_k);
  }

  const TrainConfig& config() const { return cfg_; }
  const Model<T>& model() const { return model_; }
  const KnnGraph& graph() const { return graph_; }
  int epoch() const { return epoch_; }
  bool finished() const { return epoch_ >= cfg_.epochs; }
  const std::vector<EpochStats>& history() const { return history_; }

  EpochStats run_epoch() {
    if (finished()) throw InvalidArgument("training already finished");
    const double lr = cfg_.lr_at(epoch_);
    const LossWeights weights = cfg_.loss_weights();
    const bool sr = weights.sr_active(epoch_);

    std::vector<std::size_t> order(shapes_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng_);

    LossReport sum;
    const auto batch = static_cast<std::size_t>(cfg_.triplets_per_batch);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t count = std::min(batch, order.size() - start);
      std::vector<PreparedTriplet<T>> prepared;
      prepared.reserve(count);
      for (std::size_t t = 0; t < count; ++t) prepared.push_back(prepare(order[start + t], sr));

      std::vector<ad::Tensor<T>> grad_sum;
      auto accumulate = [&](TripletGradient<T>&& g) {
        sum += g.report;
        if (grad_sum.empty()) {
          grad_sum = std::move(g.grads);
        } else {
          for (std::size_t i = 0; i < grad_sum.size(); ++i) grad_sum[i] += g.grads[i];
        }
      };
      try {
        if (cfg_.threads <= 1) {
          for (const auto& p : prepared) accumulate(triplet_gradient(model_, p, epoch_, weights));
        } else {
          // Gradients are reduced in triplet order, so results do not depend on scheduling.
          std::vector<std::future<TripletGradient<T>>> jobs;
          std::size_t next = 0;
          for (std::size_t done = 0; done < prepared.size(); ++done) {
            while (next < prepared.size() && next < done + static_cast<std::size_t>(cfg_.threads)) {
              jobs.push_back(std::async(std::launch::async, [this, &prepared, next, epoch = epoch_, weights] {
                return triplet_gradient(model_, prepared[next], epoch, weights);
              }));
              ++next;
            }
            accumulate(jobs[done].get());
          }
        }
      } catch (const NonFiniteValue& e) {
        std::ostringstream os;
        os << "non-finite loss at epoch " << epoch_ << ", batch starting at " << start << " (anchors";
        for (const auto& p : prepared) os << ' ' << p.ids.a << '/' << p.ids.b << '/' << p.ids.c;
        os << "): " << e.what();
        throw NonFiniteLoss(os.str());
      }
      for (auto& g : grad_sum) g /= static_cast<T>(count);
      adam_.update(model_.tensors(), grad_sum, lr, rate_scales());
    }

    sum /= static_cast<double>(order.size());
    sum.sr_active = sr;
    sum.cycle_only = weights.cycle_only();
    EpochStats stats{epoch_, sum, lr};
    history_.push_back(stats);
    ++epoch_;
    return stats;
  }

  Checkpoint checkpoint() const {
    Checkpoint ck;
    ck.config = cfg_;
    ck.architecture = model_.architecture();
    ck.epoch = epoch_;
    for (const auto& t : model_.tensors()) ck.parameters.push_back(t.template cast<double>());
    ck.adam_step = adam_.step;
    for (const auto& m : adam_.m) ck.adam_m.push_back(m.template cast<double>());
    for (const auto& v : adam_.v) ck.adam_v.push_back(v.template cast<double>());
    std::ostringstream os;
    os << rng_;
    ck.rng_state = os.str();
    return ck;
  }

 private:
  std::vector<double> rate_scales() const {
    std::vector<double> s(model_.tensors().size(), 1.0);
    for (std::size_t i = 0; i < 4; ++i) s[model_.predictor_offset() + i] = cfg_.predictor_lr_scale;
    return s;
  }

  void check_dataset() const {
    if (shapes_.size() < 3) throw InsufficientShapes("training needs at least 3 shapes");
    if (!labels_.empty() && labels_.size() != shapes_.size()) throw LengthMismatch("one label set per shape expected");
    if (cfg_.per_part_chamfer && labels_.empty()) throw LabelSpaceMismatch("per-part Chamfer needs labeled shapes");
  }

  PreparedTriplet<T> prepare(std::size_t anchor, bool sr) {
    PreparedTriplet<T> p;
    p.ids = sample_partners(graph_, anchor, rng_, cfg_.random_triplets);
    const std::size_t ids[3] = {p.ids.a, p.ids.b, p.ids.c};
    std::vector<PointCloud> augmented;
    for (int s = 0; s < 3; ++s) {
      Labels lab;
      const Labels* src_labels = labels_.empty() ? nullptr : &labels_[ids[s]];
      PointCloud cloud = resample(shapes_[ids[s]], static_cast<std::size_t>(cfg_.points_per_cloud), rng_,
                                  src_labels ? &lab : nullptr, src_labels);
      cloud = apply_augmentation(cloud, AugmentationTransform::sample(rng_, true));
      p.clouds.push_back(LossCloud<T>::make(s, cloud, std::move(lab)));
      augmented.push_back(std::move(cloud));
    }
    if (sr) {
      for (int s = 0; s < 3; ++s) {
        const auto psi = AugmentationTransform::sample(rng_, false);
        p.clouds.push_back(LossCloud<T>::make(3 + s, apply_augmentation(augmented[static_cast<std::size_t>(s)], psi)));
      }
    }
    return p;
  }

  TrainConfig cfg_;
  std::vector<PointCloud> shapes_;
  std::vector<Labels> labels_;
  Model<T> model_;
  AdamState<T> adam_;
  std::mt19937_64 rng_;
  KnnGraph graph_;
  int epoch_ = 0;
  std::vector<EpochStats> history_;
};

}  // namespace cycledeform
