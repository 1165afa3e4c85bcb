#pragma once

// Finite-difference checks of every differentiable op and of the complete
// training objective on a small random triplet.

#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "cycledeform/gradcheck.hpp"
#include "cycledeform/losses.hpp"
#include "cycledeform/model.hpp"

namespace cycledeform {

struct GradCheckCase {
  std::string name;
  ad::GradCheckReport report;
  double tolerance = 0;
};

struct GradCheckSuiteOptions {
  std::uint64_t seed = 0;
  double op_tolerance = 1e-6;
  double loss_tolerance = 1e-3;
  int toy_width = 16;
  int triplet_points = 64;
  double step = 1e-4;
};

namespace detail {

inline ad::Tensor<double> random_tensor(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  ad::Tensor<double> t(r, c);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = u(rng);
  return t;
}

inline PointCloud random_cloud(std::mt19937_64& rng, int n) {
  return PointCloud(Points<double>(random_tensor(rng, n, 3)));
}

}  // namespace detail

/// One case per op. Each wraps the op as sum |op(x) + C|^2 with a fixed
/// random C so that no gradient entry is trivially symmetric.
inline std::vector<GradCheckCase> op_gradcheck_suite(const GradCheckSuiteOptions& o = {}) {
  using V = ad::Var<double>;
  using Fn = std::function<V(ad::Tape<double>&, const std::vector<V>&)>;
  std::mt19937_64 rng(o.seed);
  auto R = [&](Eigen::Index r, Eigen::Index c) { return detail::random_tensor(rng, r, c); };

  struct Spec {
    std::string name;
    std::vector<ad::Tensor<double>> params;
    Fn f;
  };
  auto wrap = [&](Fn inner, Eigen::Index r, Eigen::Index c) {
    auto offset = std::make_shared<ad::Tensor<double>>(R(r, c));
    return Fn([inner, offset](ad::Tape<double>& t, const std::vector<V>& p) {
      return ad::sum_sq_norm(ad::add(inner(t, p), t.constant(*offset)));
    });
  };

  ad::Index rows{4, 0, 4, 2, 2, 1};
  std::vector<Spec> specs;
  specs.push_back({"linear", {R(5, 4), R(3, 4), R(1, 3)},
                   wrap([](auto&, const auto& p) { return ad::linear(p[0], p[1], p[2]); }, 5, 3)});
  specs.push_back({"linear_nobias", {R(5, 4), R(3, 4)},
                   wrap([](auto&, const auto& p) { return ad::linear(p[0], p[1]); }, 5, 3)});
  specs.push_back({"hadamard_affine", {R(5, 4), R(1, 4), R(1, 4)},
                   wrap([](auto&, const auto& p) { return ad::hadamard_affine(p[0], p[1], p[2]); }, 5, 4)});
  specs.push_back({"relu", {R(6, 3)}, wrap([](auto&, const auto& p) { return ad::relu(p[0]); }, 6, 3)});
  specs.push_back({"tanh", {R(6, 3)}, wrap([](auto&, const auto& p) { return ad::tanh_act(p[0]); }, 6, 3)});
  specs.push_back({"max_pool_points", {R(7, 4)},
                   wrap([](auto&, const auto& p) { return ad::max_pool_points(p[0]); }, 1, 4)});
  specs.push_back({"max_pool_linear", {R(7, 4), R(5, 4), R(1, 5)},
                   wrap([](auto&, const auto& p) { return ad::max_pool_linear(p[0], p[1], p[2]); }, 1, 5)});
  specs.push_back({"concat", {R(3, 2), R(3, 4)}, wrap([](auto&, const auto& p) { return ad::concat(p[0], p[1]); }, 3, 6)});
  specs.push_back({"slice_cols", {R(3, 6)}, wrap([](auto&, const auto& p) { return ad::slice_cols(p[0], 1, 3); }, 3, 3)});
  specs.push_back({"add", {R(3, 4), R(3, 4)}, wrap([](auto&, const auto& p) { return ad::add(p[0], p[1]); }, 3, 4)});
  specs.push_back({"sub", {R(3, 4), R(3, 4)}, wrap([](auto&, const auto& p) { return ad::sub(p[0], p[1]); }, 3, 4)});
  specs.push_back({"scale", {R(3, 4)}, wrap([](auto&, const auto& p) { return ad::scale(p[0], -1.7); }, 3, 4)});
  specs.push_back({"sum", {R(3, 4)}, wrap([](auto&, const auto& p) { return ad::sum(p[0]); }, 1, 1)});
  specs.push_back({"mean", {R(3, 4)}, wrap([](auto&, const auto& p) { return ad::mean(p[0]); }, 1, 1)});
  specs.push_back({"sum_sq_norm", {R(3, 4)}, [](auto&, const auto& p) { return ad::sum_sq_norm(p[0]); }});
  specs.push_back({"euclid_norm_rows", {R(5, 3)},
                   wrap([](auto&, const auto& p) { return ad::euclid_norm_rows(p[0]); }, 5, 1)});
  specs.push_back({"select_rows", {R(5, 3)},
                   wrap([rows](auto&, const auto& p) { return ad::select_rows(p[0], rows); }, 6, 3)});

  std::vector<GradCheckCase> out;
  for (auto& s : specs) {
    ad::GradCheckOptions opt;
    opt.step = o.step;
    opt.tol_rel = o.op_tolerance;
    out.push_back({s.name, ad::grad_check(s.f, s.params, opt), o.op_tolerance});
  }
  return out;
}

/// L_total of a random triplet (with self-reconstruction targets) through a
/// toy-width model, differentiated with respect to every model tensor.
inline GradCheckCase loss_gradcheck(const GradCheckSuiteOptions& o = {}) {
  std::mt19937_64 rng(o.seed + 1);
  Model<double> model = Model<double>::initialized(Architecture::toy(o.toy_width), o.seed);
  for (auto& t : model.tensors())
    if (t.rows() == 1) t = detail::random_tensor(rng, 1, t.cols(), -0.1, 0.1);

  std::vector<LossCloud<double>> clouds;
  std::vector<PointCloud> base;
  for (int s = 0; s < 3; ++s) {
    base.push_back(detail::random_cloud(rng, o.triplet_points));
    clouds.push_back(LossCloud<double>::make(s, base.back()));
  }
  for (int s = 0; s < 3; ++s)
    clouds.push_back(LossCloud<double>::make(
        3 + s, apply_augmentation(base[static_cast<std::size_t>(s)], AugmentationTransform::sample(rng, false))));

  auto f = [&](ad::Tape<double>& tape, const std::vector<ad::Var<double>>& vars) {
    BoundModel<double> bound(model, tape, vars);
    ModelMapper<double> mapper(bound);
    std::vector<const LossCloud<double>*> ptrs;
    for (const auto& c : clouds) ptrs.push_back(&c);
    LossContext<double, ModelMapper<double>> ctx(tape, mapper, ptrs);
    return l_total(ctx, 0, LossWeights{}).value;
  };
  ad::GradCheckOptions opt;
  opt.step = o.step;
  opt.tol_rel = o.loss_tolerance;
  opt.roundoff_factor = 1e4;
  return {"l_total", ad::grad_check(f, model.tensors(), opt), o.loss_tolerance};
}

}  // namespace cycledeform
