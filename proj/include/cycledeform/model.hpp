#pragma once

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cycledeform/autodiff.hpp"
#include "cycledeform/geometry.hpp"

namespace cycledeform {

/// Layer sizes of the learnable mapping. The default is the full-size
/// network; `toy(w)` shrinks every hidden width to w for fast checks.
struct Architecture {
  std::vector<int> encoder_widths{3, 64, 128, 512};  // per-point MLP, input first
  int predictor_hidden = 512;
  int deform_width = 64;
  int modules = 7;

  static Architecture toy(int width) {
    Architecture a;
    a.encoder_widths = {3, width, width, width};
    a.predictor_hidden = width;
    a.deform_width = width;
    return a;
  }

  int latent() const { return encoder_widths.back(); }
  int encoder_layers() const { return static_cast<int>(encoder_widths.size()) - 1; }

  int module_in(int k) const { return k == 0 ? 3 : deform_width; }
  int module_out(int k) const { return k == modules - 1 ? 3 : deform_width; }

  /// Length of the flattened per-pair parameter vector [s_1, b_1, ..., s_K, b_K].
  int pair_param_count() const {
    int n = 0;
    for (int k = 0; k < modules; ++k) n += 2 * module_in(k);
    return n;
  }

  std::vector<int> descriptor() const {
    std::vector<int> d{static_cast<int>(encoder_widths.size())};
    d.insert(d.end(), encoder_widths.begin(), encoder_widths.end());
    d.push_back(predictor_hidden);
    d.push_back(deform_width);
    d.push_back(modules);
    return d;
  }

  static Architecture from_descriptor(const std::vector<int>& d) {
    if (d.empty() || d[0] < 2 || d.size() != static_cast<std::size_t>(d[0]) + 4)
      throw InvalidArgument("malformed architecture descriptor");
    Architecture a;
    a.encoder_widths.assign(d.begin() + 1, d.begin() + 1 + d[0]);
    a.predictor_hidden = d[static_cast<std::size_t>(d[0]) + 1];
    a.deform_width = d[static_cast<std::size_t>(d[0]) + 2];
    a.modules = d[static_cast<std::size_t>(d[0]) + 3];
    a.validate();
    return a;
  }

  void validate() const {
    if (encoder_widths.size() < 2 || encoder_widths.front() != 3) throw InvalidArgument("encoder must start at 3");
    for (int w : encoder_widths)
      if (w < 1) throw InvalidArgument("encoder widths must be positive");
    if (predictor_hidden < 1 || deform_width < 1 || modules < 2)
      throw InvalidArgument("predictor width, deformation width must be positive and modules >= 2");
  }

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// All learnable tensors in a fixed declaration order:
/// encoder A (W, b per layer), encoder B, predictor (W, b per layer),
/// deformation matrices W_1..W_K (bias-free).
template <typename T>
class Model {
 public:
  using Tensor = ad::Tensor<T>;

  Model() : Model(Architecture{}) {}

  explicit Model(Architecture arch) : arch_(std::move(arch)) {
    arch_.validate();
    for (int slot = 0; slot < 2; ++slot)
      for (int l = 0; l < arch_.encoder_layers(); ++l) {
        add(arch_.encoder_widths[l + 1], arch_.encoder_widths[l]);
        add(1, arch_.encoder_widths[l + 1]);
      }
    add(arch_.predictor_hidden, 2 * arch_.latent());
    add(1, arch_.predictor_hidden);
    add(arch_.pair_param_count(), arch_.predictor_hidden);
    add(1, arch_.pair_param_count());
    for (int k = 0; k < arch_.modules; ++k) add(arch_.module_out(k), arch_.module_in(k));
  }

  /// Fan-balanced uniform weights and zero biases, except that the output
  /// bias of the predictor starts every scale s_k at 1. With all scales near
  /// zero the seven modules would multiply the input signal away and the map
  /// would begin (and stay) constant.
  static Model initialized(Architecture arch, std::uint64_t seed) {
    Model m(std::move(arch));
    std::mt19937_64 rng(seed);
    for (auto& t : m.tensors_) {
      if (t.rows() == 1) continue;
      const double bound = std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<T>(u(rng));
    }
    Tensor& out_bias = m.tensors_[m.predictor_offset() + 3];
    Eigen::Index at = 0;
    for (int k = 0; k < m.arch_.modules; ++k) {
      const int d = m.arch_.module_in(k);
      out_bias.middleCols(at, d).setOnes();
      at += 2 * d;
    }
    return m;
  }

  const Architecture& architecture() const noexcept { return arch_; }
  std::vector<Tensor>& tensors() noexcept { return tensors_; }
  const std::vector<Tensor>& tensors() const noexcept { return tensors_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += static_cast<std::size_t>(t.size());
    return n;
  }

  // Offsets into tensors().
  std::size_t encoder_offset(int slot) const { return static_cast<std::size_t>(slot * 2 * arch_.encoder_layers()); }
  std::size_t predictor_offset() const { return encoder_offset(2); }
  std::size_t deform_offset() const { return predictor_offset() + 4; }

  template <typename U>
  Model<U> cast() const {
    Model<U> out(arch_);
    for (std::size_t i = 0; i < tensors_.size(); ++i) out.tensors()[i] = tensors_[i].template cast<U>();
    return out;
  }

 private:
  void add(int rows, int cols) { tensors_.push_back(Tensor::Zero(rows, cols)); }

  Architecture arch_;
  std::vector<Tensor> tensors_;
};

/// Per-pair scale and bias vectors, one pair per deformation module.
template <typename T>
struct PairParams {
  std::vector<ad::Var<T>> scale;
  std::vector<ad::Var<T>> bias;
};

/// Model tensors placed on a tape, either as trainable leaves or constants.
template <typename T>
class BoundModel {
 public:
  BoundModel(const Model<T>& model, ad::Tape<T>& tape, bool trainable) : model_(&model), tape_(&tape) {
    vars_.reserve(model.tensors().size());
    for (const auto& t : model.tensors()) vars_.push_back(trainable ? tape.parameter(t) : tape.constant(t));
  }

  /// Uses existing tape nodes, one per model tensor, in declaration order.
  BoundModel(const Model<T>& model, ad::Tape<T>& tape, std::vector<ad::Var<T>> vars)
      : model_(&model), tape_(&tape), vars_(std::move(vars)) {
    if (vars_.size() != model.tensors().size()) throw ShapeMismatch("one tape node per model tensor expected");
  }

  const Model<T>& model() const { return *model_; }
  const Architecture& architecture() const { return model_->architecture(); }
  ad::Tape<T>& tape() const { return *tape_; }
  const std::vector<ad::Var<T>>& vars() const { return vars_; }
  const ad::Var<T>& var(std::size_t i) const { return vars_[i]; }

 private:
  const Model<T>* model_;
  ad::Tape<T>* tape_;
  std::vector<ad::Var<T>> vars_;
};

/// PointNet trunk: shared per-point MLP with ReLU, then a max over points.
/// slot 0 encodes the source of a pair, slot 1 the target.
template <typename T>
ad::Var<T> encode(const BoundModel<T>& m, int slot, const ad::Var<T>& points) {
  if (points.cols() != 3) throw ShapeMismatch("encode expects n x 3 points");
  const std::size_t off = m.model().encoder_offset(slot);
  const int layers = m.architecture().encoder_layers();
  ad::Var<T> h = points;
  for (int l = 0; l + 1 < layers; ++l)
    h = ad::relu(ad::linear(h, m.var(off + 2 * l), m.var(off + 2 * l + 1)));
  // ReLU commutes with the max, so it is applied after pooling.
  const std::size_t last = off + 2 * static_cast<std::size_t>(layers - 1);
  return ad::relu(ad::max_pool_linear(h, m.var(last), m.var(last + 1)));
}

template <typename T>
ad::Var<T> predict_flat_params(const BoundModel<T>& m, const ad::Var<T>& v_source, const ad::Var<T>& v_target) {
  const int latent = m.architecture().latent();
  if (v_source.cols() != latent || v_target.cols() != latent || v_source.rows() != 1 || v_target.rows() != 1)
    throw ShapeMismatch("predict_params expects two 1 x " + std::to_string(latent) + " encodings");
  const std::size_t off = m.model().predictor_offset();
  ad::Var<T> h = ad::relu(ad::linear(ad::concat(v_source, v_target), m.var(off), m.var(off + 1)));
  return ad::linear(h, m.var(off + 2), m.var(off + 3));
}

template <typename T>
PairParams<T> split_pair_params(const Architecture& arch, const ad::Var<T>& flat) {
  if (flat.rows() != 1 || flat.cols() != arch.pair_param_count())
    throw ShapeMismatch("pair parameter vector must be 1 x " + std::to_string(arch.pair_param_count()));
  PairParams<T> p;
  Eigen::Index at = 0;
  for (int k = 0; k < arch.modules; ++k) {
    const int d = arch.module_in(k);
    p.scale.push_back(ad::slice_cols(flat, at, d));
    p.bias.push_back(ad::slice_cols(flat, at + d, d));
    at += 2 * d;
  }
  return p;
}

template <typename T>
PairParams<T> predict_params(const BoundModel<T>& m, const ad::Var<T>& v_source, const ad::Var<T>& v_target) {
  return split_pair_params(m.architecture(), predict_flat_params(m, v_source, v_target));
}

/// Deformation network: x_k = act_k(W_k (s_k ⊙ x_{k-1} + b_k)), ReLU on all
/// modules but the last, which uses tanh.
template <typename T>
ad::Var<T> deform(const BoundModel<T>& m, const PairParams<T>& params, const ad::Var<T>& points) {
  const Architecture& arch = m.architecture();
  if (points.cols() != 3) throw ShapeMismatch("deform expects n x 3 points");
  if (params.scale.size() != static_cast<std::size_t>(arch.modules)) throw ShapeMismatch("wrong module count");
  const std::size_t off = m.model().deform_offset();
  ad::Var<T> x = points;
  for (int k = 0; k < arch.modules; ++k) {
    ad::Var<T> z = ad::linear(ad::hadamard_affine(x, params.scale[k], params.bias[k]), m.var(off + k));
    x = k + 1 < arch.modules ? ad::relu(z) : ad::tanh_act(z);
  }
  return x;
}

/// f_{source,target}(source): row i of the result is the image of source point i.
template <typename T>
ad::Var<T> map_cloud(const BoundModel<T>& m, const ad::Var<T>& source, const ad::Var<T>& target) {
  const auto params = predict_params(m, encode(m, 0, source), encode(m, 1, target));
  return deform(m, params, source);
}

/// Inference-only mapping between two clouds.
template <typename T>
PointCloud map(const Model<T>& model, const PointCloud& source, const PointCloud& target) {
  ad::Tape<T> tape;
  BoundModel<T> bound(model, tape, false);
  const auto out = map_cloud(bound, tape.constant(source.as<T>()), tape.constant(target.as<T>()));
  return PointCloud(Points<double>(out.value().template cast<double>()));
}

/// Encoding of a cloud by the encoder in `slot`, as doubles.
template <typename T>
Eigen::VectorXd encoding(const Model<T>& model, const PointCloud& cloud, int slot = 0) {
  ad::Tape<T> tape;
  BoundModel<T> bound(model, tape, false);
  const auto v = encode(bound, slot, tape.constant(cloud.as<T>()));
  return v.value().row(0).transpose().template cast<double>();
}

}  // namespace cycledeform
