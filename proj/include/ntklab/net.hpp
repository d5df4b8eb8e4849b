#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "ntklab/common.hpp"
#include "ntklab/rng.hpp"

namespace ntklab {

/// Fully-connected ReLU architecture with a scalar output head and no
/// biases. `depth` counts weight layers: layer 1 maps the input to `width`
/// units, layers 2..depth-1 map width to width, and layer `depth` maps the
/// last hidden layer to the single output. ReLU follows every layer except
/// the last.
///
/// depth == 2 degenerates to the plain linear model f(x) = w^T x with a
/// single weight row of length in_dim (no hidden units, no nonlinearity);
/// the parameter count is in_dim in that case and
/// d*m + (depth-2)*m^2 + m for depth >= 3.
struct MlpArch {
  Index depth = 3;
  Index width = 64;
  Index in_dim = 16;

  void validate() const {
    if (depth < 2) throw ShapeMismatch("MlpArch: depth must be >= 2");
    if (width < 1) throw ShapeMismatch("MlpArch: width must be >= 1");
    if (in_dim < 1) throw ShapeMismatch("MlpArch: in_dim must be >= 1");
  }

  Index weight_layers() const { return depth == 2 ? 1 : depth; }

  /// Shape of weight layer l (0-based) as (rows = fan_out, cols = fan_in).
  std::pair<Index, Index> layer_shape(Index l) const {
    if (depth == 2) return {1, in_dim};
    if (l == 0) return {width, in_dim};
    if (l == depth - 1) return {1, width};
    return {width, width};
  }

  Index param_count() const {
    Index p = 0;
    for (Index l = 0; l < weight_layers(); ++l) {
      const auto [r, c] = layer_shape(l);
      p += r * c;
    }
    return p;
  }

  /// Offset of layer l's block inside the flat parameter vector. Each
  /// block is the weight matrix stored row-major.
  Index layer_offset(Index l) const {
    Index off = 0;
    for (Index k = 0; k < l; ++k) {
      const auto [r, c] = layer_shape(k);
      off += r * c;
    }
    return off;
  }

  bool operator==(const MlpArch&) const = default;
};

/// Architecture plus the flat parameter vector theta (row-major weight
/// matrices concatenated layer by layer).
struct MlpModel {
  MlpArch arch;
  Vector theta;
};

/// Inputs x (n rows of dimension d) with scalar targets y.
struct LabeledSet {
  Matrix x;
  Vector y;

  Index n() const { return x.rows(); }

  void validate() const {
    if (x.rows() != y.size()) throw ShapeMismatch("LabeledSet: row count mismatch");
    if (x.rows() < 1) throw ShapeMismatch("LabeledSet: need at least one sample");
    if (!x.allFinite() || !y.allFinite()) throw NonFinite("LabeledSet: non-finite entry");
  }
};

enum class InitKind { He, EnhancedDepthAware };

struct InitScheme {
  InitKind kind = InitKind::He;
  std::uint64_t seed = 0;
};

/// Depth-aware variance gain g(l, D) = (1 - |D/2 - l| / D)^2 with layers
/// indexed l = 1..D and D/2 kept in real arithmetic.
inline double depth_aware_gain(Index layer_1based, Index depth) {
  const double d = static_cast<double>(depth);
  const double l = static_cast<double>(layer_1based);
  const double f = 1.0 - std::abs(d / 2.0 - l) / d;
  return f * f;
}

namespace detail {

inline Eigen::Map<const RowMatrix> weight_map(const MlpArch& arch,
                                              const Eigen::Ref<const Vector>& theta, Index l) {
  const auto [r, c] = arch.layer_shape(l);
  return Eigen::Map<const RowMatrix>(theta.data() + arch.layer_offset(l), r, c);
}

inline void check_model(const MlpArch& arch, const Eigen::Ref<const Vector>& theta) {
  arch.validate();
  if (theta.size() != arch.param_count())
    throw ShapeMismatch("model: theta length " + std::to_string(theta.size()) +
                        " != param count " + std::to_string(arch.param_count()));
}

/// Activations of one batch: layer(0) is the input block, layer(l) for
/// l >= 1 is ReLU(z_l), and `out` holds the scalar predictions. A ReLU
/// derivative mask is recoverable as act > 0 since the convention here is
/// ReLU'(0) = 0.
struct ForwardPass {
  std::vector<Matrix> layer;
  Vector out;
};

inline ForwardPass forward_pass(const MlpArch& arch, const Eigen::Ref<const Vector>& theta,
                                const Matrix& x) {
  check_model(arch, theta);
  if (x.cols() != arch.in_dim)
    throw ShapeMismatch("forward: input width " + std::to_string(x.cols()) +
                        " != in_dim " + std::to_string(arch.in_dim));

  ForwardPass fp;
  const Index layers = arch.weight_layers();
  fp.layer.reserve(static_cast<std::size_t>(layers));
  fp.layer.push_back(x);
  for (Index l = 0; l + 1 < layers; ++l) {
    const auto w = weight_map(arch, theta, l);
    fp.layer.push_back((fp.layer.back() * w.transpose()).cwiseMax(0.0));
  }
  const auto w_out = weight_map(arch, theta, layers - 1);
  fp.out = fp.layer.back() * w_out.transpose().col(0);
  return fp;
}

}  // namespace detail

/// Draw a model. He: layer-l weights ~ Normal(0, 2 / fan_in). The
/// depth-aware variant multiplies each layer's variance by
/// depth_aware_gain(l, depth). Every layer uses its own forked RNG
/// substream and fills its matrix row-major, so the draw is bit-stable
/// under a fixed seed.
inline MlpModel init_params(const MlpArch& arch, const InitScheme& scheme) {
  arch.validate();
  MlpModel model{arch, Vector(arch.param_count())};
  CounterRng root(scheme.seed);
  for (Index l = 0; l < arch.weight_layers(); ++l) {
    const auto [rows, cols] = arch.layer_shape(l);
    double var = 2.0 / static_cast<double>(cols);
    if (scheme.kind == InitKind::EnhancedDepthAware) var *= depth_aware_gain(l + 1, arch.depth);
    const double sd = std::sqrt(var);
    CounterRng rng = root.fork(static_cast<std::uint64_t>(l));
    double* block = model.theta.data() + arch.layer_offset(l);
    for (Index i = 0; i < rows * cols; ++i) block[i] = sd * rng.gaussian();
  }
  return model;
}

/// Predictions f(x_i) for every row of x.
inline Vector forward(const MlpArch& arch, const Eigen::Ref<const Vector>& theta, const Matrix& x) {
  return detail::forward_pass(arch, theta, x).out;
}

inline Vector forward(const MlpModel& model, const Matrix& x) {
  return forward(model.arch, model.theta, x);
}

/// Mean squared-error loss (1/2n) sum_i (f(x_i) - y_i)^2.
inline double loss(const MlpArch& arch, const Eigen::Ref<const Vector>& theta, const LabeledSet& data) {
  data.validate();
  const Vector f = forward(arch, theta, data.x);
  return 0.5 * (f - data.y).squaredNorm() / static_cast<double>(data.n());
}

inline double loss(const MlpModel& model, const LabeledSet& data) {
  return loss(model.arch, model.theta, data);
}

/// Analytic reverse-mode gradient of loss().
inline Vector grad(const MlpArch& arch, const Eigen::Ref<const Vector>& theta, const LabeledSet& data) {
  data.validate();
  const detail::ForwardPass fp = detail::forward_pass(arch, theta, data.x);
  const Index n = data.n();
  const Index layers = arch.weight_layers();

  Vector g(theta.size());
  // delta holds dL/d(pre-activation of layer l+1), one column per unit
  Matrix delta = (fp.out - data.y) / static_cast<double>(n);
  for (Index l = layers - 1; l >= 0; --l) {
    const auto [rows, cols] = arch.layer_shape(l);
    Eigen::Map<RowMatrix>(g.data() + arch.layer_offset(l), rows, cols).noalias() =
        delta.transpose() * fp.layer[static_cast<std::size_t>(l)];
    if (l > 0) {
      const auto w = detail::weight_map(arch, theta, l);
      delta = (delta * w).cwiseProduct(
          (fp.layer[static_cast<std::size_t>(l)].array() > 0.0).cast<double>().matrix());
    }
  }
  return g;
}

inline Vector grad(const MlpModel& model, const LabeledSet& data) {
  return grad(model.arch, model.theta, data);
}

/// Rows [row_begin, row_end) of the n x p output Jacobian: row i is the
/// parameter gradient of the scalar prediction f(x_i).
inline RowMatrix per_sample_grads(const MlpArch& arch, const Eigen::Ref<const Vector>& theta,
                                  const LabeledSet& data, Index row_begin, Index row_end) {
  data.validate();
  if (row_begin < 0 || row_end > data.n() || row_begin >= row_end)
    throw ShapeMismatch("per_sample_grads: row range out of bounds");

  const Index b = row_end - row_begin;
  const detail::ForwardPass fp =
      detail::forward_pass(arch, theta, data.x.middleRows(row_begin, b));
  const Index layers = arch.weight_layers();

  RowMatrix j(b, theta.size());
  Matrix delta = Matrix::Ones(b, 1);  // d f_i / d z of the output unit
  for (Index l = layers - 1; l >= 0; --l) {
    const auto [rows, cols] = arch.layer_shape(l);
    const Matrix& acts = fp.layer[static_cast<std::size_t>(l)];
    for (Index i = 0; i < b; ++i) {
      Eigen::Map<RowMatrix>(j.row(i).data() + arch.layer_offset(l), rows, cols).noalias() =
          delta.row(i).transpose() * acts.row(i);
    }
    if (l > 0) {
      const auto w = detail::weight_map(arch, theta, l);
      delta = (delta * w).cwiseProduct((acts.array() > 0.0).cast<double>().matrix());
    }
  }
  return j;
}

inline RowMatrix per_sample_grads(const MlpModel& model, const LabeledSet& data,
                                  Index row_begin, Index row_end) {
  return per_sample_grads(model.arch, model.theta, data, row_begin, row_end);
}

/// A differentiable scalar objective over R^p. The training loop, the
/// landscape probes and the smoothness estimator all run against this
/// interface, which keeps them testable on closed-form objectives.
struct Objective {
  Index dim = 0;
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> gradient;
};

inline Objective mlp_objective(const MlpArch& arch, const LabeledSet& data) {
  arch.validate();
  data.validate();
  Objective obj;
  obj.dim = arch.param_count();
  auto owned = std::make_shared<const LabeledSet>(data);
  obj.value = [arch, owned](const Vector& theta) { return loss(arch, theta, *owned); };
  obj.gradient = [arch, owned](const Vector& theta) { return grad(arch, theta, *owned); };
  return obj;
}

/// Quadratic objective 0.5 theta^T A theta with exact gradient A theta;
/// its Hessian is the constant A, which makes it the reference instance
/// for smoothness and convergence machinery.
inline Objective quadratic_objective(Matrix a) {
  if (a.rows() != a.cols()) throw ShapeMismatch("quadratic_objective: matrix not square");
  Objective obj;
  obj.dim = a.rows();
  auto shared = std::make_shared<Matrix>(std::move(a));
  obj.value = [shared](const Vector& t) { return 0.5 * t.dot(*shared * t); };
  obj.gradient = [shared](const Vector& t) { return Vector(*shared * t); };
  return obj;
}

/// Hessian-vector product by central differencing of the analytic
/// gradient along the unit direction of v:
///   H v ~ ||v|| * (grad(theta + eps u) - grad(theta - eps u)) / (2 eps).
inline Vector hvp(const Objective& obj, const Vector& theta, const Vector& v, double eps) {
  const double vn = v.norm();
  if (vn < 1e-300) throw ZeroVector("hvp: direction has zero norm");
  if (!(eps > 0.0)) throw Error("hvp: eps must be positive");
  const Vector u = v / vn;
  const Vector gp = obj.gradient(theta + eps * u);
  const Vector gm = obj.gradient(theta - eps * u);
  return (vn / (2.0 * eps)) * (gp - gm);
}

inline Vector hvp(const MlpModel& model, const LabeledSet& data, const Vector& v, double eps) {
  return hvp(mlp_objective(model.arch, data), model.theta, v, eps);
}

}  // namespace ntklab
