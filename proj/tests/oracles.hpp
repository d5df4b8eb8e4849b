#pragma once

// Test-only reference implementations, kept deliberately independent of the
// library's Eigen-based code paths: plain loops over the flat parameter
// layout. The production code is checked against these, never the reverse.

#include <cmath>
#include <cstdint>
#include <vector>

#include "ntklab/net.hpp"

namespace oracles {

using ntklab::Index;
using ntklab::LabeledSet;
using ntklab::Matrix;
using ntklab::MlpArch;
using ntklab::Vector;

/// Straight-loop forward pass for one sample. Also reports the ReLU
/// activation sign pattern and whether any pre-activation sat within
/// `kink_tol` of zero.
struct NaiveForward {
  double out = 0.0;
  std::vector<bool> pattern;
  bool near_kink = false;
};

inline NaiveForward naive_forward_sample(const MlpArch& arch, const Vector& theta,
                                         const Matrix& x, Index row, double kink_tol = 0.0) {
  NaiveForward nf;
  std::vector<double> act(static_cast<std::size_t>(arch.in_dim));
  for (Index j = 0; j < arch.in_dim; ++j) act[static_cast<std::size_t>(j)] = x(row, j);

  if (arch.depth == 2) {
    double s = 0.0;
    for (Index j = 0; j < arch.in_dim; ++j) s += theta[j] * act[static_cast<std::size_t>(j)];
    nf.out = s;
    return nf;
  }

  Index offset = 0;
  Index fan_in = arch.in_dim;
  for (Index l = 0; l < arch.depth; ++l) {
    const bool last = l == arch.depth - 1;
    const Index fan_out = last ? 1 : arch.width;
    std::vector<double> next(static_cast<std::size_t>(fan_out));
    for (Index u = 0; u < fan_out; ++u) {
      double z = 0.0;
      for (Index j = 0; j < fan_in; ++j)
        z += theta[offset + u * fan_in + j] * act[static_cast<std::size_t>(j)];
      if (last) {
        next[static_cast<std::size_t>(u)] = z;
      } else {
        if (std::abs(z) < kink_tol) nf.near_kink = true;
        nf.pattern.push_back(z > 0.0);
        next[static_cast<std::size_t>(u)] = z > 0.0 ? z : 0.0;
      }
    }
    act = std::move(next);
    offset += fan_out * fan_in;
    fan_in = fan_out;
  }
  nf.out = act[0];
  return nf;
}

inline Vector naive_forward(const MlpArch& arch, const Vector& theta, const Matrix& x) {
  Vector out(x.rows());
  for (Index i = 0; i < x.rows(); ++i) out[i] = naive_forward_sample(arch, theta, x, i).out;
  return out;
}

inline double naive_loss(const MlpArch& arch, const Vector& theta, const LabeledSet& data) {
  const Vector f = naive_forward(arch, theta, data.x);
  double s = 0.0;
  for (Index i = 0; i < data.n(); ++i) s += (f[i] - data.y[i]) * (f[i] - data.y[i]);
  return 0.5 * s / static_cast<double>(data.n());
}

/// Central-difference loss gradient with per-coordinate step
/// h_j = 1e-5 (1 + |theta_j|). Coordinate j is marked unusable when the
/// two evaluations disagree on any ReLU sign or sit within 1e-8 of a kink;
/// the analytic gradient is only comparable away from those points.
struct FdGradient {
  Vector grad;
  std::vector<bool> usable;
};

inline FdGradient fd_gradient(const MlpArch& arch, const Vector& theta, const LabeledSet& data) {
  FdGradient fd;
  fd.grad.resize(theta.size());
  fd.usable.assign(static_cast<std::size_t>(theta.size()), true);

  auto eval = [&](const Vector& th, std::vector<bool>& pattern, bool& near) {
    double s = 0.0;
    pattern.clear();
    near = false;
    for (Index i = 0; i < data.n(); ++i) {
      const NaiveForward nf = naive_forward_sample(arch, th, data.x, i, 1e-8);
      near = near || nf.near_kink;
      pattern.insert(pattern.end(), nf.pattern.begin(), nf.pattern.end());
      s += (nf.out - data.y[i]) * (nf.out - data.y[i]);
    }
    return 0.5 * s / static_cast<double>(data.n());
  };

  Vector th = theta;
  std::vector<bool> pat_plus, pat_minus;
  for (Index j = 0; j < theta.size(); ++j) {
    const double h = 1e-5 * (1.0 + std::abs(theta[j]));
    bool near_plus = false, near_minus = false;
    th[j] = theta[j] + h;
    const double lp = eval(th, pat_plus, near_plus);
    th[j] = theta[j] - h;
    const double lm = eval(th, pat_minus, near_minus);
    th[j] = theta[j];
    fd.grad[j] = (lp - lm) / (2.0 * h);
    if (near_plus || near_minus || pat_plus != pat_minus)
      fd.usable[static_cast<std::size_t>(j)] = false;
  }
  return fd;
}

/// Central-difference gradient of one network output (one Jacobian row).
inline Vector fd_output_grad(const MlpArch& arch, const Vector& theta, const Matrix& x,
                             Index row) {
  Vector g(theta.size());
  Vector th = theta;
  for (Index j = 0; j < theta.size(); ++j) {
    const double h = 1e-5 * (1.0 + std::abs(theta[j]));
    th[j] = theta[j] + h;
    const double fp = naive_forward_sample(arch, th, x, row).out;
    th[j] = theta[j] - h;
    const double fm = naive_forward_sample(arch, th, x, row).out;
    th[j] = theta[j];
    g[j] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Dense Hessian from central differences of the analytic gradient.
inline Matrix fd_hessian(const ntklab::Objective& obj, const Vector& theta, double h) {
  Matrix hess(theta.size(), theta.size());
  Vector th = theta;
  for (Index j = 0; j < theta.size(); ++j) {
    th[j] = theta[j] + h;
    const Vector gp = obj.gradient(th);
    th[j] = theta[j] - h;
    const Vector gm = obj.gradient(th);
    th[j] = theta[j];
    hess.col(j) = (gp - gm) / (2.0 * h);
  }
  return 0.5 * (hess + hess.transpose().eval());
}

}  // namespace oracles
