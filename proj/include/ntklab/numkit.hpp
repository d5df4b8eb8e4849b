#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <utility>
#include <vector>

#include "ntklab/common.hpp"
#include "ntklab/rng.hpp"

namespace ntklab {

/// Full spectrum of a symmetric matrix.
struct SymEigResult {
  Vector eigenvalues;                  ///< ascending
  std::optional<Matrix> eigenvectors;  ///< column i pairs with eigenvalues[i]
};

/// Ordinary least-squares line y = intercept + slope * x.
struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;  ///< in [0, 1]; defined as 1 for a constant target
  Index n_points = 0;
};

namespace detail {

inline double max_abs(const Matrix& a) {
  return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff();
}

/// Frobenius norm of the strict off-diagonal part.
inline double off_diag_norm(const Matrix& a) {
  double s = 0.0;
  for (Index q = 0; q < a.cols(); ++q)
    for (Index p = 0; p < q; ++p) s += a(p, q) * a(p, q);
  return std::sqrt(2.0 * s);
}

}  // namespace detail

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Sweeps the strict upper triangle in row order, annihilating one
/// off-diagonal entry per rotation, until the off-diagonal Frobenius norm
/// falls below 1e-13 of the matrix norm. Convergence is quadratic once the
/// matrix is nearly diagonal; a handful of sweeps suffices even at n = 512.
/// The rotation order is fixed, so identical input bits give identical
/// output bits.
///
/// Throws NonFinite on non-finite entries, NotSymmetric when the asymmetry
/// exceeds 1e-10 of the largest entry, Error on dimension/convergence
/// failures.
template <typename Derived>
SymEigResult sym_eig(const Eigen::MatrixBase<Derived>& a_expr, bool want_vectors = false) {
  Matrix a = a_expr;
  const Index n = a.rows();
  if (n != a.cols()) throw ShapeMismatch("sym_eig: matrix is not square");
  if (n == 0) throw ShapeMismatch("sym_eig: empty matrix");
  if (!a.allFinite()) throw NonFinite("sym_eig: non-finite entry");

  const double scale = detail::max_abs(a);
  const double asym = detail::max_abs(a - a.transpose().eval());
  if (asym > 1e-10 * std::max(scale, 1e-300))
    throw NotSymmetric("sym_eig: asymmetry " + format_g17(asym) + " exceeds tolerance");

  Matrix w = 0.5 * (a + a.transpose().eval());
  Matrix v;
  if (want_vectors) v = Matrix::Identity(n, n);

  const double fro = w.norm();  // rotation invariant
  const double stop = 1e-13 * std::max(fro, 1e-300);

  constexpr int kMaxSweeps = 64;
  int sweep = 0;
  for (; sweep < kMaxSweeps; ++sweep) {
    if (detail::off_diag_norm(w) <= stop) break;
    for (Index p = 0; p + 1 < n; ++p) {
      for (Index q = p + 1; q < n; ++q) {
        const double apq = w(p, q);
        if (std::abs(apq) < 1e-300) {
          w(p, q) = w(q, p) = 0.0;
          continue;
        }
        const double theta = (w(q, q) - w(p, p)) / (2.0 * apq);
        double t;
        if (std::abs(theta) > 1e150) {
          t = 0.5 / theta;  // avoid theta^2 overflow; limit of the exact formula
        } else {
          t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        }
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        const double tau = s / (1.0 + c);

        w(p, p) -= t * apq;
        w(q, q) += t * apq;
        w(p, q) = w(q, p) = 0.0;
        for (Index r = 0; r < n; ++r) {
          if (r == p || r == q) continue;
          const double wrp = w(r, p);
          const double wrq = w(r, q);
          w(r, p) = w(p, r) = wrp - s * (wrq + tau * wrp);
          w(r, q) = w(q, r) = wrq + s * (wrp - tau * wrq);
        }
        if (want_vectors) {
          for (Index r = 0; r < n; ++r) {
            const double vrp = v(r, p);
            const double vrq = v(r, q);
            v(r, p) = vrp - s * (vrq + tau * vrp);
            v(r, q) = vrq + s * (vrp - tau * vrq);
          }
        }
      }
    }
  }
  if (sweep == kMaxSweeps && detail::off_diag_norm(w) > stop)
    throw Error("sym_eig: jacobi iteration did not converge");

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&w](Index i, Index j) { return w(i, i) < w(j, j); });

  SymEigResult result;
  result.eigenvalues.resize(n);
  for (Index i = 0; i < n; ++i) result.eigenvalues[i] = w(order[static_cast<std::size_t>(i)],
                                                          order[static_cast<std::size_t>(i)]);
  if (want_vectors) {
    Matrix sorted(n, n);
    for (Index i = 0; i < n; ++i) sorted.col(i) = v.col(order[static_cast<std::size_t>(i)]);
    result.eigenvectors = std::move(sorted);
  }
  return result;
}

/// Power iteration on a symmetric linear map, returning |lambda| of the
/// dominant eigenvalue via the Rayleigh quotient. The start vector comes
/// from a seeded CounterRng, so the estimate is reproducible.
///
/// `apply` must be callable as Vector(const Vector&) and represent a
/// symmetric operator. Throws ZeroVector if an iterate collapses.
template <typename ApplyFn>
double power_iter_max(ApplyFn&& apply, Index dim, Index iters, std::uint64_t seed) {
  if (dim < 1) throw ShapeMismatch("power_iter_max: dim must be >= 1");
  if (iters < 1) throw Error("power_iter_max: iters must be >= 1");

  CounterRng rng(seed);
  Vector v(dim);
  for (Index i = 0; i < dim; ++i) v[i] = rng.gaussian();
  const double vn = v.norm();
  if (vn < 1e-300) throw ZeroVector("power_iter_max: start vector collapsed");
  v /= vn;

  double rayleigh = 0.0;
  for (Index k = 0; k < iters; ++k) {
    Vector av = apply(v);
    rayleigh = v.dot(av);
    const double norm = av.norm();
    if (norm < 1e-300) throw ZeroVector("power_iter_max: iterate collapsed");
    v = av / norm;
  }
  return std::abs(rayleigh);
}

/// Least-squares line fit. Throws DegenerateX when the xs carry no
/// variance, ShapeMismatch on length disagreement, NonFinite on bad input.
inline LineFit fit_line(const Eigen::Ref<const Vector>& xs, const Eigen::Ref<const Vector>& ys) {
  const Index n = xs.size();
  if (n != ys.size()) throw ShapeMismatch("fit_line: xs and ys lengths differ");
  if (n < 2) throw ShapeMismatch("fit_line: need at least 2 points");
  if (!xs.allFinite() || !ys.allFinite()) throw NonFinite("fit_line: non-finite input");

  const double mx = xs.mean();
  const double my = ys.mean();
  const Vector dx = xs.array() - mx;
  const Vector dy = ys.array() - my;
  const double sxx = dx.squaredNorm();
  if (sxx / static_cast<double>(n) < 1e-300)
    throw DegenerateX("fit_line: xs variance below 1e-300");

  LineFit fit;
  fit.n_points = n;
  fit.slope = dx.dot(dy) / sxx;
  fit.intercept = my - fit.slope * mx;
  const double ss_tot = dy.squaredNorm();
  const double ss_res = (ys - (fit.intercept + fit.slope * xs.array()).matrix()).squaredNorm();
  fit.r_squared = ss_tot < 1e-300 ? 1.0 : std::clamp(1.0 - ss_res / ss_tot, 0.0, 1.0);
  return fit;
}

}  // namespace ntklab
