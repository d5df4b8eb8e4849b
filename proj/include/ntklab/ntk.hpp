#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <utility>
#include <vector>

#include "ntklab/common.hpp"
#include "ntklab/net.hpp"
#include "ntklab/numkit.hpp"

namespace ntklab {

enum class NtkMode { Materialized, Blockwise };

struct NtkOptions {
  NtkMode mode = NtkMode::Materialized;
  Index block = 32;                          ///< row-block size in blockwise mode
  std::uint64_t byte_cap = std::uint64_t{1} << 31;  ///< Jacobian budget, materialized mode
  bool keep_matrix = true;                   ///< retain the n x n kernel in the report
};

/// The empirical kernel at one parameter point: extreme eigenvalues, the
/// Frobenius norm, and optionally the n x n matrix itself.
struct NtkReport {
  Index n = 0;
  double lambda_min = 0.0;
  double lambda_max = 0.0;
  double frob_norm = 0.0;
  std::optional<Matrix> theta_matrix;
};

/// Kernel movement between parameter snapshots: per-pair Frobenius
/// distance over parameter distance, whose maximum is the empirical
/// Lipschitz estimate.
struct DriftStat {
  struct Entry {
    double ntk_dist = 0.0;    ///< ||K_a - K_b||_F
    double param_dist = 0.0;  ///< ||theta_a - theta_b||_2
    double ratio = 0.0;
  };
  Index pairs = 0;
  double max_ratio = 0.0;
  double mean_ratio = 0.0;
  std::vector<Entry> ratios;
};

namespace detail {

/// Fills kernel entries for the row blocks [ai, ai+ar) x [bi, bi+br) from
/// Jacobian blocks, one explicit row dot per entry. Both build modes go
/// through this, so they produce bit-identical kernels.
inline void fill_kernel_block(Matrix& k, const RowMatrix& ja, Index ai,
                              const RowMatrix& jb, Index bi, double inv_n) {
  for (Index i = 0; i < ja.rows(); ++i) {
    for (Index j = 0; j < jb.rows(); ++j) {
      const Index gi = ai + i;
      const Index gj = bi + j;
      if (gi > gj) continue;  // fill upper triangle, mirror below
      const double v = inv_n * ja.row(i).dot(jb.row(j));
      k(gi, gj) = v;
      k(gj, gi) = v;
    }
  }
}

}  // namespace detail

/// Builds the empirical kernel K_ij = (1/n) <grad_theta f(x_i), grad_theta f(x_j)>
/// and its spectrum. Materialized mode forms the full n x p Jacobian
/// (refused with BudgetExceeded above options.byte_cap); blockwise mode
/// streams row blocks and never holds more than two of them. Entries are
/// computed the same way in both modes, so they agree exactly.
inline NtkReport build_ntk(const MlpArch& arch, const Eigen::Ref<const Vector>& theta,
                           const LabeledSet& data, const NtkOptions& options = {}) {
  data.validate();
  const Index n = data.n();
  const Index p = arch.param_count();
  const double inv_n = 1.0 / static_cast<double>(n);

  Matrix kernel(n, n);
  if (options.mode == NtkMode::Materialized) {
    const std::uint64_t bytes =
        static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(p) * sizeof(double);
    if (bytes > options.byte_cap)
      throw BudgetExceeded("build_ntk: jacobian needs " + std::to_string(bytes) +
                           " bytes, cap is " + std::to_string(options.byte_cap));
    const RowMatrix j = per_sample_grads(arch, theta, data, 0, n);
    detail::fill_kernel_block(kernel, j, 0, j, 0, inv_n);
  } else {
    const Index block = std::max<Index>(1, options.block);
    for (Index ai = 0; ai < n; ai += block) {
      const Index ar = std::min(block, n - ai);
      const RowMatrix ja = per_sample_grads(arch, theta, data, ai, ai + ar);
      detail::fill_kernel_block(kernel, ja, ai, ja, ai, inv_n);
      for (Index bi = ai + ar; bi < n; bi += block) {
        const Index br = std::min(block, n - bi);
        const RowMatrix jb = per_sample_grads(arch, theta, data, bi, bi + br);
        detail::fill_kernel_block(kernel, ja, ai, jb, bi, inv_n);
      }
    }
  }

  const SymEigResult eig = sym_eig(kernel, false);
  NtkReport report;
  report.n = n;
  report.lambda_min = eig.eigenvalues[0];
  report.lambda_max = eig.eigenvalues[n - 1];
  report.frob_norm = kernel.norm();
  if (options.keep_matrix) report.theta_matrix = std::move(kernel);
  return report;
}

inline NtkReport build_ntk(const MlpModel& model, const LabeledSet& data,
                           const NtkOptions& options = {}) {
  return build_ntk(model.arch, model.theta, data, options);
}

/// Upper bound on the suboptimality gap at the point the report was built:
/// ||grad L||^2 / (2 lambda_min). Requires a strictly positive smallest
/// eigenvalue.
inline double suboptimality_bound(const NtkReport& report, double grad_norm_sq) {
  if (report.lambda_min <= 1e-12)
    throw NonPositiveEigenvalue("suboptimality_bound: lambda_min " +
                                format_g17(report.lambda_min) + " is not positive");
  return grad_norm_sq / (2.0 * report.lambda_min);
}

/// Kernel drift over a parameter trajectory. Ratios are taken over
/// consecutive snapshot pairs plus (first, last); max_ratio is the
/// empirical Lipschitz constant of the kernel map on those pairs.
inline DriftStat drift(const std::vector<std::pair<Vector, NtkReport>>& snapshots) {
  if (snapshots.size() < 2) throw Error("drift: need at least two snapshots");
  for (const auto& [theta, report] : snapshots)
    if (!report.theta_matrix) throw Error("drift: snapshot lacks a materialized kernel");

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t k = 0; k + 1 < snapshots.size(); ++k) pairs.emplace_back(k, k + 1);
  if (snapshots.size() > 2) pairs.emplace_back(0, snapshots.size() - 1);

  DriftStat stat;
  double sum = 0.0;
  for (const auto& [a, b] : pairs) {
    DriftStat::Entry e;
    e.param_dist = (snapshots[a].first - snapshots[b].first).norm();
    if (e.param_dist < 1e-300)
      throw IdenticalParams("drift: snapshot parameters coincide");
    e.ntk_dist = (*snapshots[a].second.theta_matrix - *snapshots[b].second.theta_matrix).norm();
    e.ratio = e.ntk_dist / e.param_dist;
    sum += e.ratio;
    stat.max_ratio = std::max(stat.max_ratio, e.ratio);
    stat.ratios.push_back(e);
  }
  stat.pairs = static_cast<Index>(pairs.size());
  stat.mean_ratio = sum / static_cast<double>(pairs.size());
  return stat;
}

/// Writes the kernel as row-major CSV, 17 significant digits, LF endings.
inline void write_ntk_csv(const Matrix& kernel, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_ntk_csv: cannot open " + path);
  for (Index i = 0; i < kernel.rows(); ++i) {
    for (Index j = 0; j < kernel.cols(); ++j) {
      if (j) out << ',';
      out << format_g17(kernel(i, j));
    }
    out << '\n';
  }
  if (!out) throw IoError("write_ntk_csv: write failed for " + path);
}

}  // namespace ntklab
