#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <utility>
#include <vector>

#include "ntklab/common.hpp"
#include "ntklab/net.hpp"
#include "ntklab/numkit.hpp"
#include "ntklab/rng.hpp"
#include "ntklab/trainer.hpp"

namespace ntklab {

/// Sampling plan for the region probes: pairs of points drawn from the
/// ball of radius `radius` around a center.
struct RegionProbeConfig {
  double radius = 1.0;
  Index n_pairs = 200;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(radius > 0.0) || !std::isfinite(radius))
      throw Error("RegionProbeConfig: radius must be positive and finite");
    if (n_pairs < 1) throw Error("RegionProbeConfig: n_pairs must be >= 1");
  }
};

/// Result of probe_descent. gamma_hat is empty when no sampled pair had a
/// strictly lower value at phi (the NoQualifyingPairs case).
struct DescentProbe {
  std::optional<double> gamma_hat;
  Index qualifying_pairs = 0;
};

/// Result of pl_check: the empirical PL constant (minimum of
/// 0.5 ||grad||^2 / gap over snapshot steps with a meaningful gap) and the
/// number of steps where the inequality failed.
struct PlCheck {
  double mu_emp = std::numeric_limits<double>::infinity();
  Index violations = 0;
  Index steps_checked = 0;
};

/// Geometric certificate for one run.
struct RegionReport {
  double alpha_hat = 0.0;      ///< sampled curvature bound
  double gamma_hat = 0.0;      ///< sampled descent alignment (NaN when unmeasured)
  double mu_emp = 0.0;         ///< empirical PL constant along the trajectory
  double lambda_min_traj = 0.0;
  double l_smooth_hat = 0.0;
  double loss_region_min = 0.0;
  Index pl_violations = 0;
};

namespace detail {

/// A point uniform in direction, with radius uniform in [0, R]. This
/// overweights the center relative to exact ball volume; the probes are
/// diagnostics and report sampled estimates, not certificates.
inline Vector ball_point(const Vector& center, double radius, CounterRng& rng) {
  Vector dir(center.size());
  for (Index i = 0; i < center.size(); ++i) dir[i] = rng.gaussian();
  const double norm = dir.norm();
  if (norm < 1e-300) return center;
  return center + (radius * rng.uniform() / norm) * dir;
}

}  // namespace detail

/// Smallest alpha >= 0 making
///   L(phi) >= L(theta) + <grad L(theta), phi - theta> - (alpha/2) ||phi - theta||^2
/// hold over sampled pairs in the ball: the max over pairs of
/// 2 [L(theta) + <grad, phi-theta> - L(phi)] / ||phi - theta||^2, clamped at 0.
inline double probe_curvature(const Objective& obj, const Vector& center,
                              const RegionProbeConfig& cfg) {
  cfg.validate();
  CounterRng root(cfg.seed);
  double alpha = 0.0;
  for (Index k = 0; k < cfg.n_pairs; ++k) {
    CounterRng rng = root.fork(static_cast<std::uint64_t>(k));
    const Vector a = detail::ball_point(center, cfg.radius, rng);
    const Vector b = detail::ball_point(center, cfg.radius, rng);
    const Vector d = b - a;
    const double dist_sq = d.squaredNorm();
    if (dist_sq < 1e-300) throw DegeneratePair("probe_curvature: sampled pair coincides");
    const double gap = obj.value(a) + obj.gradient(a).dot(d) - obj.value(b);
    alpha = std::max(alpha, 2.0 * gap / dist_sq);
  }
  return alpha;
}

inline double probe_curvature(const MlpModel& center, const LabeledSet& data,
                              const RegionProbeConfig& cfg) {
  return probe_curvature(mlp_objective(center.arch, data), center.theta, cfg);
}

/// Minimum alignment between the center's gradient and the direction back
/// from an improving sampled point:
///   gamma_hat = min <grad L(theta), theta - phi> / (||phi - theta|| ||grad L(theta)||)
/// over sampled phi with L(phi) < L(theta), theta fixed at the center.
/// Positive gamma_hat means every sampled descent direction has an
/// up-gradient reverse, the alignment a quasi-convex bowl exhibits. Pairs
/// only qualify while ||grad L(theta)|| > 1e-12; with none, the marker
/// (empty gamma_hat) is returned.
inline DescentProbe probe_descent(const Objective& obj, const Vector& center,
                                  const RegionProbeConfig& cfg) {
  cfg.validate();
  CounterRng root(cfg.seed);
  DescentProbe probe;
  const double l_center = obj.value(center);
  const Vector g = obj.gradient(center);
  const double gn = g.norm();
  if (gn <= 1e-12) return probe;
  for (Index k = 0; k < cfg.n_pairs; ++k) {
    CounterRng rng = root.fork(static_cast<std::uint64_t>(k));
    const Vector phi = detail::ball_point(center, cfg.radius, rng);
    if (!(obj.value(phi) < l_center)) continue;
    const Vector d = center - phi;
    const double dn = d.norm();
    if (dn < 1e-300) continue;
    const double cosine = g.dot(d) / (dn * gn);
    probe.gamma_hat = probe.gamma_hat ? std::min(*probe.gamma_hat, cosine) : cosine;
    probe.qualifying_pairs += 1;
  }
  return probe;
}

inline DescentProbe probe_descent(const MlpModel& center, const LabeledSet& data,
                                  const RegionProbeConfig& cfg) {
  return probe_descent(mlp_objective(center.arch, data), center.theta, cfg);
}

/// Verifies 0.5 ||grad L||^2 + slack >= lambda_min (loss - l_region_min) at
/// every step carrying a spectral value, with per-step slack
/// slack_scale * (1 + |loss|). The empirical PL constant is the minimum of
/// 0.5 ||grad||^2 / gap over steps whose gap exceeds 1e-15 (near-zero gaps
/// would only add division noise).
inline PlCheck pl_check(const Trajectory& traj,
                        std::span<const std::pair<Index, double>> lambda_mins,
                        double l_region_min, double slack_scale) {
  if (traj.records.empty()) throw EmptyTrajectory("pl_check: trajectory has no records");
  if (l_region_min > traj.min_loss())
    throw Error("pl_check: l_region_min exceeds the recorded minimum loss");

  constexpr double kGapFloor = 1e-15;
  PlCheck check;
  std::size_t cursor = 0;
  for (const auto& [t, lambda] : lambda_mins) {
    while (cursor < traj.records.size() && traj.records[cursor].t < t) ++cursor;
    if (cursor == traj.records.size() || traj.records[cursor].t != t)
      throw Error("pl_check: no record for snapshot step " + std::to_string(t));
    const StepRecord& rec = traj.records[cursor];
    const double gap = rec.loss - l_region_min;
    const double lhs = 0.5 * rec.grad_norm_sq + slack_scale * (1.0 + std::abs(rec.loss));
    if (lhs < lambda * gap) ++check.violations;
    if (gap > kGapFloor) check.mu_emp = std::min(check.mu_emp, 0.5 * rec.grad_norm_sq / gap);
    ++check.steps_checked;
  }
  if (check.steps_checked == 0) throw EmptyTrajectory("pl_check: no spectral snapshots");
  return check;
}

inline PlCheck pl_check(const Trajectory& traj, double l_region_min, double slack_scale) {
  const auto snaps = traj.spectral_snapshots();
  return pl_check(traj, snaps, l_region_min, slack_scale);
}

/// Local smoothness estimate: the dominant absolute Hessian eigenvalue at
/// theta, from power iteration on central-difference Hessian-vector
/// products (eps = 1e-4 (1 + ||theta||)). Used as the 1/eta step-size
/// reference.
inline double estimate_smoothness(const Objective& obj, const Vector& theta, Index iters,
                                  std::uint64_t seed) {
  const double eps = 1e-4 * (1.0 + theta.norm());
  return power_iter_max(
      [&](const Vector& v) { return hvp(obj, theta, v, eps); }, obj.dim, iters, seed);
}

inline double estimate_smoothness(const MlpModel& model, const LabeledSet& data, Index iters,
                                  std::uint64_t seed) {
  return estimate_smoothness(mlp_objective(model.arch, data), model.theta, iters, seed);
}

/// Flat key=value rendering, one field per line; embedded verbatim in the
/// run summary.
inline std::string region_report_text(const RegionReport& report) {
  std::ostringstream out;
  out << "alpha_hat=" << format_g17(report.alpha_hat) << '\n'
      << "gamma_hat=" << format_g17(report.gamma_hat) << '\n'
      << "mu_emp=" << format_g17(report.mu_emp) << '\n'
      << "lambda_min_traj=" << format_g17(report.lambda_min_traj) << '\n'
      << "l_smooth_hat=" << format_g17(report.l_smooth_hat) << '\n'
      << "loss_region_min=" << format_g17(report.loss_region_min) << '\n'
      << "pl_violations=" << report.pl_violations << '\n';
  return out.str();
}

}  // namespace ntklab
