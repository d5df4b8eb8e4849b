#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ntklab/common.hpp"
#include "ntklab/numkit.hpp"
#include "ntklab/trainer.hpp"

namespace ntklab {

/// Semi-log convergence fit: OLS on (t, ln gap_t) past a burn-in window,
/// where gap_t = loss_t - min loss. rate_theory is the per-step log rate
/// implied by the smallest spectral snapshot, -ln(1 - eta lambda_min_traj)
/// (NaN when the trajectory carries no snapshots or the rate leaves (0,1)).
struct RateFit {
  LineFit fit;
  double rate_observed = 0.0;  ///< -slope
  double rate_theory = std::numeric_limits<double>::quiet_NaN();
  Index burn_in = 0;
  Index n_used = 0;
};

/// Log-log fit of squared gradient norm against suboptimality gap. A slope
/// of 1 is the exact PL relation.
struct PlSlopeFit {
  LineFit fit;
  double slope = 0.0;
  Index n_used = 0;
};

struct EnvelopeCheck {
  Index violations = 0;
  double worst_ratio = 0.0;  ///< max over steps of gap_t / envelope_t
};

enum class RunMetric { FinalGap, RateObserved };

namespace detail {

inline double min_snapshot_lambda(const Trajectory& traj) {
  double m = std::numeric_limits<double>::quiet_NaN();
  for (const auto& r : traj.records)
    if (r.lambda_min) m = std::isnan(m) ? *r.lambda_min : std::min(m, *r.lambda_min);
  return m;
}

inline double resolve_gap_floor(const Trajectory& traj, std::optional<double> gap_floor) {
  if (gap_floor) return *gap_floor;
  const double gap0 = traj.records.front().loss - traj.min_loss();
  return 1e-12 * gap0;
}

}  // namespace detail

/// Fits ln(loss_t - L*) against t on records past the burn-in whose gap
/// exceeds the floor (default 1e-12 of the initial gap, which always drops
/// the record attaining the minimum). Throws InsufficientPoints below 10
/// usable records.
inline RateFit rate_fit(const Trajectory& traj, double burn_in_frac = 0.1,
                        std::optional<double> gap_floor = std::nullopt) {
  if (traj.records.empty()) throw EmptyTrajectory("rate_fit: trajectory has no records");
  const double l_min = traj.min_loss();
  const double floor = detail::resolve_gap_floor(traj, gap_floor);
  const Index burn_in = static_cast<Index>(burn_in_frac * static_cast<double>(traj.records.back().t));

  std::vector<double> ts, lgaps;
  for (const auto& r : traj.records) {
    const double gap = r.loss - l_min;
    if (r.t < burn_in || gap <= floor) continue;
    ts.push_back(static_cast<double>(r.t));
    lgaps.push_back(std::log(gap));
  }
  if (ts.size() < 10)
    throw InsufficientPoints("rate_fit: only " + std::to_string(ts.size()) + " usable points");

  RateFit rf;
  rf.fit = fit_line(Eigen::Map<const Vector>(ts.data(), static_cast<Index>(ts.size())),
                    Eigen::Map<const Vector>(lgaps.data(), static_cast<Index>(lgaps.size())));
  rf.rate_observed = -rf.fit.slope;
  rf.burn_in = burn_in;
  rf.n_used = static_cast<Index>(ts.size());
  const double lambda = detail::min_snapshot_lambda(traj);
  const double r = traj.config.eta * lambda;
  if (!std::isnan(lambda) && r > 0.0 && r < 1.0) rf.rate_theory = -std::log1p(-r);
  return rf;
}

/// Fits ln ||grad||^2 against ln gap over all records with gap above the
/// floor and a positive gradient norm.
inline PlSlopeFit pl_slope_fit(const Trajectory& traj,
                               std::optional<double> gap_floor = std::nullopt) {
  if (traj.records.empty()) throw EmptyTrajectory("pl_slope_fit: trajectory has no records");
  const double l_min = traj.min_loss();
  const double floor = detail::resolve_gap_floor(traj, gap_floor);

  std::vector<double> lgaps, lgrads;
  for (const auto& r : traj.records) {
    const double gap = r.loss - l_min;
    if (gap <= floor || r.grad_norm_sq <= 0.0) continue;
    lgaps.push_back(std::log(gap));
    lgrads.push_back(std::log(r.grad_norm_sq));
  }
  if (lgaps.size() < 10)
    throw InsufficientPoints("pl_slope_fit: only " + std::to_string(lgaps.size()) +
                             " usable points");

  PlSlopeFit pf;
  pf.fit = fit_line(Eigen::Map<const Vector>(lgaps.data(), static_cast<Index>(lgaps.size())),
                    Eigen::Map<const Vector>(lgrads.data(), static_cast<Index>(lgrads.size())));
  pf.slope = pf.fit.slope;
  pf.n_used = static_cast<Index>(lgaps.size());
  return pf;
}

/// Checks gap_t <= (1 - eta lambda_min_traj)^t gap_0 (1 + slack) at every
/// recorded step, gaps taken against the trajectory minimum. Throws
/// RateOutOfRange unless 0 < eta lambda_min_traj < 1.
inline EnvelopeCheck envelope_check(const Trajectory& traj, double eta, double lambda_min_traj,
                                    double slack) {
  if (traj.records.empty()) throw EmptyTrajectory("envelope_check: trajectory has no records");
  const double rate = eta * lambda_min_traj;
  if (!(rate > 0.0 && rate < 1.0))
    throw RateOutOfRange("envelope_check: eta * lambda_min = " + format_g17(rate) +
                         " outside (0, 1)");

  const double l_min = traj.min_loss();
  const double gap0 = traj.records.front().loss - l_min;
  EnvelopeCheck check;
  for (const auto& r : traj.records) {
    const double gap = r.loss - l_min;
    const double envelope = std::pow(1.0 - rate, static_cast<double>(r.t)) * gap0;
    if (gap > envelope * (1.0 + slack)) ++check.violations;
    double ratio;
    if (envelope > 0.0) {
      ratio = gap / envelope;
    } else {
      ratio = gap > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
    }
    check.worst_ratio = std::max(check.worst_ratio, ratio);
  }
  return check;
}

/// Ranks labeled runs by a scalar metric, ascending and stably. FinalGap is
/// the final full-batch loss (the gap against the zero floor of an
/// interpolating squared loss); RateObserved comes from rate_fit with
/// default windowing. All runs must share the same step count.
inline std::vector<std::pair<std::string, double>> compare_runs(
    const std::vector<std::pair<std::string, const Trajectory*>>& runs, RunMetric metric) {
  if (runs.size() < 2) throw Error("compare_runs: need at least two runs");
  const Index t_last = runs.front().second->records.back().t;
  for (const auto& [label, traj] : runs) {
    if (traj->records.empty()) throw EmptyTrajectory("compare_runs: empty trajectory");
    if (traj->records.back().t != t_last)
      throw MismatchedLengths("compare_runs: run '" + label + "' has a different step count");
  }

  std::vector<std::pair<std::string, double>> table;
  table.reserve(runs.size());
  for (const auto& [label, traj] : runs) {
    double value = 0.0;
    switch (metric) {
      case RunMetric::FinalGap: value = traj->records.back().loss; break;
      case RunMetric::RateObserved: value = rate_fit(*traj).rate_observed; break;
    }
    table.emplace_back(label, value);
  }
  std::stable_sort(table.begin(), table.end(),
                   [](const auto& a, const auto& b) { return a.second < b.second; });
  return table;
}

/// Centered moving average with a shrinking window at the edges.
inline std::vector<double> moving_average(const std::vector<double>& values, Index window = 11) {
  if (window < 1 || window % 2 == 0) throw Error("moving_average: window must be odd and >= 1");
  const Index n = static_cast<Index>(values.size());
  const Index half = window / 2;
  std::vector<double> out(values.size());
  for (Index i = 0; i < n; ++i) {
    const Index lo = std::max<Index>(0, i - half);
    const Index hi = std::min<Index>(n - 1, i + half);
    double s = 0.0;
    for (Index k = lo; k <= hi; ++k) s += values[static_cast<std::size_t>(k)];
    out[static_cast<std::size_t>(i)] = s / static_cast<double>(hi - lo + 1);
  }
  return out;
}

}  // namespace ntklab
