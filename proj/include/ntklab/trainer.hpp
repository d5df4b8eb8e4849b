#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "ntklab/common.hpp"
#include "ntklab/net.hpp"
#include "ntklab/rng.hpp"

namespace ntklab {

enum class EtaPolicy { Fixed, OneOverL };

/// Mini-batch settings; size 0 selects full-batch descent.
struct BatchMode {
  Index size = 0;
  std::uint64_t shuffle_seed = 0;

  bool full() const { return size == 0; }
  bool operator==(const BatchMode&) const = default;
};

struct TrainConfig {
  double eta = 1e-3;
  Index t_max = 500;
  BatchMode batch{};
  Index snapshot_every = 0;  ///< steps between spectral snapshots, 0 = never
  EtaPolicy eta_policy = EtaPolicy::Fixed;

  bool operator==(const TrainConfig&) const = default;
};

struct StepRecord {
  Index t = 0;
  double loss = 0.0;
  double grad_norm_sq = 0.0;
  double dist_from_init = 0.0;
  std::optional<double> lambda_min;  ///< spectral snapshot, when taken
};

/// One full run: the per-step records (record 0 is the pre-update state),
/// both endpoint parameter vectors, and parameter snapshots taken on the
/// same cadence as the spectral ones.
struct Trajectory {
  std::vector<StepRecord> records;
  Vector theta_init;
  Vector theta_final;
  TrainConfig config;
  bool diverged = false;
  std::vector<std::pair<Index, Vector>> theta_snapshots;

  double min_loss() const {
    if (records.empty()) throw EmptyTrajectory("trajectory has no records");
    double m = records.front().loss;
    for (const auto& r : records) m = std::min(m, r.loss);
    return m;
  }

  /// (t, lambda_min) pairs for the steps that carried a spectral snapshot.
  std::vector<std::pair<Index, double>> spectral_snapshots() const {
    std::vector<std::pair<Index, double>> out;
    for (const auto& r : records)
      if (r.lambda_min) out.emplace_back(r.t, *r.lambda_min);
    return out;
  }
};

/// Callback computing lambda_min of the kernel at (step, theta).
using SpectrumFn = std::function<double(Index, const Vector&)>;
/// Gradient of the loss restricted to the given sample rows.
using BatchGradFn = std::function<Vector(const Vector&, std::span<const Index>)>;

/// Gradient descent theta <- theta - eta * grad. Full-batch loss, squared
/// gradient norm and distance from init are recorded every step in both
/// batch modes; mini-batch mode only changes the update direction. A loss
/// above 1e6 x the initial loss or a non-finite loss stops the run and
/// marks the trajectory diverged instead of throwing.
inline Trajectory run_gd(const Objective& obj, const Vector& theta0, const TrainConfig& cfg,
                         const SpectrumFn& spectrum = {}, const BatchGradFn& batch_grad = {},
                         Index data_n = 0) {
  if (!(cfg.eta > 0.0)) throw Error("run_gd: eta must be positive");
  if (cfg.t_max < 1) throw Error("run_gd: t_max must be >= 1");
  if (!cfg.batch.full() && (!batch_grad || data_n < 1))
    throw Error("run_gd: mini-batch mode needs a batch gradient and a sample count");

  Trajectory traj;
  traj.theta_init = theta0;
  traj.config = cfg;
  traj.records.reserve(static_cast<std::size_t>(cfg.t_max) + 1);

  Vector theta = theta0;
  double loss0 = 0.0;

  // mini-batch bookkeeping: a seeded Fisher-Yates shuffle per epoch
  std::vector<Index> order;
  std::size_t cursor = 0;
  CounterRng shuffle_rng(cfg.batch.shuffle_seed);
  auto reshuffle = [&] {
    order.resize(static_cast<std::size_t>(data_n));
    std::iota(order.begin(), order.end(), Index{0});
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.next_u64() % i]);
    cursor = 0;
  };
  if (!cfg.batch.full()) reshuffle();

  for (Index t = 0; t <= cfg.t_max; ++t) {
    const Vector g = obj.gradient(theta);
    const double l = obj.value(theta);
    if (t == 0) loss0 = l;

    StepRecord rec;
    rec.t = t;
    rec.loss = l;
    rec.grad_norm_sq = g.squaredNorm();
    rec.dist_from_init = (theta - theta0).norm();
    if (!std::isfinite(l) || !std::isfinite(rec.grad_norm_sq)) {
      traj.diverged = true;  // records stay finite; the flag carries the news
      break;
    }
    const bool snapshot = cfg.snapshot_every > 0 && t % cfg.snapshot_every == 0;
    if (snapshot) {
      if (spectrum) rec.lambda_min = spectrum(t, theta);
      traj.theta_snapshots.emplace_back(t, theta);
    }
    traj.records.push_back(rec);

    if (l > 1e6 * loss0) {
      traj.diverged = true;
      break;
    }
    if (t == cfg.t_max) break;

    if (cfg.batch.full()) {
      theta -= cfg.eta * g;
    } else {
      if (cursor >= order.size()) reshuffle();
      const std::size_t take =
          std::min<std::size_t>(static_cast<std::size_t>(cfg.batch.size), order.size() - cursor);
      std::span<const Index> rows(order.data() + cursor, take);
      cursor += take;
      theta -= cfg.eta * batch_grad(theta, rows);
    }
  }

  if (traj.records.empty())
    throw NonFinite("run_gd: objective is non-finite at the initial point");
  traj.theta_final = std::move(theta);
  return traj;
}

/// MLP front end: wires the batch gradient and returns the trained model
/// alongside the trajectory.
inline std::pair<MlpModel, Trajectory> run_gd(const MlpModel& model, const LabeledSet& data,
                                              const TrainConfig& cfg,
                                              const SpectrumFn& spectrum = {}) {
  const Objective obj = mlp_objective(model.arch, data);
  BatchGradFn batch_grad;
  if (!cfg.batch.full()) {
    const MlpArch arch = model.arch;
    auto owned = std::make_shared<const LabeledSet>(data);
    batch_grad = [arch, owned](const Vector& theta, std::span<const Index> rows) {
      LabeledSet sub;
      sub.x.resize(static_cast<Index>(rows.size()), owned->x.cols());
      sub.y.resize(static_cast<Index>(rows.size()));
      for (Index i = 0; i < static_cast<Index>(rows.size()); ++i) {
        sub.x.row(i) = owned->x.row(rows[static_cast<std::size_t>(i)]);
        sub.y[i] = owned->y[rows[static_cast<std::size_t>(i)]];
      }
      return grad(arch, theta, sub);
    };
  }
  Trajectory traj = run_gd(obj, model.theta, cfg, spectrum, batch_grad, data.n());
  return {MlpModel{model.arch, traj.theta_final}, std::move(traj)};
}

/// Counts steps breaking the smooth-descent inequality
///   L(t+1) <= L(t) - eta (1 - eta L / 2) ||grad L(t)||^2
/// (at eta = 1/L this is the classical 1/(2L) form) with slack
/// 1e-9 (1 + |loss|) per step. Full-batch trajectories only.
inline Index descent_lemma_check(const Trajectory& traj, double l_smooth_hat) {
  if (traj.records.empty()) throw EmptyTrajectory("descent_lemma_check: no records");
  if (!traj.config.batch.full())
    throw Error("descent_lemma_check: requires a full-batch trajectory");
  const double eta = traj.config.eta;
  if (eta > (1.0 + 1e-9) / l_smooth_hat)
    throw Error("descent_lemma_check: eta exceeds 1 / l_smooth_hat");

  Index violations = 0;
  for (std::size_t k = 0; k + 1 < traj.records.size(); ++k) {
    const auto& a = traj.records[k];
    const auto& b = traj.records[k + 1];
    const double bound = a.loss - eta * (1.0 - eta * l_smooth_hat / 2.0) * a.grad_norm_sq;
    if (b.loss > bound + 1e-9 * (1.0 + std::abs(a.loss))) ++violations;
  }
  return violations;
}

/// Trajectory CSV: `t,loss,grad_norm_sq,dist_from_init,lambda_min` with an
/// empty last field on steps without a snapshot. 17 significant digits,
/// LF endings.
inline void write_trajectory_csv(const Trajectory& traj, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_trajectory_csv: cannot open " + path);
  out << "t,loss,grad_norm_sq,dist_from_init,lambda_min\n";
  for (const auto& r : traj.records) {
    out << r.t << ',' << format_g17(r.loss) << ',' << format_g17(r.grad_norm_sq) << ','
        << format_g17(r.dist_from_init) << ',';
    if (r.lambda_min) out << format_g17(*r.lambda_min);
    out << '\n';
  }
  if (!out) throw IoError("write_trajectory_csv: write failed for " + path);
}

}  // namespace ntklab
