#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ntklab/common.hpp"
#include "ntklab/net.hpp"
#include "ntklab/trainer.hpp"

namespace ntklab {

enum class Preset { Convergence, PlVerify, InitCompare, WidthAblation, Custom };
enum class DataSource { Synthetic, Idx };

/// One experiment, as read from a config file. Every run-affecting field
/// lives here; `out` and `dump_ntk` only steer where and how much output
/// lands, and are excluded from the config echo in the summary.
struct ExperimentConfig {
  Preset preset = Preset::Convergence;
  std::uint64_t seed = 5;

  // learner architecture
  Index depth = 3;
  Index width = 64;
  InitKind init = InitKind::He;

  // data
  DataSource data = DataSource::Synthetic;
  Index n = 100;
  Index in_dim = 16;
  Index teacher_depth = 2;
  Index teacher_width = 8;
  double noise_std = 0.0;
  std::string images;
  std::string labels;
  int class_a = 0;
  int class_b = 1;
  Index max_n = 256;

  // training
  EtaPolicy eta_policy = EtaPolicy::OneOverL;
  double eta = 0.0;  ///< used when eta_policy == Fixed
  Index epochs = 500;
  Index batch = 0;  ///< 0 = full batch
  Index snapshot_every = 20;
  Index smoothness_iters = 200;

  // analysis
  double burn_in_frac = 0.1;
  Index probe_pairs = 200;

  // width ablation sweep
  std::vector<Index> widths = {32, 64, 128, 256};

  // output
  std::string out = "out";
  bool dump_ntk = false;

  bool operator==(const ExperimentConfig&) const = default;
};

/// Parses `key = value` lines ('#' comments) or, when the text starts with
/// '{', a flat JSON object with the same keys. Unknown keys and malformed
/// values raise ConfigError.
ExperimentConfig parse_config(const std::string& text);

ExperimentConfig load_config(const std::string& path);

/// Canonical key=value rendering; parse_config(config_text(c)) == c.
std::string config_text(const ExperimentConfig& cfg);

/// The desk-scale default profile, or the full-scale reference profile
/// (depth 5, width 2048, eta 0.001, 250 epochs), as commented config text.
std::string profile_text(bool paper);

/// Runs the preset end to end, writing trajectory.csv, summary.json and
/// the figure CSV/gnuplot files under cfg.out. Returns 0 on success and 2
/// when a run diverges or the preset's gate fails; errors throw.
int run_experiment(const ExperimentConfig& cfg);

}  // namespace ntklab
