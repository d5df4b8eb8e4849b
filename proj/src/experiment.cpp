#include "ntklab/experiment.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ntklab/analysis.hpp"
#include "ntklab/datasets.hpp"
#include "ntklab/landscape.hpp"
#include "ntklab/ntk.hpp"
#include "ntklab/numkit.hpp"
#include "ntklab/rng.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace ntklab {
namespace {

// ---------------------------------------------------------------------------
// config parsing and serialization
// ---------------------------------------------------------------------------

constexpr std::uint64_t kStreamData = 1;
constexpr std::uint64_t kStreamInit = 2;
constexpr std::uint64_t kStreamSmoothness = 3;
constexpr std::uint64_t kStreamCurvatureProbe = 4;
constexpr std::uint64_t kStreamDescentProbe = 5;
constexpr std::uint64_t kStreamShuffle = 6;

std::string trim(const std::string& s) {
  std::size_t a = 0;
  std::size_t b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::string preset_name(Preset p) {
  switch (p) {
    case Preset::Convergence: return "convergence";
    case Preset::PlVerify: return "pl_verify";
    case Preset::InitCompare: return "init_compare";
    case Preset::WidthAblation: return "width_ablation";
    case Preset::Custom: return "custom";
  }
  return "custom";
}

Preset preset_from(const std::string& s) {
  if (s == "convergence") return Preset::Convergence;
  if (s == "pl_verify") return Preset::PlVerify;
  if (s == "init_compare") return Preset::InitCompare;
  if (s == "width_ablation") return Preset::WidthAblation;
  if (s == "custom") return Preset::Custom;
  throw ConfigError("unknown preset '" + s + "'");
}

long long parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected an integer, got '" + value + "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected a number, got '" + value + "'");
  }
}

void set_key(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "preset") {
    cfg.preset = preset_from(value);
  } else if (key == "seed") {
    cfg.seed = static_cast<std::uint64_t>(parse_int(key, value));
  } else if (key == "depth") {
    cfg.depth = parse_int(key, value);
  } else if (key == "width") {
    cfg.width = parse_int(key, value);
  } else if (key == "init") {
    if (value == "he") cfg.init = InitKind::He;
    else if (value == "enhanced") cfg.init = InitKind::EnhancedDepthAware;
    else throw ConfigError("key 'init': expected he|enhanced, got '" + value + "'");
  } else if (key == "data") {
    if (value == "synthetic") cfg.data = DataSource::Synthetic;
    else if (value == "idx") cfg.data = DataSource::Idx;
    else throw ConfigError("key 'data': expected synthetic|idx, got '" + value + "'");
  } else if (key == "n") {
    cfg.n = parse_int(key, value);
  } else if (key == "in_dim") {
    cfg.in_dim = parse_int(key, value);
  } else if (key == "teacher_depth") {
    cfg.teacher_depth = parse_int(key, value);
  } else if (key == "teacher_width") {
    cfg.teacher_width = parse_int(key, value);
  } else if (key == "noise_std") {
    cfg.noise_std = parse_double(key, value);
  } else if (key == "images") {
    cfg.images = value;
  } else if (key == "labels") {
    cfg.labels = value;
  } else if (key == "class_a") {
    cfg.class_a = static_cast<int>(parse_int(key, value));
  } else if (key == "class_b") {
    cfg.class_b = static_cast<int>(parse_int(key, value));
  } else if (key == "max_n") {
    cfg.max_n = parse_int(key, value);
  } else if (key == "eta") {
    if (value == "auto") {
      cfg.eta_policy = EtaPolicy::OneOverL;
      cfg.eta = 0.0;
    } else {
      cfg.eta_policy = EtaPolicy::Fixed;
      cfg.eta = parse_double(key, value);
      if (!(cfg.eta > 0.0)) throw ConfigError("key 'eta': must be positive");
    }
  } else if (key == "epochs") {
    cfg.epochs = parse_int(key, value);
  } else if (key == "batch") {
    cfg.batch = value == "full" ? 0 : parse_int(key, value);
  } else if (key == "snapshot_every") {
    cfg.snapshot_every = parse_int(key, value);
  } else if (key == "smoothness_iters") {
    cfg.smoothness_iters = parse_int(key, value);
  } else if (key == "burn_in_frac") {
    cfg.burn_in_frac = parse_double(key, value);
  } else if (key == "probe_pairs") {
    cfg.probe_pairs = parse_int(key, value);
  } else if (key == "widths") {
    cfg.widths.clear();
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (!item.empty()) cfg.widths.push_back(parse_int(key, item));
    }
    if (cfg.widths.empty()) throw ConfigError("key 'widths': expected a comma-separated list");
  } else if (key == "out") {
    cfg.out = value;
  } else if (key == "dump_ntk") {
    if (value == "1" || value == "true") cfg.dump_ntk = true;
    else if (value == "0" || value == "false") cfg.dump_ntk = false;
    else throw ConfigError("key 'dump_ntk': expected 0|1");
  } else {
    throw ConfigError("unknown key '" + key + "'");
  }
}

ExperimentConfig parse_json_config(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("JSON config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("JSON config: top level must be an object");

  ExperimentConfig cfg;
  for (const auto& [key, value] : j.items()) {
    std::string text_value;
    if (value.is_string()) {
      text_value = value.get<std::string>();
    } else if (value.is_boolean()) {
      text_value = value.get<bool>() ? "1" : "0";
    } else if (value.is_number_integer() || value.is_number_unsigned()) {
      text_value = std::to_string(value.get<long long>());
    } else if (value.is_number_float()) {
      text_value = format_g17(value.get<double>());
    } else if (value.is_array()) {
      std::string joined;
      for (const auto& item : value) {
        if (!item.is_number_integer() && !item.is_number_unsigned())
          throw ConfigError("key '" + key + "': array entries must be integers");
        if (!joined.empty()) joined += ',';
        joined += std::to_string(item.get<long long>());
      }
      text_value = joined;
    } else {
      throw ConfigError("key '" + key + "': unsupported JSON value type");
    }
    set_key(cfg, key, text_value);
  }
  return cfg;
}

void validate(const ExperimentConfig& cfg) {
  if (cfg.depth < 2) throw ConfigError("depth must be >= 2");
  if (cfg.width < 1) throw ConfigError("width must be >= 1");
  if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (cfg.batch < 0) throw ConfigError("batch must be full or a positive size");
  if (cfg.snapshot_every < 0) throw ConfigError("snapshot_every must be >= 0");
  if (cfg.smoothness_iters < 1) throw ConfigError("smoothness_iters must be >= 1");
  if (!(cfg.burn_in_frac >= 0.0 && cfg.burn_in_frac < 1.0))
    throw ConfigError("burn_in_frac must lie in [0, 1)");
  if (cfg.probe_pairs < 1) throw ConfigError("probe_pairs must be >= 1");
  if (cfg.data == DataSource::Synthetic) {
    if (cfg.n < 1 || cfg.in_dim < 1) throw ConfigError("synthetic data needs n >= 1, in_dim >= 1");
    if (cfg.noise_std < 0.0) throw ConfigError("noise_std must be >= 0");
  }
  if (cfg.preset == Preset::WidthAblation && cfg.widths.size() < 2)
    throw ConfigError("width_ablation needs at least two widths");
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  const std::string body = trim(text);
  if (!body.empty() && body.front() == '{') {
    ExperimentConfig cfg = parse_json_config(body);
    validate(cfg);
    return cfg;
  }

  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    set_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  validate(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string config_text(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "preset = " << preset_name(cfg.preset) << '\n';
  out << "seed = " << cfg.seed << '\n';
  out << "depth = " << cfg.depth << '\n';
  out << "width = " << cfg.width << '\n';
  out << "init = " << (cfg.init == InitKind::He ? "he" : "enhanced") << '\n';
  out << "data = " << (cfg.data == DataSource::Synthetic ? "synthetic" : "idx") << '\n';
  out << "n = " << cfg.n << '\n';
  out << "in_dim = " << cfg.in_dim << '\n';
  out << "teacher_depth = " << cfg.teacher_depth << '\n';
  out << "teacher_width = " << cfg.teacher_width << '\n';
  out << "noise_std = " << format_g17(cfg.noise_std) << '\n';
  out << "images = " << cfg.images << '\n';
  out << "labels = " << cfg.labels << '\n';
  out << "class_a = " << cfg.class_a << '\n';
  out << "class_b = " << cfg.class_b << '\n';
  out << "max_n = " << cfg.max_n << '\n';
  if (cfg.eta_policy == EtaPolicy::OneOverL) {
    out << "eta = auto\n";
  } else {
    out << "eta = " << format_g17(cfg.eta) << '\n';
  }
  out << "epochs = " << cfg.epochs << '\n';
  if (cfg.batch == 0) {
    out << "batch = full\n";
  } else {
    out << "batch = " << cfg.batch << '\n';
  }
  out << "snapshot_every = " << cfg.snapshot_every << '\n';
  out << "smoothness_iters = " << cfg.smoothness_iters << '\n';
  out << "burn_in_frac = " << format_g17(cfg.burn_in_frac) << '\n';
  out << "probe_pairs = " << cfg.probe_pairs << '\n';
  out << "widths = ";
  for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
    if (i) out << ',';
    out << cfg.widths[i];
  }
  out << '\n';
  out << "out = " << cfg.out << '\n';
  out << "dump_ntk = " << (cfg.dump_ntk ? 1 : 0) << '\n';
  return out.str();
}

std::string profile_text(bool paper) {
  std::ostringstream out;
  if (paper) {
    out << "# Full-scale reference profile: 5 weight layers at width 2048 on a\n"
           "# two-class image subset, fixed learning rate 0.001, 250 full-batch\n"
           "# epochs. This is a workstation profile, not a CI one: at width 2048\n"
           "# the Jacobian blocks stream through the blockwise kernel builder,\n"
           "# and the dense eigensolver wants n in the hundreds, so the subset\n"
           "# is capped at 512 samples; raise max_n (0 = everything) only if\n"
           "# you can wait for the spectra or set snapshot_every = 0.\n"
           "# Mini-batch reference setting, for the stochastic stand-in mode:\n"
           "# batch = 128 (cosine schedules are not implemented).\n";
    ExperimentConfig cfg;
    cfg.preset = Preset::Convergence;
    cfg.depth = 5;
    cfg.width = 2048;
    cfg.data = DataSource::Idx;
    cfg.images = "train-images-idx3-ubyte";
    cfg.labels = "train-labels-idx1-ubyte";
    cfg.class_a = 0;
    cfg.class_b = 1;
    cfg.max_n = 512;
    cfg.eta_policy = EtaPolicy::Fixed;
    cfg.eta = 0.001;
    cfg.epochs = 250;
    cfg.snapshot_every = 10;
    out << config_text(cfg);
  } else {
    out << "# Desk-scale default profile: a depth-3, width-64 learner on\n"
           "# synthetic teacher data, eta picked as 1 / (estimated smoothness),\n"
           "# 500 full-batch steps with kernel snapshots every 20 steps.\n";
    out << config_text(ExperimentConfig{});
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// summary JSON emission (17 significant digits, deterministic layout)
// ---------------------------------------------------------------------------

namespace {

void dump_json(const ordered_json& j, std::string& out, int indent) {
  const std::string pad(static_cast<std::size_t>(indent) * 2, ' ');
  const std::string pad_in(static_cast<std::size_t>(indent + 1) * 2, ' ');
  switch (j.type()) {
    case ordered_json::value_t::null: out += "null"; break;
    case ordered_json::value_t::boolean: out += j.get<bool>() ? "true" : "false"; break;
    case ordered_json::value_t::number_integer:
      out += std::to_string(j.get<long long>());
      break;
    case ordered_json::value_t::number_unsigned:
      out += std::to_string(j.get<unsigned long long>());
      break;
    case ordered_json::value_t::number_float: {
      const double v = j.get<double>();
      out += std::isfinite(v) ? format_g17(v) : "null";
      break;
    }
    case ordered_json::value_t::string: out += ordered_json(j.get<std::string>()).dump(); break;
    case ordered_json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        break;
      }
      out += "[\n";
      for (std::size_t i = 0; i < j.size(); ++i) {
        out += pad_in;
        dump_json(j[i], out, indent + 1);
        if (i + 1 < j.size()) out += ',';
        out += '\n';
      }
      out += pad + "]";
      break;
    }
    case ordered_json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        break;
      }
      out += "{\n";
      std::size_t i = 0;
      for (const auto& [key, value] : j.items()) {
        out += pad_in + ordered_json(key).dump() + ": ";
        dump_json(value, out, indent + 1);
        if (++i < j.size()) out += ',';
        out += '\n';
      }
      out += pad + "}";
      break;
    }
    default: out += "null"; break;
  }
}

void write_json(const ordered_json& j, const fs::path& path) {
  std::string text;
  dump_json(j, text, 0);
  text += '\n';
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

ordered_json config_json(const ExperimentConfig& cfg) {
  ordered_json j;
  j["preset"] = preset_name(cfg.preset);
  j["seed"] = cfg.seed;
  j["depth"] = cfg.depth;
  j["width"] = cfg.width;
  j["init"] = cfg.init == InitKind::He ? "he" : "enhanced";
  j["data"] = cfg.data == DataSource::Synthetic ? "synthetic" : "idx";
  j["n"] = cfg.n;
  j["in_dim"] = cfg.in_dim;
  j["teacher_depth"] = cfg.teacher_depth;
  j["teacher_width"] = cfg.teacher_width;
  j["noise_std"] = cfg.noise_std;
  j["images"] = cfg.images;
  j["labels"] = cfg.labels;
  j["class_a"] = cfg.class_a;
  j["class_b"] = cfg.class_b;
  j["max_n"] = cfg.max_n;
  j["eta"] = cfg.eta_policy == EtaPolicy::OneOverL ? ordered_json("auto") : ordered_json(cfg.eta);
  j["epochs"] = cfg.epochs;
  j["batch"] = cfg.batch == 0 ? ordered_json("full") : ordered_json(cfg.batch);
  j["snapshot_every"] = cfg.snapshot_every;
  j["smoothness_iters"] = cfg.smoothness_iters;
  j["burn_in_frac"] = cfg.burn_in_frac;
  j["probe_pairs"] = cfg.probe_pairs;
  ordered_json widths = ordered_json::array();
  for (const auto w : cfg.widths) widths.push_back(w);
  j["widths"] = widths;
  return j;
}

ordered_json linefit_json(const LineFit& fit) {
  ordered_json j;
  j["slope"] = fit.slope;
  j["intercept"] = fit.intercept;
  j["r_squared"] = fit.r_squared;
  j["n_points"] = fit.n_points;
  return j;
}

// ---------------------------------------------------------------------------
// one trained run with its full analysis bundle
// ---------------------------------------------------------------------------

struct RunResult {
  std::string label;
  Trajectory traj;
  double eta = 0.0;
  double l_smooth_hat = 0.0;
  double lambda_min_traj = std::numeric_limits<double>::quiet_NaN();
  double final_loss = 0.0;
  ordered_json summary;
};

struct CsvWriter {
  std::ofstream out;

  explicit CsvWriter(const fs::path& path) : out(path, std::ios::binary) {
    if (!out) throw IoError("cannot open " + path.string());
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out << ',';
      out << cells[i];
    }
    out << '\n';
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void write_convergence_fig(const Trajectory& traj, const fs::path& dir) {
  const double l_min = traj.min_loss();
  std::vector<double> gaps;
  gaps.reserve(traj.records.size());
  for (const auto& r : traj.records) gaps.push_back(r.loss - l_min);
  const std::vector<double> smooth = moving_average(gaps, 11);

  CsvWriter csv(dir / "fig_convergence.csv");
  csv.row({"t", "gap", "gap_smooth"});
  for (std::size_t i = 0; i < traj.records.size(); ++i)
    csv.row({std::to_string(traj.records[i].t), format_g17(gaps[i]), format_g17(smooth[i])});

  write_text(dir / "fig_convergence.gp",
             "set terminal pngcairo size 900,600\n"
             "set output 'fig_convergence.png'\n"
             "set datafile separator ','\n"
             "set xlabel 't'\n"
             "set ylabel 'suboptimality gap'\n"
             "set logscale y\n"
             "plot 'fig_convergence.csv' skip 1 using 1:($2 > 0 ? $2 : 1/0) with lines title 'gap', \\\n"
             "     '' skip 1 using 1:($3 > 0 ? $3 : 1/0) with lines title 'gap (smoothed)'\n");
}

void write_pl_fig(const Trajectory& traj, const fs::path& dir) {
  const double l_min = traj.min_loss();
  const double gap0 = traj.records.front().loss - l_min;
  const double floor = 1e-12 * gap0;

  std::vector<double> lgaps, lgrads;
  for (const auto& r : traj.records) {
    const double gap = r.loss - l_min;
    if (gap <= floor || r.grad_norm_sq <= 0.0) continue;
    lgaps.push_back(std::log(gap));
    lgrads.push_back(std::log(r.grad_norm_sq));
  }
  const std::vector<double> smooth = moving_average(lgrads, 11);

  CsvWriter csv(dir / "fig_pl.csv");
  csv.row({"ln_gap", "ln_grad_norm_sq", "ln_grad_norm_sq_smooth"});
  for (std::size_t i = 0; i < lgaps.size(); ++i)
    csv.row({format_g17(lgaps[i]), format_g17(lgrads[i]), format_g17(smooth[i])});

  write_text(dir / "fig_pl.gp",
             "set terminal pngcairo size 900,600\n"
             "set output 'fig_pl.png'\n"
             "set datafile separator ','\n"
             "set xlabel 'ln gap'\n"
             "set ylabel 'ln ||grad||^2'\n"
             "plot 'fig_pl.csv' skip 1 using 1:2 with points pt 7 ps 0.4 title 'raw', \\\n"
             "     '' skip 1 using 1:3 with lines title 'smoothed'\n");
}

/// The trajectory with loss and squared-gradient-norm series replaced by
/// their centered moving averages (window 11). Mini-batch runs are fitted
/// on this; full-batch fits stay on the raw records.
Trajectory smoothed_copy(const Trajectory& traj) {
  std::vector<double> losses, grads;
  losses.reserve(traj.records.size());
  grads.reserve(traj.records.size());
  for (const auto& r : traj.records) {
    losses.push_back(r.loss);
    grads.push_back(r.grad_norm_sq);
  }
  const std::vector<double> sl = moving_average(losses, 11);
  const std::vector<double> sg = moving_average(grads, 11);
  Trajectory out = traj;
  for (std::size_t i = 0; i < out.records.size(); ++i) {
    out.records[i].loss = sl[i];
    out.records[i].grad_norm_sq = sg[i];
  }
  return out;
}

/// Records past the burn-in window, as their own trajectory (used to emit
/// the second log-log fit window).
Trajectory tail_slice(const Trajectory& traj, double burn_in_frac) {
  Trajectory sliced;
  sliced.config = traj.config;
  sliced.theta_init = traj.theta_init;
  sliced.theta_final = traj.theta_final;
  sliced.diverged = traj.diverged;
  const Index burn_in =
      static_cast<Index>(burn_in_frac * static_cast<double>(traj.records.back().t));
  for (const auto& r : traj.records)
    if (r.t >= burn_in) sliced.records.push_back(r);
  return sliced;
}

RunResult single_run(const ExperimentConfig& cfg, const MlpArch& arch, InitKind init_kind,
                     const LabeledSet& data, double eta_override, const std::string& label,
                     const fs::path& dir) {
  fs::create_directories(dir);
  CounterRng master(cfg.seed);

  const MlpModel model0 = init_params(arch, {init_kind, master.fork(kStreamInit).key()});
  const Objective obj = mlp_objective(arch, data);

  const double l_hat = estimate_smoothness(obj, model0.theta, cfg.smoothness_iters,
                                           master.fork(kStreamSmoothness).key());
  double eta = eta_override;
  if (!(eta > 0.0)) eta = cfg.eta_policy == EtaPolicy::Fixed ? cfg.eta : 1.0 / l_hat;

  // spectral snapshots: kernel per snapshot step (kept for drift when small)
  const Index n = data.n();
  std::vector<std::pair<Vector, NtkReport>> spectral;
  std::vector<Index> spectral_t;
  const SpectrumFn spectrum = [&](Index t, const Vector& theta) {
    NtkOptions opts;
    const std::uint64_t bytes = static_cast<std::uint64_t>(n) *
                                static_cast<std::uint64_t>(arch.param_count()) * sizeof(double);
    opts.mode = bytes <= opts.byte_cap ? NtkMode::Materialized : NtkMode::Blockwise;
    opts.keep_matrix = n <= 1024;
    NtkReport report = build_ntk(arch, theta, data, opts);
    const double lambda = report.lambda_min;
    spectral_t.push_back(t);
    spectral.emplace_back(theta, std::move(report));
    return lambda;
  };

  TrainConfig tc;
  tc.eta = eta;
  tc.t_max = cfg.epochs;
  tc.batch = cfg.batch == 0 ? BatchMode{}
                            : BatchMode{cfg.batch, master.fork(kStreamShuffle).key()};
  tc.snapshot_every = cfg.snapshot_every;
  tc.eta_policy = cfg.eta_policy;

  auto [model_final, traj] = run_gd(model0, data, tc, spectrum);

  RunResult run;
  run.label = label;
  run.eta = eta;
  run.l_smooth_hat = l_hat;
  run.final_loss = traj.records.back().loss;

  const double l_region_min = traj.min_loss();
  double lambda_min_traj = std::numeric_limits<double>::quiet_NaN();
  for (const auto& [t, lambda] : traj.spectral_snapshots())
    lambda_min_traj = std::isnan(lambda_min_traj) ? lambda : std::min(lambda_min_traj, lambda);
  run.lambda_min_traj = lambda_min_traj;

  // fits and checks; sparse or degenerate runs report null instead of
  // failing. Mini-batch runs are fitted on smoothed series; everything
  // else (CSV emission, envelope, PL check) reads the raw records.
  const Trajectory fit_traj = cfg.batch == 0 ? traj : smoothed_copy(traj);
  std::optional<RateFit> rate;
  try {
    rate = rate_fit(fit_traj, cfg.burn_in_frac);
  } catch (const InsufficientPoints&) {
  }
  std::optional<PlSlopeFit> pl_full;
  try {
    pl_full = pl_slope_fit(fit_traj);
  } catch (const InsufficientPoints&) {
  }
  std::optional<PlSlopeFit> pl_tail;
  try {
    pl_tail = pl_slope_fit(tail_slice(fit_traj, cfg.burn_in_frac));
  } catch (const Error&) {
  }
  std::optional<EnvelopeCheck> envelope;
  if (!std::isnan(lambda_min_traj)) {
    try {
      envelope = envelope_check(traj, eta, lambda_min_traj, 1e-9);
    } catch (const RateOutOfRange&) {
    }
  }
  std::optional<PlCheck> pl;
  try {
    pl = pl_check(traj, l_region_min, 1e-9);
  } catch (const EmptyTrajectory&) {
  }
  std::optional<DriftStat> drift_stat;
  if (spectral.size() >= 2 && spectral.front().second.theta_matrix) {
    try {
      drift_stat = drift(spectral);
    } catch (const IdenticalParams&) {
    }
  }

  // sampled geometry of the region the run moved through
  RegionProbeConfig probe_cfg;
  probe_cfg.radius = std::max((traj.theta_final - traj.theta_init).norm(),
                              1e-3 * (1.0 + traj.theta_init.norm()));
  probe_cfg.n_pairs = cfg.probe_pairs;
  probe_cfg.seed = master.fork(kStreamCurvatureProbe).key();
  const double alpha_hat = probe_curvature(obj, traj.theta_init, probe_cfg);
  probe_cfg.seed = master.fork(kStreamDescentProbe).key();
  const DescentProbe descent = probe_descent(obj, traj.theta_init, probe_cfg);

  RegionReport region;
  region.alpha_hat = alpha_hat;
  region.gamma_hat = descent.gamma_hat.value_or(std::numeric_limits<double>::quiet_NaN());
  region.mu_emp = pl ? pl->mu_emp : std::numeric_limits<double>::quiet_NaN();
  region.lambda_min_traj = lambda_min_traj;
  region.l_smooth_hat = l_hat;
  region.loss_region_min = l_region_min;
  region.pl_violations = pl ? pl->violations : 0;

  // artifacts
  write_trajectory_csv(traj, (dir / "trajectory.csv").string());
  write_convergence_fig(traj, dir);
  try {
    write_pl_fig(traj, dir);
  } catch (const Error&) {
    // a flat run has no usable log-log points; skip the figure
  }
  if (cfg.dump_ntk) {
    NtkOptions opts;
    opts.mode = NtkMode::Blockwise;
    opts.keep_matrix = true;
    const NtkReport final_report = build_ntk(arch, traj.theta_final, data, opts);
    write_ntk_csv(*final_report.theta_matrix, (dir / "ntk_final.csv").string());
  }

  // per-run summary block
  ordered_json s;
  s["label"] = label;
  s["depth"] = arch.depth;
  s["width"] = arch.width;
  s["init"] = init_kind == InitKind::He ? "he" : "enhanced";
  s["eta"] = eta;
  s["l_smooth_hat"] = l_hat;
  s["eta_times_l_hat"] = eta * l_hat;
  s["lambda_min_traj"] = lambda_min_traj;
  s["final_loss"] = run.final_loss;
  s["loss_region_min"] = l_region_min;
  s["diverged"] = traj.diverged;
  if (rate) {
    ordered_json r = linefit_json(rate->fit);
    r["rate_observed"] = rate->rate_observed;
    r["rate_theory"] = rate->rate_theory;
    r["burn_in"] = rate->burn_in;
    r["n_used"] = rate->n_used;
    s["rate_fit"] = r;
  } else {
    s["rate_fit"] = nullptr;
  }
  if (pl_full) {
    ordered_json r = linefit_json(pl_full->fit);
    r["n_used"] = pl_full->n_used;
    s["pl_slope_fit"] = r;
  } else {
    s["pl_slope_fit"] = nullptr;
  }
  if (pl_tail) {
    ordered_json r = linefit_json(pl_tail->fit);
    r["n_used"] = pl_tail->n_used;
    s["pl_slope_fit_post_burn_in"] = r;
  } else {
    s["pl_slope_fit_post_burn_in"] = nullptr;
  }
  if (envelope) {
    ordered_json r;
    r["violations"] = envelope->violations;
    r["worst_ratio"] = envelope->worst_ratio;
    s["envelope"] = r;
  } else {
    s["envelope"] = nullptr;
  }
  if (pl) {
    ordered_json r;
    r["mu_emp"] = pl->mu_emp;
    r["violations"] = pl->violations;
    r["steps_checked"] = pl->steps_checked;
    s["pl_check"] = r;
  } else {
    s["pl_check"] = nullptr;
  }
  // the gap bound from the first snapshot's spectrum, next to the gap it bounds
  if (!spectral.empty() && spectral.front().second.lambda_min > 1e-12) {
    const Index t0 = spectral_t.front();
    for (const auto& rec : traj.records) {
      if (rec.t != t0) continue;
      ordered_json r;
      r["step"] = t0;
      r["bound"] = suboptimality_bound(spectral.front().second, rec.grad_norm_sq);
      r["gap"] = rec.loss - l_region_min;
      s["suboptimality_check"] = r;
      break;
    }
  }
  if (!s.contains("suboptimality_check")) s["suboptimality_check"] = nullptr;
  if (drift_stat) {
    ordered_json r;
    r["pairs"] = drift_stat->pairs;
    r["max_ratio"] = drift_stat->max_ratio;
    r["mean_ratio"] = drift_stat->mean_ratio;
    s["drift"] = r;
  } else {
    s["drift"] = nullptr;
  }
  s["region_report"] = region_report_text(region);

  run.summary = std::move(s);
  run.traj = std::move(traj);
  return run;
}

struct Gate {
  std::string name;
  bool passed = false;
  std::string detail;
};

int emit_and_finish(const ExperimentConfig& cfg, std::vector<RunResult> runs, Gate gate,
                    const std::vector<std::pair<std::string, double>>& table,
                    const fs::path& out_dir) {
  bool diverged = false;
  for (const auto& run : runs) diverged = diverged || run.traj.diverged;

  ordered_json summary;
  summary["preset"] = preset_name(cfg.preset);
  summary["config"] = config_json(cfg);
  ordered_json jruns = ordered_json::array();
  for (auto& run : runs) jruns.push_back(std::move(run.summary));
  summary["runs"] = jruns;
  ordered_json jtable = ordered_json::array();
  for (const auto& [label, value] : table) {
    ordered_json row;
    row["label"] = label;
    row["value"] = value;
    jtable.push_back(row);
  }
  summary["table"] = jtable;
  ordered_json jgate;
  jgate["name"] = gate.name;
  jgate["passed"] = gate.passed && !diverged;
  jgate["detail"] = diverged ? "divergence detected" : gate.detail;
  summary["gate"] = jgate;

  write_json(summary, out_dir / "summary.json");

  std::cout << "gate " << gate.name << ": " << (gate.passed && !diverged ? "PASS" : "FAIL")
            << " (" << (diverged ? "divergence detected" : gate.detail) << ")\n";
  std::cout << "summary: " << (out_dir / "summary.json").string() << "\n";
  return gate.passed && !diverged ? 0 : 2;
}

LabeledSet build_data(const ExperimentConfig& cfg) {
  if (cfg.data == DataSource::Synthetic) {
    SyntheticSpec spec;
    spec.n = cfg.n;
    spec.d = cfg.in_dim;
    spec.teacher = MlpArch{cfg.teacher_depth, cfg.teacher_width, cfg.in_dim};
    spec.noise_std = cfg.noise_std;
    spec.seed = CounterRng(cfg.seed).fork(kStreamData).key();
    return gen_synthetic(spec);
  }
  return load_idx_pair(cfg.images, cfg.labels, cfg.class_a, cfg.class_b, cfg.max_n);
}

}  // namespace

int run_experiment(const ExperimentConfig& cfg) {
  validate(cfg);
  const fs::path out_dir(cfg.out);
  fs::create_directories(out_dir);

  const LabeledSet data = build_data(cfg);
  MlpArch arch{cfg.depth, cfg.width, data.x.cols()};
  arch.validate();

  switch (cfg.preset) {
    case Preset::Convergence:
    case Preset::PlVerify:
    case Preset::Custom: {
      std::vector<RunResult> runs;
      runs.push_back(single_run(cfg, arch, cfg.init, data, 0.0, "run", out_dir));
      const RunResult& run = runs.front();

      Gate gate;
      if (cfg.preset == Preset::Convergence) {
        gate.name = "convergence_fit";
        const auto& rf = run.summary["rate_fit"];
        if (rf.is_null()) {
          gate.passed = false;
          gate.detail = "rate fit unavailable";
        } else {
          const double r2 = rf["r_squared"].get<double>();
          gate.passed = r2 >= 0.95;
          gate.detail = "r_squared=" + format_g17(r2) + " (needs >= 0.95)";
        }
      } else if (cfg.preset == Preset::PlVerify) {
        gate.name = "pl_condition";
        const auto& pc = run.summary["pl_check"];
        if (pc.is_null()) {
          gate.passed = false;
          gate.detail = "no spectral snapshots";
        } else {
          const Index v = pc["violations"].get<Index>();
          gate.passed = v == 0;
          gate.detail = "violations=" + std::to_string(v) + " over " +
                        std::to_string(pc["steps_checked"].get<Index>()) + " snapshots";
        }
      } else {
        gate.name = "completed";
        gate.passed = true;
        gate.detail = "final_loss=" + format_g17(run.final_loss);
      }

      std::vector<std::pair<std::string, double>> table{{run.label, run.final_loss}};
      return emit_and_finish(cfg, std::move(runs), gate, table, out_dir);
    }

    case Preset::InitCompare: {
      // one step size for both schemes: the larger smoothness bound wins
      const CounterRng master(cfg.seed);
      const std::uint64_t init_seed = master.fork(kStreamInit).key();
      const std::uint64_t smooth_seed = master.fork(kStreamSmoothness).key();
      const Objective obj = mlp_objective(arch, data);
      double l_hat_max = 0.0;
      for (const InitKind kind : {InitKind::He, InitKind::EnhancedDepthAware}) {
        const MlpModel m = init_params(arch, {kind, init_seed});
        l_hat_max = std::max(l_hat_max,
                             estimate_smoothness(obj, m.theta, cfg.smoothness_iters, smooth_seed));
      }
      const double eta_shared = 1.0 / l_hat_max;

      std::vector<RunResult> runs;
      runs.push_back(
          single_run(cfg, arch, InitKind::He, data, eta_shared, "he", out_dir / "he"));
      runs.push_back(single_run(cfg, arch, InitKind::EnhancedDepthAware, data, eta_shared,
                                "enhanced", out_dir / "enhanced"));

      std::vector<std::pair<std::string, const Trajectory*>> labeled;
      for (const auto& run : runs) labeled.emplace_back(run.label, &run.traj);
      const auto table = compare_runs(labeled, RunMetric::FinalGap);

      CsvWriter csv(out_dir / "fig_init_compare.csv");
      csv.row({"t", "gap_he", "gap_enhanced"});
      const double min_he = runs[0].traj.min_loss();
      const double min_enh = runs[1].traj.min_loss();
      for (std::size_t i = 0; i < runs[0].traj.records.size(); ++i)
        csv.row({std::to_string(runs[0].traj.records[i].t),
                 format_g17(runs[0].traj.records[i].loss - min_he),
                 format_g17(runs[1].traj.records[i].loss - min_enh)});
      write_text(out_dir / "fig_init_compare.gp",
                 "set terminal pngcairo size 900,600\n"
                 "set output 'fig_init_compare.png'\n"
                 "set datafile separator ','\n"
                 "set xlabel 't'\n"
                 "set ylabel 'suboptimality gap'\n"
                 "set logscale y\n"
                 "plot 'fig_init_compare.csv' skip 1 using 1:($2 > 0 ? $2 : 1/0) with lines title 'he', \\\n"
                 "     '' skip 1 using 1:($3 > 0 ? $3 : 1/0) with lines title 'enhanced'\n");

      Gate gate;
      gate.name = "init_ordering";
      gate.passed = runs[0].final_loss < runs[1].final_loss;
      gate.detail = "he=" + format_g17(runs[0].final_loss) +
                    " enhanced=" + format_g17(runs[1].final_loss) + " (he must be lower)";
      return emit_and_finish(cfg, std::move(runs), gate, table, out_dir);
    }

    case Preset::WidthAblation: {
      // constant step size across widths: safely under every width's bound
      const CounterRng master(cfg.seed);
      const std::uint64_t init_seed = master.fork(kStreamInit).key();
      const std::uint64_t smooth_seed = master.fork(kStreamSmoothness).key();
      double l_hat_max = 0.0;
      for (const Index w : cfg.widths) {
        MlpArch a{cfg.depth, w, data.x.cols()};
        const MlpModel m = init_params(a, {cfg.init, init_seed});
        const Objective o = mlp_objective(a, data);
        l_hat_max =
            std::max(l_hat_max, estimate_smoothness(o, m.theta, cfg.smoothness_iters, smooth_seed));
      }
      const double eta_shared = 0.5 / l_hat_max;

      std::vector<RunResult> runs;
      for (const Index w : cfg.widths) {
        char label[16];
        std::snprintf(label, sizeof(label), "w%04lld", static_cast<long long>(w));
        MlpArch a{cfg.depth, w, data.x.cols()};
        runs.push_back(single_run(cfg, a, cfg.init, data, eta_shared, label, out_dir / label));
      }

      CsvWriter csv(out_dir / "fig_width.csv");
      csv.row({"width", "final_loss"});
      for (std::size_t i = 0; i < runs.size(); ++i)
        csv.row({std::to_string(cfg.widths[i]), format_g17(runs[i].final_loss)});
      write_text(out_dir / "fig_width.gp",
                 "set terminal pngcairo size 900,600\n"
                 "set output 'fig_width.png'\n"
                 "set datafile separator ','\n"
                 "set xlabel 'width'\n"
                 "set ylabel 'final loss'\n"
                 "set logscale y\n"
                 "plot 'fig_width.csv' skip 1 using 1:2 with linespoints pt 7 title 'final loss'\n");

      bool nonincreasing = true;
      for (std::size_t i = 0; i + 1 < runs.size(); ++i)
        nonincreasing = nonincreasing && runs[i + 1].final_loss <= runs[i].final_loss;

      std::vector<std::pair<std::string, double>> table;
      for (const auto& run : runs) table.emplace_back(run.label, run.final_loss);

      Gate gate;
      gate.name = "width_trend";
      gate.passed = nonincreasing;
      std::string detail = "final losses:";
      for (const auto& run : runs) detail += " " + format_g17(run.final_loss);
      gate.detail = detail + " (must be nonincreasing)";
      return emit_and_finish(cfg, std::move(runs), gate, table, out_dir);
    }
  }
  throw ConfigError("unhandled preset");
}

}  // namespace ntklab
