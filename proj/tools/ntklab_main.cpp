#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "ntklab/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"ntklab: gradient-descent training with kernel spectrum diagnostics"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_override;
  std::uint64_t seed_override = 0;
  bool dump_ntk = false;
  auto* run = app.add_subcommand("run", "run an experiment config end to end");
  run->add_option("config", config_path, "config file (key=value or JSON)")->required();
  run->add_option("--out", out_override, "output directory (overrides the config)");
  run->add_option("--seed", seed_override, "master seed (overrides the config)");
  run->add_flag("--dump-ntk", dump_ntk, "also write the final kernel as ntk_final.csv");

  bool paper = false;
  bool desk = false;
  auto* profile = app.add_subcommand("profile", "print a config profile");
  auto* paper_opt = profile->add_flag("--paper", paper, "full-scale reference profile");
  profile->add_flag("--desk", desk, "desk-scale default profile")->excludes(paper_opt);

  CLI11_PARSE(app, argc, argv);

  try {
    if (profile->parsed()) {
      std::cout << ntklab::profile_text(paper);
      return 0;
    }
    ntklab::ExperimentConfig cfg = ntklab::load_config(config_path);
    if (!out_override.empty()) cfg.out = out_override;
    if (run->count("--seed")) cfg.seed = seed_override;
    if (dump_ntk) cfg.dump_ntk = true;
    return ntklab::run_experiment(cfg);
  } catch (const ntklab::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
