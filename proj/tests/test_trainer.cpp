#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ntklab/datasets.hpp"
#include "ntklab/landscape.hpp"
#include "ntklab/ntk.hpp"
#include "ntklab/trainer.hpp"

using namespace ntklab;

namespace {

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

TEST_CASE("interpolating init is a fixed point") {
  const MlpArch arch{2, 1, 4};
  const MlpModel model = init_params(arch, {InitKind::He, 3});
  CounterRng rng(5);
  LabeledSet data;
  data.x.resize(6, 4);
  for (Index i = 0; i < 6; ++i)
    for (Index j = 0; j < 4; ++j) data.x(i, j) = rng.gaussian();
  data.y = data.x * model.theta;  // zero residual at init

  TrainConfig cfg;
  cfg.eta = 0.1;
  cfg.t_max = 20;
  auto [trained, traj] = run_gd(model, data, cfg);
  CHECK(trained.theta == model.theta);
  for (const auto& r : traj.records) {
    CHECK(r.loss == 0.0);
    CHECK(r.dist_from_init == 0.0);
  }
}

TEST_CASE("scalar quadratic contracts geometrically") {
  const double lambda = 2.5;
  const double eta = 0.3;  // eta <= 1/lambda
  Matrix a(1, 1);
  a << lambda;
  const Objective obj = quadratic_objective(a);
  Vector theta0(1);
  theta0 << 4.0;

  TrainConfig cfg;
  cfg.eta = eta;
  cfg.t_max = 40;
  cfg.snapshot_every = 1;
  const Trajectory traj = run_gd(obj, theta0, cfg);

  const double factor = 1.0 - eta * lambda;
  for (const auto& [t, theta] : traj.theta_snapshots) {
    const double expected = std::pow(factor, static_cast<double>(t)) * theta0[0];
    CHECK(theta[0] == doctest::Approx(expected).epsilon(1e-12));
  }
  CHECK(traj.records.back().loss ==
        doctest::Approx(0.5 * lambda * std::pow(factor, 80.0) * 16.0).epsilon(1e-10));
}

TEST_CASE("record zero is the pre-update state") {
  Matrix a(1, 1);
  a << 1.0;
  Vector theta0(1);
  theta0 << 2.0;
  TrainConfig cfg;
  cfg.eta = 0.5;
  cfg.t_max = 3;
  const Trajectory traj = run_gd(quadratic_objective(a), theta0, cfg);
  REQUIRE(traj.records.size() == 4);
  CHECK(traj.records[0].t == 0);
  CHECK(traj.records[0].loss == 2.0);  // 0.5 * 2^2
  CHECK(traj.records[0].dist_from_init == 0.0);
}

TEST_CASE("seeded MLP run descends monotonically at 1/L") {
  SyntheticSpec spec;
  spec.n = 50;
  spec.d = 8;
  spec.teacher = MlpArch{3, 8, 8};
  spec.noise_std = 0.02;
  spec.seed = 5;
  const LabeledSet data = gen_synthetic(spec);
  const MlpArch arch{3, 32, 8};
  const MlpModel model0 = init_params(arch, {InitKind::He, 6});
  const double l_hat = estimate_smoothness(model0, data, 200, 7);

  TrainConfig cfg;
  cfg.eta = 1.0 / l_hat;
  cfg.t_max = 300;
  auto [trained, traj] = run_gd(model0, data, cfg);
  CHECK_FALSE(traj.diverged);

  Index increases = 0;
  for (std::size_t k = 0; k + 1 < traj.records.size(); ++k)
    if (traj.records[k + 1].loss > traj.records[k].loss) ++increases;
  CHECK(static_cast<double>(increases) <= 0.01 * static_cast<double>(traj.records.size()));
  CHECK(traj.records.back().loss < traj.records.front().loss);

  CHECK(descent_lemma_check(traj, l_hat) <=
        static_cast<Index>(0.01 * static_cast<double>(traj.records.size())));
}

TEST_CASE("descent lemma is an equality on the scalar quadratic at 1/L") {
  const double lambda = 3.0;
  Matrix a(1, 1);
  a << lambda;
  Vector theta0(1);
  theta0 << 1.0;
  TrainConfig cfg;
  cfg.eta = 1.0 / lambda;
  cfg.t_max = 10;
  const Trajectory traj = run_gd(quadratic_objective(a), theta0, cfg);
  CHECK(descent_lemma_check(traj, lambda) == 0);
}

TEST_CASE("descent lemma check on a constant-loss run") {
  Matrix a(1, 1);
  a << 1.0;
  Vector theta0(1);
  theta0 << 0.0;  // already at the minimum: zero gradient throughout
  TrainConfig cfg;
  cfg.eta = 0.5;
  cfg.t_max = 5;
  const Trajectory traj = run_gd(quadratic_objective(a), theta0, cfg);
  CHECK(descent_lemma_check(traj, 1.0) == 0);
}

TEST_CASE("descent lemma check validates its premises") {
  Matrix a(1, 1);
  a << 1.0;
  Vector theta0(1);
  theta0 << 1.0;
  TrainConfig cfg;
  cfg.eta = 0.5;
  cfg.t_max = 5;
  const Trajectory traj = run_gd(quadratic_objective(a), theta0, cfg);
  CHECK_THROWS_AS(descent_lemma_check(traj, 4.0), Error);  // eta > 1/L
  CHECK_THROWS_AS(descent_lemma_check(Trajectory{}, 1.0), EmptyTrajectory);
}

TEST_CASE("divergence aborts with a flagged partial trajectory") {
  Matrix a(1, 1);
  a << 1.0;
  Vector theta0(1);
  theta0 << 1.0;
  TrainConfig cfg;
  cfg.eta = 25.0;  // way past 2/lambda: loss explodes
  cfg.t_max = 100;
  const Trajectory traj = run_gd(quadratic_objective(a), theta0, cfg);
  CHECK(traj.diverged);
  CHECK(traj.records.size() < 101);
  CHECK(traj.records.back().loss > 1e6 * traj.records.front().loss);
}

TEST_CASE("updates reconstruct exactly from parameter snapshots") {
  const MlpArch arch{3, 8, 5};
  const MlpModel model0 = init_params(arch, {InitKind::He, 21});
  CounterRng rng(22);
  LabeledSet data;
  data.x.resize(10, 5);
  data.y.resize(10);
  for (Index i = 0; i < 10; ++i) {
    for (Index j = 0; j < 5; ++j) data.x(i, j) = rng.gaussian();
    data.y[i] = rng.gaussian();
  }

  TrainConfig cfg;
  cfg.eta = 0.05;
  cfg.t_max = 12;
  cfg.snapshot_every = 1;
  auto [trained, traj] = run_gd(model0, data, cfg);
  REQUIRE(traj.theta_snapshots.size() == 13);
  for (std::size_t k = 0; k + 1 < traj.theta_snapshots.size(); ++k) {
    const Vector& now = traj.theta_snapshots[k].second;
    const Vector& next = traj.theta_snapshots[k + 1].second;
    const Vector reconstructed = now - cfg.eta * grad(arch, now, data);
    CHECK(reconstructed == next);  // bit-exact
  }
}

TEST_CASE("identical seeds give byte-identical trajectory CSVs") {
  SyntheticSpec spec;
  spec.n = 20;
  spec.d = 5;
  spec.teacher = MlpArch{2, 1, 5};
  spec.seed = 77;
  const LabeledSet data = gen_synthetic(spec);
  const MlpArch arch{3, 8, 5};

  const auto run_once = [&](const std::filesystem::path& path) {
    const MlpModel model0 = init_params(arch, {InitKind::He, 13});
    TrainConfig cfg;
    cfg.eta = 0.05;
    cfg.t_max = 30;
    cfg.snapshot_every = 10;
    const SpectrumFn spectrum = [&](Index, const Vector& theta) {
      return build_ntk(arch, theta, data, {}).lambda_min;
    };
    auto [trained, traj] = run_gd(model0, data, cfg, spectrum);
    write_trajectory_csv(traj, path.string());
  };

  const auto dir = std::filesystem::temp_directory_path();
  run_once(dir / "ntklab_traj_a.csv");
  run_once(dir / "ntklab_traj_b.csv");
  const std::string a = slurp(dir / "ntklab_traj_a.csv");
  const std::string b = slurp(dir / "ntklab_traj_b.csv");
  CHECK(a == b);
  CHECK(a.substr(0, a.find('\n')) == "t,loss,grad_norm_sq,dist_from_init,lambda_min");
  // snapshot rows carry a value, others end with the empty field
  std::istringstream lines(a);
  std::string line;
  std::getline(lines, line);  // header
  Index t = 0;
  while (std::getline(lines, line)) {
    const bool has_lambda = line.back() != ',';
    CHECK(has_lambda == (t % 10 == 0));
    ++t;
  }
  std::filesystem::remove(dir / "ntklab_traj_a.csv");
  std::filesystem::remove(dir / "ntklab_traj_b.csv");
}

TEST_CASE("mini-batch mode records full-batch losses and stays deterministic") {
  SyntheticSpec spec;
  spec.n = 24;
  spec.d = 6;
  spec.teacher = MlpArch{2, 1, 6};
  spec.noise_std = 0.1;
  spec.seed = 3;
  const LabeledSet data = gen_synthetic(spec);
  const MlpArch arch{3, 8, 6};
  const MlpModel model0 = init_params(arch, {InitKind::He, 4});
  const Objective obj = mlp_objective(arch, data);

  TrainConfig cfg;
  cfg.eta = 0.02;
  cfg.t_max = 50;
  cfg.batch = BatchMode{8, 99};
  auto [m1, t1] = run_gd(model0, data, cfg);
  auto [m2, t2] = run_gd(model0, data, cfg);
  CHECK(m1.theta == m2.theta);

  // each record holds the full-batch loss at that step's parameters
  REQUIRE(t1.theta_snapshots.empty());
  CHECK(t1.records.front().loss == doctest::Approx(obj.value(model0.theta)));
  CHECK(t1.records.back().loss == doctest::Approx(obj.value(m1.theta)));

  cfg.batch = BatchMode{8, 100};  // a different shuffle gives a different path
  auto [m3, t3] = run_gd(model0, data, cfg);
  CHECK(m1.theta != m3.theta);
}

TEST_CASE("run_gd validates its configuration") {
  Matrix a(1, 1);
  a << 1.0;
  const Objective obj = quadratic_objective(a);
  TrainConfig cfg;
  cfg.eta = 0.0;
  CHECK_THROWS_AS(run_gd(obj, Vector::Ones(1), cfg), Error);
  cfg.eta = 0.1;
  cfg.t_max = 0;
  CHECK_THROWS_AS(run_gd(obj, Vector::Ones(1), cfg), Error);
  cfg.t_max = 5;
  cfg.batch = BatchMode{4, 1};  // mini-batch without a batch gradient
  CHECK_THROWS_AS(run_gd(obj, Vector::Ones(1), cfg), Error);
}
