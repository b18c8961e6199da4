#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "mavfl/harness.hpp"
#include "mavfl/theory.hpp"

using namespace mavfl;

namespace {

// Least-squares shard whose Hessian is scale^2 * I.
LocalDataset scaled_identity(int d, double scale, const ModelParams& target) {
  LocalDataset s;
  s.features = scale * std::sqrt(static_cast<double>(d)) * Eigen::MatrixXd::Identity(d, d);
  s.labels = s.features * target;
  return s;
}

ExperimentConfig quadratic_run(std::uint64_t seed, int epochs, int rounds, bool stationary) {
  ExperimentConfig cfg;
  cfg.master_seed = seed;
  cfg.task.kind = TaskKind::quadratic;
  cfg.task.dim = 5;
  cfg.task.num_vehicles = 10;
  cfg.task.samples_per_vehicle = 40;
  cfg.train.learning_rate = 0.01;
  cfg.train.local_epochs = epochs;
  cfg.train.full_batch = true;
  cfg.rounds = rounds;
  cfg.stationary = stationary;
  return cfg;
}

}  // namespace

TEST_CASE("smoothness estimate on A = 2I is 4") {
  const int d = 3;
  const ModelParams zero = ModelParams::Zero(d);
  const Task task = make_quadratic_task({scaled_identity(d, 2.0, zero)}, ModelParams::Ones(d));
  Rng rng(1);
  const auto est = estimate_constants(task, 100, rng);
  CHECK(est.smoothness == doctest::Approx(4.0).epsilon(0.05));
  CHECK(est.noise_var == 0.0);
  CHECK(est.divergence_sq == 0.0);
  CHECK(est.f_inf == doctest::Approx(0.0));
}

TEST_CASE("identical shards give zero divergence; mini-batch probing gives noise") {
  TaskSpec spec;
  spec.kind = TaskKind::logistic;
  spec.num_vehicles = 1;
  spec.samples_per_vehicle = 64;
  spec.dim = 4;
  const Task base = make_task(spec);
  Task twins = base;
  twins.shards = {base.shards[0], base.shards[0], base.shards[0]};
  Rng rng(2);
  const auto est = estimate_constants(twins, 100, rng, 8);
  CHECK(est.divergence_sq == doctest::Approx(0.0).epsilon(1e-24));
  CHECK(est.noise_var > 0.0);
  CHECK(est.grad_bound_sq > 0.0);
}

TEST_CASE("smoothness estimate tracks the top Hessian eigenvalue on random quadratics") {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
    TaskSpec spec;
    spec.kind = TaskKind::quadratic;
    spec.seed = seed;
    spec.num_vehicles = 5;
    spec.samples_per_vehicle = 30;
    spec.dim = 8;
    const Task task = make_task(spec);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(quadratic_hessian(task));
    Rng rng(seed);
    const auto est = estimate_constants(task, 200, rng);
    CHECK(est.smoothness == doctest::Approx(eig.eigenvalues().maxCoeff()).epsilon(0.05));
    CHECK(est.smoothness <= eig.eigenvalues().maxCoeff() * (1 + 1e-9));
  }
}

TEST_CASE("estimates never decrease as probes are added") {
  TaskSpec spec;
  spec.kind = TaskKind::tiny_mlp;
  spec.num_vehicles = 4;
  spec.samples_per_vehicle = 40;
  spec.dim = 3;
  const Task task = make_task(spec);
  ConstantEstimates prev;
  for (std::size_t n : {100u, 150u, 220u, 400u}) {
    Rng rng(17);
    const auto est = estimate_constants(task, n, rng, 10);
    CHECK(est.smoothness >= prev.smoothness);
    CHECK(est.grad_bound_sq >= prev.grad_bound_sq);
    CHECK(est.noise_var >= prev.noise_var);
    CHECK(est.divergence_sq >= prev.divergence_sq);
    CHECK(est.probes == n);
    prev = est;
  }
}

TEST_CASE("drift bound with one local epoch has zero drift on both sides") {
  Simulation sim(quadratic_run(3, 1, 20, false));
  sim.enable_trace();
  run_experiment(sim);
  Rng rng(1);
  const auto est = estimate_constants(sim.task(), 100, rng);
  const auto rep = lemma1_check(sim.trace(), 0.01, 1, est);
  CHECK(rep.steps_checked == sim.trace().steps.size());
  CHECK(rep.max_lhs == 0.0);
  CHECK(rep.max_rhs == 0.0);
  CHECK(rep.passed());
}

TEST_CASE("drift bound margin is non-negative on full-batch quadratic runs") {
  for (int epochs : {3, 5}) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      Simulation sim(quadratic_run(seed, epochs, 50, false));
      sim.enable_trace();
      run_experiment(sim);
      const auto cf = closed_form_constants(sim.task(), sim.trace());
      const auto rep = lemma1_check(sim.trace(), 0.01, epochs, cf);
      CHECK(rep.passed());
      CHECK(rep.worst_margin >= 0.0);
      CHECK(rep.max_lhs > 0.0);
    }
  }
}

TEST_CASE("trace lengths match rounds times epochs") {
  Simulation sim(quadratic_run(4, 3, 12, false));
  sim.enable_trace();
  run_experiment(sim);
  const auto& tr = sim.trace();
  CHECK(tr.round_ratio.size() == 12);
  CHECK(tr.round_survivors.size() == 12);
  std::size_t trained = 0;
  for (const auto& p : tr.round_ratio) trained += p.has_value();
  CHECK(tr.steps.size() == trained * 3);
  // The first step of every round sits on the round's global model.
  for (const auto& step : tr.steps) {
    if (step.epoch != 0) continue;
    for (const auto& [id, w] : step.local_models) CHECK(w == step.virtual_global);
  }
}

TEST_CASE("gradient-norm bound at the optimum has zero lhs") {
  const int d = 4;
  const ModelParams target = ModelParams::LinSpaced(d, -1.0, 1.0);
  const Task task = make_quadratic_task({scaled_identity(d, 1.0, target), scaled_identity(d, 1.5, target)},
                                        target);
  RunTrace trace;
  trace.local_epochs = 1;
  trace.initial = target;
  trace.round_ratio = {1.0, 1.0};
  trace.round_survivors = {{0}, {0}};
  for (int r = 0; r < 2; ++r) trace.steps.push_back({r, 0, target, {{0, target}}});
  const auto cf = closed_form_constants(task, trace);
  const auto rep = theorem1_bound(trace, task, cf, 0.01, 1);
  CHECK(rep.lhs == doctest::Approx(0.0).epsilon(1e-24));
  CHECK(rep.holds());
  CHECK(rep.drift_term == 0.0);
}

TEST_CASE("gradient-norm bound excludes rounds without survivors from the descent term") {
  const int d = 2;
  const Task task = make_quadratic_task({scaled_identity(d, 1.0, ModelParams::Zero(d))},
                                        ModelParams::Ones(d));
  RunTrace trace;
  trace.local_epochs = 1;
  trace.initial = ModelParams::Ones(d);
  trace.round_ratio = {1.0, 0.0, std::nullopt, 0.5};
  trace.round_survivors = {{0}, {}, {}, {0}};
  trace.steps.push_back({0, 0, trace.initial, {{0, trace.initial}}});
  trace.steps.push_back({1, 0, trace.initial, {{0, trace.initial}}});
  trace.steps.push_back({3, 0, trace.initial, {{0, trace.initial}}});
  ConstantEstimates est;
  est.smoothness = 1.0;
  const auto rep = theorem1_bound(trace, task, est, 0.1, 1);
  CHECK(rep.steps == 3);
  CHECK(rep.included_steps == 2);
  CHECK(rep.excluded_rounds == 2);
  const double gap = task.global_loss(trace.initial);
  CHECK(rep.descent_term == doctest::Approx(0.5 * (2 / 0.1 * gap + 2 / (0.1 * 0.5) * gap)));
}

TEST_CASE("expected survivor aggregate identity") {
  SUBCASE("p = 1 is exact") {
    Rng rng(1);
    const auto r = identity_check(10000, 5, 1.0, rng);
    CHECK(r.relative_error == 0.0);
    CHECK(r.discarded_trials == 0);
  }
  SUBCASE("K = 1 averages to p g") {
    Rng rng(2);
    const auto r = identity_check(100000, 1, 0.3, rng);
    CHECK(r.relative_error < 0.02);
  }
  SUBCASE("K = 5, p = 0.6") {
    Rng rng(3);
    const auto r = identity_check(100000, 5, 0.6, rng);
    CHECK(r.relative_error < 0.05);
    CHECK(r.conditioning_factor == doctest::Approx(1.0 / (1.0 - std::pow(0.4, 5))));
  }
  SUBCASE("conditioning on a survivor inflates the estimate by the analytic factor") {
    Rng rng(4);
    const auto r = identity_check(200000, 5, 0.2, rng);
    CHECK(r.relative_error < 0.05);
    CHECK(r.conditioned_relative_error == doctest::Approx(r.conditioning_factor - 1.0).epsilon(0.1));
  }
}
