// Command-line front end: run, sweep and theory subcommands.

#include <cstdio>
#include <iostream>
#include <sstream>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "mavfl/errors.hpp"
#include "mavfl/harness.hpp"

namespace {

struct Overrides {
  std::optional<std::string> policy;
  std::optional<std::uint64_t> seed;
  std::optional<double> velocity_kmh;
  std::optional<int> rounds;
  std::optional<int> k0;
  std::optional<std::string> task;
  std::optional<std::string> out;

  void attach(CLI::App* app) {
    app->add_option("--policy", policy, "ducb, cbs, rbs or random");
    app->add_option("--seed", seed, "master seed");
    app->add_option("--velocity-kmh", velocity_kmh, "desired speed in km/h");
    app->add_option("--rounds", rounds, "number of rounds R");
    app->add_option("--k0", k0, "vehicles selected per round");
    app->add_option("--task", task, "quadratic, logistic or tiny_mlp");
    app->add_option("--out", out, "output directory");
  }

  void apply(mavfl::ExperimentConfig& cfg) const {
    try {
      if (policy) cfg.policy = mavfl::parse_policy(*policy);
      if (task) cfg.task.kind = mavfl::parse_task_kind(*task);
    } catch (const std::invalid_argument& e) {
      throw mavfl::ConfigError(e.what());
    }
    if (seed) cfg.master_seed = *seed;
    if (velocity_kmh) cfg.velocity_kmh = *velocity_kmh;
    if (rounds) cfg.rounds = *rounds;
    if (k0) cfg.k0 = *k0;
    if (out) cfg.output_dir = *out;
    cfg.task.seed = cfg.master_seed;
    cfg.validate();
  }
};

std::vector<mavfl::Policy> parse_policy_list(const std::string& list) {
  std::vector<mavfl::Policy> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(mavfl::parse_policy(item));
    } catch (const std::invalid_argument& e) {
      throw mavfl::ConfigError(e.what());
    }
  }
  return out;
}

std::string seconds(double v) { return std::isfinite(v) ? fmt::format("{:.2f} s", v) : "never"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vehicular federated learning simulator"};
  app.require_subcommand(1);

  std::string config_path;
  Overrides overrides;

  auto* run = app.add_subcommand("run", "run one experiment");
  run->add_option("config", config_path, "JSON config file")->required();
  overrides.attach(run);

  int num_seeds = 10;
  std::string policies = "ducb,cbs,rbs,random";
  double target_fraction = 0.9;
  auto* sweep = app.add_subcommand("sweep", "paired-seed comparison of selection policies");
  sweep->add_option("config", config_path, "JSON config file")->required();
  sweep->add_option("--seeds", num_seeds, "number of consecutive seeds")->check(CLI::PositiveNumber);
  sweep->add_option("--policies", policies, "comma-separated policy list");
  sweep->add_option("--target-fraction", target_fraction,
                    "target as a fraction of the best accuracy on each seed");
  overrides.attach(sweep);

  auto* theory = app.add_subcommand("theory", "trace a run and evaluate the convergence checks");
  theory->add_option("config", config_path, "JSON config file")->required();
  overrides.attach(theory);

  CLI11_PARSE(app, argc, argv);

  try {
    mavfl::ExperimentConfig cfg = mavfl::load_config(config_path);
    overrides.apply(cfg);

    if (run->parsed()) {
      const auto summary = mavfl::run_and_write(cfg);
      fmt::print("{} rounds, final loss {}, final accuracy {}, cumulative delay {}\n",
                 summary.rounds.size(), summary.final_loss, summary.final_accuracy,
                 seconds(summary.cumulative_delay_s));
      fmt::print("outputs in {}\n", cfg.output_dir.string());
    } else if (sweep->parsed()) {
      const auto list = parse_policy_list(policies);
      const auto result = mavfl::run_sweep(cfg, num_seeds, list, target_fraction);
      for (std::size_t i = 0; i < list.size(); ++i) {
        fmt::print("{:<8} median delay to target: {}\n", mavfl::to_string(list[i]),
                   seconds(result.median_delay_s[i]));
      }
      fmt::print("outputs in {}\n", cfg.output_dir.string());
    } else if (theory->parsed()) {
      const auto report = mavfl::run_theory(cfg);
      auto out = mavfl::open_output(cfg.output_dir / "theory.json");
      out << mavfl::theory_to_json(report).dump(2) << '\n';
      fmt::print("local drift bound: {} (worst margin {})\n", report.lemma1.passed() ? "holds" : "violated",
                 report.lemma1.worst_margin);
      fmt::print("gradient-norm bound: lhs {} rhs {} ({})\n", report.theorem1.lhs, report.theorem1.rhs,
                 report.theorem1.holds() ? "holds" : "violated");
      fmt::print("outputs in {}\n", cfg.output_dir.string());
    }
  } catch (const mavfl::ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}
