#pragma once

// Experiment harness: configuration, the synchronous round loop, run
// summaries, sweeps and the files written for each of them.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "mavfl/fl_engine.hpp"
#include "mavfl/mobility.hpp"
#include "mavfl/radio_delay.hpp"
#include "mavfl/selection.hpp"
#include "mavfl/theory.hpp"

namespace mavfl {

struct TheoryConfig {
  std::size_t probes = 200;
  std::size_t identity_trials = 100000;
  std::vector<double> identity_survival = {0.2, 0.6, 1.0};
};

struct ExperimentConfig {
  std::uint64_t master_seed = 1;
  SegmentGeometry geometry;
  double velocity_kmh = 60.0;
  IdmParams idm;  // desired_speed is overwritten from velocity_kmh
  bool stationary = false;
  /// Vehicles on the segment in steady state; sets the default arrival rate
  /// (n * v0 / length) and the initial population.
  double steady_state_vehicles = 10.0;
  std::optional<double> arrival_rate;
  std::optional<int> initial_count;
  double mobility_dt = 0.1;

  RadioParams radio;
  ComputeParams compute;
  /// Uplink payload in bits; defaults to 32 bits per model parameter.
  std::optional<double> payload_bits;

  TrainConfig train;
  TaskSpec task;

  int k0 = 5;
  int rounds = 100;
  double deadline_s = kInfinity;        // T_d, whole training run
  double round_deadline_s = kInfinity;  // T_max, per round
  double idle_wait_s = 1.0;             // clock advance when the segment is empty
  Policy policy = Policy::ducb;
  double alpha = 0.6;
  std::optional<double> t_min;
  std::optional<double> t_max;
  double lambda = 0.9;
  std::optional<double> target_accuracy;

  std::filesystem::path output_dir = "out";
  bool log_trajectory = false;
  bool log_delay = true;
  bool log_selection = true;
  bool record_trace = false;
  TheoryConfig theory;

  double desired_speed() const { return kmh_to_mps(velocity_kmh); }
  double effective_arrival_rate() const;
  int effective_initial_count() const;
  IdmParams effective_idm() const;

  /// Throws ConfigError on any invalid value.
  void validate() const;
};

/// Parses a JSON document; unknown keys are rejected. Throws ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const ExperimentConfig& cfg);

struct RoundRecord {
  int round = 0;
  double start_time_s = 0.0;
  bool skipped = false;  // nobody on the segment
  std::vector<int> candidates;
  std::set<int> unexplored;  // DUCB: candidates with zero discounted count
  SelectionDecision decision;
  std::set<int> survivors;
  std::optional<double> ratio;
  DelayBreakdown delay;
  double round_duration_s = 0.0;
  double cumulative_delay_s = 0.0;
  double utility = 0.0;
  double global_loss = 0.0;
  double accuracy = 0.0;  // NaN for regression tasks
};

struct RunSummary {
  Policy policy = Policy::ducb;
  std::uint64_t seed = 0;
  double initial_loss = 0.0;
  double initial_accuracy = 0.0;
  std::vector<RoundRecord> rounds;
  double cumulative_delay_s = 0.0;
  double final_loss = 0.0;
  double final_accuracy = 0.0;
  double best_accuracy = 0.0;
  std::optional<double> target_accuracy;
  std::optional<double> delay_to_target_s;
  bool deadline_reached = false;
};

/// Cumulative delay at the first evaluation (initial model included) whose
/// accuracy reaches `target`; +infinity if it never does.
double delay_to_accuracy(const RunSummary& summary, double target);

/// State of one running experiment.
class Simulation {
 public:
  explicit Simulation(ExperimentConfig cfg);
  Simulation(ExperimentConfig cfg, Task task);

  /// Executes one round: select, distribute, train while traffic moves,
  /// dropout and deadline checks, round duration, aggregation, bandit update.
  RoundRecord run_round();
  bool finished() const;

  const ExperimentConfig& config() const { return cfg_; }
  const Task& task() const { return task_; }
  const Traffic& traffic() const { return traffic_; }
  const DucbState& ducb() const { return ducb_; }
  const ModelParams& global_model() const { return global_; }
  double clock() const { return clock_; }
  int round() const { return round_; }
  double model_bits() const;

  void enable_trace();
  const RunTrace& trace() const { return trace_; }

  /// Streams the per-step trajectory log (CSV) to `out`.
  void log_trajectory_to(std::ostream& out);

 private:
  void record_trace(const ModelParams& start, const std::map<int, LocalTrainResult>& results,
                    const std::set<int>& survivors, std::optional<double> ratio);

  ExperimentConfig cfg_;
  Task task_;
  Traffic traffic_;
  DucbState ducb_;
  DelayRange delay_range_;
  ModelParams global_;
  double clock_ = 0.0;
  int round_ = 0;
  bool tracing_ = false;
  RunTrace trace_;
};

/// Runs until R rounds or the training deadline. Writes nothing.
RunSummary run_experiment(Simulation& sim);
RunSummary run_experiment(const ExperimentConfig& cfg);

/// Runs and writes metrics.csv, summary.json and the optional logs into
/// cfg.output_dir.
RunSummary run_and_write(const ExperimentConfig& cfg);

struct SweepCell {
  Policy policy;
  std::uint64_t seed;
  RunSummary summary;
  double delay_to_target_s = kInfinity;  // 90% of the best accuracy of that seed
};

struct SweepResult {
  std::vector<SweepCell> cells;
  std::vector<Policy> policies;
  /// Median over seeds of delay_to_target_s per policy, in `policies` order.
  std::vector<double> median_delay_s;
};

/// Seeds master_seed .. master_seed + num_seeds - 1 for every policy. The
/// target for each seed is `target_fraction` of the best accuracy any policy
/// reached on that seed. Writes per-run outputs under
/// output_dir/<policy>/seed_<s>/ when `write` is set, plus curves.csv and
/// sweep.csv in output_dir.
SweepResult run_sweep(const ExperimentConfig& base, int num_seeds,
                      const std::vector<Policy>& policies, double target_fraction = 0.9,
                      bool write = true);

struct TheoryReport {
  ConstantEstimates estimates;
  std::optional<ConstantEstimates> closed_form;  // least-squares tasks only
  Lemma1Report lemma1;
  Theorem1Report theorem1;
  std::optional<Theorem1Report> theorem1_closed_form;
  std::vector<std::pair<double, IdentityReport>> identity;
};

/// Runs the configured experiment with tracing and evaluates every check.
TheoryReport run_theory(const ExperimentConfig& cfg);

// Output writers --------------------------------------------------------------

void write_metrics_csv(std::ostream& out, const RunSummary& summary);
void write_delay_csv(std::ostream& out, const RunSummary& summary);
void write_selection_csv(std::ostream& out, const RunSummary& summary);
nlohmann::json summary_to_json(const RunSummary& summary);
nlohmann::json theory_to_json(const TheoryReport& report);
/// Long format: policy, seed, round, cumulative_delay_s, accuracy, loss.
void write_curves_csv(std::ostream& out, const std::vector<SweepCell>& cells);
void write_sweep_csv(std::ostream& out, const SweepResult& result);

/// Opens `path` for writing, creating parent directories. Throws
/// std::runtime_error naming the path on failure.
std::ofstream open_output(const std::filesystem::path& path);

}  // namespace mavfl
