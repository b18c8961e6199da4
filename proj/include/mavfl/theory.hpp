#pragma once

// Empirical checks of the convergence analysis: constant estimation,
// the local-drift lemma, the averaged gradient-norm bound, and a Monte-Carlo
// check of the expected survivor aggregate.
//
// Every constant is estimated as a maximum over probe points, so all checks
// are conditional on those estimates covering the region a run visits.

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "mavfl/fl_engine.hpp"
#include "mavfl/mobility.hpp"
#include "mavfl/rng.hpp"

namespace mavfl {

struct ConstantEstimates {
  double smoothness = 0.0;     // L
  double grad_bound_sq = 0.0;  // G^2
  double noise_var = 0.0;      // sigma^2 (the theorem's delta^2)
  double divergence_sq = 0.0;  // epsilon_g^2
  double f_inf = 0.0;
  std::size_t probes = 0;
};

struct ProbeRegion {
  ModelParams center;
  double radius = 1.0;
};

/// Max-over-probes estimates. `batch_size` = nullopt probes full-batch
/// gradients (zero noise variance). Half of the smoothness probes follow a
/// gradient-difference power iteration so the estimate reaches the top
/// curvature direction. Probe k never depends on the total count, so adding
/// probes can only raise the estimates.
ConstantEstimates estimate_constants(const Task& task, std::size_t probe_count, Rng& rng,
                                     std::optional<int> batch_size = std::nullopt,
                                     std::optional<ProbeRegion> region = std::nullopt);

/// One local step t = r * E + e of a recorded run.
struct TraceStep {
  int round = 0;
  int epoch = 0;
  ModelParams virtual_global;               // survivor average, w^r if none survive
  std::map<int, ModelParams> local_models;  // every selected vehicle
};

struct RunTrace {
  int local_epochs = 1;
  double learning_rate = 0.01;
  ModelParams initial;
  /// Per round: success ratio, or nullopt for rounds with nobody selected.
  std::vector<std::optional<double>> round_ratio;
  std::vector<std::set<int>> round_survivors;
  std::vector<TraceStep> steps;
};

/// Adds every model visited in the trace as a probe for G^2 and epsilon_g^2
/// and lowers F_inf to the best loss seen.
void refine_with_trace(ConstantEstimates& est, const Task& task, const RunTrace& trace);

/// Exact constants for least-squares tasks: L is the top Hessian eigenvalue,
/// F_inf the closed-form optimum, sigma^2 = 0, and G^2 / epsilon_g^2 are the
/// exact maxima over the models visited in `trace`.
ConstantEstimates closed_form_constants(const Task& task, const RunTrace& trace);

struct Lemma1Report {
  double worst_margin = kInfinityMargin;  // min over steps of RHS - LHS
  double max_lhs = 0.0;
  double max_rhs = 0.0;
  std::size_t steps_checked = 0;
  std::size_t violations = 0;
  bool passed() const { return violations == 0; }

  static constexpr double kInfinityMargin = 1e300;
};

/// Checks sum_k ||wbar_t - w_k^t||^2 <= 4 K lr^2 (E - 1)^2 G^2 at every step,
/// summing over the survivors of the round (K = their number).
Lemma1Report lemma1_check(const RunTrace& trace, double learning_rate, int local_epochs,
                          const ConstantEstimates& est);

struct Theorem1Report {
  double lhs = 0.0;               // mean ||grad F(wbar_t)||^2 over all steps
  double rhs = 0.0;
  double descent_term = 0.0;      // mean over included steps of 2/(lr p_t) (F0 - F_inf)
  double divergence_term = 0.0;   // 2 eps_g^2
  double noise_term = 0.0;        // lr (sigma^2 + G^2) L
  double drift_term = 0.0;        // 4 lr^2 (E-1)^2 G^2 L^2
  std::size_t steps = 0;
  std::size_t included_steps = 0;
  std::size_t excluded_rounds = 0;  // p = 0 or nobody selected
  bool holds() const { return lhs <= rhs; }
};

Theorem1Report theorem1_bound(const RunTrace& trace, const Task& task,
                              const ConstantEstimates& est, double learning_rate,
                              int local_epochs);

struct IdentityReport {
  /// Max over components of |mean(sum_k g_k 1_k) - p sum_k g_k| / |p sum_k g_k|
  /// over all trials.
  double relative_error = 0.0;
  /// Same estimator restricted to trials with at least one survivor.
  double conditioned_relative_error = 0.0;
  /// 1 / (1 - (1-p)^K): the analytic inflation caused by that conditioning.
  double conditioning_factor = 1.0;
  /// Error of the survivor-normalised aggregate sum_k g_k 1_k / sum_k 1_k
  /// (conditioned on a survivor) against the same target. This estimates
  /// the plain mean of g_k, so it only agrees with p * sum_k g_k when p K = 1.
  double normalized_aggregate_error = 0.0;
  std::size_t trials = 0;
  std::size_t discarded_trials = 0;  // all indicators zero
};

/// Draws independent Bernoulli(survival_prob) indicators over fixed random
/// gradient vectors and compares the mean survivor sum with p * sum_k g_k.
IdentityReport identity_check(std::size_t num_trials, int num_vehicles, double survival_prob,
                              Rng& rng, int dim = 8);

}  // namespace mavfl
