#include "mavfl/theory.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mavfl {

namespace {

ModelParams sample_in_ball(const ProbeRegion& region, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto d = region.center.size();
  ModelParams dir(d);
  for (Eigen::Index i = 0; i < d; ++i) dir(i) = normal(rng);
  const double norm = dir.norm();
  if (norm > 0.0) dir /= norm;
  const double r = region.radius * std::pow(unit(rng), 1.0 / static_cast<double>(d));
  return region.center + r * dir;
}

struct PointStats {
  double grad_bound_sq = 0.0;
  double divergence_sq = 0.0;
};

// Max over shards of ||grad f_k||^2 and (1/K) sum_k ||grad f_k - grad F||^2.
PointStats shard_stats(const Task& task, const ModelParams& w) {
  std::vector<ModelParams> grads;
  grads.reserve(task.num_shards());
  ModelParams mean = ModelParams::Zero(w.size());
  for (const auto& shard : task.shards) {
    grads.push_back(task.model->gradient(w, shard));
    mean += grads.back();
  }
  mean /= static_cast<double>(grads.size());
  PointStats out;
  for (const auto& g : grads) {
    out.grad_bound_sq = std::max(out.grad_bound_sq, g.squaredNorm());
    out.divergence_sq += (g - mean).squaredNorm();
  }
  out.divergence_sq /= static_cast<double>(grads.size());
  return out;
}

double max_batch_noise(const Task& task, const ModelParams& w, int batch_size, Rng& rng) {
  double worst = 0.0;
  for (const auto& shard : task.shards) {
    const auto n = static_cast<Eigen::Index>(shard.size());
    if (batch_size >= n) continue;
    std::vector<Eigen::Index> rows(shard.size());
    std::iota(rows.begin(), rows.end(), Eigen::Index{0});
    std::shuffle(rows.begin(), rows.end(), rng);
    rows.resize(static_cast<std::size_t>(batch_size));
    const ModelParams diff = task.model->batch_gradient(w, shard, rows) - task.model->gradient(w, shard);
    worst = std::max(worst, diff.squaredNorm());
  }
  return worst;
}

}  // namespace

ConstantEstimates estimate_constants(const Task& task, std::size_t probe_count, Rng& rng,
                                     std::optional<int> batch_size,
                                     std::optional<ProbeRegion> region) {
  ProbeRegion reg = region.value_or(ProbeRegion{task.initial, 1.0});
  if (reg.center.size() != static_cast<Eigen::Index>(task.dimension())) {
    throw std::invalid_argument("probe region has the wrong dimension");
  }

  ConstantEstimates est;
  const bool closed_form_min = task.kind == TaskKind::quadratic;
  est.f_inf = closed_form_min ? task.global_loss(quadratic_optimum(task)) : kInfinity;

  // Power-iteration chain on gradient differences around the region centre.
  const double step = 0.5 * reg.radius;
  const ModelParams base_grad = task.global_gradient(reg.center);
  ModelParams direction = sample_in_ball(ProbeRegion{ModelParams::Zero(reg.center.size()), 1.0}, rng);
  if (direction.norm() == 0.0) direction(0) = 1.0;
  direction.normalize();

  for (std::size_t k = 0; k < probe_count; ++k) {
    const ModelParams w = sample_in_ball(reg, rng);
    const PointStats stats = shard_stats(task, w);
    est.grad_bound_sq = std::max(est.grad_bound_sq, stats.grad_bound_sq);
    est.divergence_sq = std::max(est.divergence_sq, stats.divergence_sq);
    if (!closed_form_min) est.f_inf = std::min(est.f_inf, task.global_loss(w));
    if (batch_size) est.noise_var = std::max(est.noise_var, max_batch_noise(task, w, *batch_size, rng));

    if (k % 2 == 0) {
      const ModelParams other = sample_in_ball(reg, rng);
      const double dist = (w - other).norm();
      if (dist > 0.0) {
        const double ratio = (task.global_gradient(w) - task.global_gradient(other)).norm() / dist;
        est.smoothness = std::max(est.smoothness, ratio);
      }
    } else {
      const ModelParams diff = task.global_gradient(reg.center + step * direction) - base_grad;
      const double norm = diff.norm();
      est.smoothness = std::max(est.smoothness, norm / step);
      if (norm > 0.0) direction = diff / norm;
    }
    ++est.probes;
  }
  if (!std::isfinite(est.f_inf)) est.f_inf = task.global_loss(reg.center);
  return est;
}

void refine_with_trace(ConstantEstimates& est, const Task& task, const RunTrace& trace) {
  for (const auto& step : trace.steps) {
    const PointStats at_global = shard_stats(task, step.virtual_global);
    est.grad_bound_sq = std::max(est.grad_bound_sq, at_global.grad_bound_sq);
    est.divergence_sq = std::max(est.divergence_sq, at_global.divergence_sq);
    est.f_inf = std::min(est.f_inf, task.global_loss(step.virtual_global));
    for (const auto& [id, w] : step.local_models) {
      est.grad_bound_sq = std::max(est.grad_bound_sq, task.model->gradient(w, task.shard_for(id)).squaredNorm());
    }
  }
}

ConstantEstimates closed_form_constants(const Task& task, const RunTrace& trace) {
  if (task.kind != TaskKind::quadratic) {
    throw std::invalid_argument("closed-form constants need a least-squares task");
  }
  ConstantEstimates est;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(quadratic_hessian(task), Eigen::EigenvaluesOnly);
  est.smoothness = eig.eigenvalues().maxCoeff();
  est.f_inf = task.global_loss(quadratic_optimum(task));
  est.noise_var = 0.0;
  auto visit = [&](const ModelParams& w) {
    const PointStats stats = shard_stats(task, w);
    est.grad_bound_sq = std::max(est.grad_bound_sq, stats.grad_bound_sq);
    est.divergence_sq = std::max(est.divergence_sq, stats.divergence_sq);
    ++est.probes;
  };
  visit(trace.initial);
  for (const auto& step : trace.steps) {
    visit(step.virtual_global);
    for (const auto& [id, w] : step.local_models) visit(w);
  }
  return est;
}

Lemma1Report lemma1_check(const RunTrace& trace, double learning_rate, int local_epochs,
                          const ConstantEstimates& est) {
  Lemma1Report report;
  const double drift = static_cast<double>(local_epochs - 1);
  for (const auto& step : trace.steps) {
    const auto& survivors = trace.round_survivors.at(static_cast<std::size_t>(step.round));
    double lhs = 0.0;
    for (int id : survivors) lhs += (step.virtual_global - step.local_models.at(id)).squaredNorm();
    const double k = static_cast<double>(survivors.size());
    const double rhs = 4.0 * k * learning_rate * learning_rate * drift * drift * est.grad_bound_sq;
    report.worst_margin = std::min(report.worst_margin, rhs - lhs);
    report.max_lhs = std::max(report.max_lhs, lhs);
    report.max_rhs = std::max(report.max_rhs, rhs);
    if (lhs > rhs) ++report.violations;
    ++report.steps_checked;
  }
  return report;
}

Theorem1Report theorem1_bound(const RunTrace& trace, const Task& task,
                              const ConstantEstimates& est, double learning_rate,
                              int local_epochs) {
  Theorem1Report report;
  const double gap0 = task.global_loss(trace.initial) - est.f_inf;
  double grad_sum = 0.0;
  double descent_sum = 0.0;
  for (const auto& step : trace.steps) {
    grad_sum += task.global_gradient(step.virtual_global).squaredNorm();
    ++report.steps;
    const auto& p = trace.round_ratio.at(static_cast<std::size_t>(step.round));
    if (p && *p > 0.0) {
      descent_sum += 2.0 / (learning_rate * *p) * gap0;
      ++report.included_steps;
    }
  }
  for (const auto& p : trace.round_ratio) {
    if (!p || *p <= 0.0) ++report.excluded_rounds;
  }
  if (report.steps > 0) report.lhs = grad_sum / static_cast<double>(report.steps);
  if (report.included_steps > 0) {
    report.descent_term = descent_sum / static_cast<double>(report.included_steps);
  }
  const double drift = static_cast<double>(local_epochs - 1);
  const double l = est.smoothness;
  report.divergence_term = 2.0 * est.divergence_sq;
  report.noise_term = learning_rate * (est.noise_var + est.grad_bound_sq) * l;
  report.drift_term =
      4.0 * learning_rate * learning_rate * drift * drift * est.grad_bound_sq * l * l;
  report.rhs = report.descent_term + report.divergence_term + report.noise_term + report.drift_term;
  return report;
}

IdentityReport identity_check(std::size_t num_trials, int num_vehicles, double survival_prob,
                              Rng& rng, int dim) {
  if (num_vehicles < 1 || dim < 1) throw std::invalid_argument("need vehicles and dimensions");
  if (!(survival_prob > 0.0 && survival_prob <= 1.0)) {
    throw std::invalid_argument("survival probability must lie in (0, 1]");
  }
  const auto k_count = static_cast<std::size_t>(num_vehicles);
  std::normal_distribution<double> normal(0.0, 1.0);
  // Positive-mean gradients keep every component of the target away from 0.
  std::vector<ModelParams> grads(k_count, ModelParams(dim));
  for (auto& g : grads) {
    for (Eigen::Index j = 0; j < dim; ++j) g(j) = 1.0 + 0.5 * normal(rng);
  }
  ModelParams grad_sum = ModelParams::Zero(dim);
  for (const auto& g : grads) grad_sum += g;
  const ModelParams target = survival_prob * grad_sum;

  // Integer survival counts keep the p = 1 case exact.
  std::vector<std::size_t> all_counts(k_count, 0);
  std::vector<std::size_t> cond_counts(k_count, 0);
  std::vector<double> normalized_weight(k_count, 0.0);
  std::bernoulli_distribution survive(survival_prob);
  std::vector<int> ind(k_count);

  IdentityReport report;
  report.trials = num_trials;
  for (std::size_t t = 0; t < num_trials; ++t) {
    int alive = 0;
    for (std::size_t k = 0; k < k_count; ++k) {
      ind[k] = survive(rng) ? 1 : 0;
      alive += ind[k];
    }
    for (std::size_t k = 0; k < k_count; ++k) all_counts[k] += static_cast<std::size_t>(ind[k]);
    if (alive == 0) {
      ++report.discarded_trials;
      continue;
    }
    for (std::size_t k = 0; k < k_count; ++k) {
      cond_counts[k] += static_cast<std::size_t>(ind[k]);
      normalized_weight[k] += static_cast<double>(ind[k]) / alive;
    }
  }

  const std::size_t kept = num_trials - report.discarded_trials;
  auto estimate = [&](auto weight_of) {
    ModelParams est = ModelParams::Zero(dim);
    for (std::size_t k = 0; k < k_count; ++k) est += weight_of(k) * grads[k];
    return est;
  };
  auto max_rel = [&](const ModelParams& est) {
    return ((est - target).array().abs() / target.array().abs()).maxCoeff();
  };

  const double n_all = static_cast<double>(num_trials);
  report.relative_error = max_rel(estimate([&](std::size_t k) {
    return static_cast<double>(all_counts[k]) / n_all;
  }));
  if (kept > 0) {
    const double n_kept = static_cast<double>(kept);
    report.conditioned_relative_error = max_rel(estimate([&](std::size_t k) {
      return static_cast<double>(cond_counts[k]) / n_kept;
    }));
    report.normalized_aggregate_error =
        max_rel(estimate([&](std::size_t k) { return normalized_weight[k] / n_kept; }));
  }
  report.conditioning_factor =
      1.0 / (1.0 - std::pow(1.0 - survival_prob, static_cast<double>(num_vehicles)));
  return report;
}

}  // namespace mavfl
