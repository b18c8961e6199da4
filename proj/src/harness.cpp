#include "mavfl/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include <fmt/format.h>

#include "mavfl/errors.hpp"

namespace mavfl {

namespace {

Task build_task(const ExperimentConfig& cfg) {
  TaskSpec spec = cfg.task;
  spec.seed = cfg.master_seed;
  return make_task(spec);
}

Traffic build_traffic(const ExperimentConfig& cfg) {
  ArrivalProcess arrivals;
  arrivals.rate = cfg.effective_arrival_rate();
  arrivals.initial_count = cfg.effective_initial_count();
  arrivals.rng = make_stream(cfg.master_seed, Stream::mobility);
  Traffic traffic(cfg.geometry, cfg.effective_idm(), std::move(arrivals), cfg.mobility_dt,
                  cfg.stationary);
  traffic.populate_initial(cfg.stationary ? 0.0 : cfg.desired_speed());
  return traffic;
}

double median(std::vector<double> values) {
  if (values.empty()) return kInfinity;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

// Accuracy for classifiers; for regression the fraction of the initial loss
// gap that has been closed (1 at the best loss reached by any policy).
double progress_score(const RoundRecord& rec, double initial_loss, double best_loss, bool classifier) {
  if (classifier) return rec.accuracy;
  const double gap = initial_loss - best_loss;
  if (!(gap > 0.0)) return rec.global_loss <= best_loss ? 1.0 : 0.0;
  return (initial_loss - rec.global_loss) / gap;
}

}  // namespace

double delay_to_accuracy(const RunSummary& summary, double target) {
  if (summary.initial_accuracy >= target) return 0.0;
  for (const auto& rec : summary.rounds) {
    if (rec.accuracy >= target) return rec.cumulative_delay_s;
  }
  return kInfinity;
}

// ---------------------------------------------------------------------------
// Simulation

Simulation::Simulation(ExperimentConfig cfg) : Simulation(cfg, build_task(cfg)) {}

Simulation::Simulation(ExperimentConfig cfg, Task task)
    : cfg_((cfg.validate(), std::move(cfg))),
      task_(std::move(task)),
      traffic_(build_traffic(cfg_)),
      ducb_(cfg_.lambda),
      global_(task_.initial) {}

double Simulation::model_bits() const {
  return cfg_.payload_bits.value_or(model_size_bits(task_.dimension()));
}

bool Simulation::finished() const {
  return round_ >= cfg_.rounds || clock_ >= cfg_.deadline_s;
}

void Simulation::enable_trace() {
  tracing_ = true;
  trace_ = RunTrace{};
  trace_.local_epochs = cfg_.train.local_epochs;
  trace_.learning_rate = cfg_.train.learning_rate;
  trace_.initial = global_;
}

void Simulation::log_trajectory_to(std::ostream& out) {
  out << "step,time_s,vehicle_id,position_m,velocity_mps,zone\n";
  const SegmentGeometry geom = cfg_.geometry;
  traffic_.set_observer([&out, geom](std::int64_t step, double time,
                                     const std::vector<VehicleState>& vehicles) {
    for (const auto& v : vehicles) {
      if (v.departed || v.position < 0.0 || v.position > geom.length) continue;
      out << fmt::format("{},{},{},{},{},{}\n", step, time, v.id, v.position, v.velocity,
                         zone_of(v.position, geom));
    }
  });
}

void Simulation::record_trace(const ModelParams& start,
                              const std::map<int, LocalTrainResult>& results,
                              const std::set<int>& survivors, std::optional<double> ratio) {
  trace_.round_ratio.push_back(ratio);
  trace_.round_survivors.push_back(survivors);
  const double lr = cfg_.train.learning_rate;
  const ModelParams zero = ModelParams::Zero(start.size());
  std::map<int, ModelParams> partial;  // sum of epoch gradients before the current epoch
  for (const auto& [id, res] : results) partial.emplace(id, zero);

  for (int e = 0; e < cfg_.train.local_epochs; ++e) {
    TraceStep step;
    step.round = round_;
    step.epoch = e;
    ModelParams sum = zero;
    for (int id : survivors) sum += partial.at(id);
    step.virtual_global =
        survivors.empty() ? start : ModelParams(start - lr * (sum / static_cast<double>(survivors.size())));
    for (const auto& [id, res] : results) {
      step.local_models.emplace(id, start - lr * partial.at(id));
      partial.at(id) += res.epoch_gradients[static_cast<std::size_t>(e)];
    }
    trace_.steps.push_back(std::move(step));
  }
}

RoundRecord Simulation::run_round() {
  RoundRecord rec;
  rec.round = round_;
  rec.start_time_s = clock_;
  const double t0 = clock_;
  traffic_.advance_to(t0);
  const std::vector<VehicleState> candidates = traffic_.snapshot(t0);
  for (const auto& v : candidates) {
    rec.candidates.push_back(v.id);
    if (cfg_.policy == Policy::ducb && ducb_.count(v.id) == 0.0) rec.unexplored.insert(v.id);
  }
  std::sort(rec.candidates.begin(), rec.candidates.end());

  auto finish = [&](double duration) {
    rec.round_duration_s = duration;
    clock_ += duration;
    traffic_.advance_to(clock_);
    rec.cumulative_delay_s = clock_;
    rec.global_loss = task_.global_loss(global_);
    rec.accuracy = task_.test_accuracy(global_);
    ++round_;
    return rec;
  };

  if (candidates.empty()) {
    rec.skipped = true;
    if (tracing_) record_trace(global_, {}, {}, std::nullopt);
    return finish(cfg_.idle_wait_s);
  }

  Rng select_rng = make_stream(cfg_.master_seed, Stream::selection, static_cast<std::uint64_t>(round_));
  rec.decision = select(cfg_.policy, candidates, ducb_, cfg_.k0, cfg_.geometry, cfg_.radio, select_rng);
  const std::set<int> chosen(rec.decision.chosen.begin(), rec.decision.chosen.end());

  // Local training from the distributed model.
  const ModelParams start = global_;
  std::map<int, LocalTrainResult> results;
  std::vector<UplinkRequest> requests;
  for (int id : rec.decision.chosen) {
    Rng train_rng = make_stream(cfg_.master_seed, Stream::training, static_cast<std::uint64_t>(id),
                                static_cast<std::uint64_t>(round_));
    const LocalDataset& data = task_.shard_for(id);
    results.emplace(id, local_update(start, data, *task_.model, cfg_.train, train_rng));
    UplinkRequest req;
    req.id = id;
    req.compute_s = compute_time(data.size(), cfg_.compute);
    if (cfg_.radio.fading) {
      Rng fade = make_stream(cfg_.master_seed, Stream::fading, static_cast<std::uint64_t>(id),
                             static_cast<std::uint64_t>(round_));
      req.channel_gain = std::exponential_distribution<double>(1.0)(fade);
    }
    requests.push_back(req);
  }

  // Traffic keeps moving while each vehicle computes; its upload position is
  // where it stands when its own computation ends.
  std::vector<std::size_t> order(requests.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return requests[a].compute_s < requests[b].compute_s;
  });
  for (std::size_t i : order) {
    const double t_up = t0 + requests[i].compute_s;
    traffic_.advance_to(t_up);
    auto state = traffic_.state_at(requests[i].id, t_up);
    if (state && dropout_indicator(state->position, cfg_.geometry) == 1) {
      requests[i].upload_position = state->position;
    }
  }

  rec.delay = round_duration(requests, model_bits(), cfg_.geometry, cfg_.radio, cfg_.round_deadline_s);

  std::map<int, ModelParams> updates;
  std::map<int, int> indicators;
  for (const auto& vd : rec.delay.vehicles) {
    indicators[vd.id] = vd.delivered() ? 1 : 0;
    if (vd.delivered()) rec.survivors.insert(vd.id);
    updates.emplace(vd.id, results.at(vd.id).update);
  }
  global_ = aggregate(start, updates, indicators, cfg_.train.learning_rate);
  rec.ratio = success_ratio(chosen, rec.survivors);

  const double duration = rec.delay.round_duration_s;
  delay_range_.observe(duration);
  const UtilityParams up = cfg_.t_min ? UtilityParams{cfg_.alpha, *cfg_.t_min, *cfg_.t_max}
                                      : delay_range_.params(cfg_.alpha);
  rec.utility = utility(*rec.ratio, duration, up);
  if (cfg_.policy == Policy::ducb) ducb_update(ducb_, chosen, rec.utility);

  if (tracing_) record_trace(start, results, rec.survivors, rec.ratio);
  return finish(duration);
}

// ---------------------------------------------------------------------------
// Runs

RunSummary run_experiment(Simulation& sim) {
  RunSummary summary;
  summary.policy = sim.config().policy;
  summary.seed = sim.config().master_seed;
  summary.initial_loss = sim.task().global_loss(sim.global_model());
  summary.initial_accuracy = sim.task().test_accuracy(sim.global_model());
  summary.best_accuracy = summary.initial_accuracy;
  summary.final_loss = summary.initial_loss;
  summary.final_accuracy = summary.initial_accuracy;
  summary.cumulative_delay_s = sim.clock();

  while (!sim.finished()) {
    summary.rounds.push_back(sim.run_round());
    const auto& rec = summary.rounds.back();
    summary.final_loss = rec.global_loss;
    summary.final_accuracy = rec.accuracy;
    summary.best_accuracy = std::max(summary.best_accuracy, rec.accuracy);
    summary.cumulative_delay_s = rec.cumulative_delay_s;
  }
  summary.deadline_reached = sim.clock() >= sim.config().deadline_s;
  summary.target_accuracy = sim.config().target_accuracy;
  if (summary.target_accuracy) {
    const double d = delay_to_accuracy(summary, *summary.target_accuracy);
    if (std::isfinite(d)) summary.delay_to_target_s = d;
  }
  return summary;
}

RunSummary run_experiment(const ExperimentConfig& cfg) {
  Simulation sim(cfg);
  return run_experiment(sim);
}

RunSummary run_and_write(const ExperimentConfig& cfg) {
  Simulation sim(cfg);
  std::ofstream trajectory;
  if (cfg.log_trajectory) {
    trajectory = open_output(cfg.output_dir / "trajectory.csv");
    sim.log_trajectory_to(trajectory);
  }
  RunSummary summary = run_experiment(sim);
  {
    auto out = open_output(cfg.output_dir / "metrics.csv");
    write_metrics_csv(out, summary);
  }
  if (cfg.log_delay) {
    auto out = open_output(cfg.output_dir / "delay.csv");
    write_delay_csv(out, summary);
  }
  if (cfg.log_selection) {
    auto out = open_output(cfg.output_dir / "selection.csv");
    write_selection_csv(out, summary);
  }
  {
    auto out = open_output(cfg.output_dir / "summary.json");
    nlohmann::json j = summary_to_json(summary);
    j["config"] = config_to_json(cfg);
    out << j.dump(2) << '\n';
  }
  return summary;
}

SweepResult run_sweep(const ExperimentConfig& base, int num_seeds,
                      const std::vector<Policy>& policies, double target_fraction, bool write) {
  if (num_seeds < 1) throw ConfigError("a sweep needs at least one seed");
  if (policies.empty()) throw ConfigError("a sweep needs at least one policy");
  base.validate();

  SweepResult result;
  result.policies = policies;
  for (int s = 0; s < num_seeds; ++s) {
    for (Policy p : policies) {
      SweepCell cell{p, base.master_seed + static_cast<std::uint64_t>(s), {}, kInfinity};
      result.cells.push_back(cell);
    }
  }

  // Cells are independent; run them on a small worker pool.
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(result.cells.size());
  auto worker = [&] {
    for (std::size_t i = next++; i < result.cells.size(); i = next++) {
      auto& cell = result.cells[i];
      ExperimentConfig cfg = base;
      cfg.master_seed = cell.seed;
      cfg.policy = cell.policy;
      try {
        if (write) {
          cfg.output_dir = base.output_dir / std::string(to_string(cell.policy)) /
                           fmt::format("seed_{}", cell.seed);
          cell.summary = run_and_write(cfg);
        } else {
          cell.summary = run_experiment(cfg);
        }
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned threads =
      std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(),
                                       static_cast<unsigned>(result.cells.size())));
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  const bool classifier = base.task.kind != TaskKind::quadratic;
  const std::size_t np = policies.size();
  for (int s = 0; s < num_seeds; ++s) {
    auto first = result.cells.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(s) * np);
    auto last = first + static_cast<std::ptrdiff_t>(np);
    double best_loss = kInfinity;
    double best_acc = -kInfinity;
    for (auto it = first; it != last; ++it) {
      best_acc = std::max(best_acc, it->summary.best_accuracy);
      best_loss = std::min(best_loss, it->summary.initial_loss);
      for (const auto& rec : it->summary.rounds) best_loss = std::min(best_loss, rec.global_loss);
    }
    for (auto it = first; it != last; ++it) {
      const auto& sum = it->summary;
      const double target = classifier ? target_fraction * best_acc : target_fraction;
      RoundRecord initial;
      initial.global_loss = sum.initial_loss;
      initial.accuracy = sum.initial_accuracy;
      if (progress_score(initial, sum.initial_loss, best_loss, classifier) >= target) {
        it->delay_to_target_s = 0.0;
        continue;
      }
      for (const auto& rec : sum.rounds) {
        if (progress_score(rec, sum.initial_loss, best_loss, classifier) >= target) {
          it->delay_to_target_s = rec.cumulative_delay_s;
          break;
        }
      }
    }
  }

  for (Policy p : policies) {
    std::vector<double> delays;
    for (const auto& cell : result.cells) {
      if (cell.policy == p) delays.push_back(cell.delay_to_target_s);
    }
    result.median_delay_s.push_back(median(delays));
  }

  if (write) {
    auto curves = open_output(base.output_dir / "curves.csv");
    write_curves_csv(curves, result.cells);
    auto sweep = open_output(base.output_dir / "sweep.csv");
    write_sweep_csv(sweep, result);
  }
  return result;
}

TheoryReport run_theory(const ExperimentConfig& cfg) {
  Simulation sim(cfg);
  sim.enable_trace();
  run_experiment(sim);
  const Task& task = sim.task();
  const RunTrace& trace = sim.trace();

  // Probe a ball around the start that covers every model the run visited.
  double radius = 1.0;
  for (const auto& step : trace.steps) {
    radius = std::max(radius, (step.virtual_global - trace.initial).norm());
    for (const auto& [id, w] : step.local_models) radius = std::max(radius, (w - trace.initial).norm());
  }
  std::optional<int> batch;
  const std::size_t shard_size = task.shards.front().size();
  if (!cfg.train.full_batch && static_cast<std::size_t>(cfg.train.batch_size) < shard_size) {
    batch = cfg.train.batch_size;
  }

  TheoryReport report;
  Rng probe_rng = make_stream(cfg.master_seed, Stream::probes);
  report.estimates = estimate_constants(task, cfg.theory.probes, probe_rng, batch,
                                        ProbeRegion{trace.initial, radius});
  refine_with_trace(report.estimates, task, trace);

  const double lr = cfg.train.learning_rate;
  const int epochs = cfg.train.local_epochs;
  if (task.kind == TaskKind::quadratic) {
    report.closed_form = closed_form_constants(task, trace);
    if (batch) report.closed_form->noise_var = report.estimates.noise_var;
    report.theorem1_closed_form = theorem1_bound(trace, task, *report.closed_form, lr, epochs);
  }
  const ConstantEstimates& for_lemma = report.closed_form ? *report.closed_form : report.estimates;
  report.lemma1 = lemma1_check(trace, lr, epochs, for_lemma);
  report.theorem1 = theorem1_bound(trace, task, report.estimates, lr, epochs);

  for (double p : cfg.theory.identity_survival) {
    Rng mc = make_stream(cfg.master_seed, Stream::monte_carlo,
                         static_cast<std::uint64_t>(std::llround(p * 1e6)));
    report.identity.emplace_back(p, identity_check(cfg.theory.identity_trials, cfg.k0, p, mc));
  }
  return report;
}

}  // namespace mavfl
