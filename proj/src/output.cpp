// CSV and JSON writers for run, sweep and theory results.

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "mavfl/harness.hpp"

namespace mavfl {

using nlohmann::json;

namespace {

template <typename Range>
std::string join_ids(const Range& ids) {
  return fmt::format("{}", fmt::join(ids, ";"));
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string ratio_field(const std::optional<double>& ratio) {
  return ratio ? fmt::format("{}", *ratio) : std::string("nan");
}

json estimates_to_json(const ConstantEstimates& e) {
  return {{"smoothness", e.smoothness},       {"grad_bound_sq", e.grad_bound_sq},
          {"noise_var", e.noise_var},         {"divergence_sq", e.divergence_sq},
          {"f_inf", e.f_inf},                 {"probes", e.probes}};
}

json theorem_to_json(const Theorem1Report& t) {
  return {{"lhs", t.lhs},
          {"rhs", t.rhs},
          {"holds", t.holds()},
          {"descent_term", t.descent_term},
          {"divergence_term", t.divergence_term},
          {"noise_term", t.noise_term},
          {"drift_term", t.drift_term},
          {"steps", t.steps},
          {"included_steps", t.included_steps},
          {"excluded_rounds", t.excluded_rounds}};
}

}  // namespace

std::ofstream open_output(const std::filesystem::path& path) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) {
    throw std::runtime_error(fmt::format("cannot create directory '{}': {}",
                                         path.parent_path().string(), ec.message()));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(fmt::format("cannot open '{}' for writing", path.string()));
  return out;
}

void write_metrics_csv(std::ostream& out, const RunSummary& summary) {
  out << "round,p_r,global_loss,global_accuracy,cumulative_delay_s,selected_ids,survivor_ids\n";
  for (const auto& rec : summary.rounds) {
    out << fmt::format("{},{},{},{},{},{},{}\n", rec.round, ratio_field(rec.ratio), rec.global_loss,
                       rec.accuracy, rec.cumulative_delay_s, join_ids(rec.decision.chosen),
                       join_ids(rec.survivors));
  }
}

void write_delay_csv(std::ostream& out, const RunSummary& summary) {
  out << "round,vehicle_id,bw_hz,rate_bps,t_comm_s,t_comp_s,round_duration_s\n";
  for (const auto& rec : summary.rounds) {
    for (const auto& v : rec.delay.vehicles) {
      out << fmt::format("{},{},{},{},{},{},{}\n", rec.round, v.id, v.bandwidth_hz, v.rate_bps,
                         v.comm_s, v.compute_s, rec.round_duration_s);
    }
  }
}

void write_selection_csv(std::ostream& out, const RunSummary& summary) {
  out << "round,policy,candidate_count,chosen_ids,ucb,round_utility\n";
  const auto policy = to_string(summary.policy);
  for (const auto& rec : summary.rounds) {
    std::vector<std::string> ucb;
    for (int id : rec.decision.chosen) {
      if (auto it = rec.decision.ucb.find(id); it != rec.decision.ucb.end()) {
        ucb.push_back(fmt::format("{}:{}", id, it->second));
      }
    }
    out << fmt::format("{},{},{},{},{},{}\n", rec.round, policy, rec.candidates.size(),
                       join_ids(rec.decision.chosen), join_ids(ucb), rec.utility);
  }
}

json summary_to_json(const RunSummary& summary) {
  json rounds = json::array();
  for (const auto& rec : summary.rounds) {
    rounds.push_back({{"round", rec.round},
                      {"skipped", rec.skipped},
                      {"p_r", rec.ratio ? json(*rec.ratio) : json(nullptr)},
                      {"global_loss", rec.global_loss},
                      {"global_accuracy", number_or_null(rec.accuracy)},
                      {"round_duration_s", rec.round_duration_s},
                      {"cumulative_delay_s", rec.cumulative_delay_s},
                      {"utility", rec.utility}});
  }
  return {{"policy", std::string(to_string(summary.policy))},
          {"seed", summary.seed},
          {"rounds_completed", summary.rounds.size()},
          {"initial_loss", summary.initial_loss},
          {"initial_accuracy", number_or_null(summary.initial_accuracy)},
          {"final_loss", summary.final_loss},
          {"final_accuracy", number_or_null(summary.final_accuracy)},
          {"best_accuracy", number_or_null(summary.best_accuracy)},
          {"cumulative_delay_s", summary.cumulative_delay_s},
          {"target_accuracy", summary.target_accuracy ? json(*summary.target_accuracy) : json(nullptr)},
          {"delay_to_target_s",
           summary.delay_to_target_s ? json(*summary.delay_to_target_s) : json(nullptr)},
          {"deadline_reached", summary.deadline_reached},
          {"rounds", rounds}};
}

json theory_to_json(const TheoryReport& report) {
  json j;
  j["estimates"] = estimates_to_json(report.estimates);
  if (report.closed_form) j["closed_form"] = estimates_to_json(*report.closed_form);
  j["lemma1"] = {{"passed", report.lemma1.passed()},
                 {"worst_margin", report.lemma1.worst_margin},
                 {"max_lhs", report.lemma1.max_lhs},
                 {"max_rhs", report.lemma1.max_rhs},
                 {"steps_checked", report.lemma1.steps_checked},
                 {"violations", report.lemma1.violations}};
  j["theorem1"] = theorem_to_json(report.theorem1);
  if (report.theorem1_closed_form) {
    j["theorem1_closed_form"] = theorem_to_json(*report.theorem1_closed_form);
  }
  json identity = json::array();
  for (const auto& [p, r] : report.identity) {
    identity.push_back({{"survival_prob", p},
                        {"relative_error", r.relative_error},
                        {"conditioned_relative_error", r.conditioned_relative_error},
                        {"conditioning_factor", r.conditioning_factor},
                        {"normalized_aggregate_error", r.normalized_aggregate_error},
                        {"trials", r.trials},
                        {"discarded_trials", r.discarded_trials}});
  }
  j["identity"] = identity;
  return j;
}

void write_curves_csv(std::ostream& out, const std::vector<SweepCell>& cells) {
  out << "policy,seed,round,cumulative_delay_s,accuracy,loss\n";
  for (const auto& cell : cells) {
    const auto policy = to_string(cell.policy);
    for (const auto& rec : cell.summary.rounds) {
      out << fmt::format("{},{},{},{},{},{}\n", policy, cell.seed, rec.round,
                         rec.cumulative_delay_s, rec.accuracy, rec.global_loss);
    }
  }
}

void write_sweep_csv(std::ostream& out, const SweepResult& result) {
  out << "policy,seed,delay_to_target_s,final_accuracy,final_loss,cumulative_delay_s\n";
  for (const auto& cell : result.cells) {
    out << fmt::format("{},{},{},{},{},{}\n", to_string(cell.policy), cell.seed,
                       cell.delay_to_target_s, cell.summary.final_accuracy, cell.summary.final_loss,
                       cell.summary.cumulative_delay_s);
  }
  for (std::size_t i = 0; i < result.policies.size(); ++i) {
    out << fmt::format("{},median,{},,,\n", to_string(result.policies[i]), result.median_delay_s[i]);
  }
}

}  // namespace mavfl
