#include "mavfl/selection.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace mavfl {

void UtilityParams::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
  if (!(t_max >= t_min)) throw std::invalid_argument("t_max must not be below t_min");
}

double utility(double success_ratio, double round_delay, const UtilityParams& params) {
  const double span = params.t_max - params.t_min;
  double normalized = 0.0;
  if (span > 0.0) normalized = (std::clamp(round_delay, params.t_min, params.t_max) - params.t_min) / span;
  return params.alpha * success_ratio - (1.0 - params.alpha) * normalized;
}

void DelayRange::observe(double duration) {
  ++count_;
  min_ = std::min(min_, duration);
  max_ = std::max(max_, duration);
}

UtilityParams DelayRange::params(double alpha) const {
  UtilityParams p;
  p.alpha = alpha;
  if (count_ > 0) {
    p.t_min = min_;
    p.t_max = max_;
  } else {
    p.t_min = p.t_max = 0.0;
  }
  return p;
}

DucbState::DucbState(double discount) : lambda(discount) {
  if (!(lambda > 0.0 && lambda <= 1.0)) throw std::invalid_argument("discount must lie in (0, 1]");
}

double DucbState::count(int id) const {
  auto it = arms.find(id);
  return it == arms.end() ? 0.0 : it->second.count;
}

double DucbState::reward_sum(int id) const {
  auto it = arms.find(id);
  return it == arms.end() ? 0.0 : it->second.reward_sum;
}

void ducb_update(DucbState& state, const std::set<int>& chosen, double round_utility) {
  if (!std::isfinite(round_utility)) throw std::invalid_argument("round utility must be finite");
  for (auto& [id, arm] : state.arms) {
    arm.count *= state.lambda;
    arm.reward_sum *= state.lambda;
  }
  for (int id : chosen) {
    auto& arm = state.arms[id];
    arm.count += 1.0;
    arm.reward_sum += round_utility;
  }
  state.total_pulls = state.lambda * state.total_pulls + static_cast<double>(chosen.size());
  ++state.round;
}

double ucb_index(const DucbState& state, int id) {
  const double m = state.count(id);
  if (m <= 0.0) return kInfinity;
  const double mean = state.reward_sum(id) / m;
  const double log_n = state.total_pulls > 1.0 ? std::log(state.total_pulls) : 0.0;
  return mean + std::sqrt(2.0 * log_n / m);
}

Policy parse_policy(std::string_view name) {
  if (name == "ducb" || name == "DUCB") return Policy::ducb;
  if (name == "cbs" || name == "CBS") return Policy::cbs;
  if (name == "rbs" || name == "RBS") return Policy::rbs;
  if (name == "random" || name == "Random") return Policy::random;
  throw std::invalid_argument(fmt::format("unknown selection policy '{}'", name));
}

std::string_view to_string(Policy policy) {
  switch (policy) {
    case Policy::ducb: return "ducb";
    case Policy::cbs: return "cbs";
    case Policy::rbs: return "rbs";
    case Policy::random: return "random";
  }
  return "?";
}

double remaining_time(double x, double v, const SegmentGeometry& geom) {
  if (v <= 0.0) return kInfinity;
  return (geom.length - x) / v;
}

namespace {

struct Ranked {
  int id;
  double key;  // larger is better
};

std::vector<int> top_n(std::vector<Ranked> ranked, std::size_t n) {
  std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    return a.key != b.key ? a.key > b.key : a.id < b.id;
  });
  std::vector<int> out;
  for (std::size_t i = 0; i < n && i < ranked.size(); ++i) out.push_back(ranked[i].id);
  return out;
}

std::vector<int> random_subset(std::span<const VehicleState> candidates, std::size_t n, Rng& rng) {
  std::vector<int> ids;
  for (const auto& v : candidates) ids.push_back(v.id);
  std::sort(ids.begin(), ids.end());
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(std::min(n, ids.size()));
  return ids;
}

}  // namespace

SelectionDecision select(Policy policy, std::span<const VehicleState> candidates,
                         const DucbState& state, int k0, const SegmentGeometry& geom,
                         const RadioParams& radio, Rng& rng) {
  if (k0 < 1) throw std::invalid_argument("K0 must be at least 1");
  SelectionDecision decision;
  for (const auto& v : candidates) decision.a_vector[v.id] = 0;
  if (candidates.empty()) return decision;

  const std::size_t budget = std::min<std::size_t>(
      {static_cast<std::size_t>(k0), candidates.size(),
       static_cast<std::size_t>(std::max(radio.max_selectable(), 0))});

  std::vector<Ranked> ranked;
  switch (policy) {
    case Policy::ducb:
      for (const auto& v : candidates) decision.ucb[v.id] = ucb_index(state, v.id);
      if (state.round == 0) {
        decision.chosen = random_subset(candidates, budget, rng);
      } else {
        for (const auto& [id, u] : decision.ucb) ranked.push_back({id, u});
        decision.chosen = top_n(std::move(ranked), budget);
      }
      break;
    case Policy::cbs:
      for (const auto& v : candidates) ranked.push_back({v.id, -bs_distance(v.position, geom)});
      decision.chosen = top_n(std::move(ranked), budget);
      break;
    case Policy::rbs:
      for (const auto& v : candidates) {
        ranked.push_back({v.id, remaining_time(v.position, v.velocity, geom)});
      }
      decision.chosen = top_n(std::move(ranked), budget);
      break;
    case Policy::random:
      decision.chosen = random_subset(candidates, budget, rng);
      break;
  }

  std::sort(decision.chosen.begin(), decision.chosen.end());
  for (int id : decision.chosen) decision.a_vector[id] = 1;
  if (!decision.chosen.empty()) {
    decision.allocated_bw = radio.total_bandwidth / static_cast<double>(decision.chosen.size());
  }
  return decision;
}

}  // namespace mavfl
