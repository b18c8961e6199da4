#pragma once

// Vehicle selection: the round utility, discounted-UCB bandit state and
// index, and the CBS / RBS / Random baselines.

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string_view>
#include <vector>

#include "mavfl/mobility.hpp"
#include "mavfl/radio_delay.hpp"
#include "mavfl/rng.hpp"

namespace mavfl {

struct UtilityParams {
  double alpha = 0.6;
  double t_min = 0.0;  // s
  double t_max = 1.0;  // s

  void validate() const;
};

/// alpha * p - (1 - alpha) * (T - t_min) / (t_max - t_min), with T clamped to
/// [t_min, t_max]. A degenerate range (t_max == t_min) normalises to 0.
double utility(double success_ratio, double round_delay, const UtilityParams& params);

/// Running min/max over observed round durations, used as the normalisation
/// range when none is configured.
class DelayRange {
 public:
  void observe(double duration);
  bool empty() const { return count_ == 0; }
  int count() const { return count_; }
  double min() const { return min_; }
  double max() const { return max_; }
  UtilityParams params(double alpha) const;

 private:
  int count_ = 0;
  double min_ = kInfinity;
  double max_ = -kInfinity;
};

struct DucbArm {
  double count = 0.0;       // discounted number of pulls
  double reward_sum = 0.0;  // discounted sum of rewards
};

struct DucbState {
  double lambda = 0.9;
  std::map<int, DucbArm> arms;
  double total_pulls = 0.0;  // discounted sum of selection sizes
  int round = 0;

  explicit DucbState(double discount = 0.9);
  double count(int id) const;
  double reward_sum(int id) const;
};

/// Decays every discounted quantity by lambda once, then credits the shared
/// round utility to each chosen vehicle.
void ducb_update(DucbState& state, const std::set<int>& chosen, double round_utility);

/// Discounted mean plus sqrt(2 ln n / M); +infinity for never-pulled arms.
/// ln n is floored at 0 when the discounted total drops below one.
double ucb_index(const DucbState& state, int id);

enum class Policy { ducb, cbs, rbs, random };

Policy parse_policy(std::string_view name);
std::string_view to_string(Policy policy);

/// (length - x) / v; +infinity for a stopped vehicle.
double remaining_time(double x, double v, const SegmentGeometry& geom);

struct SelectionDecision {
  std::vector<int> chosen;            // ascending id
  std::map<int, int> a_vector;        // every candidate -> {0, 1}
  double allocated_bw = 0.0;          // Hz per chosen vehicle
  std::map<int, double> ucb;          // DUCB only: index of every candidate
};

/// Picks min(K0, |candidates|, floor(B / B_min)) vehicles. Ties are broken by
/// ascending vehicle id. `rng` is only consumed by Random and by the first
/// DUCB round.
SelectionDecision select(Policy policy, std::span<const VehicleState> candidates,
                         const DucbState& state, int k0, const SegmentGeometry& geom,
                         const RadioParams& radio, Rng& rng);

}  // namespace mavfl
