#include "mavfl/mobility.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "mavfl/errors.hpp"

namespace mavfl {

void SegmentGeometry::validate() const {
  if (!(length > 0.0)) throw std::invalid_argument("segment length must be positive");
  if (bs_offset < 0.0 || bs_offset > length)
    throw std::invalid_argument("base station offset must lie on the segment");
  if (bs_height < 0.0) throw std::invalid_argument("base station height must be >= 0");
  if (num_zones < 1) throw std::invalid_argument("need at least one zone");
}

void IdmParams::validate() const {
  if (!(desired_speed > 0.0 && max_accel > 0.0 && comfortable_decel > 0.0 && min_gap > 0.0 &&
        time_headway > 0.0 && accel_exponent > 0.0)) {
    throw std::invalid_argument("IDM parameters must all be strictly positive");
  }
}

double idm_accel(double v, double gap, double lead_v, const IdmParams& p) {
  if (!std::isfinite(v) || !std::isfinite(lead_v) || std::isnan(gap)) {
    throw std::domain_error("idm_accel: non-finite input");
  }
  const double free_term = std::pow(v / p.desired_speed, p.accel_exponent);
  double interaction = 0.0;
  if (std::isfinite(gap)) {
    const double approach = v - lead_v;
    const double desired_gap = p.min_gap + v * p.time_headway +
                               v * approach / (2.0 * std::sqrt(p.max_accel * p.comfortable_decel));
    const double ratio = desired_gap / gap;
    interaction = ratio * ratio;
  }
  return p.max_accel * (1.0 - free_term - interaction);
}

std::vector<VehicleState> advance_traffic(std::vector<VehicleState> vehicles,
                                          const IdmParams& params, double dt,
                                          const SegmentGeometry& geom) {
  // Accelerations are computed from the state at the start of the step.
  std::vector<double> accel(vehicles.size(), 0.0);
  const VehicleState* leader = nullptr;
  for (std::size_t i = 0; i < vehicles.size(); ++i) {
    const auto& v = vehicles[i];
    if (v.departed) continue;
    if (leader == nullptr) {
      accel[i] = idm_accel(v.velocity, kInfinity, v.velocity, params);
    } else {
      const double gap = std::max(leader->position - v.position, 1e-9);
      accel[i] = idm_accel(v.velocity, gap, leader->velocity, params);
    }
    leader = &v;
  }
  for (std::size_t i = 0; i < vehicles.size(); ++i) {
    auto& v = vehicles[i];
    if (v.departed) continue;
    v.velocity = std::max(0.0, v.velocity + accel[i] * dt);
    v.position += v.velocity * dt;
    if (v.position > geom.length) v.departed = true;
  }
  return vehicles;
}

int draw_arrival_count(ArrivalProcess& process, double dt) {
  if (process.rate <= 0.0) return 0;
  std::poisson_distribution<int> dist(process.rate * dt);
  return dist(process.rng);
}

std::vector<VehicleState> spawn_arrivals(ArrivalProcess& process, double dt, double now,
                                         const IdmParams& params,
                                         std::optional<double> rearmost_position) {
  process.pending += draw_arrival_count(process, dt);
  std::vector<VehicleState> spawned;
  std::uniform_real_distribution<double> speed(0.9 * params.desired_speed, params.desired_speed);
  while (process.pending > 0) {
    if (rearmost_position && *rearmost_position < params.min_gap) break;
    VehicleState v;
    v.id = process.next_id++;
    v.position = 0.0;
    v.velocity = speed(process.rng);
    v.entry_time = now;
    spawned.push_back(v);
    rearmost_position = 0.0;
    --process.pending;
  }
  return spawned;
}

int zone_of(double position, const SegmentGeometry& geom) {
  if (!(position >= 0.0 && position <= geom.length)) {
    throw OutOfSegmentError(fmt::format("position {} m is outside [0, {}]", position, geom.length));
  }
  const int zone = static_cast<int>(std::floor(position / geom.zone_width()));
  return std::min(zone, geom.num_zones - 1);
}

double zone_center(int zone, const SegmentGeometry& geom) {
  return (static_cast<double>(zone) + 0.5) * geom.zone_width();
}

int dropout_indicator(double position_at_upload, const SegmentGeometry& geom) {
  return position_at_upload >= 0.0 && position_at_upload <= geom.length ? 1 : 0;
}

Traffic::Traffic(SegmentGeometry geom, IdmParams idm, ArrivalProcess arrivals, double dt,
                 bool frozen)
    : geom_(geom), idm_(idm), arrivals_(std::move(arrivals)), dt_(dt), frozen_(frozen) {
  geom_.validate();
  idm_.validate();
  if (!(dt_ > 0.0)) throw std::invalid_argument("time step must be positive");
  if (arrivals_.rate < 0.0) throw std::invalid_argument("arrival rate must be >= 0");
}

void Traffic::populate_initial(double initial_speed) {
  const int n = arrivals_.initial_count;
  if (n <= 0) return;
  const double spacing = geom_.length / n;
  std::uniform_real_distribution<double> jitter(-0.25, 0.25);
  std::uniform_real_distribution<double> speed(0.9, 1.0);
  std::vector<VehicleState> placed;
  for (int i = 0; i < n; ++i) {
    VehicleState v;
    v.position = (i + 0.5 + jitter(arrivals_.rng)) * spacing;
    v.velocity = initial_speed * speed(arrivals_.rng);
    v.entry_time = 0.0;
    placed.push_back(v);
  }
  // Leader first; the leader gets the lowest id as if it had arrived first.
  std::reverse(placed.begin(), placed.end());
  for (auto& v : placed) v.id = arrivals_.next_id++;
  vehicles_.insert(vehicles_.end(), placed.begin(), placed.end());
}

void Traffic::step() {
  previous_.clear();
  for (const auto& v : vehicles_) previous_[v.id] = v;
  exited_.clear();
  prev_time_ = time_;
  ++step_;
  time_ = static_cast<double>(step_) * dt_;

  if (!frozen_) {
    auto next = advance_traffic(std::move(vehicles_), idm_, dt_, geom_);
    vehicles_.clear();
    for (auto& v : next) {
      if (v.departed) {
        exited_.push_back(v);
      } else {
        vehicles_.push_back(v);
      }
    }
    std::optional<double> rearmost;
    if (!vehicles_.empty()) rearmost = vehicles_.back().position;
    auto spawned = spawn_arrivals(arrivals_, dt_, time_, idm_, rearmost);
    vehicles_.insert(vehicles_.end(), spawned.begin(), spawned.end());
  }
  if (observer_) observer_(step_, time_, vehicles_);
}

void Traffic::advance_to(double t) {
  while (time_ < t) step();
}

void Traffic::check_query_time(double t) const {
  constexpr double eps = 1e-9;
  if (t < prev_time_ - eps || t > time_ + eps) {
    throw std::logic_error(fmt::format("traffic query at t={} outside grid interval [{}, {}]", t,
                                       prev_time_, time_));
  }
}

std::optional<VehicleState> Traffic::state_at(int id, double t) const {
  check_query_time(t);
  const VehicleState* current = nullptr;
  for (const auto& v : vehicles_) {
    if (v.id == id) current = &v;
  }
  for (const auto& v : exited_) {
    if (v.id == id) current = &v;
  }
  if (current == nullptr) return std::nullopt;
  if (t >= time_ || time_ == prev_time_) return *current;

  auto prev = previous_.find(id);
  if (prev == previous_.end()) return std::nullopt;  // spawned at the end of the interval
  const double frac = std::clamp((t - prev_time_) / (time_ - prev_time_), 0.0, 1.0);
  VehicleState out = *current;
  out.position = prev->second.position + frac * (current->position - prev->second.position);
  out.velocity = prev->second.velocity + frac * (current->velocity - prev->second.velocity);
  out.departed = out.position > geom_.length;
  return out;
}

std::vector<VehicleState> Traffic::snapshot(double t) const {
  check_query_time(t);
  std::vector<VehicleState> out;
  auto consider = [&](const VehicleState& v) {
    if (auto s = state_at(v.id, t); s && dropout_indicator(s->position, geom_) == 1) {
      out.push_back(*s);
    }
  };
  for (const auto& v : exited_) consider(v);
  for (const auto& v : vehicles_) consider(v);
  std::sort(out.begin(), out.end(), [](const VehicleState& a, const VehicleState& b) {
    return a.position != b.position ? a.position > b.position : a.id < b.id;
  });
  return out;
}

}  // namespace mavfl
