#pragma once

// Single-lane road segment covered by one base station: IDM car following,
// Poisson arrivals, zone mapping and the upload-time dropout indicator.

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <vector>

#include "mavfl/rng.hpp"

namespace mavfl {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

inline double kmh_to_mps(double kmh) { return kmh / 3.6; }

struct SegmentGeometry {
  double length = 1000.0;     // m
  double bs_offset = 500.0;   // m, along the road
  double bs_height = 25.0;    // m
  int num_zones = 20;

  double zone_width() const { return length / num_zones; }
  void validate() const;
};

struct VehicleState {
  int id = 0;
  double position = 0.0;  // m from the segment entrance
  double velocity = 0.0;  // m/s
  double entry_time = 0.0;
  bool departed = false;
};

struct IdmParams {
  double desired_speed = kmh_to_mps(60.0);
  double max_accel = 1.0;
  double comfortable_decel = 1.5;
  double min_gap = 2.0;
  double time_headway = 1.5;
  double accel_exponent = 4.0;

  void validate() const;
};

/// Intelligent Driver Model acceleration. `gap` may be +infinity (free road).
double idm_accel(double v, double gap, double lead_v, const IdmParams& params);

/// One semi-implicit Euler step of the whole platoon. Input must be sorted
/// leader first. Vehicles already flagged departed are carried through
/// unchanged and do not act as leaders.
std::vector<VehicleState> advance_traffic(std::vector<VehicleState> vehicles,
                                          const IdmParams& params, double dt,
                                          const SegmentGeometry& geom);

struct ArrivalProcess {
  double rate = 0.0;  // vehicles / s
  int initial_count = 0;
  Rng rng;
  int pending = 0;  // drawn but blocked by the min-gap rule
  int next_id = 0;
};

/// Poisson(rate * dt) draw from the process stream.
int draw_arrival_count(ArrivalProcess& process, double dt);

/// Draws this step's arrivals and places as many queued vehicles at the
/// entrance as the min-gap rule allows (at most one per call when the road
/// is non-empty). Blocked arrivals stay queued.
std::vector<VehicleState> spawn_arrivals(ArrivalProcess& process, double dt, double now,
                                         const IdmParams& params,
                                         std::optional<double> rearmost_position);

/// Zone index in [0, num_zones - 1]. Throws OutOfSegmentError outside [0, length].
int zone_of(double position, const SegmentGeometry& geom);
double zone_center(int zone, const SegmentGeometry& geom);

/// 1 iff the position lies on the covered segment.
int dropout_indicator(double position_at_upload, const SegmentGeometry& geom);

/// Owns the traffic on the segment and steps it on a fixed absolute time
/// grid, so the trajectory is the same no matter how callers query it.
/// States between grid points are linearly interpolated.
class Traffic {
 public:
  using StepObserver =
      std::function<void(std::int64_t step, double time, const std::vector<VehicleState>&)>;

  Traffic(SegmentGeometry geom, IdmParams idm, ArrivalProcess arrivals, double dt,
          bool frozen = false);

  /// Places `initial_count` vehicles spread over the segment at t = 0.
  void populate_initial(double initial_speed);

  double time() const { return time_; }
  double dt() const { return dt_; }
  const SegmentGeometry& geometry() const { return geom_; }
  const IdmParams& idm() const { return idm_; }
  const std::vector<VehicleState>& vehicles() const { return vehicles_; }

  void step();
  /// Steps the grid until time() >= t.
  void advance_to(double t);

  /// In-segment vehicles at time t (leader first). t must lie within the
  /// last grid interval.
  std::vector<VehicleState> snapshot(double t) const;

  /// Interpolated state of one vehicle at time t; nullopt once it has left
  /// the road or before it has entered.
  std::optional<VehicleState> state_at(int id, double t) const;

  void set_observer(StepObserver observer) { observer_ = std::move(observer); }

 private:
  void check_query_time(double t) const;

  SegmentGeometry geom_;
  IdmParams idm_;
  ArrivalProcess arrivals_;
  double dt_;
  bool frozen_;
  double time_ = 0.0;
  double prev_time_ = 0.0;
  std::int64_t step_ = 0;
  std::vector<VehicleState> vehicles_;   // on the road, leader first
  std::vector<VehicleState> exited_;     // left during the last step
  std::map<int, VehicleState> previous_; // states at prev_time_
  StepObserver observer_;
};

}  // namespace mavfl
