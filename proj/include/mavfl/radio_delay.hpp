#pragma once

// Uplink and compute delay model: zone-quantised BS distance, Shannon rate
// under an equal OFDMA bandwidth split, and the synchronous round duration.

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "mavfl/mobility.hpp"

namespace mavfl {

enum class PathlossModel {
  log_distance_db,  // 128.1 + 37.6 log10(d_km) dB
  power_law,        // h * d^-beta, linear
};

PathlossModel parse_pathloss_model(std::string_view name);
std::string_view to_string(PathlossModel model);

struct RadioParams {
  double total_bandwidth = 3e6;  // Hz
  double min_bandwidth = 1e5;    // Hz
  double tx_power_dbm = 23.0;
  double noise_power_dbm = -114.0;
  double antenna_gain_dbi = 6.0;
  PathlossModel pathloss_model = PathlossModel::log_distance_db;
  double pathloss_exponent = 3.76;  // power_law only
  bool fading = false;              // unit-mean exponential gain, redrawn per round

  /// floor(B / B_min): the largest selection the bandwidth floor admits.
  int max_selectable() const;
  void validate() const;
};

struct ComputeParams {
  double cycles_per_bit = 10.0;
  double gpu_freq = 1.3e9;  // Hz
  double normalizer = 1.0;
  double bits_per_sample = 256.0;

  void validate() const;
};

double dbm_to_milliwatts(double dbm);

/// sqrt(L_z^2 + H^2) with L_z the offset between the zone centre and the BS.
double bs_distance(double position, const SegmentGeometry& geom);

/// Received SNR (linear) at `distance_m` for the configured path-loss model.
double link_snr(double distance_m, const RadioParams& radio, double channel_gain = 1.0);

/// Shannon rate in bit/s. Throws ConstraintError if allocated_bw < B_min and
/// std::domain_error on non-positive distance, bandwidth or gain.
double uplink_rate(double distance_m, double allocated_bw, const RadioParams& radio,
                   double channel_gain = 1.0);

/// M / rate; a zero rate yields +infinity.
double upload_time(double model_bits, double rate);

double compute_time(std::size_t dataset_samples, const ComputeParams& cp);

/// Flat single-precision serialisation of the parameter vector.
inline double model_size_bits(std::size_t dimension) { return 32.0 * static_cast<double>(dimension); }

struct UplinkRequest {
  int id = 0;
  /// Position when local computing ends; nullopt if the vehicle is no longer
  /// on the road.
  std::optional<double> upload_position;
  double compute_s = 0.0;
  double channel_gain = 1.0;
};

struct VehicleDelay {
  int id = 0;
  double bandwidth_hz = 0.0;
  double rate_bps = 0.0;
  double comm_s = 0.0;     // 0 when the vehicle left before uploading
  double compute_s = 0.0;
  bool in_segment = true;  // dropout indicator at upload time
  bool late = false;       // comm + compute exceeded the round deadline
  /// Time the server spends on this vehicle: comm + compute, capped at the
  /// deadline for late vehicles.
  double elapsed_s = 0.0;

  bool delivered() const { return in_segment && !late; }
};

struct DelayBreakdown {
  std::vector<VehicleDelay> vehicles;  // in request order
  double round_duration_s = 0.0;
};

/// Splits B equally over the requests and returns per-vehicle delays and the
/// synchronous round duration (max over vehicles, never a sum).
/// Throws ConstraintError when B / |requests| < B_min.
DelayBreakdown round_duration(std::span<const UplinkRequest> requests, double model_bits,
                              const SegmentGeometry& geom, const RadioParams& radio,
                              double deadline_s = kInfinity);

}  // namespace mavfl
