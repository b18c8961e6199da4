#include "mavfl/radio_delay.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "mavfl/errors.hpp"

namespace mavfl {

PathlossModel parse_pathloss_model(std::string_view name) {
  if (name == "log_distance_db") return PathlossModel::log_distance_db;
  if (name == "power_law") return PathlossModel::power_law;
  throw std::invalid_argument(fmt::format("unknown pathloss model '{}'", name));
}

std::string_view to_string(PathlossModel model) {
  return model == PathlossModel::log_distance_db ? "log_distance_db" : "power_law";
}

int RadioParams::max_selectable() const {
  return static_cast<int>(std::floor(total_bandwidth / min_bandwidth * (1.0 + 1e-12)));
}

void RadioParams::validate() const {
  if (!(total_bandwidth > 0.0)) throw std::invalid_argument("total bandwidth must be positive");
  if (!(min_bandwidth > 0.0)) throw std::invalid_argument("minimum bandwidth must be positive");
  if (!(dbm_to_milliwatts(noise_power_dbm) > 0.0))
    throw std::invalid_argument("noise power must be positive");
  if (pathloss_model == PathlossModel::power_law && !(pathloss_exponent > 0.0))
    throw std::invalid_argument("pathloss exponent must be positive");
}

void ComputeParams::validate() const {
  if (!(cycles_per_bit > 0.0 && gpu_freq > 0.0 && normalizer > 0.0 && bits_per_sample > 0.0)) {
    throw std::invalid_argument("compute parameters must all be strictly positive");
  }
}

double dbm_to_milliwatts(double dbm) { return std::pow(10.0, dbm / 10.0); }

double bs_distance(double position, const SegmentGeometry& geom) {
  const int zone = zone_of(position, geom);
  const double lateral = std::abs(zone_center(zone, geom) - geom.bs_offset);
  return std::hypot(lateral, geom.bs_height);
}

double link_snr(double distance_m, const RadioParams& radio, double channel_gain) {
  if (!(distance_m > 0.0) || !(channel_gain > 0.0)) {
    throw std::domain_error("link_snr: distance and channel gain must be positive");
  }
  const double noise_mw = dbm_to_milliwatts(radio.noise_power_dbm);
  double rx_mw = 0.0;
  switch (radio.pathloss_model) {
    case PathlossModel::log_distance_db: {
      const double loss_db = 128.1 + 37.6 * std::log10(distance_m / 1000.0);
      rx_mw = dbm_to_milliwatts(radio.tx_power_dbm + radio.antenna_gain_dbi - loss_db) *
              channel_gain;
      break;
    }
    case PathlossModel::power_law:
      rx_mw = dbm_to_milliwatts(radio.tx_power_dbm) * channel_gain *
              std::pow(distance_m, -radio.pathloss_exponent);
      break;
  }
  return rx_mw / noise_mw;
}

double uplink_rate(double distance_m, double allocated_bw, const RadioParams& radio,
                   double channel_gain) {
  if (!(allocated_bw > 0.0)) throw std::domain_error("uplink_rate: bandwidth must be positive");
  if (allocated_bw < radio.min_bandwidth * (1.0 - 1e-12)) {
    throw ConstraintError(fmt::format("allocated bandwidth {} Hz is below the floor {} Hz",
                                      allocated_bw, radio.min_bandwidth));
  }
  const double snr = link_snr(distance_m, radio, channel_gain);
  return allocated_bw * std::log2(1.0 + snr);
}

double upload_time(double model_bits, double rate) {
  if (rate <= 0.0) return kInfinity;
  return model_bits / rate;
}

double compute_time(std::size_t dataset_samples, const ComputeParams& cp) {
  return static_cast<double>(dataset_samples) * cp.bits_per_sample * cp.cycles_per_bit /
         (cp.normalizer * cp.gpu_freq);
}

DelayBreakdown round_duration(std::span<const UplinkRequest> requests, double model_bits,
                              const SegmentGeometry& geom, const RadioParams& radio,
                              double deadline_s) {
  if (requests.empty()) throw std::invalid_argument("round_duration: empty selection");
  const double share = radio.total_bandwidth / static_cast<double>(requests.size());
  if (share < radio.min_bandwidth * (1.0 - 1e-12)) {
    throw ConstraintError(fmt::format(
        "{} vehicles leave {} Hz each, below the floor of {} Hz", requests.size(), share,
        radio.min_bandwidth));
  }

  DelayBreakdown out;
  out.vehicles.reserve(requests.size());
  for (const auto& req : requests) {
    VehicleDelay d;
    d.id = req.id;
    d.bandwidth_hz = share;
    d.compute_s = req.compute_s;
    d.in_segment = req.upload_position && dropout_indicator(*req.upload_position, geom) == 1;
    if (d.in_segment) {
      d.rate_bps = uplink_rate(bs_distance(*req.upload_position, geom), share, radio,
                               req.channel_gain);
      d.comm_s = upload_time(model_bits, d.rate_bps);
    }
    const double total = d.comm_s + d.compute_s;
    d.late = total > deadline_s;
    d.elapsed_s = std::min(total, deadline_s);
    out.round_duration_s = std::max(out.round_duration_s, d.elapsed_s);
    out.vehicles.push_back(d);
  }
  return out;
}

}  // namespace mavfl
