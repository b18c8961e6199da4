// JSON experiment configuration.

#include <fstream>
#include <set>

#include <fmt/format.h>

#include "mavfl/errors.hpp"
#include "mavfl/harness.hpp"

namespace mavfl {

using nlohmann::json;

namespace {

// Reads the members of one JSON object and rejects keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(fmt::format("'{}' must be an object", path_));
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end() || it->is_null()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(fmt::format("{}: {}", where(key), e.what()));
    }
  }

  template <typename T>
  void get(const char* key, std::optional<T>& out) {
    T value{};
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end() || it->is_null()) return;
    get(key, value);
    out = value;
  }

  // Finite number or null (infinity).
  void get_limit(const char* key, double& out) {
    std::optional<double> v;
    get(key, v);
    if (v) out = *v;
  }

  std::optional<ObjectReader> child(const char* key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end() || it->is_null()) return std::nullopt;
    return ObjectReader(*it, where(key));
  }

  bool has(const char* key) const { return obj_.contains(key) && !obj_.at(key).is_null(); }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(fmt::format("unknown key '{}'", where(it.key())));
    }
  }

 private:
  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename Enum, typename Parse>
void get_enum(ObjectReader& r, const char* key, Enum& out, Parse parse) {
  std::optional<std::string> name;
  r.get(key, name);
  if (!name) return;
  try {
    out = parse(*name);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

json limit_to_json(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

template <typename T>
json optional_to_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

}  // namespace

double ExperimentConfig::effective_arrival_rate() const {
  if (stationary) return 0.0;
  if (arrival_rate) return *arrival_rate;
  return steady_state_vehicles * desired_speed() / geometry.length;
}

int ExperimentConfig::effective_initial_count() const {
  if (initial_count) return *initial_count;
  return static_cast<int>(std::lround(steady_state_vehicles));
}

IdmParams ExperimentConfig::effective_idm() const {
  IdmParams p = idm;
  p.desired_speed = desired_speed();
  return p;
}

void ExperimentConfig::validate() const {
  try {
    geometry.validate();
    effective_idm().validate();
    radio.validate();
    compute.validate();
    train.validate();
    UtilityParams{alpha, t_min.value_or(0.0), t_max.value_or(1.0)}.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (k0 < 1) throw ConfigError("k0 must be at least 1");
  if (rounds < 0) throw ConfigError("rounds must be >= 0");
  if (radio.max_selectable() < 1) throw ConfigError("bandwidth floor admits no vehicle");
  if (!(lambda > 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in (0, 1]");
  if (effective_arrival_rate() < 0.0) throw ConfigError("arrival rate must be >= 0");
  if (effective_initial_count() < 0) throw ConfigError("initial count must be >= 0");
  if (!(mobility_dt > 0.0)) throw ConfigError("traffic time step must be positive");
  if (!(idle_wait_s > 0.0)) throw ConfigError("idle wait must be positive");
  if (!(deadline_s > 0.0) || !(round_deadline_s > 0.0)) throw ConfigError("deadlines must be positive");
  if (payload_bits && !(*payload_bits >= 0.0)) throw ConfigError("payload_bits must be >= 0");
  if (t_min.has_value() != t_max.has_value()) {
    throw ConfigError("t_min and t_max must be given together");
  }
  if (task.num_vehicles < 1 || task.samples_per_vehicle < 1 || task.dim < 1) {
    throw ConfigError("task sizes must be positive");
  }
  if (theory.identity_trials < 1) throw ConfigError("theory.identity_trials must be positive");
}

ExperimentConfig config_from_json(const json& doc) {
  ExperimentConfig cfg;
  ObjectReader root(doc, "");
  root.get("seed", cfg.master_seed);
  root.get("rounds", cfg.rounds);
  root.get("k0", cfg.k0);
  get_enum(root, "policy", cfg.policy, parse_policy);
  root.get("velocity_kmh", cfg.velocity_kmh);
  root.get("stationary", cfg.stationary);
  root.get_limit("deadline_s", cfg.deadline_s);
  root.get_limit("round_deadline_s", cfg.round_deadline_s);
  root.get("idle_wait_s", cfg.idle_wait_s);
  root.get("alpha", cfg.alpha);
  root.get("t_min", cfg.t_min);
  root.get("t_max", cfg.t_max);
  root.get("lambda", cfg.lambda);
  root.get("target_accuracy", cfg.target_accuracy);
  root.get("payload_bits", cfg.payload_bits);
  root.get("record_trace", cfg.record_trace);

  if (auto g = root.child("geometry")) {
    g->get("length", cfg.geometry.length);
    cfg.geometry.bs_offset = cfg.geometry.length / 2.0;
    g->get("bs_offset", cfg.geometry.bs_offset);
    g->get("bs_height", cfg.geometry.bs_height);
    g->get("num_zones", cfg.geometry.num_zones);
    g->finish();
  }
  if (auto m = root.child("idm")) {
    m->get("max_accel", cfg.idm.max_accel);
    m->get("comfortable_decel", cfg.idm.comfortable_decel);
    m->get("min_gap", cfg.idm.min_gap);
    m->get("time_headway", cfg.idm.time_headway);
    m->get("accel_exponent", cfg.idm.accel_exponent);
    m->finish();
  }
  if (auto t = root.child("traffic")) {
    t->get("steady_state_vehicles", cfg.steady_state_vehicles);
    t->get("arrival_rate", cfg.arrival_rate);
    t->get("initial_count", cfg.initial_count);
    t->get("dt", cfg.mobility_dt);
    t->finish();
  }
  if (auto r = root.child("radio")) {
    r->get("total_bandwidth_hz", cfg.radio.total_bandwidth);
    r->get("min_bandwidth_hz", cfg.radio.min_bandwidth);
    r->get("tx_power_dbm", cfg.radio.tx_power_dbm);
    r->get("noise_power_dbm", cfg.radio.noise_power_dbm);
    r->get("antenna_gain_dbi", cfg.radio.antenna_gain_dbi);
    get_enum(*r, "pathloss_model", cfg.radio.pathloss_model, parse_pathloss_model);
    r->get("pathloss_exponent", cfg.radio.pathloss_exponent);
    r->get("fading", cfg.radio.fading);
    r->finish();
  }
  if (auto c = root.child("compute")) {
    c->get("cycles_per_bit", cfg.compute.cycles_per_bit);
    c->get("gpu_freq_hz", cfg.compute.gpu_freq);
    c->get("normalizer", cfg.compute.normalizer);
    c->get("bits_per_sample", cfg.compute.bits_per_sample);
    c->finish();
  }
  if (auto t = root.child("train")) {
    t->get("learning_rate", cfg.train.learning_rate);
    t->get("local_epochs", cfg.train.local_epochs);
    t->get("batch_size", cfg.train.batch_size);
    t->get("full_batch", cfg.train.full_batch);
    t->finish();
  }
  if (auto t = root.child("task")) {
    get_enum(*t, "kind", cfg.task.kind, parse_task_kind);
    t->get("dim", cfg.task.dim);
    t->get("num_shards", cfg.task.num_vehicles);
    t->get("samples_per_vehicle", cfg.task.samples_per_vehicle);
    t->get("test_samples", cfg.task.test_samples);
    t->finish();
  }
  if (auto o = root.child("output")) {
    std::optional<std::string> dir;
    o->get("dir", dir);
    if (dir) cfg.output_dir = *dir;
    o->get("trajectory", cfg.log_trajectory);
    o->get("delay", cfg.log_delay);
    o->get("selection", cfg.log_selection);
    o->finish();
  }
  if (auto t = root.child("theory")) {
    t->get("probes", cfg.theory.probes);
    t->get("identity_trials", cfg.theory.identity_trials);
    t->get("identity_survival", cfg.theory.identity_survival);
    t->finish();
  }
  root.finish();
  cfg.task.seed = cfg.master_seed;
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config file '{}'", path.string()));
  json doc;
  try {
    doc = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return config_from_json(doc);
}

json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["seed"] = cfg.master_seed;
  j["rounds"] = cfg.rounds;
  j["k0"] = cfg.k0;
  j["policy"] = std::string(to_string(cfg.policy));
  j["velocity_kmh"] = cfg.velocity_kmh;
  j["stationary"] = cfg.stationary;
  j["deadline_s"] = limit_to_json(cfg.deadline_s);
  j["round_deadline_s"] = limit_to_json(cfg.round_deadline_s);
  j["idle_wait_s"] = cfg.idle_wait_s;
  j["alpha"] = cfg.alpha;
  j["t_min"] = optional_to_json(cfg.t_min);
  j["t_max"] = optional_to_json(cfg.t_max);
  j["lambda"] = cfg.lambda;
  j["target_accuracy"] = optional_to_json(cfg.target_accuracy);
  j["payload_bits"] = optional_to_json(cfg.payload_bits);
  j["record_trace"] = cfg.record_trace;
  j["geometry"] = {{"length", cfg.geometry.length},
                   {"bs_offset", cfg.geometry.bs_offset},
                   {"bs_height", cfg.geometry.bs_height},
                   {"num_zones", cfg.geometry.num_zones}};
  j["idm"] = {{"max_accel", cfg.idm.max_accel},
              {"comfortable_decel", cfg.idm.comfortable_decel},
              {"min_gap", cfg.idm.min_gap},
              {"time_headway", cfg.idm.time_headway},
              {"accel_exponent", cfg.idm.accel_exponent}};
  j["traffic"] = {{"steady_state_vehicles", cfg.steady_state_vehicles},
                  {"arrival_rate", optional_to_json(cfg.arrival_rate)},
                  {"initial_count", optional_to_json(cfg.initial_count)},
                  {"dt", cfg.mobility_dt}};
  j["radio"] = {{"total_bandwidth_hz", cfg.radio.total_bandwidth},
                {"min_bandwidth_hz", cfg.radio.min_bandwidth},
                {"tx_power_dbm", cfg.radio.tx_power_dbm},
                {"noise_power_dbm", cfg.radio.noise_power_dbm},
                {"antenna_gain_dbi", cfg.radio.antenna_gain_dbi},
                {"pathloss_model", std::string(to_string(cfg.radio.pathloss_model))},
                {"pathloss_exponent", cfg.radio.pathloss_exponent},
                {"fading", cfg.radio.fading}};
  j["compute"] = {{"cycles_per_bit", cfg.compute.cycles_per_bit},
                  {"gpu_freq_hz", cfg.compute.gpu_freq},
                  {"normalizer", cfg.compute.normalizer},
                  {"bits_per_sample", cfg.compute.bits_per_sample}};
  j["train"] = {{"learning_rate", cfg.train.learning_rate},
                {"local_epochs", cfg.train.local_epochs},
                {"batch_size", cfg.train.batch_size},
                {"full_batch", cfg.train.full_batch}};
  j["task"] = {{"kind", std::string(to_string(cfg.task.kind))},
               {"dim", cfg.task.dim},
               {"num_shards", cfg.task.num_vehicles},
               {"samples_per_vehicle", cfg.task.samples_per_vehicle},
               {"test_samples", cfg.task.test_samples}};
  j["output"] = {{"dir", cfg.output_dir.string()},
                 {"trajectory", cfg.log_trajectory},
                 {"delay", cfg.log_delay},
                 {"selection", cfg.log_selection}};
  j["theory"] = {{"probes", cfg.theory.probes},
                 {"identity_trials", cfg.theory.identity_trials},
                 {"identity_survival", cfg.theory.identity_survival}};
  return j;
}

}  // namespace mavfl
