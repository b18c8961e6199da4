#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

#include "doctest.h"
#include "mavfl/errors.hpp"
#include "mavfl/mobility.hpp"

using namespace mavfl;

namespace {

IdmParams idm_60() {
  IdmParams p;
  p.desired_speed = kmh_to_mps(60.0);
  return p;
}

Traffic make_traffic(double rate, int initial, std::uint64_t seed, double speed_kmh = 60.0) {
  IdmParams p;
  p.desired_speed = kmh_to_mps(speed_kmh);
  ArrivalProcess arr;
  arr.rate = rate;
  arr.initial_count = initial;
  arr.rng = make_stream(seed, Stream::mobility);
  Traffic t(SegmentGeometry{}, p, std::move(arr), 0.1);
  t.populate_initial(p.desired_speed);
  return t;
}

}  // namespace

TEST_CASE("idm_accel equilibria and a hand-evaluated point") {
  IdmParams p = idm_60();
  CHECK(idm_accel(p.desired_speed, kInfinity, 0.0, p) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(idm_accel(0.0, kInfinity, 0.0, p) == p.max_accel);

  p.desired_speed = 16.67;
  // s* = 2 + 15 * 1.5 = 24.5, a [1 - (15/16.67)^4 - (24.5/30)^2]
  CHECK(idm_accel(15.0, 30.0, 15.0, p) == doctest::Approx(-0.32251982677950497).epsilon(1e-13));
}

TEST_CASE("idm_accel rejects non-finite input") {
  const IdmParams p = idm_60();
  CHECK_THROWS_AS(idm_accel(NAN, 10.0, 0.0, p), std::domain_error);
  CHECK_THROWS_AS(idm_accel(1.0, NAN, 0.0, p), std::domain_error);
  CHECK_THROWS_AS(idm_accel(1.0, 10.0, INFINITY, p), std::domain_error);
}

TEST_CASE("advance_traffic basic cases") {
  const SegmentGeometry geom;
  const IdmParams p = idm_60();
  CHECK(advance_traffic({}, p, 0.1, geom).empty());

  VehicleState v{0, 100.0, p.desired_speed, 0.0, false};
  auto out = advance_traffic({v}, p, 0.1, geom);
  REQUIRE(out.size() == 1);
  CHECK(out[0].velocity == doctest::Approx(p.desired_speed).epsilon(1e-15));
  CHECK(out[0].position == doctest::Approx(100.0 + p.desired_speed * 0.1).epsilon(1e-15));
}

TEST_CASE("two-vehicle platoon matches a scalar reference integration") {
  const SegmentGeometry geom;
  const IdmParams p = idm_60();
  std::vector<VehicleState> vs{{0, 100.0, 15.0, 0.0, false}, {1, 80.0, 16.0, 0.0, false}};
  for (int k = 0; k < 10; ++k) vs = advance_traffic(vs, p, 0.1, geom);
  CHECK(vs[0].position == doctest::Approx(115.1794025831577).epsilon(1e-12));
  CHECK(vs[0].velocity == doctest::Approx(15.317532276192281).epsilon(1e-12));
  CHECK(vs[1].position == doctest::Approx(95.0888653130492).epsilon(1e-12));
  CHECK(vs[1].velocity == doctest::Approx(14.637355849120075).epsilon(1e-12));
}

TEST_CASE("departure flag is set past the segment end") {
  const SegmentGeometry geom;
  const IdmParams p = idm_60();
  auto out = advance_traffic({{0, 999.5, 16.0, 0.0, false}}, p, 0.1, geom);
  CHECK(out[0].departed);
}

TEST_CASE("Poisson arrivals have the configured mean") {
  ArrivalProcess arr;
  arr.rate = 20.0;
  arr.rng = make_stream(11, Stream::mobility);
  long total = 0;
  const int steps = 100000;
  for (int i = 0; i < steps; ++i) total += draw_arrival_count(arr, 0.1);
  const double mean = static_cast<double>(total) / steps;
  CHECK(mean >= 1.98);
  CHECK(mean <= 2.02);
}

TEST_CASE("spawn_arrivals") {
  const IdmParams p = idm_60();
  ArrivalProcess none;
  none.rng = make_stream(1, Stream::mobility);
  for (int i = 0; i < 100; ++i) CHECK(spawn_arrivals(none, 0.1, 0.0, p, std::nullopt).empty());

  ArrivalProcess busy;
  busy.rate = 1000.0;
  busy.rng = make_stream(2, Stream::mobility);
  // Rearmost vehicle 1 m past the entrance and s0 = 2 m: everything waits.
  CHECK(spawn_arrivals(busy, 0.1, 0.0, p, 1.0).empty());
  CHECK(busy.pending > 0);
  const int queued = busy.pending;
  auto spawned = spawn_arrivals(busy, 0.1, 0.1, p, 50.0);
  REQUIRE(spawned.size() == 1);
  CHECK(busy.pending >= queued - 1);
  CHECK(spawned[0].position == 0.0);
  CHECK(spawned[0].velocity >= 0.9 * p.desired_speed);
  CHECK(spawned[0].velocity <= p.desired_speed);
  CHECK(spawned[0].entry_time == 0.1);
}

TEST_CASE("zone_of and dropout_indicator") {
  const SegmentGeometry geom;
  CHECK(zone_of(0.0, geom) == 0);
  CHECK(zone_of(1000.0, geom) == 19);
  CHECK(zone_of(525.0, geom) == 10);
  CHECK(zone_of(49.999, geom) == 0);
  CHECK(zone_of(50.0, geom) == 1);
  CHECK_THROWS_AS(zone_of(-0.1, geom), OutOfSegmentError);
  CHECK_THROWS_AS(zone_of(1000.1, geom), OutOfSegmentError);
  CHECK(zone_center(0, geom) == 25.0);

  CHECK(dropout_indicator(999.9, geom) == 1);
  CHECK(dropout_indicator(1000.1, geom) == 0);
  CHECK(dropout_indicator(0.0, geom) == 1);
}

TEST_CASE("zone partition: every position in [0, L) lies in exactly one equal-width zone") {
  SegmentGeometry geom;
  geom.length = 730.0;
  geom.num_zones = 7;
  const double w = geom.zone_width();
  CHECK(w == doctest::Approx(730.0 / 7));
  Rng rng(3);
  std::uniform_real_distribution<double> u(0.0, geom.length);
  for (int i = 0; i < 10000; ++i) {
    const double x = u(rng);
    const int z = zone_of(x, geom);
    int containing = 0;
    for (int k = 0; k < geom.num_zones; ++k) {
      if (x >= k * w && x < (k + 1) * w) ++containing;
    }
    CHECK(containing == 1);
    CHECK(x >= z * w - 1e-9);
    CHECK(x < (z + 1) * w + 1e-9);
  }
}

TEST_CASE("traffic invariants: no overtaking, non-negative speed, departures never return") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    for (double kmh : {60.0, 80.0}) {
      Traffic t = make_traffic(0.4, 12, seed, kmh);
      std::set<int> departed;
      std::map<int, int> last_seen;
      for (int k = 0; k < 3000; ++k) {
        t.step();
        const auto& vs = t.vehicles();
        for (std::size_t i = 0; i < vs.size(); ++i) {
          CHECK(vs[i].velocity >= 0.0);
          CHECK_FALSE(departed.count(vs[i].id));
          if (i > 0) CHECK(vs[i - 1].position >= vs[i].position);
          if (i > 0) CHECK(vs[i - 1].id < vs[i].id);
        }
        for (const auto& v : t.snapshot(t.time())) CHECK(dropout_indicator(v.position, t.geometry()) == 1);
        std::set<int> on_road;
        for (const auto& v : vs) on_road.insert(v.id);
        for (const auto& [id, step] : last_seen) {
          if (!on_road.count(id)) departed.insert(id);
        }
        last_seen.clear();
        for (int id : on_road) last_seen[id] = k;
      }
      CHECK(departed.size() > 10);
    }
  }
}

TEST_CASE("steady-state occupancy tracks rate * length / v0") {
  const double v0 = kmh_to_mps(60.0);
  const double rate = 10.0 * v0 / 1000.0;
  Traffic t = make_traffic(rate, 10, 5);
  double occupancy = 0.0;
  int samples = 0;
  for (int k = 0; k < 60000; ++k) {
    t.step();
    if (k % 10 == 0) {
      occupancy += static_cast<double>(t.vehicles().size());
      ++samples;
    }
  }
  CHECK(occupancy / samples == doctest::Approx(10.0).epsilon(0.15));
}

TEST_CASE("state_at interpolates inside the last grid interval") {
  Traffic t = make_traffic(0.0, 3, 9);
  t.advance_to(1.0);
  const double t_prev = t.time();
  std::map<int, VehicleState> before;
  for (const auto& v : t.vehicles()) before[v.id] = v;
  t.step();
  for (const auto& v : t.vehicles()) {
    auto mid = t.state_at(v.id, t_prev + 0.05);
    REQUIRE(mid.has_value());
    CHECK(mid->position == doctest::Approx(0.5 * (before[v.id].position + v.position)));
  }
  CHECK_THROWS_AS(t.state_at(0, t_prev - 1.0), std::logic_error);
  CHECK_FALSE(t.state_at(12345, t.time()).has_value());
}

TEST_CASE("frozen traffic never moves") {
  ArrivalProcess arr;
  arr.rate = 5.0;
  arr.initial_count = 6;
  arr.rng = make_stream(4, Stream::mobility);
  Traffic t(SegmentGeometry{}, idm_60(), std::move(arr), 0.1, /*frozen=*/true);
  t.populate_initial(0.0);
  const auto start = t.vehicles();
  t.advance_to(500.0);
  REQUIRE(t.vehicles().size() == start.size());
  for (std::size_t i = 0; i < start.size(); ++i) CHECK(t.vehicles()[i].position == start[i].position);
}

TEST_CASE("trajectories are bitwise reproducible") {
  auto record = [](std::uint64_t seed) {
    Traffic t = make_traffic(0.3, 8, seed);
    std::vector<double> out;
    t.set_observer([&](std::int64_t, double time, const std::vector<VehicleState>& vs) {
      out.push_back(time);
      for (const auto& v : vs) {
        out.push_back(v.id);
        out.push_back(v.position);
        out.push_back(v.velocity);
      }
    });
    t.advance_to(200.0);
    return out;
  };
  CHECK(record(21) == record(21));
  CHECK(record(21) != record(22));
}
