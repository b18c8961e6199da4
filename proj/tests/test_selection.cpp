#include <cmath>
#include <map>
#include <stdexcept>

#include "doctest.h"
#include "mavfl/selection.hpp"

using namespace mavfl;

namespace {

std::vector<VehicleState> fleet(std::initializer_list<std::pair<double, double>> pos_vel) {
  std::vector<VehicleState> out;
  int id = 0;
  for (auto [x, v] : pos_vel) out.push_back({id++, x, v, 0.0, false});
  return out;
}

std::vector<VehicleState> random_fleet(Rng& rng, int n) {
  std::uniform_real_distribution<double> pos(0.0, 1000.0), vel(0.0, 25.0);
  std::vector<VehicleState> out;
  for (int i = 0; i < n; ++i) out.push_back({i * 3 + 1, pos(rng), vel(rng), 0.0, false});
  return out;
}

}  // namespace

TEST_CASE("utility examples") {
  const UtilityParams p{0.6, 2.0, 4.0};
  CHECK(utility(1.0, 2.0, p) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(utility(0.0, 4.0, p) == doctest::Approx(-0.4).epsilon(1e-15));
  CHECK(utility(0.5, 3.0, p) == doctest::Approx(0.1).epsilon(1e-14));
  CHECK(utility(1.0, 100.0, p) == utility(1.0, 4.0, p));
  CHECK(utility(1.0, 0.0, p) == utility(1.0, 2.0, p));
  CHECK(utility(0.3, 7.0, UtilityParams{0.6, 5.0, 5.0}) == doctest::Approx(0.18));
  CHECK_THROWS_AS((UtilityParams{1.5, 0.0, 1.0}.validate()), std::invalid_argument);
}

TEST_CASE("DelayRange tracks the running extremes") {
  DelayRange r;
  CHECK(r.params(0.6).t_min == r.params(0.6).t_max);
  for (double d : {3.0, 1.0, 5.0, 2.0}) r.observe(d);
  CHECK(r.params(0.6).t_min == 1.0);
  CHECK(r.params(0.6).t_max == 5.0);
}

TEST_CASE("discounted counts follow the geometric series") {
  const double lambda = 0.9;
  DucbState s(lambda);
  for (int r = 1; r <= 25; ++r) {
    ducb_update(s, {7}, 0.5);
    CHECK(s.count(7) == doctest::Approx((1 - std::pow(lambda, r)) / (1 - lambda)).epsilon(1e-13));
  }
  CHECK(s.count(8) == 0.0);
  CHECK(s.round == 25);
  CHECK_THROWS_AS(DucbState(0.0), std::invalid_argument);
  CHECK_THROWS_AS(DucbState(1.1), std::invalid_argument);
  CHECK_THROWS_AS(ducb_update(s, {1}, NAN), std::invalid_argument);
}

TEST_CASE("discount recursion holds exactly every round") {
  Rng rng(4);
  std::bernoulli_distribution pick(0.4);
  std::uniform_real_distribution<double> reward(-0.4, 0.6);
  DucbState s(0.85);
  for (int r = 0; r < 200; ++r) {
    std::set<int> chosen;
    for (int id = 0; id < 8; ++id) {
      if (pick(rng)) chosen.insert(id);
    }
    std::map<int, double> before;
    for (int id = 0; id < 8; ++id) before[id] = s.count(id);
    const double n_before = s.total_pulls;
    ducb_update(s, chosen, reward(rng));
    for (int id = 0; id < 8; ++id) {
      CHECK(s.count(id) == 0.85 * before[id] + (chosen.count(id) ? 1.0 : 0.0));
      CHECK(s.count(id) >= 0.0);
    }
    CHECK(s.total_pulls == 0.85 * n_before + static_cast<double>(chosen.size()));
  }
}

TEST_CASE("ucb_index examples") {
  DucbState s(1.0);
  CHECK(std::isinf(ucb_index(s, 3)));
  ducb_update(s, {3}, 1.0);
  CHECK(ucb_index(s, 3) == 1.0);

  DucbState t(1.0);
  t.arms[1] = DucbArm{4.0, 2.0};
  t.total_pulls = 16.0;
  CHECK(ucb_index(t, 1) == doctest::Approx(1.6774100225154747).epsilon(1e-14));

  DucbState low(0.5);
  low.arms[1] = DucbArm{0.5, 0.25};
  low.total_pulls = 0.5;  // ln n < 0 is floored at 0
  CHECK(ucb_index(low, 1) == 0.5);
}

TEST_CASE("lambda = 1 reduces to undiscounted UCB over 1000 random histories") {
  Rng rng(1234);
  std::uniform_int_distribution<int> len(1, 30), who(0, 5);
  std::uniform_real_distribution<double> reward(-0.4, 0.6);
  for (int h = 0; h < 1000; ++h) {
    DucbState s(1.0);
    std::map<int, int> raw_count;
    std::map<int, double> raw_sum;
    int raw_total = 0;
    const int rounds = len(rng);
    for (int r = 0; r < rounds; ++r) {
      std::set<int> chosen{who(rng), who(rng)};
      const double u = reward(rng);
      ducb_update(s, chosen, u);
      for (int id : chosen) {
        ++raw_count[id];
        raw_sum[id] += u;
      }
      raw_total += static_cast<int>(chosen.size());
    }
    for (int id = 0; id < 6; ++id) {
      CHECK(s.count(id) == raw_count[id]);
      if (raw_count[id] == 0) {
        CHECK(std::isinf(ucb_index(s, id)));
        continue;
      }
      const double classic = raw_sum[id] / raw_count[id] +
                             std::sqrt(2.0 * std::log(static_cast<double>(raw_total)) / raw_count[id]);
      CHECK(ucb_index(s, id) == doctest::Approx(classic).epsilon(1e-12));
    }
  }
}

TEST_CASE("remaining_time") {
  const SegmentGeometry geom;
  CHECK(remaining_time(1000.0, 10.0, geom) == 0.0);
  CHECK(remaining_time(400.0, 16.67, geom) == doctest::Approx(35.99280143971205).epsilon(1e-14));
  CHECK(std::isinf(remaining_time(400.0, 0.0, geom)));
}

TEST_CASE("baseline policies") {
  const SegmentGeometry geom;
  const RadioParams radio;
  const DucbState s;
  Rng rng(1);

  auto cands = fleet({{500.0, 10.0}, {0.0, 10.0}});
  auto cbs = select(Policy::cbs, cands, s, 1, geom, radio, rng);
  CHECK(cbs.chosen == std::vector<int>{0});

  auto rbs_c = fleet({{900.0, 10.0}, {100.0, 30.0}, {500.0, 1.0}});
  auto rbs = select(Policy::rbs, rbs_c, s, 2, geom, radio, rng);
  CHECK(rbs.chosen == std::vector<int>{1, 2});  // 30 s and 500 s left; 10 s for vehicle 0

  for (auto p : {Policy::ducb, Policy::cbs, Policy::rbs, Policy::random}) {
    auto all = select(p, rbs_c, s, 10, geom, radio, rng);
    CHECK(all.chosen == std::vector<int>{0, 1, 2});
    CHECK(all.allocated_bw == radio.total_bandwidth / 3);
    CHECK(select(p, {}, s, 3, geom, radio, rng).chosen.empty());
  }
}

TEST_CASE("ties are broken by ascending id") {
  const SegmentGeometry geom;
  const RadioParams radio;
  DucbState s;
  Rng rng(1);
  auto same = fleet({{510.0, 10.0}, {520.0, 10.0}, {530.0, 10.0}, {540.0, 10.0}});
  CHECK(select(Policy::cbs, same, s, 2, geom, radio, rng).chosen == std::vector<int>{0, 1});
  s.round = 1;  // all indices +inf
  CHECK(select(Policy::ducb, same, s, 3, geom, radio, rng).chosen == std::vector<int>{0, 1, 2});
}

TEST_CASE("budget feasibility and a-vector consistency") {
  const SegmentGeometry geom;
  RadioParams radio;
  radio.total_bandwidth = 1e6;
  radio.min_bandwidth = 3e5;  // floor(B / B_min) = 3
  Rng rng(6);
  DucbState s;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + trial % 9;
    const int k0 = 1 + trial % 6;
    auto cands = random_fleet(rng, n);
    for (auto p : {Policy::ducb, Policy::cbs, Policy::rbs, Policy::random}) {
      auto d = select(p, cands, s, k0, geom, radio, rng);
      const std::size_t expected = std::min<std::size_t>({static_cast<std::size_t>(k0),
                                                          cands.size(), 3});
      CHECK(d.chosen.size() == expected);
      CHECK(radio.total_bandwidth / d.chosen.size() >= radio.min_bandwidth);
      int ones = 0;
      for (auto [id, a] : d.a_vector) {
        ones += a;
        CHECK((a == 1) == std::binary_search(d.chosen.begin(), d.chosen.end(), id));
      }
      CHECK(ones == static_cast<int>(d.chosen.size()));
      CHECK(d.a_vector.size() == cands.size());
    }
    std::set<int> pulled;
    for (std::size_t i = 0; i < cands.size(); i += 2) pulled.insert(cands[i].id);
    ducb_update(s, pulled, 0.1);
  }
}

TEST_CASE("DUCB explores zero-count candidates first") {
  const SegmentGeometry geom;
  const RadioParams radio;
  Rng rng(8);
  DucbState s(0.9);
  std::uniform_real_distribution<double> reward(-0.4, 0.6);
  for (int r = 0; r < 300; ++r) {
    auto cands = random_fleet(rng, 2 + r % 12);
    // Shift ids so that new vehicles keep appearing.
    for (auto& v : cands) v.id += r / 3;
    auto d = select(Policy::ducb, cands, s, 4, geom, radio, rng);
    if (r > 0) {
      bool chose_seen = false;
      for (int id : d.chosen) chose_seen |= s.count(id) > 0.0;
      for (const auto& v : cands) {
        const bool unseen = s.count(v.id) == 0.0;
        const bool taken = std::binary_search(d.chosen.begin(), d.chosen.end(), v.id);
        if (unseen && !taken) CHECK_FALSE(chose_seen);
      }
    }
    ducb_update(s, std::set<int>(d.chosen.begin(), d.chosen.end()), reward(rng));
  }
}

TEST_CASE("DUCB ranking is invariant to positive scaling of utilities at equal counts") {
  const SegmentGeometry geom;
  const RadioParams radio;
  Rng rng(10);
  std::uniform_real_distribution<double> reward(-0.4, 0.6);
  for (int trial = 0; trial < 100; ++trial) {
    DucbState a(0.9), b(0.9);
    const std::vector<std::set<int>> groups{{0, 1}, {2, 3}, {4, 5}};
    for (int r = 0; r < 3; ++r) {
      const double u = reward(rng);
      ducb_update(a, groups[r], u);
      ducb_update(b, groups[r], 2.5 * u);
    }
    // Equalise the counts so only the means differ.
    for (int id = 0; id < 6; ++id) {
      a.arms[id].reward_sum *= 1.0 / a.arms[id].count;
      a.arms[id].count = 1.0;
      b.arms[id].reward_sum *= 1.0 / b.arms[id].count;
      b.arms[id].count = 1.0;
    }
    auto cands = random_fleet(rng, 6);
    for (int i = 0; i < 6; ++i) cands[i].id = i;
    Rng r1(1), r2(1);
    CHECK(select(Policy::ducb, cands, a, 3, geom, radio, r1).chosen ==
          select(Policy::ducb, cands, b, 3, geom, radio, r2).chosen);
  }
}

TEST_CASE("first DUCB round is a seeded random draw") {
  const SegmentGeometry geom;
  const RadioParams radio;
  const DucbState s;
  Rng pool(3);
  auto cands = random_fleet(pool, 12);
  Rng a(5), b(5);
  auto da = select(Policy::ducb, cands, s, 4, geom, radio, a);
  auto db = select(Policy::ducb, cands, s, 4, geom, radio, b);
  CHECK(da.chosen == db.chosen);
  std::set<std::vector<int>> distinct;
  for (int seed = 0; seed < 20; ++seed) {
    Rng r(seed);
    distinct.insert(select(Policy::ducb, cands, s, 4, geom, radio, r).chosen);
  }
  CHECK(distinct.size() > 10);
}
