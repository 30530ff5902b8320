#include "evib/flow_realtime.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <optional>
#include <vector>

#include "evib/speckle_sim.hpp"
#include "helpers.hpp"

using namespace evib;

namespace {

// Independent oracle: recompute each event's flow by scanning the full prior
// history for the latest polarity-matching event at the four offsets. Mirrors
// the contract (ties prefer the -r side; dt in (0, dt_max]; |v| <= v_max) but
// shares no code or state with the streaming implementation.
std::optional<FlowEvent> brute_force_flow(const std::vector<Event>& history, std::size_t i,
                                          const FlowConfig& cfg) {
  const Event& e = history[i];
  auto latest_at = [&](int x, int y) -> std::int64_t {
    std::int64_t best = -1;
    for (std::size_t j = 0; j < i; ++j) {
      const Event& h = history[j];
      if (h.p == e.p && h.x == x && h.y == y) best = std::max(best, h.t);
    }
    return best;
  };
  auto axis = [&](std::int64_t t_neg, std::int64_t t_pos) -> std::optional<double> {
    std::int64_t tn;
    double dir;
    if (t_neg >= t_pos) {
      tn = t_neg;
      dir = 1.0;
    } else {
      tn = t_pos;
      dir = -1.0;
    }
    if (tn < 0) return std::nullopt;
    const std::int64_t dt = e.t - tn;
    if (dt <= 0 || dt > cfg.dt_max_us) return std::nullopt;
    const double v = dir * cfg.r / static_cast<double>(dt);
    if (std::abs(v) > cfg.v_max) return std::nullopt;
    return v;
  };
  FlowEvent fe;
  fe.t = e.t;
  fe.vx = axis(latest_at(e.x - cfg.r, e.y), latest_at(e.x + cfg.r, e.y));
  fe.vy = axis(latest_at(e.x, e.y - cfg.r), latest_at(e.x, e.y + cfg.r));
  if (!fe.vx && !fe.vy) return std::nullopt;
  return fe;
}

bool same_flow(const std::optional<FlowEvent>& a, const std::optional<FlowEvent>& b) {
  if (a.has_value() != b.has_value()) return false;
  if (!a) return true;
  return a->t == b->t && a->vx == b->vx && a->vy == b->vy;
}

}  // namespace

TEST_CASE("single left neighbor gives positive x flow", "[flow_realtime]") {
  FlowConfig cfg;
  LatestEventMap map(SensorGeometry{32, 32});
  REQUIRE_FALSE(process_event(map, Event{0, 9, 16, 1}, cfg).has_value());  // at (x-7, y)
  const auto fe = process_event(map, Event{100, 16, 16, 1}, cfg);
  REQUIRE(fe.has_value());
  REQUIRE(fe->vx.has_value());
  CHECK(*fe->vx == Catch::Approx(0.07));
  CHECK_FALSE(fe->vy.has_value());
}

TEST_CASE("cold start emits nothing", "[flow_realtime]") {
  FlowConfig cfg;
  LatestEventMap map(SensorGeometry{32, 32});
  CHECK_FALSE(process_event(map, Event{5, 10, 10, 1}, cfg).has_value());
}

TEST_CASE("the more recent horizontal neighbor wins", "[flow_realtime]") {
  FlowConfig cfg;
  LatestEventMap map(SensorGeometry{64, 64});
  const std::int64_t t = 1000;
  REQUIRE_FALSE(process_event(map, Event{t - 200, 39, 20, 1}, cfg).has_value());  // right
  REQUIRE_FALSE(process_event(map, Event{t - 50, 25, 20, 1}, cfg).has_value());   // left
  const auto fe = process_event(map, Event{t, 32, 20, 1}, cfg);
  REQUIRE(fe.has_value());
  REQUIRE(fe->vx.has_value());
  CHECK(*fe->vx == Catch::Approx(7.0 / 50.0));
}

TEST_CASE("polarity must match", "[flow_realtime]") {
  FlowConfig cfg;
  LatestEventMap map(SensorGeometry{32, 32});
  REQUIRE_FALSE(process_event(map, Event{0, 9, 16, -1}, cfg).has_value());
  CHECK_FALSE(process_event(map, Event{100, 16, 16, 1}, cfg).has_value());
}

TEST_CASE("stale neighbors and zero dt are discarded", "[flow_realtime]") {
  FlowConfig cfg;
  LatestEventMap map(SensorGeometry{32, 32});

  SECTION("older than dt_max") {
    REQUIRE_FALSE(process_event(map, Event{0, 9, 16, 1}, cfg).has_value());
    CHECK_FALSE(process_event(map, Event{cfg.dt_max_us + 1, 16, 16, 1}, cfg).has_value());
  }
  SECTION("dt == 0") {
    REQUIRE_FALSE(process_event(map, Event{42, 9, 16, 1}, cfg).has_value());
    CHECK_FALSE(process_event(map, Event{42, 16, 16, 1}, cfg).has_value());
  }
  SECTION("faster than v_max") {
    cfg.v_max = 0.05;
    REQUIRE_FALSE(process_event(map, Event{0, 9, 16, 1}, cfg).has_value());
    // 7 px / 100 us = 0.07 px/us > v_max
    CHECK_FALSE(process_event(map, Event{100, 16, 16, 1}, cfg).has_value());
  }
}

TEST_CASE("event outside geometry is rejected", "[flow_realtime]") {
  FlowConfig cfg;
  LatestEventMap map(SensorGeometry{8, 8});
  CHECK_THROWS_AS(process_event(map, Event{0, 9, 1, 1}, cfg), std::invalid_argument);
}

TEST_CASE("streaming flow matches the brute-force oracle", "[flow_realtime]") {
  FlowConfig cfg;
  cfg.r = 3;  // denser matches on a small sensor
  const SensorGeometry g{16, 16};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const EventStream s = testutil::random_stream(seed, 2000, g, 30);
    LatestEventMap map(g);
    for (std::size_t i = 0; i < s.size(); ++i) {
      const auto got = process_event(map, s.events()[i], cfg);
      const auto want = brute_force_flow(s.events(), i, cfg);
      if (!same_flow(got, want)) {
        INFO("seed " << seed << " event " << i);
        REQUIRE(same_flow(got, want));
      }
    }
  }
}

TEST_CASE("chunked streaming equals one-pass streaming", "[flow_realtime]") {
  FlowConfig cfg;
  cfg.r = 3;
  const SensorGeometry g{16, 16};
  const EventStream s = testutil::random_stream(99, 5000, g, 20);

  LatestEventMap whole(g);
  std::vector<FlowEvent> one_pass;
  for (const Event& e : s.events())
    if (auto fe = process_event(whole, e, cfg)) one_pass.push_back(*fe);

  LatestEventMap chunked_map(g);
  std::vector<FlowEvent> chunked;
  for (std::size_t start = 0; start < s.size(); start += 617) {
    const std::size_t end = std::min(s.size(), start + 617);
    for (std::size_t i = start; i < end; ++i)
      if (auto fe = process_event(chunked_map, s.events()[i], cfg)) chunked.push_back(*fe);
  }

  REQUIRE(one_pass.size() == chunked.size());
  for (std::size_t i = 0; i < one_pass.size(); ++i) {
    CHECK(one_pass[i].t == chunked[i].t);
    CHECK(one_pass[i].vx == chunked[i].vx);
    CHECK(one_pass[i].vy == chunked[i].vy);
  }
}

TEST_CASE("aggregation bins means and weights", "[flow_realtime]") {
  FlowConfig cfg;
  cfg.bin_rate = 100000.0;  // 10 us bins

  SECTION("two estimates in one bin average") {
    std::vector<FlowEvent> fes = {FlowEvent{2, 0.1, std::nullopt}, FlowEvent{7, 0.3, std::nullopt}};
    const GlobalFlowSignal sig = aggregate_flow(fes, cfg, 20);
    REQUIRE(sig.size() == 2);
    CHECK(sig.vx[0] == Catch::Approx(0.2));
    CHECK(sig.weight[0] == 2.0);
    CHECK(sig.vx[1] == 0.0);
    CHECK(sig.weight[1] == 0.0);
  }
  SECTION("empty input gives an all-zero signal of the expected length") {
    const GlobalFlowSignal sig = aggregate_flow({}, cfg, 95);
    CHECK(sig.size() == 10);  // ceil(95 * 1e5 / 1e6)
    for (double v : sig.vx) CHECK(v == 0.0);
    for (double w : sig.weight) CHECK(w == 0.0);
    sig.validate();
  }
  SECTION("absent axis is excluded from that axis mean") {
    std::vector<FlowEvent> fes = {FlowEvent{0, 0.4, std::nullopt}};
    const GlobalFlowSignal sig = aggregate_flow(fes, cfg, 10);
    REQUIRE(sig.size() == 1);
    CHECK(sig.vx[0] == Catch::Approx(0.4));
    CHECK(sig.vy[0] == 0.0);
    CHECK(sig.weight[0] == 1.0);
  }
}

TEST_CASE("constant-velocity scene recovers the velocity", "[flow_realtime]") {
  // Constant +x drift in the estimator's tuned regime: a high contrast
  // threshold leaves only the dominant speckle grains firing, so neighbor
  // matches are the correlated r-pixel crossings, and the v_max gate drops
  // the fast coincidental ones. The weighted median of per-bin vx must land
  // within 20% of the true speed; the vy median must stay near zero.
  const double duration_s = 0.04;
  const double rate = 100000.0;
  const double speed_px_s = 1500.0;

  Waveform ramp;
  ramp.sample_rate = rate;
  const std::size_t n = static_cast<std::size_t>(duration_s * rate);
  ramp.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) ramp.samples[i] = speed_px_s * (i / rate);

  const auto field = generate_speckle(7, SensorGeometry{32, 32}, 5.0, 64);
  const MotionTrace m = audio_to_motion(ramp, 1.0, 0.0);
  SensorModel sensor;
  sensor.epsilon = 3.0;
  const EventStream s = render_events(field, m, sensor, SensorGeometry{32, 32});
  REQUIRE(s.size() > 1000);

  FlowConfig cfg;
  cfg.v_max = 1.5 * speed_px_s / 1e6;
  const GlobalFlowSignal sig = realtime_flow_signal(s, cfg);

  // steady state: skip the warm-up third
  std::vector<std::pair<double, double>> vx_w, vy_w;
  for (std::size_t k = sig.size() / 3; k < sig.size(); ++k) {
    if (sig.weight[k] > 0) {
      vx_w.emplace_back(sig.vx[k], sig.weight[k]);
      vy_w.emplace_back(sig.vy[k], sig.weight[k]);
    }
  }
  REQUIRE(vx_w.size() > 100);
  const double v_true = speed_px_s / 1e6;  // px/us
  const double med_vx = testutil::weighted_median(vx_w);
  const double med_vy = testutil::weighted_median(vy_w);
  CHECK(med_vx == Catch::Approx(v_true).epsilon(0.20));
  CHECK(std::abs(med_vy) < 0.10 * v_true);
}
