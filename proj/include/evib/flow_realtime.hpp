#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "evib/events.hpp"
#include "evib/flow_signal.hpp"

namespace evib {

struct FlowConfig {
  int r = 7;                        // neighbor radius in pixels
  double bin_rate = 100000.0;       // aggregation rate, Hz
  std::int64_t dt_max_us = 10000;   // maximum usable neighbor age
  double v_max = 1.0;               // pixels/us outlier gate

  void validate() const {
    if (r < 1) throw std::invalid_argument("FlowConfig: r must be >= 1");
    if (bin_rate <= 0) throw std::invalid_argument("FlowConfig: bin_rate must be > 0");
    if (dt_max_us <= 0) throw std::invalid_argument("FlowConfig: dt_max_us must be > 0");
    if (v_max <= 0) throw std::invalid_argument("FlowConfig: v_max must be > 0");
  }
};

// Per-event velocity estimate; an axis is absent when no usable neighbor
// existed on it.
struct FlowEvent {
  std::int64_t t = 0;
  std::optional<double> vx;
  std::optional<double> vy;
};

// Latest event timestamp per pixel and polarity. Single-writer streaming
// state; timestamps at a given slot never decrease when fed a sorted stream.
class LatestEventMap {
 public:
  explicit LatestEventMap(SensorGeometry geometry)
      : geometry_(geometry),
        pos_(static_cast<std::size_t>(geometry.width) * geometry.height, kNever),
        neg_(static_cast<std::size_t>(geometry.width) * geometry.height, kNever) {}

  const SensorGeometry& geometry() const { return geometry_; }

  std::int64_t latest(int x, int y, std::int8_t p) const {
    if (x < 0 || y < 0 || x >= geometry_.width || y >= geometry_.height) return kNever;
    const std::size_t idx = static_cast<std::size_t>(y) * geometry_.width + x;
    return p > 0 ? pos_[idx] : neg_[idx];
  }

  void record(const Event& e) {
    const std::size_t idx = static_cast<std::size_t>(e.y) * geometry_.width + e.x;
    (e.p > 0 ? pos_ : neg_)[idx] = e.t;
  }

  static constexpr std::int64_t kNever = -1;

 private:
  SensorGeometry geometry_;
  std::vector<std::int64_t> pos_;
  std::vector<std::int64_t> neg_;
};

// Streaming flow for one event: on each axis, look up the latest same-polarity
// timestamps r pixels away on both sides, keep the more recent one (the first
// side wins ties), and divide the signed pixel offset from that neighbor by
// the elapsed time. Estimates older than dt_max, with dt == 0, or faster than
// v_max are discarded. The event itself is recorded into the map only after
// the lookup, so it can never match itself.
inline std::optional<FlowEvent> process_event(LatestEventMap& state, const Event& e,
                                              const FlowConfig& cfg) {
  const SensorGeometry& g = state.geometry();
  if (e.x >= g.width || e.y >= g.height)
    throw std::invalid_argument("process_event: event outside geometry");

  const int r = cfg.r;
  auto axis_estimate = [&](std::int64_t t_neg_side, std::int64_t t_pos_side) -> std::optional<double> {
    // t_neg_side: neighbor at (coord - r); motion from it points in +axis.
    std::int64_t tn;
    double dir;
    if (t_neg_side >= t_pos_side) {
      tn = t_neg_side;
      dir = 1.0;
    } else {
      tn = t_pos_side;
      dir = -1.0;
    }
    if (tn == LatestEventMap::kNever) return std::nullopt;
    const std::int64_t dt = e.t - tn;
    if (dt <= 0 || dt > cfg.dt_max_us) return std::nullopt;
    const double v = dir * static_cast<double>(r) / static_cast<double>(dt);
    if (std::abs(v) > cfg.v_max) return std::nullopt;
    return v;
  };

  FlowEvent fe;
  fe.t = e.t;
  fe.vx = axis_estimate(state.latest(e.x - r, e.y, e.p), state.latest(e.x + r, e.y, e.p));
  fe.vy = axis_estimate(state.latest(e.x, e.y - r, e.p), state.latest(e.x, e.y + r, e.p));
  state.record(e);
  if (!fe.vx && !fe.vy) return std::nullopt;
  return fe;
}

// Bin flow estimates at cfg.bin_rate over [0, duration_us). Bin k covers
// [k/bin_rate, (k+1)/bin_rate); per axis the bin value is the mean of present
// estimates. weight counts the flow events that landed in the bin.
inline GlobalFlowSignal aggregate_flow(const std::vector<FlowEvent>& flow_events,
                                       const FlowConfig& cfg, std::int64_t duration_us) {
  cfg.validate();
  if (duration_us < 0) throw std::invalid_argument("aggregate_flow: negative duration");
  const std::size_t bins =
      static_cast<std::size_t>(std::ceil(static_cast<double>(duration_us) * cfg.bin_rate / 1e6));
  GlobalFlowSignal sig;
  sig.sample_rate = cfg.bin_rate;
  sig.vx.assign(bins, 0.0);
  sig.vy.assign(bins, 0.0);
  sig.weight.assign(bins, 0.0);
  std::vector<std::uint32_t> nx(bins, 0), ny(bins, 0);
  for (const FlowEvent& fe : flow_events) {
    if (fe.t < 0 || fe.t >= duration_us) continue;
    const std::size_t k =
        static_cast<std::size_t>(static_cast<double>(fe.t) * cfg.bin_rate / 1e6);
    if (k >= bins) continue;
    if (fe.vx) {
      sig.vx[k] += *fe.vx;
      ++nx[k];
    }
    if (fe.vy) {
      sig.vy[k] += *fe.vy;
      ++ny[k];
    }
    sig.weight[k] += 1.0;
  }
  for (std::size_t k = 0; k < bins; ++k) {
    if (nx[k]) sig.vx[k] /= nx[k];
    if (ny[k]) sig.vy[k] /= ny[k];
  }
  return sig;
}

// One-pass convenience: stream every event through process_event and bin the
// results. flow_wall_events_out, when given, receives the flow-estimate count.
inline GlobalFlowSignal realtime_flow_signal(const EventStream& stream, const FlowConfig& cfg,
                                             std::size_t* flow_estimates_out = nullptr) {
  cfg.validate();
  LatestEventMap state(stream.geometry());
  std::vector<FlowEvent> flow;
  flow.reserve(stream.size() / 2);
  for (const Event& e : stream.events()) {
    if (auto fe = process_event(state, e, cfg)) flow.push_back(*fe);
  }
  if (flow_estimates_out) *flow_estimates_out = flow.size();
  return aggregate_flow(flow, cfg, stream.empty() ? 0 : stream.last_t() + 1);
}

}  // namespace evib
