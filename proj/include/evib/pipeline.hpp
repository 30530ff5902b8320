#pragma once

#include <chrono>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "evib/audio.hpp"
#include "evib/events.hpp"
#include "evib/flow_offline.hpp"
#include "evib/flow_realtime.hpp"
#include "evib/metrics.hpp"
#include "evib/recovery.hpp"
#include "evib/speckle_sim.hpp"

namespace evib {

enum class FlowMode { realtime, offline };

inline FlowMode parse_flow_mode(const std::string& s) {
  if (s == "realtime") return FlowMode::realtime;
  if (s == "offline") return FlowMode::offline;
  throw std::invalid_argument("unknown mode '" + s + "' (expected realtime or offline)");
}

// Union of every stage's knobs; loaded from a flat key = value file with
// CLI-flag overrides on top. Key names are listed in the README.
struct PipelineConfig {
  // scenario
  std::uint64_t seed = 1;
  int width = 64;
  int height = 64;
  double grain = 4.0;
  int margin = 16;
  double epsilon = 0.2;
  double floor_clamp = 0.02;
  double noise_rate = 0.0;
  std::int64_t refractory_us = 0;
  double gain = 2.0;
  double direction_deg = 0.0;
  double motion_rate = 100000.0;
  std::string input_wav;
  std::string output_events;
  EventFormat output_format = EventFormat::bin;
  // realtime flow
  FlowConfig flow;
  // offline flow
  OfflineFlowConfig offline;
  // recovery
  RecoveryConfig recovery;

  SensorGeometry geometry() const { return SensorGeometry{width, height}; }
  SensorModel sensor() const {
    SensorModel s;
    s.epsilon = epsilon;
    s.floor = floor_clamp;
    s.noise_rate = noise_rate;
    s.refractory_us = refractory_us;
    return s;
  }

  void validate() const {
    if (width < 1 || height < 1) throw std::invalid_argument("config: bad geometry");
    if (grain < 1.0) throw std::invalid_argument("config: grain must be >= 1");
    if (margin < 1) throw std::invalid_argument("config: margin must be >= 1");
    if (motion_rate <= 0) throw std::invalid_argument("config: motion_rate must be > 0");
    if (gain <= 0) throw std::invalid_argument("config: gain must be > 0");
    sensor().validate();
    flow.validate();
    offline.pyramid.validate();
    if (offline.frame_rate <= 0) throw std::invalid_argument("config: frame_rate must be > 0");
    recovery.validate();
  }
};

inline void apply_config_entry(PipelineConfig& cfg, const std::string& key, const std::string& value) {
  auto as_d = [&] { return std::stod(value); };
  auto as_i = [&] { return std::stoll(value); };
  if (key == "seed") cfg.seed = static_cast<std::uint64_t>(as_i());
  else if (key == "width") cfg.width = static_cast<int>(as_i());
  else if (key == "height") cfg.height = static_cast<int>(as_i());
  else if (key == "grain") cfg.grain = as_d();
  else if (key == "margin") cfg.margin = static_cast<int>(as_i());
  else if (key == "epsilon") cfg.epsilon = as_d();
  else if (key == "floor") cfg.floor_clamp = as_d();
  else if (key == "noise_rate") cfg.noise_rate = as_d();
  else if (key == "refractory_us") cfg.refractory_us = as_i();
  else if (key == "gain") cfg.gain = as_d();
  else if (key == "direction_deg") cfg.direction_deg = as_d();
  else if (key == "motion_rate") cfg.motion_rate = as_d();
  else if (key == "input_wav") cfg.input_wav = value;
  else if (key == "output_events") cfg.output_events = value;
  else if (key == "output_format") cfg.output_format = parse_event_format(value);
  else if (key == "r") cfg.flow.r = static_cast<int>(as_i());
  else if (key == "bin_rate") cfg.flow.bin_rate = as_d();
  else if (key == "dt_max_us") cfg.flow.dt_max_us = as_i();
  else if (key == "v_max") cfg.flow.v_max = as_d();
  else if (key == "frame_rate") cfg.offline.frame_rate = as_d();
  else if (key == "pyr_levels") cfg.offline.pyramid.levels = static_cast<int>(as_i());
  else if (key == "pyr_window") cfg.offline.pyramid.window = static_cast<int>(as_i());
  else if (key == "pyr_iters") cfg.offline.pyramid.iterations = static_cast<int>(as_i());
  else if (key == "pyr_downscale") cfg.offline.pyramid.downscale = as_d();
  else if (key == "pre_blur") cfg.offline.pre_blur = static_cast<int>(as_i());
  else if (key == "offline_v_max") cfg.offline.v_max = as_d();
  else if (key == "weight_frame") {
    if (value == "later") cfg.offline.weight_later = true;
    else if (value == "earlier") cfg.offline.weight_later = false;
    else throw std::invalid_argument("config: weight_frame must be later or earlier");
  }
  else if (key == "max_lag") cfg.recovery.max_lag = static_cast<int>(as_i());
  else if (key == "hp_cutoff") cfg.recovery.hp_cutoff = as_d();
  else if (key == "hp_order") cfg.recovery.hp_order = static_cast<int>(as_i());
  else if (key == "gate_strength") cfg.recovery.gate_strength = as_d();
  else if (key == "gate_freq_smooth") cfg.recovery.gate_freq_smooth_hz = as_d();
  else if (key == "gate_time_smooth") cfg.recovery.gate_time_smooth_ms = as_d();
  else if (key == "gate_window") cfg.recovery.gate_window_ms = as_d();
  else if (key == "gate_threshold_sigma") cfg.recovery.gate_threshold_sigma = as_d();
  else if (key == "out_rate") cfg.recovery.out_rate = as_d();
  else if (key == "causal") cfg.recovery.causal = as_i() != 0;
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

// "key = value" per line; '#' starts a comment; blank lines ignored.
inline PipelineConfig load_config_file(const std::string& path, PipelineConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: '" + path + "' line " + std::to_string(lineno) +
                               ": expected key = value");
    try {
      apply_config_entry(base, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    } catch (const std::exception& e) {
      throw std::runtime_error("config: '" + path + "' line " + std::to_string(lineno) + ": " +
                               e.what());
    }
  }
  return base;
}

// Simulate a scene: input audio resampled to the motion rate, mapped to a
// global translation, rendered through the contrast-threshold sensor, plus
// seeded background noise when noise_rate > 0.
inline EventStream run_simulate(const PipelineConfig& cfg, const Waveform& audio) {
  cfg.validate();
  const Waveform driven =
      audio.sample_rate == cfg.motion_rate ? audio : resample(audio, cfg.motion_rate);
  const MotionTrace motion = audio_to_motion(driven, cfg.gain, cfg.direction_deg);
  const SpeckleField field = generate_speckle(cfg.seed, cfg.geometry(), cfg.grain, cfg.margin);
  EventStream stream = render_events(field, motion, cfg.sensor(), cfg.geometry());
  if (cfg.noise_rate > 0 && !driven.samples.empty()) {
    const std::int64_t duration_us = static_cast<std::int64_t>(
        std::ceil((driven.samples.size() - 1) * 1e6 / cfg.motion_rate));
    stream = add_noise_events(stream, cfg.sensor(), duration_us, cfg.seed + 1);
  }
  return stream;
}

struct RunReport {
  std::string mode;
  std::size_t events = 0;
  std::int64_t duration_us = 0;
  std::size_t flow_estimates = 0;
  std::size_t signal_bins = 0;
  double flow_wall_s = 0.0;
  double flow_events_per_s = 0.0;
  double total_wall_s = 0.0;
  double end_to_end_events_per_s = 0.0;
  int align_lag = 0;
  double align_sign = 1.0;
  double align_peak = 0.0;
  double pre_normalize_peak = 0.0;
  double out_rate = 0.0;
  std::size_t out_samples = 0;
  std::vector<std::string> warnings;
};

struct RecoverOutput {
  RecoveryResult recovery;
  GlobalFlowSignal signal;
  RunReport report;
};

inline RecoverOutput run_recover(const EventStream& stream, FlowMode mode,
                                 const PipelineConfig& cfg) {
  using clock = std::chrono::steady_clock;
  RecoverOutput out;
  const auto t0 = clock::now();

  if (mode == FlowMode::realtime) {
    out.report.mode = "realtime";
    std::size_t estimates = 0;
    out.signal = realtime_flow_signal(stream, cfg.flow, &estimates);
    out.report.flow_estimates = estimates;
  } else {
    out.report.mode = "offline";
    out.signal = offline_flow_signal(stream, cfg.offline);
    out.report.flow_estimates = out.signal.size();
  }
  const auto t1 = clock::now();

  out.recovery = recover_waveform(out.signal, cfg.recovery);
  const auto t2 = clock::now();

  RunReport& r = out.report;
  r.events = stream.size();
  r.duration_us = stream.last_t();
  r.signal_bins = out.signal.size();
  r.flow_wall_s = std::chrono::duration<double>(t1 - t0).count();
  r.flow_events_per_s = r.flow_wall_s > 0 ? stream.size() / r.flow_wall_s : 0.0;
  r.total_wall_s = std::chrono::duration<double>(t2 - t0).count();
  r.end_to_end_events_per_s = r.total_wall_s > 0 ? stream.size() / r.total_wall_s : 0.0;
  r.align_lag = out.recovery.align.lag;
  r.align_sign = out.recovery.align.sign;
  r.align_peak = out.recovery.align.peak;
  r.pre_normalize_peak = out.recovery.pre_normalize_peak;
  r.out_rate = out.recovery.audio.sample_rate;
  r.out_samples = out.recovery.audio.samples.size();
  r.warnings = out.recovery.warnings;
  return out;
}

inline void write_run_report(const RunReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_run_report: cannot open '" + path + "'");
  out << "mode = " << r.mode << "\n"
      << "events = " << r.events << "\n"
      << "duration_us = " << r.duration_us << "\n"
      << "flow_estimates = " << r.flow_estimates << "\n"
      << "signal_bins = " << r.signal_bins << "\n"
      << "flow_wall_s = " << r.flow_wall_s << "\n"
      << "flow_events_per_s = " << r.flow_events_per_s << "\n"
      << "total_wall_s = " << r.total_wall_s << "\n"
      << "end_to_end_events_per_s = " << r.end_to_end_events_per_s << "\n"
      << "align_lag = " << r.align_lag << "\n"
      << "align_sign = " << r.align_sign << "\n"
      << "align_peak = " << r.align_peak << "\n"
      << "pre_normalize_peak = " << r.pre_normalize_peak << "\n"
      << "out_rate = " << r.out_rate << "\n"
      << "out_samples = " << r.out_samples << "\n";
  for (const auto& w : r.warnings) out << "warning = " << w << "\n";
  if (!out) throw std::runtime_error("write_run_report: I/O failure on '" + path + "'");
}

inline std::map<std::string, std::string> read_flat_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_flat_report: cannot open '" + path + "'");
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

}  // namespace evib
