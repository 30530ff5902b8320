// evib: event-camera speckle vibrometry toolkit CLI.
//
// Subcommands: simulate, recover, demix, evaluate, plot. Every subcommand
// accepts --config <file> (flat key = value) with individual flags winning
// over file entries. All outputs are deterministic given config + seed.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "evib/events.hpp"
#include "evib/metrics.hpp"
#include "evib/pipeline.hpp"

namespace {

using Overrides = std::vector<std::pair<std::string, std::string>>;

void add_override_flag(CLI::App* sub, Overrides& ov, const std::string& flag,
                       const std::string& key, const std::string& desc) {
  sub->add_option_function<std::string>(
      flag, [&ov, key](const std::string& v) { ov.emplace_back(key, v); }, desc);
}

evib::PipelineConfig build_config(const std::string& config_path, const Overrides& ov) {
  evib::PipelineConfig cfg;
  if (!config_path.empty()) cfg = evib::load_config_file(config_path);
  for (const auto& [key, value] : ov) evib::apply_config_entry(cfg, key, value);
  return cfg;
}

evib::EventFormat guess_format(const std::string& path, const std::string& explicit_format) {
  if (!explicit_format.empty()) return evib::parse_event_format(explicit_format);
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".csv") return evib::EventFormat::csv;
  return evib::EventFormat::bin;
}

evib::Roi parse_roi(const std::string& s) {
  evib::Roi roi;
  if (std::sscanf(s.c_str(), "%d,%d,%d,%d", &roi.x0, &roi.y0, &roi.w, &roi.h) != 4)
    throw std::invalid_argument("bad --roi '" + s + "' (expected x0,y0,w,h)");
  return roi;
}

void print_report_summary(const evib::RunReport& r) {
  std::printf("mode=%s events=%zu duration_us=%lld bins=%zu\n", r.mode.c_str(), r.events,
              static_cast<long long>(r.duration_us), r.signal_bins);
  std::printf("flow_wall_s=%.3f flow_events_per_s=%.3e total_wall_s=%.3f\n", r.flow_wall_s,
              r.flow_events_per_s, r.total_wall_s);
  for (const auto& w : r.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
}

int cmd_simulate(const std::string& config_path, const Overrides& ov) {
  evib::PipelineConfig cfg = build_config(config_path, ov);
  if (cfg.input_wav.empty()) throw std::runtime_error("simulate: input_wav not set");
  if (cfg.output_events.empty()) throw std::runtime_error("simulate: output_events not set");
  const evib::Waveform audio = evib::read_wav(cfg.input_wav);
  const evib::EventStream stream = evib::run_simulate(cfg, audio);
  evib::write_events(stream, cfg.output_events, cfg.output_format);
  const double dur_s = stream.last_t() * 1e-6;
  std::printf("events=%zu duration_s=%.3f rate=%.3e events/s\n", stream.size(), dur_s,
              dur_s > 0 ? stream.size() / dur_s : 0.0);
  return 0;
}

int cmd_recover(const std::string& events_path, const std::string& format,
                const std::string& mode_str, const std::string& out_wav,
                const std::string& config_path, const Overrides& ov) {
  evib::PipelineConfig cfg = build_config(config_path, ov);
  const evib::EventStream stream = evib::read_events(events_path, guess_format(events_path, format));
  if (stream.empty()) throw std::runtime_error("recover: empty events file");
  const evib::FlowMode mode = evib::parse_flow_mode(mode_str);
  evib::RecoverOutput out = evib::run_recover(stream, mode, cfg);
  evib::write_wav(out.recovery.audio, out_wav);
  evib::write_run_report(out.report, out_wav + ".report.txt");
  print_report_summary(out.report);
  return 0;
}

int cmd_demix(const std::string& events_path, const std::string& format,
              const std::vector<std::string>& roi_strs, const std::string& mode_str,
              const std::string& out_prefix, const std::string& config_path, const Overrides& ov) {
  evib::PipelineConfig cfg = build_config(config_path, ov);
  if (roi_strs.empty()) throw std::runtime_error("demix: at least one --roi required");
  std::vector<evib::Roi> rois;
  for (const auto& s : roi_strs) rois.push_back(parse_roi(s));
  for (std::size_t i = 0; i < rois.size(); ++i)
    for (std::size_t j = i + 1; j < rois.size(); ++j)
      if (rois[i].overlaps(rois[j]))
        throw std::invalid_argument("demix: rois " + std::to_string(i) + " and " +
                                    std::to_string(j) + " overlap");

  const evib::EventStream stream = evib::read_events(events_path, guess_format(events_path, format));
  const evib::FlowMode mode = evib::parse_flow_mode(mode_str);
  for (std::size_t i = 0; i < rois.size(); ++i) {
    const evib::EventStream cropped = evib::crop_roi(stream, rois[i]);
    if (cropped.empty()) throw std::runtime_error("demix: roi " + std::to_string(i) + " holds no events");
    evib::RecoverOutput out = evib::run_recover(cropped, mode, cfg);
    const std::string wav = out_prefix + "_roi" + std::to_string(i) + ".wav";
    evib::write_wav(out.recovery.audio, wav);
    evib::write_run_report(out.report, wav + ".report.txt");
    std::printf("roi%zu: %s\n", i, wav.c_str());
  }
  return 0;
}

int cmd_evaluate(const std::string& ref_path, const std::string& test_path,
                 const std::string& out_path, const std::string& csv_path,
                 const std::string& scores_path) {
  const evib::Waveform ref = evib::read_wav(ref_path);
  const evib::Waveform test = evib::read_wav(test_path);
  const evib::MetricReport rep = evib::evaluate_waveforms(ref, test);

  std::string pesq, stoi;
  if (!scores_path.empty()) {
    const auto kv = evib::read_flat_report(scores_path);
    if (auto it = kv.find("pesq"); it != kv.end()) pesq = it->second;
    if (auto it = kv.find("stoi"); it != kv.end()) stoi = it->second;
  }

  auto emit = [&](std::ostream& os) {
    os << "mcd = " << rep.mcd << "\n"
       << "lsd = " << rep.lsd << "\n"
       << "aligned_lag = " << rep.aligned_lag << "\n";
    if (!pesq.empty()) os << "pesq = " << pesq << "\n";
    if (!stoi.empty()) os << "stoi = " << stoi << "\n";
  };
  emit(std::cout);
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("evaluate: cannot open '" + out_path + "'");
    emit(out);
  }
  if (!csv_path.empty()) {
    std::ofstream out(csv_path);
    if (!out) throw std::runtime_error("evaluate: cannot open '" + csv_path + "'");
    out << "mcd,lsd,aligned_lag,pesq,stoi\n"
        << rep.mcd << "," << rep.lsd << "," << rep.aligned_lag << "," << pesq << "," << stoi << "\n";
  }
  return 0;
}

int cmd_plot(const std::string& wav_path, const std::string& out_prefix, std::size_t fft,
             std::size_t hop) {
  const evib::Waveform w = evib::read_wav(wav_path);
  const evib::SpectrogramMatrix spec = evib::spectrogram(w, fft, hop);
  evib::write_spectrogram_csv(spec, out_prefix + ".csv");
  evib::write_spectrogram_pgm(spec, out_prefix + ".pgm");
  std::printf("%s.csv %s.pgm (%zu frames x %zu bins)\n", out_prefix.c_str(), out_prefix.c_str(),
              spec.frames(), spec.freqs.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"event-camera speckle vibrometry toolkit"};
  app.require_subcommand(1);

  std::string config_path, mode = "realtime", format;
  Overrides ov;

  // simulate
  auto* sim = app.add_subcommand("simulate", "render an event stream from a scene config + WAV");
  sim->add_option("--config", config_path, "flat key = value config file");
  add_override_flag(sim, ov, "--seed", "seed", "RNG seed");
  add_override_flag(sim, ov, "--input", "input_wav", "input audio WAV");
  add_override_flag(sim, ov, "--out", "output_events", "output events file");
  add_override_flag(sim, ov, "--format", "output_format", "csv or bin");
  add_override_flag(sim, ov, "--width", "width", "sensor width");
  add_override_flag(sim, ov, "--height", "height", "sensor height");
  add_override_flag(sim, ov, "--grain", "grain", "speckle grain, pixels");
  add_override_flag(sim, ov, "--margin", "margin", "field margin, pixels");
  add_override_flag(sim, ov, "--epsilon", "epsilon", "contrast threshold");
  add_override_flag(sim, ov, "--floor", "floor", "intensity floor clamp");
  add_override_flag(sim, ov, "--noise-rate", "noise_rate", "spurious events/px/s");
  add_override_flag(sim, ov, "--refractory-us", "refractory_us", "pixel dead time");
  add_override_flag(sim, ov, "--gain", "gain", "pixels per unit amplitude");
  add_override_flag(sim, ov, "--direction-deg", "direction_deg", "motion direction");
  add_override_flag(sim, ov, "--motion-rate", "motion_rate", "motion samples/s");

  // recover
  std::string events_path, out_wav = "recovered.wav";
  auto* rec = app.add_subcommand("recover", "recover audio from an events file");
  rec->add_option("events", events_path, "events file")->required();
  rec->add_option("--config", config_path, "flat key = value config file");
  rec->add_option("--mode", mode, "realtime or offline");
  rec->add_option("--format", format, "events file format (csv/bin; default from extension)");
  rec->add_option("--out", out_wav, "output WAV path");
  add_override_flag(rec, ov, "--r", "r", "neighbor radius, pixels");
  add_override_flag(rec, ov, "--bin-rate", "bin_rate", "aggregation rate, Hz");
  add_override_flag(rec, ov, "--dt-max-us", "dt_max_us", "max neighbor age, us");
  add_override_flag(rec, ov, "--v-max", "v_max", "max speed, px/us");
  add_override_flag(rec, ov, "--frame-rate", "frame_rate", "offline frame rate, Hz");
  add_override_flag(rec, ov, "--pyr-levels", "pyr_levels", "pyramid levels");
  add_override_flag(rec, ov, "--pyr-window", "pyr_window", "flow window, pixels");
  add_override_flag(rec, ov, "--pyr-iters", "pyr_iters", "iterations per level");
  add_override_flag(rec, ov, "--pre-blur", "pre_blur", "3x3 blur passes before flow");
  add_override_flag(rec, ov, "--offline-v-max", "offline_v_max",
                    "offline global velocity clamp, px/us (0 = off)");
  add_override_flag(rec, ov, "--max-lag", "max_lag", "alignment search, samples");
  add_override_flag(rec, ov, "--hp-cutoff", "hp_cutoff", "high-pass cutoff, Hz");
  add_override_flag(rec, ov, "--hp-order", "hp_order", "high-pass order");
  add_override_flag(rec, ov, "--gate-strength", "gate_strength", "spectral gate strength");
  add_override_flag(rec, ov, "--gate-freq-smooth", "gate_freq_smooth", "mask smoothing, Hz");
  add_override_flag(rec, ov, "--gate-time-smooth", "gate_time_smooth", "mask smoothing, ms");
  add_override_flag(rec, ov, "--gate-window", "gate_window", "gate STFT window, ms");
  add_override_flag(rec, ov, "--gate-threshold-sigma", "gate_threshold_sigma",
                    "noise floor margin, std units");
  add_override_flag(rec, ov, "--out-rate", "out_rate", "output sample rate, Hz");
  add_override_flag(rec, ov, "--causal", "causal", "1 = single-pass filtering");

  // demix
  std::vector<std::string> roi_strs;
  std::string out_prefix = "demix";
  auto* dmx = app.add_subcommand("demix", "recover one WAV per region of interest");
  dmx->add_option("events", events_path, "events file")->required();
  dmx->add_option("--roi", roi_strs, "x0,y0,w,h (repeatable)")->required();
  dmx->add_option("--config", config_path, "flat key = value config file");
  dmx->add_option("--mode", mode, "realtime or offline");
  dmx->add_option("--format", format, "events file format");
  dmx->add_option("--out-prefix", out_prefix, "output prefix");
  add_override_flag(dmx, ov, "--r", "r", "neighbor radius, pixels");
  add_override_flag(dmx, ov, "--bin-rate", "bin_rate", "aggregation rate, Hz");
  add_override_flag(dmx, ov, "--frame-rate", "frame_rate", "offline frame rate, Hz");
  add_override_flag(dmx, ov, "--hp-cutoff", "hp_cutoff", "high-pass cutoff, Hz");
  add_override_flag(dmx, ov, "--gate-strength", "gate_strength", "spectral gate strength");
  add_override_flag(dmx, ov, "--out-rate", "out_rate", "output sample rate, Hz");

  // evaluate
  std::string ref_path, test_path, report_path, csv_path, scores_path;
  auto* ev = app.add_subcommand("evaluate", "score a recovered WAV against a reference");
  ev->add_option("ref", ref_path, "reference WAV")->required();
  ev->add_option("test", test_path, "recovered WAV")->required();
  ev->add_option("--out", report_path, "metric report (flat text)");
  ev->add_option("--csv", csv_path, "metric report (CSV row)");
  ev->add_option("--external-scores", scores_path,
                 "flat file with externally computed pesq/stoi to merge into reports");

  // plot
  std::string plot_wav, plot_prefix = "spectrogram";
  std::size_t plot_fft = 2048, plot_hop = 512;
  auto* pl = app.add_subcommand("plot", "export spectrogram CSV + PGM for a WAV");
  pl->add_option("wav", plot_wav, "input WAV")->required();
  pl->add_option("--out-prefix", plot_prefix, "output prefix");
  pl->add_option("--fft", plot_fft, "FFT size (power of two)");
  pl->add_option("--hop", plot_hop, "hop, samples");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return cmd_simulate(config_path, ov);
    if (rec->parsed()) return cmd_recover(events_path, format, mode, out_wav, config_path, ov);
    if (dmx->parsed()) return cmd_demix(events_path, format, roi_strs, mode, out_prefix, config_path, ov);
    if (ev->parsed()) return cmd_evaluate(ref_path, test_path, report_path, csv_path, scores_path);
    if (pl->parsed()) return cmd_plot(plot_wav, plot_prefix, plot_fft, plot_hop);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
