#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "evib/audio.hpp"
#include "evib/detail/fft.hpp"
#include "evib/flow_signal.hpp"

namespace evib {

struct RecoveryConfig {
  int max_lag = 1000;               // samples, alignment search half-range
  double hp_cutoff = 30.0;          // Hz; paper guidance 10-100 (warn outside)
  int hp_order = 4;
  double gate_strength = 0.8;       // 0 disables the spectral gate
  double gate_freq_smooth_hz = 50.0;
  double gate_time_smooth_ms = 100.0;
  double gate_window_ms = 100.0;
  double gate_threshold_sigma = 1.5;
  double out_rate = 16000.0;
  bool causal = false;              // single-pass filtering (live use)

  void validate() const {
    if (max_lag < 0) throw std::invalid_argument("RecoveryConfig: max_lag must be >= 0");
    if (hp_order < 1) throw std::invalid_argument("RecoveryConfig: hp_order must be >= 1");
    if (gate_strength < 0.0 || gate_strength > 1.0)
      throw std::invalid_argument("RecoveryConfig: gate_strength must be in [0,1]");
    if (out_rate <= 0) throw std::invalid_argument("RecoveryConfig: out_rate must be > 0");
  }
};

struct AlignResult {
  int lag = 0;        // samples: vy[i + lag] lines up with vx[i]
  double sign = 1.0;  // correlation sign at the peak
  double peak = 0.0;  // |normalized cross-correlation| at the peak
};

// Cross-correlation alignment of the two velocity channels over
// lag in [-max_lag, max_lag]; peak of |rho| wins, earliest lag on ties.
// Degenerate rule: an all-zero channel yields lag 0, sign +.
inline AlignResult align_channels(const std::vector<double>& vx, const std::vector<double>& vy,
                                  int max_lag) {
  if (vx.size() != vy.size()) throw std::invalid_argument("align_channels: length mismatch");
  const std::size_t n = vx.size();
  if (n < 2 * static_cast<std::size_t>(std::max(1, max_lag)))
    throw std::invalid_argument("align_channels: signals shorter than 2*max_lag");

  double ex = 0.0, ey = 0.0;
  for (double v : vx) ex += v * v;
  for (double v : vy) ey += v * v;
  if (ex == 0.0 || ey == 0.0) return AlignResult{0, 1.0, 0.0};

  const std::size_t m = detail::next_pow2(n + static_cast<std::size_t>(max_lag) + 1);
  std::vector<std::complex<double>> fx(m, {0, 0}), fy(m, {0, 0});
  for (std::size_t i = 0; i < n; ++i) {
    fx[i] = {vx[i], 0};
    fy[i] = {vy[i], 0};
  }
  detail::fft(fx, false);
  detail::fft(fy, false);
  for (std::size_t i = 0; i < m; ++i) fx[i] = std::conj(fx[i]) * fy[i];
  detail::fft(fx, true);
  // c(l) = sum_i vx[i] * vy[i + l]; l >= 0 at index l, l < 0 at index m + l.
  const double norm = std::sqrt(ex * ey);
  AlignResult best;
  double best_abs = -1.0;
  for (int l = -max_lag; l <= max_lag; ++l) {
    const std::size_t idx = l >= 0 ? static_cast<std::size_t>(l) : m - static_cast<std::size_t>(-l);
    const double c = fx[idx].real() / norm;
    if (std::abs(c) > best_abs) {
      best_abs = std::abs(c);
      best.lag = l;
      best.sign = c >= 0 ? 1.0 : -1.0;
      best.peak = std::abs(c);
    }
  }
  return best;
}

// Average the aligned channels and integrate (cumulative sum; one ramp unit
// per sample of constant velocity). A silent channel passes the other through
// unscaled instead of halving it.
inline Waveform combine_and_integrate(const std::vector<double>& vx, const std::vector<double>& vy,
                                      int lag, double sign, double sample_rate) {
  if (vx.size() != vy.size()) throw std::invalid_argument("combine_and_integrate: length mismatch");
  const std::size_t n = vx.size();
  auto all_zero = [](const std::vector<double>& v) {
    for (double x : v)
      if (x != 0.0) return false;
    return true;
  };
  const bool zx = all_zero(vx), zy = all_zero(vy);

  Waveform out;
  out.sample_rate = sample_rate;
  out.samples.resize(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::int64_t j = static_cast<std::int64_t>(i) + lag;
    const double y = (j >= 0 && j < static_cast<std::int64_t>(n)) ? vy[static_cast<std::size_t>(j)] : 0.0;
    double mean;
    if (zx && zy)
      mean = 0.0;
    else if (zy)
      mean = vx[i];
    else if (zx)
      mean = y;
    else
      mean = 0.5 * (vx[i] + sign * y);
    acc += mean;
    out.samples[i] = acc;
  }
  return out;
}

namespace detail_filter {

struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0;  // feedforward
  double a1 = 0, a2 = 0;          // feedback (a0 normalized to 1)
};

// Butterworth high-pass as a cascade of biquads (plus one first-order section
// for odd orders), designed by pole placement and the bilinear transform.
inline std::vector<Biquad> design_butterworth_highpass(double cutoff_hz, double fs, int order) {
  if (cutoff_hz <= 0 || cutoff_hz >= fs / 2)
    throw std::invalid_argument("highpass: cutoff must be in (0, fs/2)");
  const double wc = std::tan(std::numbers::pi * cutoff_hz / fs);  // prewarped
  std::vector<Biquad> sections;
  const int pairs = order / 2;
  for (int k = 0; k < pairs; ++k) {
    const double theta = std::numbers::pi * (2.0 * k + 1.0) / (2.0 * order) + std::numbers::pi / 2.0;
    const std::complex<double> p_lp(std::cos(theta), std::sin(theta));
    const std::complex<double> p_hp = wc / p_lp;
    const std::complex<double> z = (1.0 + p_hp) / (1.0 - p_hp);
    Biquad s;
    s.a1 = -2.0 * z.real();
    s.a2 = std::norm(z);
    // zeros at z=1 (DC); normalize gain at Nyquist (z=-1)
    const double num_nyq = 4.0;  // |1 - 2 z^-1 + z^-2| at z = -1
    const double den_nyq = std::abs(std::complex<double>(1.0, 0.0) + s.a1 * std::complex<double>(-1.0, 0.0) +
                                    s.a2 * std::complex<double>(1.0, 0.0));
    const double g = den_nyq / num_nyq;
    s.b0 = g;
    s.b1 = -2.0 * g;
    s.b2 = g;
    sections.push_back(s);
  }
  if (order % 2 == 1) {
    const double p_hp = -wc;  // real prototype pole at -1 maps to -wc
    const double zp = (1.0 + p_hp) / (1.0 - p_hp);
    Biquad s;
    s.a1 = -zp;
    s.a2 = 0.0;
    const double g = (1.0 + zp) / 2.0;  // unit gain at Nyquist
    s.b0 = g;
    s.b1 = -g;
    s.b2 = 0.0;
    sections.push_back(s);
  }
  return sections;
}

inline void run_cascade(const std::vector<Biquad>& sections, std::vector<double>& x) {
  for (const Biquad& s : sections) {
    double z1 = 0.0, z2 = 0.0;  // transposed direct form II
    for (double& v : x) {
      const double in = v;
      const double out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      v = out;
    }
  }
}

}  // namespace detail_filter

// Butterworth high-pass. zero_phase applies the cascade forward and backward
// (squared magnitude response, no phase distortion) with odd-reflection
// padding to suppress edge transients; DC gain is exactly zero either way.
inline Waveform highpass(const Waveform& w, double cutoff_hz, int order, bool zero_phase = true) {
  if (w.sample_rate <= 0) throw std::invalid_argument("highpass: bad sample rate");
  const auto sections = detail_filter::design_butterworth_highpass(cutoff_hz, w.sample_rate, order);
  const std::size_t n = w.samples.size();
  if (n == 0) return w;

  if (!zero_phase) {
    Waveform out = w;
    detail_filter::run_cascade(sections, out.samples);
    return out;
  }

  const std::size_t pad =
      std::min(n - 1, static_cast<std::size_t>(std::ceil(3.0 * w.sample_rate / cutoff_hz)));
  std::vector<double> buf;
  buf.reserve(n + 2 * pad);
  for (std::size_t i = 0; i < pad; ++i) buf.push_back(2.0 * w.samples[0] - w.samples[pad - i]);
  buf.insert(buf.end(), w.samples.begin(), w.samples.end());
  for (std::size_t i = 0; i < pad; ++i) buf.push_back(2.0 * w.samples[n - 1] - w.samples[n - 2 - i]);

  detail_filter::run_cascade(sections, buf);
  std::reverse(buf.begin(), buf.end());
  detail_filter::run_cascade(sections, buf);
  std::reverse(buf.begin(), buf.end());

  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.assign(buf.begin() + pad, buf.begin() + pad + n);
  return out;
}

struct GateConfig {
  double strength = 0.8;
  double freq_smooth_hz = 50.0;
  double time_smooth_ms = 100.0;
  double window_ms = 100.0;
  double threshold_sigma = 1.5;  // noise floor margin in dB-domain std units
};

namespace detail_gate {

// STFT window: nearest power of two to window_ms at the signal rate.
inline std::size_t window_samples(double sample_rate, double window_ms) {
  const std::size_t want =
      static_cast<std::size_t>(std::max(2.0, std::round(window_ms * 1e-3 * sample_rate)));
  std::size_t win = detail::next_pow2(want);
  if (win > want && win - want > want - win / 2) win /= 2;
  return std::max<std::size_t>(win, 8);
}

}  // namespace detail_gate

// Stationary spectral gating. The per-frequency noise floor is estimated from
// the signal's own statistics (mean + 1.5 sigma of the dB magnitudes over
// time); a smoothed soft mask attenuates below-floor cells by `strength`.
// STFT window is the nearest power of two to window_ms at the signal rate,
// 50% hop, periodic Hann, exact overlap-add reconstruction.
inline Waveform spectral_gate_denoise(const Waveform& w, const GateConfig& cfg) {
  if (w.sample_rate <= 0) throw std::invalid_argument("spectral_gate_denoise: bad sample rate");
  if (cfg.strength < 0.0 || cfg.strength > 1.0)
    throw std::invalid_argument("spectral_gate_denoise: strength must be in [0,1]");
  const std::size_t win = detail_gate::window_samples(w.sample_rate, cfg.window_ms);
  const std::size_t n = w.samples.size();
  if (n < 2 * win)
    throw std::invalid_argument("spectral_gate_denoise: signal shorter than two gate windows");
  const std::size_t hop = win / 2;

  std::vector<double> window(win);
  for (std::size_t i = 0; i < win; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / win);

  const std::size_t n_pad = n + win;  // win/2 zeros on both sides
  const std::size_t n_frames = (n_pad - win) / hop + 1;
  const std::size_t n_bins = win / 2 + 1;

  auto padded = [&](std::int64_t i) -> double {
    i -= static_cast<std::int64_t>(win / 2);
    return (i >= 0 && i < static_cast<std::int64_t>(n)) ? w.samples[static_cast<std::size_t>(i)] : 0.0;
  };

  // Analysis.
  std::vector<std::vector<std::complex<double>>> spec(n_frames);
  std::vector<std::vector<double>> db(n_frames, std::vector<double>(n_bins));
  std::vector<std::complex<double>> buf(win);
  for (std::size_t f = 0; f < n_frames; ++f) {
    const std::int64_t pos = static_cast<std::int64_t>(f * hop);
    for (std::size_t i = 0; i < win; ++i) buf[i] = {padded(pos + static_cast<std::int64_t>(i)) * window[i], 0.0};
    detail::fft(buf, false);
    spec[f].assign(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(n_bins));
    for (std::size_t b = 0; b < n_bins; ++b) db[f][b] = 20.0 * std::log10(std::abs(spec[f][b]) + 1e-12);
  }

  // Per-frequency noise floor. Time statistics alone would treat a stationary
  // tone as its own floor, so the per-bin mean/std are medianed across a
  // spectral neighborhood first: narrowband signal stands above the broadband
  // floor it sits in.
  std::vector<double> mean_db(n_bins), std_db(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) {
    double mean = 0.0;
    for (std::size_t f = 0; f < n_frames; ++f) mean += db[f][b];
    mean /= n_frames;
    double var = 0.0;
    for (std::size_t f = 0; f < n_frames; ++f) var += (db[f][b] - mean) * (db[f][b] - mean);
    mean_db[b] = mean;
    std_db[b] = std::sqrt(var / n_frames);
  }
  // Bins far below the overall level (a high-pass stop band, for instance)
  // would drag the neighborhood median down and leave their neighbors
  // ungated, so they are excluded from the floor estimate.
  double top_mean = -1e9;
  for (std::size_t b = 0; b < n_bins; ++b) top_mean = std::max(top_mean, mean_db[b]);
  const double dead_below = top_mean - 120.0;
  const std::size_t half_med = std::max<std::size_t>(15, n_bins / 32);
  auto window_median = [&](const std::vector<double>& v, std::size_t b) {
    const std::size_t lo = b > half_med ? b - half_med : 0;
    const std::size_t hi = std::min(n_bins, b + half_med + 1);
    std::vector<double> tmp;
    tmp.reserve(hi - lo);
    for (std::size_t j = lo; j < hi; ++j)
      if (mean_db[j] > dead_below) tmp.push_back(v[j]);
    if (tmp.empty()) return v[b];
    std::nth_element(tmp.begin(), tmp.begin() + static_cast<std::ptrdiff_t>(tmp.size() / 2), tmp.end());
    return tmp[tmp.size() / 2];
  };
  std::vector<double> thresh(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b)
    thresh[b] = window_median(mean_db, b) + cfg.threshold_sigma * window_median(std_db, b);

  // Binary mask, then separable box smoothing over time and frequency.
  std::vector<std::vector<double>> mask(n_frames, std::vector<double>(n_bins));
  for (std::size_t f = 0; f < n_frames; ++f)
    for (std::size_t b = 0; b < n_bins; ++b) mask[f][b] = db[f][b] > thresh[b] ? 1.0 : 0.0;

  const double bin_hz = w.sample_rate / static_cast<double>(win);
  const double hop_ms = 1e3 * hop / w.sample_rate;
  const int rf = static_cast<int>(std::round(cfg.freq_smooth_hz / bin_hz / 2.0));
  const int rt = static_cast<int>(std::round(cfg.time_smooth_ms / hop_ms / 2.0));
  if (rf > 0) {
    std::vector<double> rowbuf(n_bins);
    for (std::size_t f = 0; f < n_frames; ++f) {
      for (std::size_t b = 0; b < n_bins; ++b) {
        double acc = 0.0;
        int cnt = 0;
        for (int d = -rf; d <= rf; ++d) {
          const std::int64_t bb = static_cast<std::int64_t>(b) + d;
          if (bb < 0 || bb >= static_cast<std::int64_t>(n_bins)) continue;
          acc += mask[f][static_cast<std::size_t>(bb)];
          ++cnt;
        }
        rowbuf[b] = acc / cnt;
      }
      mask[f] = rowbuf;
    }
  }
  if (rt > 0) {
    std::vector<double> colbuf(n_frames);
    for (std::size_t b = 0; b < n_bins; ++b) {
      for (std::size_t f = 0; f < n_frames; ++f) {
        double acc = 0.0;
        int cnt = 0;
        for (int d = -rt; d <= rt; ++d) {
          const std::int64_t ff = static_cast<std::int64_t>(f) + d;
          if (ff < 0 || ff >= static_cast<std::int64_t>(n_frames)) continue;
          acc += mask[static_cast<std::size_t>(ff)][b];
          ++cnt;
        }
        colbuf[f] = acc / cnt;
      }
      for (std::size_t f = 0; f < n_frames; ++f) mask[f][b] = colbuf[f];
    }
  }

  // Attenuate and resynthesize (overlap-add, window-sum normalized).
  std::vector<double> acc(n_pad, 0.0), wsum(n_pad, 0.0);
  for (std::size_t f = 0; f < n_frames; ++f) {
    for (std::size_t b = 0; b < n_bins; ++b) {
      const double gain = (1.0 - cfg.strength) + cfg.strength * mask[f][b];
      spec[f][b] *= gain;
    }
    for (std::size_t i = 0; i < win; ++i) buf[i] = {0.0, 0.0};
    for (std::size_t b = 0; b < n_bins; ++b) {
      buf[b] = spec[f][b];
      if (b > 0 && b < win / 2) buf[win - b] = std::conj(spec[f][b]);
    }
    detail::fft(buf, true);
    const std::size_t pos = f * hop;
    for (std::size_t i = 0; i < win && pos + i < n_pad; ++i) {
      acc[pos + i] += buf[i].real();
      wsum[pos + i] += window[i];
    }
  }

  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + win / 2;
    out.samples[i] = wsum[j] > 1e-9 ? acc[j] / wsum[j] : 0.0;
  }
  return out;
}

struct RecoveryResult {
  Waveform audio;
  AlignResult align;
  double pre_normalize_peak = 0.0;
  double normalize_scale = 1.0;
  std::vector<std::string> warnings;
};

// Full recovery chain: align axes, average, integrate, high-pass, gate,
// resample, peak-normalize to 0.9.
inline RecoveryResult recover_waveform(const GlobalFlowSignal& sig, const RecoveryConfig& cfg) {
  cfg.validate();
  if (sig.size() < 2) throw std::runtime_error("recover_waveform: insufficient flow samples");

  RecoveryResult res;
  if (cfg.hp_cutoff < 10.0 || cfg.hp_cutoff > 100.0)
    res.warnings.push_back("hp_cutoff " + std::to_string(cfg.hp_cutoff) +
                           " Hz is outside the recommended 10-100 Hz range");

  const int max_lag = std::min<int>(cfg.max_lag, static_cast<int>(sig.size() / 2) - 1);
  res.align = max_lag > 0 ? align_channels(sig.vx, sig.vy, max_lag) : AlignResult{};
  Waveform w = combine_and_integrate(sig.vx, sig.vy, res.align.lag, res.align.sign, sig.sample_rate);

  if (cfg.hp_cutoff > 0) w = highpass(w, cfg.hp_cutoff, cfg.hp_order, !cfg.causal);

  if (cfg.gate_strength > 0) {
    GateConfig gc;
    gc.strength = cfg.gate_strength;
    gc.freq_smooth_hz = cfg.gate_freq_smooth_hz;
    gc.time_smooth_ms = cfg.gate_time_smooth_ms;
    gc.window_ms = cfg.gate_window_ms;
    gc.threshold_sigma = cfg.gate_threshold_sigma;
    const std::size_t min_len = 2 * detail_gate::window_samples(w.sample_rate, gc.window_ms);
    if (w.samples.size() >= min_len)
      w = spectral_gate_denoise(w, gc);
    else
      res.warnings.push_back("signal too short for spectral gate; skipped");
  }

  if (w.sample_rate != cfg.out_rate) w = resample(w, cfg.out_rate);

  res.pre_normalize_peak = peak_abs(w.samples);
  if (res.pre_normalize_peak > 0) {
    res.normalize_scale = 0.9 / res.pre_normalize_peak;
    for (double& s : w.samples) s *= res.normalize_scale;
  }
  res.audio = std::move(w);
  return res;
}

}  // namespace evib
