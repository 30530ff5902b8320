#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "evib/audio.hpp"
#include "evib/detail/fft.hpp"
#include "evib/recovery.hpp"

namespace evib {

// Magnitude STFT (Hann window, raw |X_k| of the windowed frame). Spectral
// energy of a frame is (|X_0|^2 + 2*sum_mid + |X_{N/2}|^2) / N, matching the
// time-domain energy of the windowed frame (Parseval).
struct SpectrogramMatrix {
  double hop_s = 0.0;
  std::vector<double> freqs;               // Hz bin centers
  std::vector<std::vector<double>> mags;   // [frame][bin]

  std::size_t frames() const { return mags.size(); }
};

inline SpectrogramMatrix spectrogram(const Waveform& w, std::size_t fft_size, std::size_t hop) {
  if (!detail::is_pow2(fft_size)) throw std::invalid_argument("spectrogram: fft_size must be a power of two");
  if (hop == 0 || hop > fft_size) throw std::invalid_argument("spectrogram: hop must be in [1, fft_size]");
  if (w.samples.size() < fft_size)
    throw std::invalid_argument("spectrogram: signal shorter than fft_size");
  if (w.sample_rate <= 0) throw std::invalid_argument("spectrogram: bad sample rate");

  std::vector<double> window(fft_size);
  for (std::size_t i = 0; i < fft_size; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / fft_size);

  SpectrogramMatrix out;
  out.hop_s = hop / w.sample_rate;
  const std::size_t n_bins = fft_size / 2 + 1;
  out.freqs.resize(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) out.freqs[b] = b * w.sample_rate / fft_size;

  const std::size_t n_frames = (w.samples.size() - fft_size) / hop + 1;
  out.mags.resize(n_frames);
  std::vector<std::complex<double>> buf(fft_size);
  for (std::size_t f = 0; f < n_frames; ++f) {
    const std::size_t pos = f * hop;
    for (std::size_t i = 0; i < fft_size; ++i) buf[i] = {w.samples[pos + i] * window[i], 0.0};
    detail::fft(buf, false);
    out.mags[f].resize(n_bins);
    for (std::size_t b = 0; b < n_bins; ++b) out.mags[f][b] = std::abs(buf[b]);
  }
  return out;
}

// Per-frame dominant frequency with parabolic sub-bin interpolation; frames
// whose energy is 40 dB below the strongest frame are marked absent.
inline std::vector<std::optional<double>> dominant_frequency_track(const SpectrogramMatrix& spec) {
  if (spec.mags.empty()) throw std::invalid_argument("dominant_frequency_track: empty spectrogram");
  const std::size_t n_bins = spec.freqs.size();
  std::vector<double> energy(spec.frames());
  double max_energy = 0.0;
  for (std::size_t f = 0; f < spec.frames(); ++f) {
    double e = 0.0;
    for (double m : spec.mags[f]) e += m * m;
    energy[f] = e;
    max_energy = std::max(max_energy, e);
  }
  const double floor_e = max_energy * 1e-4;

  std::vector<std::optional<double>> track(spec.frames());
  for (std::size_t f = 0; f < spec.frames(); ++f) {
    if (max_energy == 0.0 || energy[f] < floor_e) continue;
    std::size_t best = 0;
    for (std::size_t b = 1; b < n_bins; ++b)
      if (spec.mags[f][b] > spec.mags[f][best]) best = b;
    double freq = spec.freqs[best];
    if (best > 0 && best + 1 < n_bins) {
      const double l0 = std::log(spec.mags[f][best - 1] + 1e-30);
      const double l1 = std::log(spec.mags[f][best] + 1e-30);
      const double l2 = std::log(spec.mags[f][best + 1] + 1e-30);
      const double denom = l0 - 2.0 * l1 + l2;
      if (denom < 0) {
        const double delta = std::clamp(0.5 * (l0 - l2) / denom, -0.5, 0.5);
        freq += delta * (spec.freqs[1] - spec.freqs[0]);
      }
    }
    track[f] = freq;
  }
  return track;
}

namespace detail_metrics {

constexpr double kSilenceRms = 1e-5;

struct FramePair {
  const double* ref;
  const double* test;
};

// Frame both signals (equal rates and lengths assumed trimmed by the caller);
// skip pairs where both frames are silent. Empty result means the metric is
// undefined.
inline std::vector<FramePair> paired_frames(const Waveform& ref, const Waveform& test,
                                            std::size_t frame_len, std::size_t hop) {
  if (ref.sample_rate != test.sample_rate)
    throw std::invalid_argument("metrics: sample rates differ; resample first");
  const std::size_t n = std::min(ref.samples.size(), test.samples.size());
  std::vector<FramePair> out;
  if (n < frame_len) return out;
  for (std::size_t pos = 0; pos + frame_len <= n; pos += hop) {
    double er = 0.0, et = 0.0;
    for (std::size_t i = 0; i < frame_len; ++i) {
      er += ref.samples[pos + i] * ref.samples[pos + i];
      et += test.samples[pos + i] * test.samples[pos + i];
    }
    const double rr = std::sqrt(er / frame_len), rt = std::sqrt(et / frame_len);
    if (rr < kSilenceRms && rt < kSilenceRms) continue;
    out.push_back(FramePair{ref.samples.data() + pos, test.samples.data() + pos});
  }
  return out;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// 40 triangular filters on the HTK mel scale spanning 0..Nyquist, as weights
// over the one-sided power spectrum.
inline std::vector<std::vector<double>> mel_filterbank(std::size_t n_bins, double sample_rate,
                                                       std::size_t fft_size, int n_filters = 40) {
  const double mel_max = hz_to_mel(sample_rate / 2.0);
  std::vector<double> centers(static_cast<std::size_t>(n_filters) + 2);
  for (std::size_t i = 0; i < centers.size(); ++i)
    centers[i] = mel_to_hz(mel_max * static_cast<double>(i) / (n_filters + 1));
  std::vector<std::vector<double>> fb(static_cast<std::size_t>(n_filters),
                                      std::vector<double>(n_bins, 0.0));
  for (int m = 0; m < n_filters; ++m) {
    const double lo = centers[static_cast<std::size_t>(m)];
    const double mid = centers[static_cast<std::size_t>(m) + 1];
    const double hi = centers[static_cast<std::size_t>(m) + 2];
    for (std::size_t b = 0; b < n_bins; ++b) {
      const double f = b * sample_rate / static_cast<double>(fft_size);
      if (f > lo && f < mid)
        fb[static_cast<std::size_t>(m)][b] = (f - lo) / (mid - lo);
      else if (f >= mid && f < hi)
        fb[static_cast<std::size_t>(m)][b] = (hi - f) / (hi - mid);
    }
  }
  return fb;
}

// Mel cepstral coefficients c1..c13 of one frame (Hann window, log mel
// energies, DCT-II).
inline void mel_cepstrum(const double* x, std::size_t frame_len, std::size_t fft_size,
                         const std::vector<double>& window,
                         const std::vector<std::vector<double>>& fb, double* c_out, int n_coef) {
  std::vector<std::complex<double>> buf(fft_size, {0.0, 0.0});
  for (std::size_t i = 0; i < frame_len; ++i) buf[i] = {x[i] * window[i], 0.0};
  detail::fft(buf, false);
  const std::size_t n_bins = fft_size / 2 + 1;
  std::vector<double> power(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) power[b] = std::norm(buf[b]);
  const int n_filters = static_cast<int>(fb.size());
  std::vector<double> loge(static_cast<std::size_t>(n_filters));
  for (int m = 0; m < n_filters; ++m) {
    double e = 0.0;
    for (std::size_t b = 0; b < n_bins; ++b) e += fb[static_cast<std::size_t>(m)][b] * power[b];
    loge[static_cast<std::size_t>(m)] = std::log(std::max(e, 1e-10));
  }
  for (int k = 1; k <= n_coef; ++k) {
    double acc = 0.0;
    for (int m = 0; m < n_filters; ++m)
      acc += loge[static_cast<std::size_t>(m)] *
             std::cos(std::numbers::pi * k * (m + 0.5) / n_filters);
    c_out[k - 1] = acc;
  }
}

}  // namespace detail_metrics

// Mel Cepstral Distortion in dB: (10*sqrt(2)/ln10) * mean Euclidean distance
// between c1..c13 vectors over 25 ms frames with 10 ms hop. Pairs where both
// frames are silent are skipped; all-silent inputs are undefined.
inline double mcd(const Waveform& ref, const Waveform& test) {
  const std::size_t frame_len = static_cast<std::size_t>(std::round(0.025 * ref.sample_rate));
  const std::size_t hop = static_cast<std::size_t>(std::round(0.010 * ref.sample_rate));
  const auto pairs = detail_metrics::paired_frames(ref, test, frame_len, hop);
  if (pairs.empty()) throw std::runtime_error("mcd: metric undefined (no non-silent frames)");

  const std::size_t fft_size = detail::next_pow2(frame_len);
  std::vector<double> window(frame_len);
  for (std::size_t i = 0; i < frame_len; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / frame_len);
  const auto fb = detail_metrics::mel_filterbank(fft_size / 2 + 1, ref.sample_rate, fft_size);

  constexpr int kCoef = 13;
  double acc = 0.0;
  double cr[kCoef], ct[kCoef];
  for (const auto& p : pairs) {
    detail_metrics::mel_cepstrum(p.ref, frame_len, fft_size, window, fb, cr, kCoef);
    detail_metrics::mel_cepstrum(p.test, frame_len, fft_size, window, fb, ct, kCoef);
    double d2 = 0.0;
    for (int k = 0; k < kCoef; ++k) d2 += (cr[k] - ct[k]) * (cr[k] - ct[k]);
    acc += std::sqrt(d2);
  }
  return (10.0 * std::numbers::sqrt2 / std::numbers::ln10) * acc / pairs.size();
}

// Log Spectral Distance: per frame sqrt(mean over frequency of squared
// log10-magnitude differences), averaged over frames; fft 2048, hop 512
// (reference settings at 16 kHz), magnitudes floored at 1e-8.
inline double lsd(const Waveform& ref, const Waveform& test) {
  const std::size_t fft_size = 2048;
  const std::size_t hop = 512;
  const auto pairs = detail_metrics::paired_frames(ref, test, fft_size, hop);
  if (pairs.empty()) throw std::runtime_error("lsd: metric undefined (no non-silent frames)");

  std::vector<double> window(fft_size);
  for (std::size_t i = 0; i < fft_size; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / fft_size);
  const std::size_t n_bins = fft_size / 2 + 1;

  std::vector<std::complex<double>> buf(fft_size);
  auto log_mags = [&](const double* x, std::vector<double>& out) {
    for (std::size_t i = 0; i < fft_size; ++i) buf[i] = {x[i] * window[i], 0.0};
    detail::fft(buf, false);
    out.resize(n_bins);
    for (std::size_t b = 0; b < n_bins; ++b) out[b] = std::log10(std::max(std::abs(buf[b]), 1e-8));
  };

  std::vector<double> lr, lt;
  double acc = 0.0;
  for (const auto& p : pairs) {
    log_mags(p.ref, lr);
    log_mags(p.test, lt);
    double m = 0.0;
    for (std::size_t b = 0; b < n_bins; ++b) m += (lr[b] - lt[b]) * (lr[b] - lt[b]);
    acc += std::sqrt(m / n_bins);
  }
  return acc / pairs.size();
}

struct MetricReport {
  double mcd = 0.0;
  double lsd = 0.0;
  int aligned_lag = 0;
};

// Evaluation front end: resample both signals to 16 kHz, align by
// cross-correlation, trim to the overlap, RMS-match the test signal, then
// score. Alignment and gain matching keep the metrics about spectral content
// rather than playback offset or unidentifiable absolute gain.
inline MetricReport evaluate_waveforms(const Waveform& ref_in, const Waveform& test_in,
                                       double rate = 16000.0, double align_window_s = 0.5) {
  Waveform ref = ref_in.sample_rate == rate ? ref_in : resample(ref_in, rate);
  Waveform test = test_in.sample_rate == rate ? test_in : resample(test_in, rate);

  const std::size_t n = std::min(ref.samples.size(), test.samples.size());
  if (n < 16) throw std::runtime_error("evaluate: signals too short");
  ref.samples.resize(n);
  test.samples.resize(n);

  const int max_lag = std::min<int>(static_cast<int>(align_window_s * rate), static_cast<int>(n / 2) - 1);
  const AlignResult al = align_channels(ref.samples, test.samples, std::max(0, max_lag));

  // test[i + lag] lines up with ref[i]; keep only the overlapping span so
  // shifted-in silence does not pollute the frame pairing.
  const std::size_t begin = al.lag < 0 ? static_cast<std::size_t>(-al.lag) : 0;
  const std::size_t end = al.lag > 0 ? n - static_cast<std::size_t>(al.lag) : n;
  if (end <= begin + 16) throw std::runtime_error("evaluate: no overlap after alignment");
  Waveform ref_ov, test_al;
  ref_ov.sample_rate = test_al.sample_rate = rate;
  ref_ov.samples.assign(ref.samples.begin() + static_cast<std::ptrdiff_t>(begin),
                        ref.samples.begin() + static_cast<std::ptrdiff_t>(end));
  test_al.samples.resize(end - begin);
  for (std::size_t i = begin; i < end; ++i)
    test_al.samples[i - begin] = test.samples[static_cast<std::size_t>(static_cast<std::int64_t>(i) + al.lag)];
  ref = std::move(ref_ov);

  const double rms_ref = rms(ref.samples);
  const double rms_test = rms(test_al.samples);
  if (rms_test > 0 && rms_ref > 0) {
    const double g = rms_ref / rms_test;
    for (double& s : test_al.samples) s *= g;
  }

  MetricReport rep;
  rep.aligned_lag = al.lag;
  rep.mcd = mcd(ref, test_al);
  rep.lsd = lsd(ref, test_al);
  return rep;
}

// --- artifact writers -------------------------------------------------------

inline void write_spectrogram_csv(const SpectrogramMatrix& spec, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_spectrogram_csv: cannot open '" + path + "'");
  out << "time_s";
  for (double f : spec.freqs) out << "," << f;
  out << "\n";
  for (std::size_t t = 0; t < spec.frames(); ++t) {
    out << t * spec.hop_s;
    for (double m : spec.mags[t]) out << "," << m;
    out << "\n";
  }
  if (!out) throw std::runtime_error("write_spectrogram_csv: I/O failure on '" + path + "'");
}

// 8-bit PGM heatmap, dB scale over a 60 dB range, frequency on the vertical
// axis (low at the bottom), time on the horizontal.
inline void write_spectrogram_pgm(const SpectrogramMatrix& spec, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_spectrogram_pgm: cannot open '" + path + "'");
  const std::size_t w = spec.frames();
  const std::size_t h = spec.freqs.size();
  if (w == 0 || h == 0) throw std::runtime_error("write_spectrogram_pgm: empty spectrogram");
  double peak = 0.0;
  for (const auto& row : spec.mags)
    for (double m : row) peak = std::max(peak, m);
  out << "P5\n" << w << " " << h << "\n255\n";
  std::string img(w * h, '\0');
  const double floor_db = -60.0;
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t bin = h - 1 - y;
    for (std::size_t x = 0; x < w; ++x) {
      double v = 0.0;
      if (peak > 0.0) {
        const double db = 20.0 * std::log10(spec.mags[x][bin] / peak + 1e-12);
        v = std::clamp((db - floor_db) / -floor_db, 0.0, 1.0);
      }
      img[y * w + x] = static_cast<char>(std::lround(v * 255.0));
    }
  }
  out.write(img.data(), static_cast<std::streamsize>(img.size()));
  if (!out) throw std::runtime_error("write_spectrogram_pgm: I/O failure on '" + path + "'");
}

}  // namespace evib
