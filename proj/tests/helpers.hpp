#pragma once

// Shared test utilities: deterministic signal builders, random event streams,
// and small measurement oracles kept independent of the library internals.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "evib/audio.hpp"
#include "evib/events.hpp"

namespace testutil {

inline evib::Waveform tone(double freq, double amp, double duration_s, double rate,
                           double phase = 0.0) {
  evib::Waveform w;
  w.sample_rate = rate;
  const std::size_t n = static_cast<std::size_t>(std::llround(duration_s * rate));
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    w.samples[i] = amp * std::sin(2.0 * std::numbers::pi * freq * i / rate + phase);
  return w;
}

// Linear chirp f0 -> f1 over the duration.
inline evib::Waveform chirp(double f0, double f1, double amp, double duration_s, double rate) {
  evib::Waveform w;
  w.sample_rate = rate;
  const std::size_t n = static_cast<std::size_t>(std::llround(duration_s * rate));
  w.samples.resize(n);
  const double k = (f1 - f0) / duration_s;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = i / rate;
    w.samples[i] = amp * std::sin(2.0 * std::numbers::pi * (f0 * t + 0.5 * k * t * t));
  }
  return w;
}

inline double chirp_freq_at(double f0, double f1, double duration_s, double t) {
  return f0 + (f1 - f0) * t / duration_s;
}

inline evib::Waveform white_noise(double amp, double duration_s, double rate, std::uint64_t seed) {
  evib::Waveform w;
  w.sample_rate = rate;
  std::mt19937_64 rng(seed);
  const std::size_t n = static_cast<std::size_t>(std::llround(duration_s * rate));
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    w.samples[i] = amp * (2.0 * ((rng() >> 11) * 0x1.0p-53) - 1.0);
  return w;
}

inline evib::Waveform mix(const evib::Waveform& a, const evib::Waveform& b) {
  evib::Waveform out = a;
  const std::size_t n = std::min(a.samples.size(), b.samples.size());
  out.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.samples[i] = a.samples[i] + b.samples[i];
  return out;
}

// Single-bin amplitude estimate (Goertzel-style projection onto sin/cos).
inline double tone_amplitude(const std::vector<double>& x, double freq, double rate,
                             std::size_t begin = 0, std::size_t end = 0) {
  if (end == 0 || end > x.size()) end = x.size();
  double cs = 0.0, sn = 0.0;
  const std::size_t n = end - begin;
  for (std::size_t i = begin; i < end; ++i) {
    const double ph = 2.0 * std::numbers::pi * freq * i / rate;
    cs += x[i] * std::cos(ph);
    sn += x[i] * std::sin(ph);
  }
  return 2.0 * std::sqrt(cs * cs + sn * sn) / n;
}

// Time-ordered random event stream with valid coordinates and polarities.
inline evib::EventStream random_stream(std::uint64_t seed, std::size_t count,
                                       evib::SensorGeometry g, std::int64_t max_dt = 50) {
  std::mt19937_64 rng(seed);
  std::vector<evib::Event> ev(count);
  std::int64_t t = 0;
  for (std::size_t i = 0; i < count; ++i) {
    t += static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(max_dt + 1));
    ev[i].t = t;
    ev[i].x = static_cast<std::uint16_t>(rng() % static_cast<std::uint64_t>(g.width));
    ev[i].y = static_cast<std::uint16_t>(rng() % static_cast<std::uint64_t>(g.height));
    ev[i].p = (rng() & 1) ? std::int8_t{1} : std::int8_t{-1};
  }
  return evib::EventStream(g, std::move(ev));
}

inline double weighted_median(std::vector<std::pair<double, double>> value_weight) {
  double total = 0.0;
  for (auto& [v, w] : value_weight) total += w;
  std::sort(value_weight.begin(), value_weight.end());
  double acc = 0.0;
  for (auto& [v, w] : value_weight) {
    acc += w;
    if (acc >= total / 2.0) return v;
  }
  return value_weight.empty() ? 0.0 : value_weight.back().first;
}

}  // namespace testutil
