#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

#include "evib/audio.hpp"
#include "evib/detail/parallel.hpp"
#include "evib/events.hpp"
#include "evib/grid.hpp"

namespace evib {

// Speckle intensity pattern rendered on a grid larger than the sensor by
// `margin` pixels on every side, so translations never sample outside it.
struct SpeckleField {
  Grid<double> intensity;
  double grain = 4.0;
  std::uint64_t seed = 0;
  int margin = 0;

  void validate() const {
    if (intensity.width < 1 || intensity.height < 1)
      throw std::invalid_argument("SpeckleField: empty intensity grid");
    bool any_positive = false;
    for (double v : intensity.data) {
      if (v < 0.0) throw std::invalid_argument("SpeckleField: negative intensity");
      if (v > 0.0) any_positive = true;
    }
    if (!any_positive) throw std::invalid_argument("SpeckleField: all-zero intensity");
  }
};

// Contrast-threshold sensor: a pixel fires when its log-intensity moves more
// than epsilon away from the level at its last event.
struct SensorModel {
  double epsilon = 0.2;
  double floor = 0.02;           // clamp before log; same units as intensity
  double noise_rate = 0.0;       // spurious events / pixel / second
  std::int64_t refractory_us = 0;

  void validate() const {
    if (epsilon <= 0) throw std::invalid_argument("SensorModel: epsilon must be > 0");
    if (floor <= 0) throw std::invalid_argument("SensorModel: floor must be > 0");
    if (noise_rate < 0) throw std::invalid_argument("SensorModel: noise_rate must be >= 0");
    if (refractory_us < 0) throw std::invalid_argument("SensorModel: refractory_us must be >= 0");
  }
};

// Ground-truth 2D speckle displacement over time, in pixels relative to the
// rest position.
struct MotionTrace {
  double sample_rate = 0.0;
  std::vector<double> dx;
  std::vector<double> dy;
};

namespace detail_sim {

// Gaussian pair from raw engine bits (Box-Muller). Avoids
// std::normal_distribution, whose output is implementation-defined.
inline void gaussian_pair(std::mt19937_64& rng, double& g0, double& g1) {
  // 53-bit uniforms in (0,1]
  const double u1 = (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  const double r = std::sqrt(-2.0 * std::log(u1));
  g0 = r * std::cos(2.0 * std::numbers::pi * u2);
  g1 = r * std::sin(2.0 * std::numbers::pi * u2);
}

// Separable wrap-around Gaussian blur (keeps statistics stationary across the
// whole field, including the margin band).
inline void gaussian_blur_wrap(Grid<double>& g, double sigma) {
  if (sigma <= 0) return;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += kernel[i + radius];
  }
  for (double& k : kernel) k /= sum;

  Grid<double> tmp(g.width, g.height);
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        int xx = x + i;
        if (xx < 0) xx += g.width * ((-xx) / g.width + 1);
        xx %= g.width;
        acc += kernel[i + radius] * g.at(xx, y);
      }
      tmp.at(x, y) = acc;
    }
  }
  for (int x = 0; x < g.width; ++x) {
    for (int y = 0; y < g.height; ++y) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        int yy = y + i;
        if (yy < 0) yy += g.height * ((-yy) / g.height + 1);
        yy %= g.height;
        acc += kernel[i + radius] * tmp.at(x, yy);
      }
      g.at(x, y) = acc;
    }
  }
}

}  // namespace detail_sim

// Fully developed speckle: low-pass-filtered complex Gaussian field, intensity
// is the squared magnitude (exponential-family first-order statistics),
// normalized to unit mean. Deterministic for a fixed argument tuple.
inline SpeckleField generate_speckle(std::uint64_t seed, SensorGeometry geometry, double grain,
                                     int margin) {
  if (grain < 1.0) throw std::invalid_argument("generate_speckle: grain must be >= 1");
  if (margin < 0) throw std::invalid_argument("generate_speckle: margin must be >= 0");
  if (geometry.width < 1 || geometry.height < 1)
    throw std::invalid_argument("generate_speckle: bad geometry");

  const int fw = geometry.width + 2 * margin;
  const int fh = geometry.height + 2 * margin;
  Grid<double> re(fw, fh), im(fw, fh);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < re.data.size(); ++i)
    detail_sim::gaussian_pair(rng, re.data[i], im.data[i]);

  const double sigma = grain / 2.0;
  detail_sim::gaussian_blur_wrap(re, sigma);
  detail_sim::gaussian_blur_wrap(im, sigma);

  SpeckleField field;
  field.grain = grain;
  field.seed = seed;
  field.margin = margin;
  field.intensity = Grid<double>(fw, fh);
  double mean = 0.0;
  for (std::size_t i = 0; i < field.intensity.data.size(); ++i) {
    const double v = re.data[i] * re.data[i] + im.data[i] * im.data[i];
    field.intensity.data[i] = v;
    mean += v;
  }
  mean /= field.intensity.data.size();
  for (double& v : field.intensity.data) v /= mean;
  field.validate();
  return field;
}

// Surface tilt is proportional to the driving audio; the defocus magnification
// is folded into `gain` (pixels of speckle shift per unit amplitude).
inline MotionTrace audio_to_motion(const Waveform& audio, double gain, double direction_deg) {
  if (gain <= 0) throw std::invalid_argument("audio_to_motion: gain must be > 0");
  if (audio.sample_rate <= 0) throw std::invalid_argument("audio_to_motion: bad sample rate");
  const double theta = direction_deg * std::numbers::pi / 180.0;
  const double cx = std::cos(theta), cy = std::sin(theta);
  MotionTrace m;
  m.sample_rate = audio.sample_rate;
  m.dx.resize(audio.samples.size());
  m.dy.resize(audio.samples.size());
  for (std::size_t i = 0; i < audio.samples.size(); ++i) {
    m.dx[i] = gain * audio.samples[i] * cx;
    m.dy[i] = gain * audio.samples[i] * cy;
  }
  return m;
}

// Renders the event stream a contrast-threshold sensor would emit while the
// field translates under `motion`. Per motion step the sensor-plane image is
// the field shifted by (dx, dy) with bilinear interpolation, clamped below by
// sensor.floor. A pixel emits one event per epsilon-crossing of its
// log-intensity relative to the level at its previous event; event times are
// interpolated linearly within the step and floored to integer microseconds.
// Output is sorted by (t, y, x). noise_rate is NOT applied here; see
// add_noise_events.
inline EventStream render_events(const SpeckleField& field, const MotionTrace& motion,
                                 const SensorModel& sensor, SensorGeometry geometry) {
  sensor.validate();
  field.validate();
  if (motion.dx.size() != motion.dy.size())
    throw std::invalid_argument("render_events: dx/dy length mismatch");
  if (motion.sample_rate <= 0) throw std::invalid_argument("render_events: bad motion sample rate");
  const int fw = field.intensity.width;
  const int fh = field.intensity.height;
  const int mx = (fw - geometry.width) / 2;
  const int my = (fh - geometry.height) / 2;
  if (mx < 1 || my < 1 || fw - geometry.width != 2 * mx || fh - geometry.height != 2 * my)
    throw std::invalid_argument("render_events: field does not enclose geometry with a margin");

  const std::size_t n = motion.dx.size();
  if (n < 2) return EventStream(geometry, {});

  // Bilinear sampling keeps every read in bounds iff displacement stays in
  // (-margin, margin] on each axis.
  const auto [dx_min, dx_max] = std::minmax_element(motion.dx.begin(), motion.dx.end());
  const auto [dy_min, dy_max] = std::minmax_element(motion.dy.begin(), motion.dy.end());
  if (*dx_max > mx || *dx_min <= -mx || *dy_max > my || *dy_min <= -my)
    throw std::invalid_argument("render_events: displacement exceeds field margin");

  // Per-step sampling offsets are global (the whole field translates rigidly):
  // pixel (x, y) samples the field at (x + mx - dx[k], y + my - dy[k]).
  struct StepWeights {
    std::int32_t ix, iy;
    double w00, w10, w01, w11;
  };
  std::vector<StepWeights> steps(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double ox = mx - motion.dx[k];
    const double oy = my - motion.dy[k];
    const double fx = ox - std::floor(ox);
    const double fy = oy - std::floor(oy);
    StepWeights s;
    s.ix = static_cast<std::int32_t>(std::floor(ox));
    s.iy = static_cast<std::int32_t>(std::floor(oy));
    s.w00 = (1.0 - fx) * (1.0 - fy);
    s.w10 = fx * (1.0 - fy);
    s.w01 = (1.0 - fx) * fy;
    s.w11 = fx * fy;
    steps[k] = s;
  }

  const double us_per_step = 1.0e6 / motion.sample_rate;
  const double eps = sensor.epsilon;
  const double clamp = sensor.floor;
  const Grid<double>& F = field.intensity;

  const int rows = geometry.height;
  std::vector<std::vector<Event>> row_events(static_cast<std::size_t>(rows));

  detail::parallel_chunks(
      static_cast<std::size_t>(rows),
      [&](std::size_t rb, std::size_t re_) {
        for (std::size_t yr = rb; yr < re_; ++yr) {
          const int y = static_cast<int>(yr);
          auto& out = row_events[yr];
          for (int x = 0; x < geometry.width; ++x) {
            // sample intensity at step k
            auto sample = [&](std::size_t k) -> double {
              const StepWeights& s = steps[k];
              const double* p0 = F.row(y + s.iy) + (x + s.ix);
              const double* p1 = F.row(y + s.iy + 1) + (x + s.ix);
              const double v =
                  s.w00 * p0[0] + s.w10 * p0[1] + s.w01 * p1[0] + s.w11 * p1[1];
              return v < clamp ? clamp : v;
            };

            double i_prev = sample(0);
            double ref = std::log(i_prev);
            // Threshold crossings are detected in the intensity domain
            // (monotone with log), so the common no-event step needs no log().
            double hi = std::exp(ref + eps);
            double lo = std::exp(ref - eps);
            std::int64_t last_emit = 0;
            bool emitted_any = false;

            for (std::size_t k = 1; k < n; ++k) {
              const double i_cur = sample(k);
              if (i_cur < hi && i_cur > lo) {
                i_prev = i_cur;
                continue;
              }
              const double l0 = std::log(i_prev);
              const double l1 = std::log(i_cur);
              const double t0 = (k - 1) * us_per_step;
              const double denom = l1 - l0;
              if (l1 - ref > eps) {
                while (l1 - ref > eps) {
                  ref += eps;
                  const double tf = t0 + us_per_step * ((ref - l0) / denom);
                  const std::int64_t te = static_cast<std::int64_t>(std::floor(tf));
                  if (!emitted_any || te - last_emit >= sensor.refractory_us) {
                    out.push_back(Event{te, static_cast<std::uint16_t>(x),
                                        static_cast<std::uint16_t>(y), std::int8_t{1}});
                    last_emit = te;
                    emitted_any = true;
                  }
                }
              } else if (l1 - ref < -eps) {
                while (l1 - ref < -eps) {
                  ref -= eps;
                  const double tf = t0 + us_per_step * ((ref - l0) / denom);
                  const std::int64_t te = static_cast<std::int64_t>(std::floor(tf));
                  if (!emitted_any || te - last_emit >= sensor.refractory_us) {
                    out.push_back(Event{te, static_cast<std::uint16_t>(x),
                                        static_cast<std::uint16_t>(y), std::int8_t{-1}});
                    last_emit = te;
                    emitted_any = true;
                  }
                }
              }
              hi = std::exp(ref + eps);
              lo = std::exp(ref - eps);
              i_prev = i_cur;
            }
          }
        }
      },
      4);

  std::size_t total = 0;
  for (const auto& v : row_events) total += v.size();
  std::vector<Event> all;
  all.reserve(total);
  for (auto& v : row_events) {
    all.insert(all.end(), v.begin(), v.end());
    v.clear();
    v.shrink_to_fit();
  }
  std::sort(all.begin(), all.end(), [](const Event& a, const Event& b) {
    if (a.t != b.t) return a.t < b.t;
    if (a.y != b.y) return a.y < b.y;
    if (a.x != b.x) return a.x < b.x;
    return a.p < b.p;
  });
  return EventStream(geometry, std::move(all));
}

// Background-activity noise: Poisson-distributed spurious events at uniform
// pixels, times, and polarities, merged into the stream (signal events win
// timestamp ties). Deterministic given the seed.
inline EventStream add_noise_events(const EventStream& stream, const SensorModel& sensor,
                                    std::int64_t duration_us, std::uint64_t seed) {
  sensor.validate();
  if (duration_us < 0) throw std::invalid_argument("add_noise_events: negative duration");
  if (sensor.noise_rate == 0.0 || duration_us == 0) return stream;

  const SensorGeometry g = stream.geometry();
  const double lambda =
      sensor.noise_rate * (duration_us * 1e-6) * static_cast<double>(g.width) * g.height;

  std::mt19937_64 rng(seed);
  auto uniform01 = [&rng]() { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53; };
  // Poisson draw via additive splitting; Knuth's product method per part.
  auto poisson = [&](double lam) -> std::size_t {
    std::size_t total = 0;
    while (lam > 0) {
      const double part = std::min(lam, 500.0);
      const double limit = std::exp(-part);
      double prod = uniform01();
      std::size_t k = 0;
      while (prod > limit) {
        ++k;
        prod *= uniform01();
      }
      total += k;
      lam -= part;
    }
    return total;
  };

  const std::size_t count = poisson(lambda);
  std::vector<Event> noise(count);
  for (std::size_t i = 0; i < count; ++i) {
    noise[i].t = static_cast<std::int64_t>(uniform01() * duration_us);
    noise[i].x = static_cast<std::uint16_t>(rng() % static_cast<std::uint64_t>(g.width));
    noise[i].y = static_cast<std::uint16_t>(rng() % static_cast<std::uint64_t>(g.height));
    noise[i].p = (rng() & 1) ? std::int8_t{1} : std::int8_t{-1};
  }
  std::sort(noise.begin(), noise.end(), [](const Event& a, const Event& b) {
    if (a.t != b.t) return a.t < b.t;
    if (a.y != b.y) return a.y < b.y;
    return a.x < b.x;
  });

  std::vector<Event> merged;
  merged.reserve(stream.size() + noise.size());
  std::merge(stream.events().begin(), stream.events().end(), noise.begin(), noise.end(),
             std::back_inserter(merged),
             [](const Event& a, const Event& b) { return a.t < b.t; });
  return EventStream(g, std::move(merged));
}

}  // namespace evib
