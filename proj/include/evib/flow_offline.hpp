#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "evib/detail/parallel.hpp"
#include "evib/events.hpp"
#include "evib/flow_signal.hpp"
#include "evib/grid.hpp"

namespace evib {

struct PyramidConfig {
  int levels = 3;
  int window = 15;      // odd, >= 3
  int iterations = 3;
  double downscale = 0.5;

  void validate() const {
    if (levels < 1) throw std::invalid_argument("PyramidConfig: levels must be >= 1");
    if (window < 3 || window % 2 == 0)
      throw std::invalid_argument("PyramidConfig: window must be odd and >= 3");
    if (iterations < 1) throw std::invalid_argument("PyramidConfig: iterations must be >= 1");
    if (!(downscale > 0.0 && downscale < 1.0))
      throw std::invalid_argument("PyramidConfig: downscale must be in (0,1)");
  }
};

// Temporally integrated event frames: per-pixel signed polarity sums plus the
// parallel unsigned event counts.
struct FrameSequence {
  double frame_rate = 0.0;
  std::vector<Grid<float>> frames;
  std::vector<Grid<float>> counts;
};

struct FlowField {
  Grid<float> u;
  Grid<float> v;
};

namespace detail_flow {

inline std::size_t frame_index(std::int64_t t_us, double frame_rate) {
  return static_cast<std::size_t>(static_cast<double>(t_us) * frame_rate / 1e6);
}

inline void fill_frame(const std::vector<Event>& events, std::size_t begin, std::size_t end,
                       Grid<float>& frame, Grid<float>& counts) {
  std::fill(frame.data.begin(), frame.data.end(), 0.0f);
  std::fill(counts.data.begin(), counts.data.end(), 0.0f);
  for (std::size_t i = begin; i < end; ++i) {
    const Event& e = events[i];
    const std::size_t idx = static_cast<std::size_t>(e.y) * frame.width + e.x;
    frame.data[idx] += static_cast<float>(e.p);
    counts.data[idx] += 1.0f;
  }
}

// 3x3 box blur, edge-truncated (kernel renormalized at borders).
inline void box3_blur(const Grid<float>& in, Grid<float>& out) {
  out = Grid<float>(in.width, in.height);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      float acc = 0.0f;
      int cnt = 0;
      for (int dy = -1; dy <= 1; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= in.height) continue;
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = x + dx;
          if (xx < 0 || xx >= in.width) continue;
          acc += in.at(xx, yy);
          ++cnt;
        }
      }
      out.at(x, y) = acc / static_cast<float>(cnt);
    }
  }
}

inline float sample_bilinear(const Grid<float>& g, float x, float y) {
  x = std::min(std::max(x, 0.0f), static_cast<float>(g.width - 1));
  y = std::min(std::max(y, 0.0f), static_cast<float>(g.height - 1));
  const int ix = std::min(static_cast<int>(x), g.width - 2 >= 0 ? g.width - 2 : 0);
  const int iy = std::min(static_cast<int>(y), g.height - 2 >= 0 ? g.height - 2 : 0);
  const float fx = x - ix;
  const float fy = y - iy;
  const float* r0 = g.row(iy) + ix;
  const float* r1 = g.row(std::min(iy + 1, g.height - 1)) + ix;
  const int x1 = (ix + 1 < g.width) ? 1 : 0;
  return (1 - fx) * (1 - fy) * r0[0] + fx * (1 - fy) * r0[x1] + (1 - fx) * fy * r1[0] +
         fx * fy * r1[x1];
}

inline Grid<float> resize_bilinear(const Grid<float>& in, int w, int h) {
  Grid<float> out(w, h);
  const float sx = static_cast<float>(in.width) / w;
  const float sy = static_cast<float>(in.height) / h;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out.at(x, y) = sample_bilinear(in, (x + 0.5f) * sx - 0.5f, (y + 0.5f) * sy - 0.5f);
  return out;
}

// Separable windowed sum with edge truncation.
inline void window_sum(const Grid<float>& in, int radius, Grid<float>& tmp, Grid<float>& out) {
  const int w = in.width, h = in.height;
  if (tmp.width != w || tmp.height != h) tmp = Grid<float>(w, h);
  if (out.width != w || out.height != h) out = Grid<float>(w, h);
  for (int y = 0; y < h; ++y) {
    const float* src = in.row(y);
    float* dst = tmp.row(y);
    float run = 0.0f;
    for (int x = 0; x < std::min(radius + 1, w); ++x) run += src[x];
    for (int x = 0; x < w; ++x) {
      dst[x] = run;
      const int add = x + radius + 1;
      const int sub = x - radius;
      if (add < w) run += src[add];
      if (sub >= 0) run -= src[sub];
    }
  }
  for (int x = 0; x < w; ++x) {
    float run = 0.0f;
    for (int y = 0; y < std::min(radius + 1, h); ++y) run += tmp.at(x, y);
    for (int y = 0; y < h; ++y) {
      out.at(x, y) = run;
      const int add = y + radius + 1;
      const int sub = y - radius;
      if (add < h) run += tmp.at(x, add);
      if (sub >= 0) run -= tmp.at(x, sub);
    }
  }
}

}  // namespace detail_flow

// Sum event polarities (and counts) into frames at frame_rate; frame k covers
// [k/frame_rate, (k+1)/frame_rate). duration_us < 0 means "through the last
// event". Total event count is conserved: sum of all counts == stream size.
inline FrameSequence integrate_frames(const EventStream& stream, double frame_rate,
                                      std::int64_t duration_us = -1) {
  if (frame_rate <= 0) throw std::invalid_argument("integrate_frames: frame_rate must be > 0");
  if (duration_us < 0) duration_us = stream.empty() ? 0 : stream.last_t() + 1;
  const std::size_t n_frames = static_cast<std::size_t>(
      std::ceil(static_cast<double>(duration_us) * frame_rate / 1e6));
  FrameSequence seq;
  seq.frame_rate = frame_rate;
  seq.frames.assign(n_frames, Grid<float>(stream.geometry().width, stream.geometry().height));
  seq.counts.assign(n_frames, Grid<float>(stream.geometry().width, stream.geometry().height));
  for (const Event& e : stream.events()) {
    const std::size_t k = detail_flow::frame_index(e.t, frame_rate);
    if (k >= n_frames) continue;
    const std::size_t idx = static_cast<std::size_t>(e.y) * stream.geometry().width + e.x;
    seq.frames[k].data[idx] += static_cast<float>(e.p);
    seq.counts[k].data[idx] += 1.0f;
  }
  return seq;
}

// Coarse-to-fine dense flow between two frames (pixels/frame). Iterative
// Lucas-Kanade refinement with windowed least squares at every pyramid level;
// recovers pure translations up to ~0.25 * 2^levels pixels on textured input.
inline FlowField dense_flow(const Grid<float>& prev, const Grid<float>& next,
                            const PyramidConfig& cfg) {
  cfg.validate();
  if (!prev.same_shape(next)) throw std::invalid_argument("dense_flow: geometry mismatch");

  FlowField out;
  out.u = Grid<float>(prev.width, prev.height, 0.0f);
  out.v = Grid<float>(prev.width, prev.height, 0.0f);

  float max_abs = 0.0f;
  for (float x : prev.data) max_abs = std::max(max_abs, std::abs(x));
  for (float x : next.data) max_abs = std::max(max_abs, std::abs(x));
  if (max_abs == 0.0f) return out;
  const float inv_scale = 1.0f / max_abs;

  // Build pyramids (level 0 = full resolution).
  std::vector<Grid<float>> pa(1), pb(1);
  pa[0] = Grid<float>(prev.width, prev.height);
  pb[0] = Grid<float>(prev.width, prev.height);
  for (std::size_t i = 0; i < prev.data.size(); ++i) {
    pa[0].data[i] = prev.data[i] * inv_scale;
    pb[0].data[i] = next.data[i] * inv_scale;
  }
  for (int l = 1; l < cfg.levels; ++l) {
    const int w = std::max(4, static_cast<int>(std::lround(pa[l - 1].width * cfg.downscale)));
    const int h = std::max(4, static_cast<int>(std::lround(pa[l - 1].height * cfg.downscale)));
    if (w == pa[l - 1].width && h == pa[l - 1].height) break;
    Grid<float> sa, sb;
    detail_flow::box3_blur(pa[l - 1], sa);
    detail_flow::box3_blur(pb[l - 1], sb);
    pa.push_back(detail_flow::resize_bilinear(sa, w, h));
    pb.push_back(detail_flow::resize_bilinear(sb, w, h));
  }

  const int radius = cfg.window / 2;
  Grid<float> u, v;
  for (int l = static_cast<int>(pa.size()) - 1; l >= 0; --l) {
    const Grid<float>& a = pa[static_cast<std::size_t>(l)];
    const Grid<float>& b = pb[static_cast<std::size_t>(l)];
    const int w = a.width, h = a.height;
    if (u.width == 0) {
      u = Grid<float>(w, h, 0.0f);
      v = Grid<float>(w, h, 0.0f);
    } else {
      const float gain = static_cast<float>(w) / u.width;
      Grid<float> u2 = detail_flow::resize_bilinear(u, w, h);
      Grid<float> v2 = detail_flow::resize_bilinear(v, w, h);
      for (auto& x : u2.data) x *= gain;
      for (auto& x : v2.data) x *= gain;
      u = std::move(u2);
      v = std::move(v2);
    }

    Grid<float> warped(w, h), ix(w, h), iy(w, h), it(w, h);
    Grid<float> pxx(w, h), pxy(w, h), pyy(w, h), pxt(w, h), pyt(w, h);
    Grid<float> sxx, sxy, syy, sxt, syt, tmp;
    for (int iter = 0; iter < cfg.iterations; ++iter) {
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          warped.at(x, y) = detail_flow::sample_bilinear(b, x + u.at(x, y), y + v.at(x, y));
      // Gradients of the average of both frames (symmetric LK), central
      // differences truncated at borders.
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const int xm = std::max(0, x - 1), xp = std::min(w - 1, x + 1);
          const int ym = std::max(0, y - 1), yp = std::min(h - 1, y + 1);
          ix.at(x, y) = ((a.at(xp, y) + warped.at(xp, y)) - (a.at(xm, y) + warped.at(xm, y))) *
                        0.5f / static_cast<float>(xp - xm);
          iy.at(x, y) = ((a.at(x, yp) + warped.at(x, yp)) - (a.at(x, ym) + warped.at(x, ym))) *
                        0.5f / static_cast<float>(yp - ym);
          it.at(x, y) = warped.at(x, y) - a.at(x, y);
        }
      }
      for (std::size_t i = 0; i < warped.data.size(); ++i) {
        const float gx = ix.data[i], gy = iy.data[i], gt = it.data[i];
        pxx.data[i] = gx * gx;
        pxy.data[i] = gx * gy;
        pyy.data[i] = gy * gy;
        pxt.data[i] = gx * gt;
        pyt.data[i] = gy * gt;
      }
      detail_flow::window_sum(pxx, radius, tmp, sxx);
      detail_flow::window_sum(pxy, radius, tmp, sxy);
      detail_flow::window_sum(pyy, radius, tmp, syy);
      detail_flow::window_sum(pxt, radius, tmp, sxt);
      detail_flow::window_sum(pyt, radius, tmp, syt);
      const float clamp = static_cast<float>(cfg.window);
      for (std::size_t i = 0; i < warped.data.size(); ++i) {
        const float gxx = sxx.data[i], gxy = sxy.data[i], gyy = syy.data[i];
        const float lambda = 1e-4f * (gxx + gyy) + 1e-12f;
        const float det = (gxx + lambda) * (gyy + lambda) - gxy * gxy;
        if (det <= 0.0f) continue;
        const float bx = -sxt.data[i], by = -syt.data[i];
        float du = ((gyy + lambda) * bx - gxy * by) / det;
        float dv = ((gxx + lambda) * by - gxy * bx) / det;
        du = std::min(std::max(du, -clamp), clamp);
        dv = std::min(std::max(dv, -clamp), clamp);
        u.data[i] += du;
        v.data[i] += dv;
      }
    }
  }
  out.u = std::move(u);
  out.v = std::move(v);
  return out;
}

// Event-count-weighted spatial average of a flow field.
inline std::pair<double, double> weighted_global_flow(const FlowField& flow,
                                                      const Grid<float>& counts) {
  if (!flow.u.same_shape(counts) || !flow.v.same_shape(counts))
    throw std::invalid_argument("weighted_global_flow: geometry mismatch");
  double su = 0.0, sv = 0.0, sc = 0.0;
  for (std::size_t i = 0; i < counts.data.size(); ++i) {
    const double c = counts.data[i];
    su += flow.u.data[i] * c;
    sv += flow.v.data[i] * c;
    sc += c;
  }
  if (sc == 0.0) return {0.0, 0.0};
  return {su / sc, sv / sc};
}

struct OfflineFlowConfig {
  double frame_rate = 20000.0;
  PyramidConfig pyramid;
  int pre_blur = 1;          // passes of 3x3 box blur before flow
  bool weight_later = true;  // which frame's counts weight the spatial average
  double v_max = 0.0;        // px/us outlier clamp on the global estimate; 0 = off
};

// Full offline path: integrate frames, run dense flow on consecutive pairs,
// and reduce each pair to one count-weighted global velocity (pixels/us).
// Frame pairs are independent, so the work is chunked across threads; frames
// are regenerated per chunk instead of materializing the whole sequence.
inline GlobalFlowSignal offline_flow_signal(const EventStream& stream,
                                            const OfflineFlowConfig& cfg) {
  cfg.pyramid.validate();
  if (cfg.frame_rate <= 0) throw std::invalid_argument("offline_flow_signal: bad frame_rate");
  const std::int64_t duration_us = stream.empty() ? 0 : stream.last_t() + 1;
  const std::size_t n_frames = static_cast<std::size_t>(
      std::ceil(static_cast<double>(duration_us) * cfg.frame_rate / 1e6));
  if (n_frames < 2)
    throw std::runtime_error("offline_flow_signal: insufficient data (fewer than 2 frames)");
  const std::size_t n_pairs = n_frames - 1;

  GlobalFlowSignal sig;
  sig.sample_rate = cfg.frame_rate;
  sig.vx.assign(n_pairs, 0.0);
  sig.vy.assign(n_pairs, 0.0);
  sig.weight.assign(n_pairs, 0.0);

  const auto& events = stream.events();
  const int w = stream.geometry().width, h = stream.geometry().height;
  const double px_per_frame_to_px_per_us = cfg.frame_rate / 1e6;

  detail::parallel_chunks(
      n_pairs,
      [&](std::size_t p0, std::size_t p1) {
        // First event whose frame index is >= p0.
        std::size_t i = std::lower_bound(events.begin(), events.end(), p0,
                                         [&](const Event& e, std::size_t k) {
                                           return detail_flow::frame_index(e.t, cfg.frame_rate) < k;
                                         }) -
                        events.begin();
        Grid<float> fa(w, h), ca(w, h), fb(w, h), cb(w, h), blur_a, blur_b, swap_tmp;

        auto fill = [&](std::size_t k, Grid<float>& frame, Grid<float>& counts) {
          std::size_t j = i;
          while (j < events.size() && detail_flow::frame_index(events[j].t, cfg.frame_rate) == k)
            ++j;
          detail_flow::fill_frame(events, i, j, frame, counts);
          i = j;
        };
        auto blur = [&](const Grid<float>& src, Grid<float>& dst) {
          dst = src;
          Grid<float> t;
          for (int pass = 0; pass < cfg.pre_blur; ++pass) {
            detail_flow::box3_blur(dst, t);
            std::swap(dst, t);
          }
        };

        auto total = [](const Grid<float>& g) {
          double s = 0.0;
          for (float c : g.data) s += c;
          return s;
        };

        fill(p0, fa, ca);
        blur(fa, blur_a);
        double ca_total = total(ca);
        for (std::size_t k = p0; k < p1; ++k) {
          fill(k + 1, fb, cb);
          blur(fb, blur_b);
          const double cb_total = total(cb);
          if (ca_total > 0.0 || cb_total > 0.0) {
            const FlowField flow = dense_flow(blur_a, blur_b, cfg.pyramid);
            const auto [gu, gv] = weighted_global_flow(flow, cfg.weight_later ? cb : ca);
            double vx = gu * px_per_frame_to_px_per_us;
            double vy = gv * px_per_frame_to_px_per_us;
            if (cfg.v_max > 0.0) {
              vx = std::clamp(vx, -cfg.v_max, cfg.v_max);
              vy = std::clamp(vy, -cfg.v_max, cfg.v_max);
            }
            sig.vx[k] = vx;
            sig.vy[k] = vy;
          }
          sig.weight[k] = cb_total;
          std::swap(fa, fb);
          std::swap(ca, cb);
          std::swap(blur_a, blur_b);
          ca_total = cb_total;
        }
      },
      256);

  return sig;
}

inline GlobalFlowSignal offline_flow_signal(const EventStream& stream, double frame_rate,
                                            const PyramidConfig& cfg) {
  OfflineFlowConfig full;
  full.frame_rate = frame_rate;
  full.pyramid = cfg;
  return offline_flow_signal(stream, full);
}

}  // namespace evib
