#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace evib {

// One asynchronous sensor event: timestamp in microseconds from stream start,
// pixel position, and the sign of the log-intensity change that triggered it.
struct Event {
  std::int64_t t = 0;
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int8_t p = 1;  // +1 or -1

  friend bool operator==(const Event&, const Event&) = default;
};

struct SensorGeometry {
  int width = 1280;
  int height = 720;

  friend bool operator==(const SensorGeometry&, const SensorGeometry&) = default;
};

// Rectangular region of interest, used to split spatially separated speckle
// patterns into independent streams.
struct Roi {
  int x0 = 0;
  int y0 = 0;
  int w = 0;
  int h = 0;

  bool inside(const SensorGeometry& g) const {
    return x0 >= 0 && y0 >= 0 && w >= 1 && h >= 1 && x0 + w <= g.width && y0 + h <= g.height;
  }
  bool overlaps(const Roi& o) const {
    return x0 < o.x0 + o.w && o.x0 < x0 + w && y0 < o.y0 + o.h && o.y0 < y0 + h;
  }
};

// Time-ordered event sequence plus the sensor geometry it was recorded on.
// Immutable after construction; construction validates every invariant.
class EventStream {
 public:
  EventStream() = default;
  EventStream(SensorGeometry geometry, std::vector<Event> events)
      : geometry_(geometry), events_(std::move(events)) {
    validate();
  }

  const SensorGeometry& geometry() const { return geometry_; }
  const std::vector<Event>& events() const { return events_; }
  std::size_t size() const { return events_.size(); }
  bool empty() const { return events_.empty(); }

  // Duration in microseconds covered by the stream (timestamp of the last
  // event; 0 when empty).
  std::int64_t last_t() const { return events_.empty() ? 0 : events_.back().t; }

 private:
  void validate() const {
    if (geometry_.width < 1 || geometry_.height < 1)
      throw std::invalid_argument("EventStream: geometry must be at least 1x1");
    std::int64_t prev = -1;
    for (std::size_t i = 0; i < events_.size(); ++i) {
      const Event& e = events_[i];
      if (e.t < 0)
        throw std::invalid_argument("EventStream: negative timestamp at record " + std::to_string(i + 1));
      if (e.t < prev)
        throw std::invalid_argument("EventStream: unsorted timestamp at record " + std::to_string(i + 1));
      if (e.x >= geometry_.width || e.y >= geometry_.height)
        throw std::invalid_argument("EventStream: pixel out of geometry at record " + std::to_string(i + 1));
      if (e.p != 1 && e.p != -1)
        throw std::invalid_argument("EventStream: polarity must be +1/-1 at record " + std::to_string(i + 1));
      prev = e.t;
    }
  }

  SensorGeometry geometry_;
  std::vector<Event> events_;
};

enum class EventFormat { csv, bin };

inline EventFormat parse_event_format(const std::string& s) {
  if (s == "csv") return EventFormat::csv;
  if (s == "bin") return EventFormat::bin;
  throw std::invalid_argument("unknown event format '" + s + "' (expected csv or bin)");
}

namespace detail {

constexpr char kBinMagic[4] = {'E', 'V', 'S', '1'};

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return static_cast<T>(v);
}

}  // namespace detail

// CSV: header line "# geometry,<width>,<height>", then "t_us,x,y,p" per event.
// Binary: magic "EVS1", LE u32 width, u32 height, u64 count, then 16-byte
// records of (u64 t_us, u16 x, u16 y, i8 p, 3 pad bytes).
inline void write_events(const EventStream& stream, const std::string& path, EventFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_events: cannot open '" + path + "'");
  if (format == EventFormat::csv) {
    std::string buf;
    buf.reserve(4096);
    buf += "# geometry," + std::to_string(stream.geometry().width) + "," +
           std::to_string(stream.geometry().height) + "\n";
    char line[64];
    for (const Event& e : stream.events()) {
      const int n = std::snprintf(line, sizeof(line), "%lld,%u,%u,%d\n",
                                  static_cast<long long>(e.t), unsigned(e.x), unsigned(e.y), int(e.p));
      buf.append(line, static_cast<std::size_t>(n));
      if (buf.size() > (1u << 20)) {
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        buf.clear();
      }
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  } else {
    std::string hdr(detail::kBinMagic, 4);
    detail::put_le<std::uint32_t>(hdr, static_cast<std::uint32_t>(stream.geometry().width));
    detail::put_le<std::uint32_t>(hdr, static_cast<std::uint32_t>(stream.geometry().height));
    detail::put_le<std::uint64_t>(hdr, stream.size());
    out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
    std::vector<unsigned char> rec;
    rec.reserve(std::min<std::size_t>(stream.size(), 1u << 16) * 16);
    for (const Event& e : stream.events()) {
      unsigned char r[16] = {};
      const std::uint64_t t = static_cast<std::uint64_t>(e.t);
      for (int i = 0; i < 8; ++i) r[i] = static_cast<unsigned char>((t >> (8 * i)) & 0xff);
      r[8] = static_cast<unsigned char>(e.x & 0xff);
      r[9] = static_cast<unsigned char>((e.x >> 8) & 0xff);
      r[10] = static_cast<unsigned char>(e.y & 0xff);
      r[11] = static_cast<unsigned char>((e.y >> 8) & 0xff);
      r[12] = static_cast<unsigned char>(static_cast<signed char>(e.p));
      rec.insert(rec.end(), r, r + 16);
      if (rec.size() > (1u << 20)) {
        out.write(reinterpret_cast<const char*>(rec.data()), static_cast<std::streamsize>(rec.size()));
        rec.clear();
      }
    }
    out.write(reinterpret_cast<const char*>(rec.data()), static_cast<std::streamsize>(rec.size()));
  }
  if (!out) throw std::runtime_error("write_events: I/O failure writing '" + path + "'");
}

inline EventStream read_events(const std::string& path, EventFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_events: cannot open '" + path + "'");
  if (format == EventFormat::csv) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("read_events: '" + path + "': missing geometry header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    int w = 0, h = 0;
    if (std::sscanf(line.c_str(), "# geometry,%d,%d", &w, &h) != 2)
      throw std::runtime_error("read_events: '" + path + "' line 1: bad geometry header");
    std::vector<Event> events;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      long long t;
      unsigned x, y;
      int p;
      if (std::sscanf(line.c_str(), "%lld,%u,%u,%d", &t, &x, &y, &p) != 4)
        throw std::runtime_error("read_events: '" + path + "' line " + std::to_string(lineno) + ": parse error");
      if (x > 0xffff || y > 0xffff)
        throw std::runtime_error("read_events: '" + path + "' line " + std::to_string(lineno) + ": coordinate overflow");
      events.push_back(Event{t, static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y),
                             static_cast<std::int8_t>(p)});
    }
    return EventStream(SensorGeometry{w, h}, std::move(events));
  }
  unsigned char hdr[20];
  in.read(reinterpret_cast<char*>(hdr), sizeof(hdr));
  if (in.gcount() != sizeof(hdr) || std::memcmp(hdr, detail::kBinMagic, 4) != 0)
    throw std::runtime_error("read_events: '" + path + "': bad magic/header");
  const auto w = detail::get_le<std::uint32_t>(hdr + 4);
  const auto h = detail::get_le<std::uint32_t>(hdr + 8);
  const auto count = detail::get_le<std::uint64_t>(hdr + 12);
  std::vector<Event> events;
  events.reserve(count);
  std::vector<unsigned char> buf(16 * 4096);
  std::uint64_t remaining = count;
  while (remaining > 0) {
    const std::size_t take = static_cast<std::size_t>(std::min<std::uint64_t>(remaining, 4096));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(take * 16));
    if (static_cast<std::size_t>(in.gcount()) != take * 16)
      throw std::runtime_error("read_events: '" + path + "': truncated at record " +
                               std::to_string(count - remaining + 1));
    for (std::size_t i = 0; i < take; ++i) {
      const unsigned char* r = buf.data() + i * 16;
      Event e;
      e.t = static_cast<std::int64_t>(detail::get_le<std::uint64_t>(r));
      e.x = detail::get_le<std::uint16_t>(r + 8);
      e.y = detail::get_le<std::uint16_t>(r + 10);
      e.p = static_cast<std::int8_t>(r[12]);
      events.push_back(e);
    }
    remaining -= take;
  }
  return EventStream(SensorGeometry{static_cast<int>(w), static_cast<int>(h)}, std::move(events));
}

// Keep exactly the events inside roi, re-based to the roi origin; geometry
// becomes (w, h). Order is preserved.
inline EventStream crop_roi(const EventStream& stream, const Roi& roi) {
  if (!roi.inside(stream.geometry())) throw std::invalid_argument("crop_roi: roi outside geometry");
  std::vector<Event> out;
  for (const Event& e : stream.events()) {
    if (e.x >= roi.x0 && e.x < roi.x0 + roi.w && e.y >= roi.y0 && e.y < roi.y0 + roi.h) {
      out.push_back(Event{e.t, static_cast<std::uint16_t>(e.x - roi.x0),
                          static_cast<std::uint16_t>(e.y - roi.y0), e.p});
    }
  }
  return EventStream(SensorGeometry{roi.w, roi.h}, std::move(out));
}

// Events with t_start <= t < t_end, timestamps unchanged.
inline EventStream time_slice(const EventStream& stream, std::int64_t t_start, std::int64_t t_end) {
  if (t_start > t_end) throw std::invalid_argument("time_slice: t_start > t_end");
  const auto& ev = stream.events();
  auto lo = std::lower_bound(ev.begin(), ev.end(), t_start,
                             [](const Event& e, std::int64_t t) { return e.t < t; });
  auto hi = std::lower_bound(lo, ev.end(), t_end,
                             [](const Event& e, std::int64_t t) { return e.t < t; });
  return EventStream(stream.geometry(), std::vector<Event>(lo, hi));
}

// Place several streams onto one larger sensor at the given pixel offsets and
// merge by timestamp (stable: earlier-listed streams win ties). Composition
// helper for multi-spot scenes.
struct PlacedStream {
  const EventStream* stream;
  int x_off;
  int y_off;
};

inline EventStream merge_streams(const std::vector<PlacedStream>& parts, SensorGeometry geometry) {
  std::vector<Event> all;
  std::size_t total = 0;
  for (const auto& p : parts) total += p.stream->size();
  all.reserve(total);
  for (const auto& p : parts) {
    if (p.x_off < 0 || p.y_off < 0 || p.x_off + p.stream->geometry().width > geometry.width ||
        p.y_off + p.stream->geometry().height > geometry.height)
      throw std::invalid_argument("merge_streams: placement outside geometry");
    for (const Event& e : p.stream->events())
      all.push_back(Event{e.t, static_cast<std::uint16_t>(e.x + p.x_off),
                          static_cast<std::uint16_t>(e.y + p.y_off), e.p});
  }
  std::stable_sort(all.begin(), all.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
  return EventStream(geometry, std::move(all));
}

}  // namespace evib
