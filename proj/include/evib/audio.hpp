#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace evib {

// Uniformly sampled mono signal, nominal amplitude range [-1, 1].
struct Waveform {
  double sample_rate = 0.0;
  std::vector<double> samples;

  double duration_s() const { return sample_rate > 0 ? samples.size() / sample_rate : 0.0; }
};

inline double rms(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc / v.size());
}

inline double peak_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

namespace detail_wav {

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

}  // namespace detail_wav

// 16-bit PCM mono RIFF/WAVE writer. Samples outside [-1, 1] are clipped; the
// return value is the number of clipped samples.
inline std::size_t write_wav(const Waveform& w, const std::string& path) {
  if (w.sample_rate <= 0) throw std::invalid_argument("write_wav: sample_rate must be positive");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_wav: cannot open '" + path + "'");
  const std::uint32_t rate = static_cast<std::uint32_t>(std::lround(w.sample_rate));
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  std::string hdr;
  hdr += "RIFF";
  detail_wav::put_le<std::uint32_t>(hdr, 36 + data_bytes);
  hdr += "WAVEfmt ";
  detail_wav::put_le<std::uint32_t>(hdr, 16);
  detail_wav::put_le<std::uint16_t>(hdr, 1);   // PCM
  detail_wav::put_le<std::uint16_t>(hdr, 1);   // mono
  detail_wav::put_le<std::uint32_t>(hdr, rate);
  detail_wav::put_le<std::uint32_t>(hdr, rate * 2);
  detail_wav::put_le<std::uint16_t>(hdr, 2);   // block align
  detail_wav::put_le<std::uint16_t>(hdr, 16);  // bits per sample
  hdr += "data";
  detail_wav::put_le<std::uint32_t>(hdr, data_bytes);
  out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
  std::size_t clipped = 0;
  std::string buf;
  buf.reserve(1 << 16);
  for (double s : w.samples) {
    double c = s;
    if (c > 1.0) { c = 1.0; ++clipped; }
    if (c < -1.0) { c = -1.0; ++clipped; }
    const std::int16_t q = static_cast<std::int16_t>(std::lround(c * 32767.0));
    detail_wav::put_le<std::int16_t>(buf, q);
    if (buf.size() > (1u << 16)) {
      out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
      buf.clear();
    }
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("write_wav: I/O failure writing '" + path + "'");
  return clipped;
}

inline Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_wav: cannot open '" + path + "'");
  unsigned char riff[12];
  in.read(reinterpret_cast<char*>(riff), 12);
  if (in.gcount() != 12 || std::memcmp(riff, "RIFF", 4) != 0 || std::memcmp(riff + 8, "WAVE", 4) != 0)
    throw std::runtime_error("read_wav: '" + path + "': not a RIFF/WAVE file");
  std::uint32_t rate = 0;
  std::uint16_t channels = 0, bits = 0, format = 0;
  bool have_fmt = false;
  Waveform w;
  while (true) {
    unsigned char ch[8];
    in.read(reinterpret_cast<char*>(ch), 8);
    if (in.gcount() != 8) break;
    const std::uint32_t sz = detail_wav::get_le<std::uint32_t>(ch + 4);
    if (std::memcmp(ch, "fmt ", 4) == 0) {
      std::vector<unsigned char> fmt(sz);
      in.read(reinterpret_cast<char*>(fmt.data()), sz);
      if (static_cast<std::uint32_t>(in.gcount()) != sz || sz < 16)
        throw std::runtime_error("read_wav: '" + path + "': truncated fmt chunk");
      format = detail_wav::get_le<std::uint16_t>(fmt.data());
      channels = detail_wav::get_le<std::uint16_t>(fmt.data() + 2);
      rate = detail_wav::get_le<std::uint32_t>(fmt.data() + 4);
      bits = detail_wav::get_le<std::uint16_t>(fmt.data() + 14);
      have_fmt = true;
    } else if (std::memcmp(ch, "data", 4) == 0) {
      if (!have_fmt) throw std::runtime_error("read_wav: '" + path + "': data before fmt");
      if (format != 1 || channels != 1 || bits != 16)
        throw std::runtime_error("read_wav: '" + path + "': only 16-bit PCM mono supported");
      std::vector<unsigned char> data(sz);
      in.read(reinterpret_cast<char*>(data.data()), sz);
      if (static_cast<std::uint32_t>(in.gcount()) != sz)
        throw std::runtime_error("read_wav: '" + path + "': truncated data chunk");
      w.sample_rate = rate;
      w.samples.resize(sz / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i) {
        const std::int16_t q = detail_wav::get_le<std::int16_t>(data.data() + 2 * i);
        w.samples[i] = q / 32767.0;
      }
      return w;
    } else {
      in.seekg(sz + (sz & 1), std::ios::cur);  // chunks are word-aligned
    }
  }
  throw std::runtime_error("read_wav: '" + path + "': missing data chunk");
}

// Band-limited rate conversion with a Blackman-windowed sinc kernel
// (32 zero crossings, 512-step phase table with linear interpolation).
inline Waveform resample(const Waveform& w, double out_rate) {
  if (out_rate <= 0) throw std::invalid_argument("resample: out_rate must be positive");
  if (w.sample_rate <= 0) throw std::invalid_argument("resample: input sample_rate must be positive");
  if (out_rate == w.sample_rate) return w;

  const double ratio = out_rate / w.sample_rate;
  // When downsampling, scale the kernel so its cutoff sits below the output
  // Nyquist; 0.93 leaves a transition band while keeping passband flat.
  const double scale = std::min(1.0, ratio) * 0.93;
  const int zeros = 32;
  const double half_width = zeros / scale;  // in input samples

  static constexpr int kPhases = 512;
  const int taps = 2 * static_cast<int>(std::ceil(half_width)) + 1;
  // kernel(u) sampled at u = (i - center) for each phase offset
  auto kernel = [&](double u) -> double {
    const double v = u * scale;
    if (std::abs(v) >= zeros) return 0.0;
    const double x = std::numbers::pi * v;
    const double sinc = (std::abs(x) < 1e-12) ? 1.0 : std::sin(x) / x;
    const double q = v / zeros;  // in [-1, 1]
    const double bw = 0.42 + 0.5 * std::cos(std::numbers::pi * q) + 0.08 * std::cos(2.0 * std::numbers::pi * q);
    return scale * sinc * bw;
  };

  const std::size_t n_out = static_cast<std::size_t>(std::llround(w.samples.size() * ratio));
  Waveform out;
  out.sample_rate = out_rate;
  out.samples.resize(n_out);

  // Precompute kernel table: kPhases+1 rows of taps coefficients.
  std::vector<double> table(static_cast<std::size_t>(kPhases + 1) * taps);
  const int center = taps / 2;
  for (int ph = 0; ph <= kPhases; ++ph) {
    const double frac = static_cast<double>(ph) / kPhases;
    for (int i = 0; i < taps; ++i)
      table[static_cast<std::size_t>(ph) * taps + i] = kernel(i - center - frac);
  }

  const std::int64_t n_in = static_cast<std::int64_t>(w.samples.size());
  for (std::size_t m = 0; m < n_out; ++m) {
    const double t_in = m / ratio;
    const std::int64_t base = static_cast<std::int64_t>(std::floor(t_in));
    const double frac = t_in - base;
    const double phf = frac * kPhases;
    const int ph = static_cast<int>(phf);
    const double pfrac = phf - ph;
    const double* k0 = table.data() + static_cast<std::size_t>(ph) * taps;
    const double* k1 = table.data() + static_cast<std::size_t>(std::min(ph + 1, kPhases)) * taps;
    double acc = 0.0;
    for (int i = 0; i < taps; ++i) {
      const std::int64_t idx = base - center + i;
      if (idx < 0 || idx >= n_in) continue;
      acc += w.samples[static_cast<std::size_t>(idx)] * (k0[i] + pfrac * (k1[i] - k0[i]));
    }
    out.samples[m] = acc;
  }
  return out;
}

}  // namespace evib
