// Copyright 2026 The binmask Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

#include "binmask/error.hpp"

namespace binmask {

static_assert(std::endian::native == std::endian::little,
              "WAV and artifact I/O assume a little-endian host");

/// Mono time-domain signal; samples are linear amplitude, nominally in [-1, 1].
struct Signal {
  std::vector<double> samples;
  int rate = 0;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  double duration() const { return rate > 0 ? double(samples.size()) / rate : 0.0; }
};

/// Left/right pair sharing rate and length.
struct BinauralSignal {
  Signal left;
  Signal right;

  int rate() const { return left.rate; }
  std::size_t size() const { return left.size(); }
};

inline void validate(const Signal& s) {
  detail::require(s.rate > 0, "signal rate must be positive");
  for (double v : s.samples)
    detail::require(std::isfinite(v), "signal contains non-finite samples");
}

inline void validate(const BinauralSignal& b) {
  validate(b.left);
  validate(b.right);
  detail::require<DimensionError>(b.left.rate == b.right.rate,
                                  "binaural channels differ in rate");
  detail::require<DimensionError>(b.left.size() == b.right.size(),
                                  "binaural channels differ in length");
}

inline double db_from_power(double p) { return 10.0 * std::log10(p); }
inline double db_from_amplitude(double a) { return 20.0 * std::log10(a); }
inline double amplitude_from_db(double db) { return std::pow(10.0, db / 20.0); }

// ---------------------------------------------------------------------------
// WAV (RIFF) reading and writing. PCM-16 and IEEE float-32, 1 or 2 channels.

enum class SampleFormat { pcm16, float32 };

using AudioData = std::variant<Signal, BinauralSignal>;

namespace detail {

inline std::uint16_t read_u16(const unsigned char* p) {
  std::uint16_t v;
  std::memcpy(&v, p, 2);
  return v;
}

inline std::uint32_t read_u32(const unsigned char* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

inline std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

/// Decodes a RIFF/WAVE byte image. Mono yields Signal, stereo BinauralSignal
/// with channel 0 as left.
inline AudioData decode_wav(const std::vector<unsigned char>& bytes) {
  using detail::read_u16;
  using detail::read_u32;
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw FormatError("not a RIFF/WAVE file");

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    std::uint32_t len = read_u32(chunk + 4);
    if (pos + 8 + std::size_t(len) > bytes.size()) {
      // Tolerate a data chunk whose declared size overruns the file end
      // only if it is the data chunk; anything else is corrupt.
      if (std::memcmp(chunk, "data", 4) != 0) throw FormatError("truncated WAV chunk");
      len = std::uint32_t(bytes.size() - pos - 8);
    }
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (len < 16) throw FormatError("fmt chunk too short");
      format = read_u16(chunk + 8);
      channels = read_u16(chunk + 10);
      rate = read_u32(chunk + 12);
      bits = read_u16(chunk + 22);
      if (format == 0xFFFE) {
        if (len < 40) throw FormatError("extensible fmt chunk too short");
        format = read_u16(chunk + 8 + 24);  // first two bytes of the subformat GUID
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_len = len;
    }
    pos += 8 + std::size_t(len) + (len & 1u);
  }
  if (!have_fmt) throw FormatError("missing fmt chunk");
  if (data == nullptr) throw FormatError("missing data chunk");
  if (rate == 0) throw FormatError("zero sample rate");
  if (channels != 1 && channels != 2)
    throw UnsupportedError("only mono and stereo WAV are supported");

  SampleFormat sf;
  if (format == 1 && bits == 16)
    sf = SampleFormat::pcm16;
  else if (format == 3 && bits == 32)
    sf = SampleFormat::float32;
  else
    throw UnsupportedError("unsupported WAV encoding (format " + std::to_string(format) +
                           ", " + std::to_string(bits) + " bits)");

  const std::size_t width = sf == SampleFormat::pcm16 ? 2 : 4;
  const std::size_t frames = data_len / (width * channels);
  std::vector<double> ch[2];
  for (int c = 0; c < channels; ++c) ch[c].resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    for (int c = 0; c < channels; ++c) {
      const unsigned char* p = data + (i * channels + c) * width;
      if (sf == SampleFormat::pcm16) {
        std::int16_t v;
        std::memcpy(&v, p, 2);
        ch[c][i] = double(v) / 32768.0;
      } else {
        float v;
        std::memcpy(&v, p, 4);
        ch[c][i] = double(v);
      }
    }
  }
  if (channels == 1) return Signal{std::move(ch[0]), int(rate)};
  return BinauralSignal{Signal{std::move(ch[0]), int(rate)}, Signal{std::move(ch[1]), int(rate)}};
}

inline AudioData read_wav(const std::filesystem::path& path) {
  return decode_wav(detail::slurp(path));
}

inline Signal read_wav_mono(const std::filesystem::path& path) {
  auto data = read_wav(path);
  if (auto* s = std::get_if<Signal>(&data)) return std::move(*s);
  throw FormatError(path.string() + ": expected a mono WAV");
}

inline BinauralSignal read_wav_binaural(const std::filesystem::path& path) {
  auto data = read_wav(path);
  if (auto* b = std::get_if<BinauralSignal>(&data)) return std::move(*b);
  throw FormatError(path.string() + ": expected a 2-channel WAV");
}

struct WriteReport {
  bool clipped = false;
  std::size_t clipped_samples = 0;
};

namespace detail {

inline std::string encode_wav(const std::vector<const std::vector<double>*>& channels, int rate,
                              SampleFormat fmt, WriteReport& report) {
  const std::size_t nch = channels.size();
  const std::size_t frames = channels.front()->size();
  const std::uint16_t bits = fmt == SampleFormat::pcm16 ? 16 : 32;
  const std::uint32_t data_len = std::uint32_t(frames * nch * (bits / 8));

  std::string out;
  out.reserve(44 + data_len);
  out += "RIFF";
  put<std::uint32_t>(out, 36 + data_len);
  out += "WAVEfmt ";
  put<std::uint32_t>(out, 16);
  put<std::uint16_t>(out, fmt == SampleFormat::pcm16 ? 1 : 3);
  put<std::uint16_t>(out, std::uint16_t(nch));
  put<std::uint32_t>(out, std::uint32_t(rate));
  put<std::uint32_t>(out, std::uint32_t(rate * nch * (bits / 8)));
  put<std::uint16_t>(out, std::uint16_t(nch * (bits / 8)));
  put<std::uint16_t>(out, bits);
  out += "data";
  put<std::uint32_t>(out, data_len);

  for (std::size_t i = 0; i < frames; ++i) {
    for (std::size_t c = 0; c < nch; ++c) {
      double v = (*channels[c])[i];
      if (!std::isfinite(v)) throw InvalidArgument("cannot write non-finite samples");
      if (std::abs(v) > 1.0) {
        report.clipped = true;
        ++report.clipped_samples;
        v = std::clamp(v, -1.0, 1.0);
      }
      if (fmt == SampleFormat::pcm16) {
        double q = std::clamp(std::round(v * 32768.0), -32768.0, 32767.0);
        put<std::int16_t>(out, std::int16_t(q));
      } else {
        put<float>(out, float(v));
      }
    }
  }
  return out;
}

inline void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace detail

/// Samples outside [-1, 1] saturate; the report says whether that happened.
inline WriteReport write_wav(const Signal& s, const std::filesystem::path& path,
                             SampleFormat fmt = SampleFormat::pcm16) {
  detail::require(s.rate > 0, "signal rate must be positive");
  WriteReport report;
  detail::write_bytes(path, detail::encode_wav({&s.samples}, s.rate, fmt, report));
  return report;
}

inline WriteReport write_wav(const BinauralSignal& b, const std::filesystem::path& path,
                             SampleFormat fmt = SampleFormat::pcm16) {
  validate(b);
  WriteReport report;
  detail::write_bytes(path, detail::encode_wav({&b.left.samples, &b.right.samples}, b.rate(),
                                               fmt, report));
  return report;
}

// ---------------------------------------------------------------------------
// Active speech level (ITU-T P.56, method B).
//
// The envelope is a two-stage first-order smoother of |x|. A sample counts as
// active for threshold c when the envelope reached c within the hangover
// period, so the activity count for any c follows from the sliding maximum
// of the envelope over the hangover span. The level is the energy per
// active sample at the lowest threshold where (level - threshold) drops to
// the margin.

struct ActiveLevelConfig {
  double time_constant_s = 0.03;
  double hangover_s = 0.2;
  double margin_db = 15.9;
};

inline double active_level(const Signal& s, const ActiveLevelConfig& cfg = {}) {
  validate(s);
  const std::size_t n = s.size();
  if (double(n) < 0.1 * s.rate)
    throw InvalidArgument("active_level needs at least 100 ms of signal");

  double energy = 0.0;
  for (double v : s.samples) energy += v * v;
  if (!(energy > 0.0)) throw UndefinedLevelError("active level of an all-zero signal");

  const double g = std::exp(-1.0 / (s.rate * cfg.time_constant_s));
  const std::size_t hang = std::size_t(std::lround(cfg.hangover_s * s.rate));

  // Sliding max over the current sample and the preceding `hang` samples.
  std::vector<double> reach(n);
  std::deque<std::size_t> window;
  std::vector<double> env(n);
  double p = 0.0, q = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    p = g * p + (1.0 - g) * std::abs(s.samples[i]);
    q = g * q + (1.0 - g) * p;
    env[i] = q;
    while (!window.empty() && env[window.back()] <= q) window.pop_back();
    window.push_back(i);
    if (window.front() + hang < i) window.pop_front();
    reach[i] = env[window.front()];
  }
  std::sort(reach.begin(), reach.end());
  const double top = reach.back();
  if (!(top > 0.0)) throw UndefinedLevelError("signal envelope never rises above zero");

  auto active_count = [&](double c) {
    return double(reach.end() - std::lower_bound(reach.begin(), reach.end(), c));
  };
  auto level_at = [&](double c) { return db_from_power(energy / active_count(c)); };
  auto excess = [&](double c) { return level_at(c) - db_from_amplitude(c) - cfg.margin_db; };

  // Thresholds are scanned upward on a grid tied to the envelope peak so the
  // measurement is exactly gain-equivariant.
  constexpr double step_db = 0.25;
  constexpr int steps = 600;  // 150 dB below the envelope peak
  double lo = top * amplitude_from_db(-step_db * steps);
  if (excess(lo) <= 0.0) return level_at(lo);
  for (int i = steps - 1; i >= 0; --i) {
    double hi = top * amplitude_from_db(-step_db * i);
    if (excess(hi) <= 0.0) {
      for (int it = 0; it < 60; ++it) {
        double mid = std::sqrt(lo * hi);
        (excess(mid) <= 0.0 ? hi : lo) = mid;
      }
      return level_at(hi);
    }
    lo = hi;
  }
  throw UndefinedLevelError("no activity threshold satisfies the P.56 margin");
}

/// Scales by a single positive gain so the active level equals `target_db`.
inline Signal normalize_active_level(const Signal& s, double target_db,
                                     const ActiveLevelConfig& cfg = {}) {
  const double gain = amplitude_from_db(target_db - active_level(s, cfg));
  Signal out = s;
  for (double& v : out.samples) v *= gain;
  return out;
}

/// Joint normalization: one gain, derived from the louder channel, applied to
/// both channels so the interaural level difference is kept.
inline BinauralSignal normalize_active_level(const BinauralSignal& b, double target_db,
                                             const ActiveLevelConfig& cfg = {}) {
  validate(b);
  double level = -INFINITY;
  for (const Signal* ch : {&b.left, &b.right}) {
    try {
      level = std::max(level, active_level(*ch, cfg));
    } catch (const UndefinedLevelError&) {
    }
  }
  if (!std::isfinite(level)) throw UndefinedLevelError("both channels are silent");
  const double gain = amplitude_from_db(target_db - level);
  BinauralSignal out = b;
  for (double& v : out.left.samples) v *= gain;
  for (double& v : out.right.samples) v *= gain;
  return out;
}

inline double rms_level(const Signal& s) {
  double e = 0.0;
  for (double v : s.samples) e += v * v;
  if (s.empty() || !(e > 0.0)) throw UndefinedLevelError("RMS level of an all-zero signal");
  return db_from_power(e / double(s.size()));
}

}  // namespace binmask
