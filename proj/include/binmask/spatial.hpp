// Copyright 2026 The binmask Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>
#include <regex>
#include <string>
#include <variant>
#include <vector>

#include "binmask/audio_io.hpp"
#include "binmask/error.hpp"

namespace binmask {

/// Head-related impulse responses for one source direction.
/// Azimuth is in degrees, 0 = front, positive = towards the right ear.
struct HrirPair {
  std::vector<double> left;
  std::vector<double> right;
  double azimuth = 0.0;
  int rate = 0;
};

inline void validate(const HrirPair& h) {
  detail::require(h.rate > 0, "HRIR rate must be positive");
  detail::require(!h.left.empty() && !h.right.empty(), "HRIR must have at least one tap");
  for (const auto* ir : {&h.left, &h.right})
    for (double v : *ir) detail::require(std::isfinite(v), "HRIR contains non-finite taps");
}

struct SceneSpec {
  double source_azimuth = 30.0;
  double noise_azimuth = 0.0;
  double snr_db = 0.0;
  std::string noise_kind = "white";
};

// ---------------------------------------------------------------------------
// Synthetic spherical-head HRIRs.

struct SyntheticHrirConfig {
  double head_radius_m = 0.0875;
  double speed_of_sound = 343.0;
  double ild_db_per_degree = 0.15;
  int bulk_delay = 16;  // samples, keeps the fractional-delay filter causal
  int half_width = 16;  // windowed-sinc half length in samples
  int taps = 48;
};

/// Woodworth interaural time difference in seconds; positive when the right
/// ear leads.
inline double woodworth_itd(double azimuth_deg, const SyntheticHrirConfig& cfg = {}) {
  const double a = azimuth_deg * std::numbers::pi / 180.0;
  return cfg.head_radius_m / cfg.speed_of_sound * (a + std::sin(a));
}

namespace detail {

// Blackman-windowed sinc centred at `delay` samples.
inline std::vector<double> fractional_delay(double delay, int taps, int half_width) {
  std::vector<double> h(std::size_t(taps), 0.0);
  for (int n = 0; n < taps; ++n) {
    const double x = n - delay;
    if (std::abs(x) >= half_width) continue;
    const double sinc = x == 0.0 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
    const double t = std::numbers::pi * x / half_width;
    const double win = 0.42 + 0.5 * std::cos(t) + 0.08 * std::cos(2.0 * t);
    h[std::size_t(n)] = sinc * win;
  }
  return h;
}

}  // namespace detail

inline HrirPair synth_hrir(double azimuth_deg, int rate, const SyntheticHrirConfig& cfg = {}) {
  detail::require(std::abs(azimuth_deg) <= 90.0, "synthetic HRIR azimuth must be within +-90");
  detail::require(rate > 0, "HRIR rate must be positive");
  const double lag = std::abs(woodworth_itd(azimuth_deg, cfg)) * rate;
  detail::require(cfg.bulk_delay + lag + cfg.half_width <= cfg.taps,
                  "synthetic HRIR too short for the requested delay");
  // Level difference split evenly between the ears.
  const double half_ild = 0.5 * cfg.ild_db_per_degree * azimuth_deg;
  const double right_gain = amplitude_from_db(half_ild);
  const double left_gain = amplitude_from_db(-half_ild);
  const double left_delay = cfg.bulk_delay + (azimuth_deg > 0 ? lag : 0.0);
  const double right_delay = cfg.bulk_delay + (azimuth_deg < 0 ? lag : 0.0);

  HrirPair h{detail::fractional_delay(left_delay, cfg.taps, cfg.half_width),
             detail::fractional_delay(right_delay, cfg.taps, cfg.half_width), azimuth_deg, rate};
  for (double& v : h.left) v *= left_gain;
  for (double& v : h.right) v *= right_gain;
  return h;
}

// ---------------------------------------------------------------------------
// HRIR database ingestion: one 2-channel WAV per azimuth, named az+30.wav,
// az-45.wav, az+0.wav.

inline std::string hrir_filename(int azimuth_deg) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "az%c%d.wav", azimuth_deg < 0 ? '-' : '+', std::abs(azimuth_deg));
  return buf;
}

/// Loads the entry nearest to `azimuth_deg` on a `grid_deg` grid. The entry
/// must exist and match `expected_rate`.
inline HrirPair load_hrir(const std::filesystem::path& dir, double azimuth_deg, int expected_rate,
                          double grid_deg = 5.0) {
  const int snapped = int(std::lround(azimuth_deg / grid_deg) * grid_deg);
  std::vector<std::filesystem::path> candidates{dir / hrir_filename(snapped)};
  if (snapped == 0) candidates.push_back(dir / "az0.wav");
  for (const auto& path : candidates) {
    if (!std::filesystem::exists(path)) continue;
    auto data = read_wav(path);
    auto* b = std::get_if<BinauralSignal>(&data);
    if (b == nullptr) throw FormatError(path.string() + ": HRIR file must have 2 channels");
    if (b->rate() != expected_rate)
      throw InvalidArgument(path.string() + ": HRIR rate " + std::to_string(b->rate()) +
                            " does not match pipeline rate " + std::to_string(expected_rate));
    HrirPair h{std::move(b->left.samples), std::move(b->right.samples), double(snapped),
               expected_rate};
    validate(h);
    return h;
  }
  throw IoError("no HRIR for azimuth " + std::to_string(snapped) + " in " + dir.string());
}

/// Azimuths available in an HRIR directory.
inline std::vector<int> list_hrir_azimuths(const std::filesystem::path& dir) {
  std::vector<int> out;
  const std::regex pattern(R"(az([+-]?)(\d+)\.wav)");
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = e.path().filename().string();
    if (std::regex_match(name, m, pattern)) {
      int v = std::stoi(m[2].str());
      out.push_back(m[1].str() == "-" ? -v : v);
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// ---------------------------------------------------------------------------

inline std::vector<double> convolve(const std::vector<double>& x, const std::vector<double>& h) {
  if (x.empty() || h.empty()) return {};
  std::vector<double> y(x.size() + h.size() - 1, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    for (std::size_t j = 0; j < h.size(); ++j) y[i + j] += xi * h[j];
  }
  return y;
}

/// Full linear convolution of the source with each ear's response.
inline BinauralSignal spatialize(const Signal& mono, const HrirPair& hrir) {
  validate(mono);
  validate(hrir);
  if (mono.rate != hrir.rate) throw InvalidArgument("source and HRIR rates differ");
  std::vector<double> l = convolve(mono.samples, hrir.left);
  std::vector<double> r = convolve(mono.samples, hrir.right);
  const std::size_t n = std::max(l.size(), r.size());
  l.resize(n, 0.0);
  r.resize(n, 0.0);
  return {Signal{std::move(l), mono.rate}, Signal{std::move(r), mono.rate}};
}

// ---------------------------------------------------------------------------
// SNR-controlled mixing.

enum class SnrReference {
  active_level,  // speech P.56 active level against noise RMS
  rms,           // plain RMS of both
};

struct Mixture {
  BinauralSignal noisy;
  BinauralSignal noise;  // scaled noise component actually added
  double noise_gain = 1.0;
  std::size_t offset = 0;
};

inline double speech_reference_level(const Signal& s, SnrReference ref) {
  return ref == SnrReference::active_level ? active_level(s) : rms_level(s);
}

/// Adds `noise` cropped at `offset`, scaled by one scalar for both channels so
/// the ear-averaged SNR equals `snr_db`.
inline Mixture mix_at_snr(const BinauralSignal& speech, const BinauralSignal& noise, double snr_db,
                          std::size_t offset, SnrReference ref = SnrReference::active_level) {
  validate(speech);
  validate(noise);
  detail::require(std::isfinite(snr_db), "SNR must be finite");
  if (speech.rate() != noise.rate()) throw InvalidArgument("speech and noise rates differ");
  if (noise.size() < speech.size() + offset)
    throw InvalidArgument("noise shorter than speech at the requested offset");

  const std::size_t n = speech.size();
  auto crop = [&](const Signal& s) {
    return Signal{std::vector<double>(s.samples.begin() + std::ptrdiff_t(offset),
                                      s.samples.begin() + std::ptrdiff_t(offset + n)),
                  s.rate};
  };
  BinauralSignal piece{crop(noise.left), crop(noise.right)};
  double noise_db = 0.0;
  try {
    noise_db = 0.5 * (rms_level(piece.left) + rms_level(piece.right));
  } catch (const UndefinedLevelError&) {
    throw InvalidArgument("cannot mix zero-energy noise");
  }
  const double speech_db = 0.5 * (speech_reference_level(speech.left, ref) +
                                  speech_reference_level(speech.right, ref));
  const double gain = amplitude_from_db(speech_db - noise_db - snr_db);

  Mixture mix{speech, piece, gain, offset};
  for (std::size_t i = 0; i < n; ++i) {
    mix.noise.left.samples[i] *= gain;
    mix.noise.right.samples[i] *= gain;
    mix.noisy.left.samples[i] += mix.noise.left.samples[i];
    mix.noisy.right.samples[i] += mix.noise.right.samples[i];
  }
  return mix;
}

/// As above with the crop offset drawn uniformly from `rng`.
inline Mixture mix_at_snr(const BinauralSignal& speech, const BinauralSignal& noise, double snr_db,
                          std::mt19937_64& rng, SnrReference ref = SnrReference::active_level) {
  if (noise.size() < speech.size()) throw InvalidArgument("noise shorter than speech");
  std::uniform_int_distribution<std::size_t> pick(0, noise.size() - speech.size());
  return mix_at_snr(speech, noise, snr_db, pick(rng), ref);
}

}  // namespace binmask
