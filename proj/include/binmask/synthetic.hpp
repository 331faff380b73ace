// Copyright 2026 The binmask Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

// Synthetic material for tests and desk-scale experiments: speech-like
// harmonic utterances and noise sources.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "binmask/audio_io.hpp"
#include "binmask/error.hpp"
#include "binmask/spatial.hpp"

namespace binmask {

struct SpeechLikeConfig {
  double seconds = 3.0;
  int rate = 10000;
  double f0_min = 90.0;
  double f0_max = 230.0;
  double syllable_min_s = 0.15;
  double syllable_max_s = 0.35;
  double gap_min_s = 0.04;
  double gap_max_s = 0.18;
  double fricative_probability = 0.3;
  double peak = 0.3;
};

namespace detail {

// Spectral envelope in dB: three formant bumps on a -6 dB/octave tilt.
inline double formant_envelope_db(double f, const double (&formants)[3]) {
  static constexpr double bandwidths[3] = {90.0, 130.0, 200.0};
  static constexpr double heights[3] = {0.0, -6.0, -12.0};
  double env = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double x = (f - formants[i]) / bandwidths[i];
    env += std::pow(10.0, heights[i] / 20.0) / (1.0 + x * x);
  }
  const double tilt = -6.0 * std::log2(std::max(f, 100.0) / 100.0);
  return 20.0 * std::log10(env + 1e-3) + tilt;
}

}  // namespace detail

/// Sequence of voiced syllables with gliding pitch and formants, separated by
/// short pauses or fricative noise bursts. Deterministic in `seed`.
inline Signal speech_like(std::uint64_t seed, const SpeechLikeConfig& cfg = {}) {
  detail::require(cfg.rate > 0 && cfg.seconds > 0.0, "invalid speech-like configuration");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  auto between = [&](double a, double b) { return a + (b - a) * uni(rng); };
  std::normal_distribution<double> gauss(0.0, 1.0);

  const std::size_t total = std::size_t(cfg.seconds * cfg.rate);
  const double nyquist = cfg.rate / 2.0;
  Signal out{std::vector<double>(total, 0.0), cfg.rate};

  std::size_t pos = std::size_t(between(0.1, 0.25) * cfg.rate);  // leading pause
  while (pos < total) {
    const std::size_t len = std::size_t(between(cfg.syllable_min_s, cfg.syllable_max_s) * cfg.rate);
    const double f0_start = between(cfg.f0_min, cfg.f0_max);
    const double f0_end = std::clamp(f0_start * between(0.8, 1.2), cfg.f0_min, cfg.f0_max);
    const double start_formants[3] = {between(300, 800), between(900, 2200), between(2400, 3200)};
    const double end_formants[3] = {between(300, 800), between(900, 2200), between(2400, 3200)};
    const double level = between(0.5, 1.0);

    std::vector<double> phases(64);
    for (double& p : phases) p = between(0.0, 2.0 * std::numbers::pi);
    double f0_phase = 0.0;
    for (std::size_t i = 0; i < len && pos + i < total; ++i) {
      const double t = double(i) / double(len);
      const double f0 = f0_start + (f0_end - f0_start) * t;
      double formants[3];
      for (int k = 0; k < 3; ++k)
        formants[k] = start_formants[k] + (end_formants[k] - start_formants[k]) * t;
      // Raised-cosine attack and release over the first and last 20%.
      double env = 1.0;
      if (t < 0.2) env = 0.5 - 0.5 * std::cos(std::numbers::pi * t / 0.2);
      if (t > 0.8) env = 0.5 - 0.5 * std::cos(std::numbers::pi * (1.0 - t) / 0.2);
      f0_phase += 2.0 * std::numbers::pi * f0 / cfg.rate;
      double v = 0.0;
      for (std::size_t h = 1; h <= phases.size() && h * f0 < nyquist * 0.95; ++h) {
        const double amp = std::pow(10.0, detail::formant_envelope_db(h * f0, formants) / 20.0);
        v += amp * std::sin(double(h) * f0_phase + phases[h - 1]);
      }
      out.samples[pos + i] = level * env * v;
    }
    pos += len;

    const std::size_t gap = std::size_t(between(cfg.gap_min_s, cfg.gap_max_s) * cfg.rate);
    if (uni(rng) < cfg.fricative_probability) {
      // High-passed noise burst (first difference of white noise).
      double prev = 0.0;
      const double level_f = between(0.05, 0.15);
      for (std::size_t i = 0; i < gap && pos + i < total; ++i) {
        const double t = double(i) / double(gap);
        const double w = gauss(rng);
        out.samples[pos + i] = level_f * std::sin(std::numbers::pi * t) * (w - prev);
        prev = w;
      }
    }
    pos += gap;
  }

  double peak = 0.0;
  for (double v : out.samples) peak = std::max(peak, std::abs(v));
  if (peak > 0.0)
    for (double& v : out.samples) v *= cfg.peak / peak;
  return out;
}

/// Mono noise of the given kind at unit RMS: "white" or "pink".
inline Signal noise_source(const std::string& kind, double seconds, int rate, std::uint64_t seed) {
  detail::require(rate > 0 && seconds > 0.0, "invalid noise request");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t n = std::size_t(seconds * rate);
  Signal s{std::vector<double>(n), rate};
  if (kind == "white") {
    for (double& v : s.samples) v = gauss(rng);
  } else if (kind == "pink") {
    // Paul Kellet's economy pinking filter.
    double b0 = 0, b1 = 0, b2 = 0;
    for (double& v : s.samples) {
      const double w = gauss(rng);
      b0 = 0.99765 * b0 + w * 0.0990460;
      b1 = 0.96300 * b1 + w * 0.2965164;
      b2 = 0.57000 * b2 + w * 1.0526913;
      v = b0 + b1 + b2 + w * 0.1848;
    }
  } else {
    throw InvalidArgument("unknown noise kind: " + kind);
  }
  double e = 0.0;
  for (double v : s.samples) e += v * v;
  const double g = 1.0 / std::sqrt(e / double(n));
  for (double& v : s.samples) v *= g;
  return s;
}

/// Spatialized speech plus directional noise at the scene SNR.
struct Scene {
  BinauralSignal clean;
  BinauralSignal noisy;
  BinauralSignal noise;
};

/// Noise is synthesized 0.5 s longer than the speech and cropped at a seeded
/// offset before mixing.
inline Scene make_scene(const Signal& speech, const SceneSpec& spec, const HrirPair& speech_hrir,
                        const HrirPair& noise_hrir, std::uint64_t seed) {
  validate(speech);
  const BinauralSignal clean = spatialize(speech, speech_hrir);
  const double seconds = double(clean.size()) / speech.rate + 0.5;
  const BinauralSignal noise =
      spatialize(noise_source(spec.noise_kind, seconds, speech.rate, seed), noise_hrir);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  Mixture mix = mix_at_snr(clean, noise, spec.snr_db, rng);
  return {clean, std::move(mix.noisy), std::move(mix.noise)};
}

/// Scene with synthetic spherical-head responses.
inline Scene make_scene(const Signal& speech, const SceneSpec& spec, std::uint64_t seed,
                        const SyntheticHrirConfig& hrir = {}) {
  return make_scene(speech, spec, synth_hrir(spec.source_azimuth, speech.rate, hrir),
                    synth_hrir(spec.noise_azimuth, speech.rate, hrir), seed);
}

}  // namespace binmask
