// Copyright 2026 The binmask Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numbers>
#include <vector>

#include "binmask/audio_io.hpp"
#include "binmask/binary_io.hpp"
#include "binmask/error.hpp"
#include "binmask/tf_transform.hpp"

namespace binmask {

inline constexpr int kFeatureBands = 30;
inline constexpr int kFeatureWidth = 3 * kFeatureBands;

/// Frames x 90: [log gain | log enhanced amplitude | voiced-speech SNR].
using FeatureMatrix = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Exponential integral.

/// E1(v) for v > 0: power series below 1, continued fraction (modified
/// Lentz) from 1 upwards.
inline double expint_e1(double v) {
  if (!(v > 0.0)) throw InvalidArgument("E1 needs a positive argument");
  if (std::isinf(v)) return 0.0;
  constexpr double eps = 1e-16;
  if (v < 1.0) {
    double sum = 0.0, term = 1.0;
    for (int k = 1; k < 200; ++k) {
      term *= -v / k;
      const double add = -term / k;
      sum += add;
      if (std::abs(add) < eps * std::abs(sum)) break;
    }
    return -std::numbers::egamma - std::log(v) + sum;
  }
  constexpr double tiny = 1e-300;
  double b = v + 1.0, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i < 500; ++i) {
    const double a = -double(i) * i;
    b += 2.0;
    d = 1.0 / (a * d + b);
    c = b + a / c;
    const double del = c * d;
    h *= del;
    if (std::abs(del - 1.0) < eps) break;
  }
  return h * std::exp(-v);
}

// ---------------------------------------------------------------------------
// Noise power tracking by speech presence probability.

struct NoiseTrackerConfig {
  double prior_speech = 0.5;
  double prior_snr_db = 15.0;
  double alpha_noise = 0.8;
  double alpha_presence = 0.9;
  double stuck_threshold = 0.99;
  int stuck_frames = 120;
  int init_frames = 6;
};

struct NoiseTracker {
  Eigen::ArrayXd noise_psd;
  Eigen::ArrayXd smoothed_presence;
  Eigen::ArrayXi stuck;
  NoiseTrackerConfig config;
};

/// Starts from the mean periodogram of the first frames.
inline NoiseTracker init_noise_tracker(const TFGrid& noisy, const NoiseTrackerConfig& cfg = {}) {
  detail::require(cfg.init_frames >= 1, "noise tracker needs at least one init frame");
  const Eigen::Index n = std::min<Eigen::Index>(cfg.init_frames, noisy.frames());
  if (n == 0) throw InvalidArgument("noise tracker needs at least one frame");
  NoiseTracker t;
  t.noise_psd = noisy.cells.leftCols(n).abs2().rowwise().mean();
  t.smoothed_presence = Eigen::ArrayXd::Zero(noisy.bins());
  t.stuck = Eigen::ArrayXi::Zero(noisy.bins());
  t.config = cfg;
  return t;
}

/// One frame of the SPP-weighted recursive update; `power` is |Y|^2.
inline void update_noise(NoiseTracker& t, const Eigen::ArrayXd& power) {
  if (power.size() != t.noise_psd.size()) throw DimensionError("frame size does not match tracker");
  const NoiseTrackerConfig& c = t.config;
  const double xi = std::pow(10.0, c.prior_snr_db / 10.0);
  const double odds = (1.0 - c.prior_speech) / c.prior_speech * (1.0 + xi);
  for (Eigen::Index k = 0; k < power.size(); ++k) {
    const double sigma = t.noise_psd(k);
    double p;
    if (sigma > 0.0) {
      const double gamma = power(k) / sigma;
      p = 1.0 / (1.0 + odds * std::exp(-gamma * xi / (1.0 + xi)));
    } else {
      p = power(k) > 0.0 ? 1.0 : 0.0;
    }
    t.smoothed_presence(k) = c.alpha_presence * t.smoothed_presence(k) + (1.0 - c.alpha_presence) * p;
    t.stuck(k) = t.smoothed_presence(k) > c.stuck_threshold ? t.stuck(k) + 1 : 0;
    if (t.stuck(k) >= c.stuck_frames) p = std::min(p, c.stuck_threshold);
    const double estimate = (1.0 - p) * power(k) + p * sigma;
    t.noise_psd(k) = c.alpha_noise * sigma + (1.0 - c.alpha_noise) * estimate;
  }
}

// ---------------------------------------------------------------------------
// Log-spectral amplitude MMSE gains.

struct LogMmseConfig {
  double alpha_dd = 0.92;
  double xi_min_db = -25.0;
  double gain_floor = 1e-6;
  NoiseTrackerConfig tracker;
};

/// Unclamped gain for a priori SNR `xi` and a posteriori SNR `gamma`.
inline double logmmse_gain_cell(double xi, double gamma) {
  const double v = xi * gamma / (1.0 + xi);
  if (!(v > 0.0)) return 0.0;
  return xi / (1.0 + xi) * std::exp(0.5 * expint_e1(v));
}

/// Gains over the whole grid. Noise is tracked frame by frame starting from
/// `tracker`, which is left at its final state.
inline Grid logmmse_gain(const TFGrid& noisy, NoiseTracker& tracker, const LogMmseConfig& cfg = {}) {
  if (tracker.noise_psd.size() != noisy.bins()) throw DimensionError("tracker size mismatch");
  const double xi_min = std::pow(10.0, cfg.xi_min_db / 10.0);
  const Grid pw = power(noisy);
  Grid G(noisy.bins(), noisy.frames());
  Eigen::ArrayXd prev_clean = Eigen::ArrayXd::Zero(noisy.bins());  // |G Y|^2 of the last frame
  constexpr double tiny = std::numeric_limits<double>::min();
  for (Eigen::Index m = 0; m < noisy.frames(); ++m) {
    update_noise(tracker, pw.col(m));
    for (Eigen::Index k = 0; k < noisy.bins(); ++k) {
      const double sigma = std::max(tracker.noise_psd(k), tiny);
      const double gamma = pw(k, m) / sigma;
      const double ml = std::max(gamma - 1.0, 0.0);
      double xi = m == 0 ? ml : cfg.alpha_dd * prev_clean(k) / sigma + (1.0 - cfg.alpha_dd) * ml;
      xi = std::max(xi, xi_min);
      const double g = std::clamp(logmmse_gain_cell(xi, gamma), cfg.gain_floor, 1.0);
      G(k, m) = g;
      prev_clean(k) = g * g * pw(k, m);
    }
  }
  return G;
}

inline Grid logmmse_gain(const TFGrid& noisy, const LogMmseConfig& cfg = {}) {
  NoiseTracker t = init_noise_tracker(noisy, cfg.tracker);
  return logmmse_gain(noisy, t, cfg);
}

// ---------------------------------------------------------------------------
// Feature subsets 1 and 2 (bands x frames).

inline constexpr double kAmplitudeFloor = 1e-8;

inline Grid feature_subset1(const Grid& G, const BandMatrix& bands) {
  return band_average(G, bands).log();
}

inline Grid feature_subset2(const Grid& G, const TFGrid& noisy, const BandMatrix& bands) {
  if (G.rows() != noisy.bins() || G.cols() != noisy.frames())
    throw DimensionError("gain grid does not match the noisy spectrum");
  return (kAmplitudeFloor + band_average(G * magnitude(noisy), bands)).log();
}

// ---------------------------------------------------------------------------
// Voiced-speech SNR from harmonic and inter-harmonic energies.

struct PitchConfig {
  double f0_min = 60.0;
  double f0_max = 400.0;
  double f0_step = 0.5;
  int harmonics = 10;
  double voicing_ratio = 1.5;  // summation peak over its median
  double window_ms = 90.0;
  int fft_len = 4096;
  double floor_db = -20.0;
  double ceiling_db = 30.0;
};

/// Long-window power spectrum centred on each STFT frame.
class PitchAnalyzer {
 public:
  PitchAnalyzer(const StftConfig& stft, const PitchConfig& cfg)
      : stft_(stft), cfg_(cfg), fft_(cfg.fft_len) {
    const int n = int(std::lround(cfg.window_ms * 1e-3 * stft.rate));
    detail::require(n >= 2 && n <= cfg.fft_len, "pitch window must fit the FFT");
    window_ = hann_window(n);
  }

  const PitchConfig& config() const { return cfg_; }
  double bin_hz() const { return double(stft_.rate) / cfg_.fft_len; }

  Eigen::ArrayXd spectrum(const Signal& x, std::size_t frame) {
    const std::ptrdiff_t n = std::ptrdiff_t(window_.size());
    const std::ptrdiff_t centre =
        std::ptrdiff_t(frame) * stft_.hop() + stft_.window_length() / 2;
    double* buf = fft_.real();
    std::fill(buf, buf + fft_.size(), 0.0);
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const std::ptrdiff_t idx = centre - n / 2 + i;
      if (idx >= 0 && idx < std::ptrdiff_t(x.size()))
        buf[i] = x.samples[std::size_t(idx)] * window_[std::size_t(i)];
    }
    fft_.forward();
    Eigen::ArrayXd p(cfg_.fft_len / 2 + 1);
    for (Eigen::Index k = 0; k < p.size(); ++k) p(k) = std::norm(fft_.spectrum()[k]);
    return p;
  }

  // Power at frequency f (nearest bin); 0 beyond Nyquist.
  double at(const Eigen::ArrayXd& p, double f) const {
    const long k = std::lround(f / bin_hz());
    return k >= 0 && k < p.size() ? p(k) : 0.0;
  }

  struct Pitch {
    double f0 = 0.0;
    bool voiced = false;
  };

  /// Harmonic summation on the spectrum in dB above its median.
  Pitch estimate(const Eigen::ArrayXd& p) const {
    if (!(p.maxCoeff() > 0.0)) return {};
    Eigen::ArrayXd db = 10.0 * (p + std::numeric_limits<double>::min()).log10();
    std::vector<double> tmp(db.data(), db.data() + db.size());
    std::nth_element(tmp.begin(), tmp.begin() + std::ptrdiff_t(tmp.size() / 2), tmp.end());
    const double med = tmp[tmp.size() / 2];
    const Eigen::ArrayXd lifted = (db - med).max(0.0);

    std::vector<double> scores;
    Pitch best;
    double best_score = -1.0;
    for (double f0 = cfg_.f0_min; f0 <= cfg_.f0_max + 1e-9; f0 += cfg_.f0_step) {
      double s = 0.0;
      for (int h = 1; h <= cfg_.harmonics; ++h) s += at(lifted, h * f0);
      scores.push_back(s);
      if (s > best_score) {
        best_score = s;
        best.f0 = f0;
      }
    }
    std::nth_element(scores.begin(), scores.begin() + std::ptrdiff_t(scores.size() / 2),
                     scores.end());
    const double med_score = scores[scores.size() / 2];
    best.voiced = best_score > 0.0 && best_score >= cfg_.voicing_ratio * med_score;
    return best;
  }

 private:
  StftConfig stft_;
  PitchConfig cfg_;
  detail::RealFft fft_;
  std::vector<double> window_;
};

/// Continuous triangle weight of ERB band i at frequency f, matching the
/// layout of erb_bands().
inline double erb_triangle(const BandMatrix& bands, int i, double f) {
  const auto& c = bands.centers;
  const int n = int(c.size());
  const double step = hz_to_erb_rate(c[1]) - hz_to_erb_rate(c[0]);
  const double lo = i > 0 ? c[std::size_t(i - 1)] : erb_rate_to_hz(hz_to_erb_rate(c[0]) - step);
  const double hi =
      i + 1 < n ? c[std::size_t(i + 1)] : erb_rate_to_hz(hz_to_erb_rate(c.back()) + step);
  const double mid = c[std::size_t(i)];
  if (f > lo && f <= mid) return (f - lo) / (mid - lo);
  if (f > mid && f < hi) return (hi - f) / (hi - mid);
  return 0.0;
}

/// Per-band 10 log10(harmonic / mid-harmonic energy) for fundamental f0,
/// unclamped. Bands with no energy in either set get the floor.
inline Eigen::ArrayXd vssnr_raw(const PitchAnalyzer& pa, const Eigen::ArrayXd& p, double f0,
                                const BandMatrix& bands) {
  const int nb = int(bands.bands());
  const double nyquist = (p.size() - 1) * pa.bin_hz();
  Eigen::ArrayXd num = Eigen::ArrayXd::Zero(nb), den = Eigen::ArrayXd::Zero(nb);
  for (int h = 1; h * f0 <= nyquist; ++h) {
    const double fh = h * f0, fm = (h + 0.5) * f0;
    const double eh = pa.at(p, fh), em = fm <= nyquist ? pa.at(p, fm) : 0.0;
    for (int i = 0; i < nb; ++i) {
      num(i) += erb_triangle(bands, i, fh) * eh;
      if (fm <= nyquist) den(i) += erb_triangle(bands, i, fm) * em;
    }
  }
  Eigen::ArrayXd out(nb);
  constexpr double tiny = std::numeric_limits<double>::min();
  for (int i = 0; i < nb; ++i) {
    if (num(i) <= 0.0 && den(i) <= 0.0)
      out(i) = pa.config().floor_db;
    else
      out(i) = 10.0 * std::log10((num(i) + tiny) / (den(i) + tiny));
  }
  return out;
}

/// Subset 3 (bands x frames). Uses its own long analysis window, centred on
/// the STFT frames of `stft`, so harmonics of low voices are resolved.
inline Grid feature_subset3(const Signal& noisy, const StftConfig& stft, const BandMatrix& bands,
                            const PitchConfig& cfg = {}) {
  validate(noisy);
  const std::size_t frames = frame_count(noisy.size(), stft);
  PitchAnalyzer pa(stft, cfg);
  Grid out = Grid::Constant(bands.bands(), Eigen::Index(frames), cfg.floor_db);
  for (std::size_t m = 0; m < frames; ++m) {
    const Eigen::ArrayXd p = pa.spectrum(noisy, m);
    const auto pitch = pa.estimate(p);
    if (!pitch.voiced) continue;
    out.col(Eigen::Index(m)) =
        vssnr_raw(pa, p, pitch.f0, bands).max(cfg.floor_db).min(cfg.ceiling_db);
  }
  return out;
}

// ---------------------------------------------------------------------------

struct FeatureConfig {
  StftConfig stft;
  int bands = kFeatureBands;
  double target_level_db = 0.0;
  LogMmseConfig logmmse;
  PitchConfig pitch;
};

/// Level-normalize, analyse and stack the three subsets per frame.
inline FeatureMatrix extract_features(const Signal& noisy, const FeatureConfig& cfg = {}) {
  validate(noisy);
  const Signal x = normalize_active_level(noisy, cfg.target_level_db);
  const TFGrid Y = stft(x, cfg.stft);
  const BandMatrix bands = erb_bands(cfg.bands, cfg.stft);
  const Grid G = logmmse_gain(Y, cfg.logmmse);
  FeatureMatrix F(Y.frames(), 3 * cfg.bands);
  F.leftCols(cfg.bands) = feature_subset1(G, bands).transpose().matrix();
  F.middleCols(cfg.bands, cfg.bands) = feature_subset2(G, Y, bands).transpose().matrix();
  F.rightCols(cfg.bands) = feature_subset3(x, cfg.stft, bands, cfg.pitch).transpose().matrix();
  if (!F.allFinite()) throw PipelineError("non-finite feature values");
  return F;
}

// ---------------------------------------------------------------------------
// Feature files: "BWFEAT", version, rows, cols, hash, row-major float32.

inline constexpr std::uint32_t kFeatureFileVersion = 1;

inline void write_features(const std::filesystem::path& path, const FeatureMatrix& F,
                           std::uint64_t config_hash = 0) {
  ByteWriter w;
  w.raw("BWFEAT").put<std::uint32_t>(kFeatureFileVersion);
  w.put<std::uint32_t>(std::uint32_t(F.rows())).put<std::uint32_t>(std::uint32_t(F.cols()));
  w.put<std::uint64_t>(config_hash);
  for (Eigen::Index r = 0; r < F.rows(); ++r)
    for (Eigen::Index c = 0; c < F.cols(); ++c) w.put<float>(float(F(r, c)));
  w.save(path);
}

struct FeatureFile {
  FeatureMatrix features;
  std::uint64_t config_hash = 0;
};

inline FeatureFile read_features(const std::filesystem::path& path) {
  ByteReader r = ByteReader::open(path);
  r.expect_magic("BWFEAT");
  const auto version = r.get<std::uint32_t>();
  if (version != kFeatureFileVersion)
    throw FormatError(path.string() + ": feature file version " + std::to_string(version) +
                      " not supported");
  const auto rows = r.get<std::uint32_t>(), cols = r.get<std::uint32_t>();
  FeatureFile f;
  f.config_hash = r.get<std::uint64_t>();
  if (r.remaining() != std::size_t(rows) * cols * sizeof(float))
    throw FormatError(path.string() + ": payload size does not match the header");
  f.features.resize(rows, cols);
  for (Eigen::Index i = 0; i < Eigen::Index(rows); ++i)
    for (Eigen::Index c = 0; c < Eigen::Index(cols); ++c) f.features(i, c) = r.get<float>();
  return f;
}

}  // namespace binmask
