// Copyright 2026 The binmask Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "binmask/audio_io.hpp"
#include "binmask/error.hpp"
#include "binmask/tf_transform.hpp"

namespace binmask {

inline constexpr double kClipLambda = 6.623;
inline constexpr int kModulationFrames = 30;

/// Band amplitudes over the trailing M frames of one TF cell.
using ModulationVector = Eigen::ArrayXd;

/// Numerator of the cell correlation: as printed it multiplies the centred
/// clean vector by the uncentred degraded vector (algebraically identical,
/// since the centred clean vector sums to zero); `centered` centres both.
enum class CorrelationForm { as_printed, centered };

/// Clipping of one degraded amplitude against its clean counterpart.
inline double clip_band_amplitude(double y_amp, double x_amp, const ModulationVector& x_vec,
                                  const ModulationVector& y_vec, double lambda = kClipLambda) {
  const double xn = x_vec.matrix().norm();
  if (!(xn > 0.0)) throw InvalidArgument("clipping needs a nonzero clean modulation vector");
  return std::min(y_amp, lambda * (y_vec.matrix().norm() / xn) * x_amp);
}

/// Clips every element of `y` against `x` using the window norms.
inline ModulationVector clip_modulation(const ModulationVector& y, const ModulationVector& x,
                                        double lambda = kClipLambda) {
  const double xn = x.matrix().norm();
  if (!(xn > 0.0)) return ModulationVector::Zero(y.size());
  const double bound = lambda * y.matrix().norm() / xn;
  return y.min(bound * x);
}

/// Correlation of a clean and a (clipped) degraded modulation vector.
/// A zero-variance vector on either side yields 0.
inline double cell_correlation(const ModulationVector& x, const ModulationVector& z,
                               CorrelationForm form = CorrelationForm::as_printed) {
  if (x.size() != z.size()) throw DimensionError("modulation vectors differ in length");
  const ModulationVector xc = x - x.mean();
  const ModulationVector zc = z - z.mean();
  const double den = xc.matrix().norm() * zc.matrix().norm();
  if (!(den > 0.0)) return 0.0;
  const double num = form == CorrelationForm::as_printed ? (xc * z).sum() : (xc * zc).sum();
  return num / den;
}

/// I_{j,m}: nonnegative per-cell importance over (band, frame).
struct WeightGrid {
  Grid I;
};

inline WeightGrid uniform_weights(Eigen::Index bands, Eigen::Index frames) {
  return {Grid::Ones(bands, frames)};
}

/// Clean-speech cell energy as a proxy for intelligibility content.
inline WeightGrid clean_energy_weights(const Grid& clean_bands) {
  return {clean_bands.square()};
}

struct IntelligibilityConfig {
  StftConfig stft;
  int modulation_frames = kModulationFrames;
  double lambda = kClipLambda;
  double silence_range_db = 40.0;
  int third_octave_bands = 15;
  CorrelationForm form = CorrelationForm::as_printed;
};

/// Frames whose clean energy lies within `range_db` of the loudest frame.
inline std::vector<Eigen::Index> active_frames(const TFGrid& clean, double range_db) {
  Eigen::ArrayXd energy = power(clean).colwise().sum().transpose();
  const double floor = energy.maxCoeff() * std::pow(10.0, -range_db / 10.0);
  std::vector<Eigen::Index> keep;
  for (Eigen::Index m = 0; m < energy.size(); ++m)
    if (energy(m) > 0.0 && energy(m) >= floor) keep.push_back(m);
  return keep;
}

namespace detail {

struct WeightedScore {
  double weighted_sum = 0.0;
  double weight_total = 0.0;
  std::size_t cells = 0;
};

// Correlation over every (band, window) whose clean vector has variance.
// `frames` maps compacted frame positions to original frame indices, which
// is how weights are addressed.
inline WeightedScore score_cells(const Grid& clean, const Grid& degraded,
                                 const std::vector<Eigen::Index>& frames, const Grid& weights,
                                 const IntelligibilityConfig& cfg) {
  const int M = cfg.modulation_frames;
  WeightedScore s;
  ModulationVector x(M), y(M);
  for (Eigen::Index j = 0; j < clean.rows(); ++j) {
    for (std::size_t t = std::size_t(M) - 1; t < frames.size(); ++t) {
      for (int i = 0; i < M; ++i) {
        const Eigen::Index m = frames[t + 1 - std::size_t(M) + std::size_t(i)];
        x(i) = clean(j, m);
        y(i) = degraded(j, m);
      }
      const double w = weights(j, frames[t]);
      if (w == 0.0) continue;
      if (!((x - x.mean()).matrix().norm() > 0.0)) continue;
      const double d = cell_correlation(x, clip_modulation(y, x, cfg.lambda), cfg.form);
      s.weighted_sum += w * d;
      s.weight_total += w;
      ++s.cells;
    }
  }
  return s;
}

inline void check_pair(const Signal& clean, const Signal& degraded, const StftConfig& c) {
  if (clean.size() != degraded.size()) throw DimensionError("clean and degraded lengths differ");
  if (clean.rate != c.rate || degraded.rate != c.rate)
    throw InvalidArgument("signal rate does not match the metric STFT rate");
}

}  // namespace detail

/// Mean cell correlation over third-octave bands and non-silent frames.
inline double stoi(const Signal& clean, const Signal& degraded,
                   const IntelligibilityConfig& cfg = {}) {
  detail::check_pair(clean, degraded, cfg.stft);
  const TFGrid X = stft(clean, cfg.stft);
  const TFGrid Y = stft(degraded, cfg.stft);
  const auto frames = active_frames(X, cfg.silence_range_db);
  if (frames.size() < std::size_t(cfg.modulation_frames))
    throw InvalidArgument("too few non-silent frames for an intelligibility score");
  const Grid xb = third_octave_bands(X, cfg.third_octave_bands);
  const Grid yb = third_octave_bands(Y, cfg.third_octave_bands);
  const auto score =
      detail::score_cells(xb, yb, frames, Grid::Ones(xb.rows(), xb.cols()), cfg);
  if (score.cells == 0) throw InvalidArgument("no cell with clean-speech modulation");
  return score.weighted_sum / score.weight_total;
}

enum class WstoiBands {
  stft_bins,     // one band per STFT bin
  third_octave,  // reduction to the unweighted-band layout
};

/// Band amplitudes used by the weighted score for a given band layout.
inline Grid wstoi_band_amplitudes(const TFGrid& g, WstoiBands bands, int third_octave_count = 15) {
  return bands == WstoiBands::stft_bins ? magnitude(g) : third_octave_bands(g, third_octave_count);
}

/// Weighted mean cell correlation; weights are (band x frame) over the
/// original frame indexing.
inline double wstoi(const Signal& clean, const Signal& degraded, const WeightGrid& weights,
                    const IntelligibilityConfig& cfg = {},
                    WstoiBands bands = WstoiBands::stft_bins) {
  detail::check_pair(clean, degraded, cfg.stft);
  const TFGrid X = stft(clean, cfg.stft);
  const TFGrid Y = stft(degraded, cfg.stft);
  const Grid xb = wstoi_band_amplitudes(X, bands, cfg.third_octave_bands);
  const Grid yb = wstoi_band_amplitudes(Y, bands, cfg.third_octave_bands);
  if (weights.I.rows() != xb.rows() || weights.I.cols() != xb.cols())
    throw DimensionError("weight grid does not match the band x frame layout");
  if ((weights.I < 0.0).any() || !weights.I.allFinite())
    throw InvalidArgument("weights must be finite and nonnegative");
  if (!(weights.I.sum() > 0.0)) throw InvalidArgument("all-zero weight grid");
  const auto frames = active_frames(X, cfg.silence_range_db);
  if (frames.size() < std::size_t(cfg.modulation_frames))
    throw InvalidArgument("too few non-silent frames for an intelligibility score");
  const auto score = detail::score_cells(xb, yb, frames, weights.I, cfg);
  if (!(score.weight_total > 0.0)) throw InvalidArgument("weights vanish on every scored cell");
  return score.weighted_sum / score.weight_total;
}

// ---------------------------------------------------------------------------
// Frequency-weighted segmental SNR.

/// IEC 61672 A-weighting magnitude, normalised to 1 at 1 kHz.
inline double a_weighting(double f) {
  auto ra = [](double x) {
    const double f2 = x * x;
    return 12194.0 * 12194.0 * f2 * f2 /
           ((f2 + 20.6 * 20.6) * std::sqrt((f2 + 107.7 * 107.7) * (f2 + 737.9 * 737.9)) *
            (f2 + 12194.0 * 12194.0));
  };
  return ra(f) / ra(1000.0);
}

struct SegSnrConfig {
  StftConfig stft;
  double floor_db = -10.0;
  double ceiling_db = 35.0;
};

/// Per-frame A-weighted SNR values, clamped. Frames where both the clean
/// frame and the error are exactly zero are skipped.
inline std::vector<double> fw_segsnr_frames(const Signal& clean, const Signal& processed,
                                            const SegSnrConfig& cfg = {}) {
  detail::check_pair(clean, processed, cfg.stft);
  const TFGrid X = stft(clean, cfg.stft);
  const TFGrid P = stft(processed, cfg.stft);
  Eigen::ArrayXd a(X.bins());
  for (Eigen::Index k = 0; k < a.size(); ++k) a(k) = a_weighting(bin_frequency(int(k), cfg.stft));
  constexpr double tiny = std::numeric_limits<double>::min();
  std::vector<double> out;
  out.reserve(std::size_t(X.frames()));
  for (Eigen::Index m = 0; m < X.frames(); ++m) {
    const double sig = (a * X.cells.col(m).abs2()).sum();
    const double err = (a * (X.cells.col(m) - P.cells.col(m)).abs2()).sum();
    if (sig == 0.0 && err == 0.0) continue;
    const double db = err == 0.0 ? cfg.ceiling_db : 10.0 * std::log10((sig + tiny) / err);
    out.push_back(std::clamp(db, cfg.floor_db, cfg.ceiling_db));
  }
  return out;
}

inline double fw_segsnr(const Signal& clean, const Signal& processed, const SegSnrConfig& cfg = {}) {
  const auto frames = fw_segsnr_frames(clean, processed, cfg);
  if (frames.empty()) return cfg.ceiling_db;
  double sum = 0.0;
  for (double v : frames) sum += v;
  return sum / double(frames.size());
}

// ---------------------------------------------------------------------------
// Interaural level differences.

inline constexpr double kIldMagnitudeFloor = 1e-10;

struct IldMap {
  Grid db;         // 20 log10(|L| / |R|)
  BoolGrid valid;  // both magnitudes above the floor
};

inline IldMap ild_map(const TFGrid& left, const TFGrid& right) {
  if (left.bins() != right.bins() || left.frames() != right.frames())
    throw DimensionError("left and right TF grids differ in shape");
  const Grid l = magnitude(left), r = magnitude(right);
  IldMap map{Grid::Zero(l.rows(), l.cols()), (l >= kIldMagnitudeFloor) && (r >= kIldMagnitudeFloor)};
  map.db = map.valid.select(20.0 * (l / r).log10(), 0.0);
  return map;
}

inline IldMap ild_map(const BinauralSignal& b, const StftConfig& c = {}) {
  validate(b);
  return ild_map(stft(b.left, c), stft(b.right, c));
}

/// Cells where the clean binaural speech (power summed over ears) is within
/// `range_db` of its maximum.
inline BoolGrid speech_activity_mask(const BinauralSignal& clean, const StftConfig& c = {},
                                     double range_db = 40.0) {
  validate(clean);
  const Grid p = power(stft(clean.left, c)) + power(stft(clean.right, c));
  const double floor = p.maxCoeff() * std::pow(10.0, -range_db / 10.0);
  return (p > 0.0) && (p >= floor);
}

struct IldError {
  std::vector<double> per_bin;  // RMS over frames; NaN where no valid cell
  double mean = 0.0;            // unweighted mean over bins with valid cells
};

inline IldError rms_ild_error(const IldMap& reference, const IldMap& processed,
                              const BoolGrid& energy_mask) {
  if (reference.db.rows() != processed.db.rows() || reference.db.cols() != processed.db.cols() ||
      energy_mask.rows() != reference.db.rows() || energy_mask.cols() != reference.db.cols())
    throw DimensionError("ILD maps and energy mask differ in shape");
  IldError e;
  e.per_bin.assign(std::size_t(reference.db.rows()), std::numeric_limits<double>::quiet_NaN());
  double total = 0.0;
  int counted = 0;
  for (Eigen::Index k = 0; k < reference.db.rows(); ++k) {
    double sq = 0.0;
    int n = 0;
    for (Eigen::Index m = 0; m < reference.db.cols(); ++m) {
      if (!(reference.valid(k, m) && processed.valid(k, m) && energy_mask(k, m))) continue;
      const double d = reference.db(k, m) - processed.db(k, m);
      sq += d * d;
      ++n;
    }
    if (n == 0) continue;
    e.per_bin[std::size_t(k)] = std::sqrt(sq / n);
    total += e.per_bin[std::size_t(k)];
    ++counted;
  }
  if (counted == 0) throw InvalidArgument("no valid speech-active cell for the ILD error");
  e.mean = total / counted;
  return e;
}

inline IldError rms_ild_error(const BinauralSignal& reference, const BinauralSignal& processed,
                              const BoolGrid& energy_mask, const StftConfig& c = {}) {
  return rms_ild_error(ild_map(reference, c), ild_map(processed, c), energy_mask);
}

// ---------------------------------------------------------------------------
// Phase preservation.

/// True iff every nonzero cell of `enhanced` has the phase of `noisy`
/// within `tol_rad`.
inline bool phase_preserved(const TFGrid& noisy, const TFGrid& enhanced, double tol_rad = 1e-9) {
  if (noisy.bins() != enhanced.bins() || noisy.frames() != enhanced.frames())
    throw DimensionError("TF grids differ in shape");
  for (Eigen::Index m = 0; m < noisy.frames(); ++m)
    for (Eigen::Index k = 0; k < noisy.bins(); ++k) {
      const auto e = enhanced.cells(k, m);
      if (e == std::complex<double>(0.0, 0.0)) continue;
      const auto n = noisy.cells(k, m);
      if (n == std::complex<double>(0.0, 0.0)) return false;
      if (std::abs(std::arg(e * std::conj(n))) > tol_rad) return false;
    }
  return true;
}

/// Signal-domain check: both channels are re-analysed with the same STFT.
/// Only exact for processing that commutes with the analysis (e.g. a global
/// positive gain).
inline bool phase_preserved(const BinauralSignal& noisy, const BinauralSignal& enhanced,
                            const StftConfig& c = {}, double tol_rad = 1e-9) {
  validate(noisy);
  validate(enhanced);
  return phase_preserved(stft(noisy.left, c), stft(enhanced.left, c), tol_rad) &&
         phase_preserved(stft(noisy.right, c), stft(enhanced.right, c), tol_rad);
}

// ---------------------------------------------------------------------------

struct MetricReport {
  double stoi_left = 0.0;
  double stoi_right = 0.0;
  double stoi_better_ear = 0.0;
  double wstoi_left = 0.0;
  double wstoi_right = 0.0;
  double wstoi_better_ear = 0.0;
  double fw_segsnr_left = 0.0;
  double fw_segsnr_right = 0.0;
  double rms_ild_error = 0.0;
  std::vector<double> ild_error_per_bin;
  bool phase_preserved = true;
};

enum class WeightProvider { uniform, clean_energy };

struct MetricConfig {
  IntelligibilityConfig intelligibility;
  SegSnrConfig segsnr;
  WeightProvider weights = WeightProvider::uniform;
  double ild_activity_range_db = 40.0;
};

inline WeightGrid make_weights(const Signal& clean, WeightProvider provider, const StftConfig& c) {
  const TFGrid X = stft(clean, c);
  if (provider == WeightProvider::uniform) return uniform_weights(X.bins(), X.frames());
  return clean_energy_weights(magnitude(X));
}

/// Intrusive report for `processed` against the clean binaural speech. The
/// ILD error is measured relative to `ild_reference` (normally the
/// unprocessed noisy input) on speech-active cells.
inline MetricReport measure(const BinauralSignal& clean, const BinauralSignal& ild_reference,
                            const BinauralSignal& processed, const MetricConfig& cfg = {}) {
  validate(clean);
  validate(ild_reference);
  validate(processed);
  const StftConfig& c = cfg.intelligibility.stft;
  MetricReport r;
  r.stoi_left = stoi(clean.left, processed.left, cfg.intelligibility);
  r.stoi_right = stoi(clean.right, processed.right, cfg.intelligibility);
  r.stoi_better_ear = std::max(r.stoi_left, r.stoi_right);
  r.wstoi_left = wstoi(clean.left, processed.left, make_weights(clean.left, cfg.weights, c),
                       cfg.intelligibility);
  r.wstoi_right = wstoi(clean.right, processed.right, make_weights(clean.right, cfg.weights, c),
                        cfg.intelligibility);
  r.wstoi_better_ear = std::max(r.wstoi_left, r.wstoi_right);
  r.fw_segsnr_left = fw_segsnr(clean.left, processed.left, cfg.segsnr);
  r.fw_segsnr_right = fw_segsnr(clean.right, processed.right, cfg.segsnr);
  const auto ild = rms_ild_error(ild_reference, processed,
                                 speech_activity_mask(clean, c, cfg.ild_activity_range_db), c);
  r.rms_ild_error = ild.mean;
  r.ild_error_per_bin = ild.per_bin;
  return r;
}

}  // namespace binmask
