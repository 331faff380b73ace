// Copyright 2026 The binmask Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <fftw3.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

#include "binmask/audio_io.hpp"
#include "binmask/error.hpp"

namespace binmask {

using Grid = Eigen::ArrayXXd;          // (bin or band) x frame
using ComplexGrid = Eigen::ArrayXXcd;  // bin x frame
using BoolGrid = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct StftConfig {
  int rate = 10000;
  double window_ms = 25.6;
  double overlap = 0.5;
  int fft_len = 0;  // 0: same as the window length

  int window_length() const { return int(std::lround(window_ms * 1e-3 * rate)); }
  int hop() const { return int(std::lround(window_length() * (1.0 - overlap))); }
  int fft_size() const { return fft_len > 0 ? fft_len : window_length(); }
  int bins() const { return fft_size() / 2 + 1; }

  bool operator==(const StftConfig&) const = default;
};

inline void validate(const StftConfig& c) {
  detail::require(c.rate > 0, "STFT rate must be positive");
  detail::require(c.window_length() >= 2 && c.window_length() % 2 == 0,
                  "STFT window length must be even");
  detail::require(c.overlap > 0.0 && c.overlap < 1.0, "STFT overlap must be in (0, 1)");
  detail::require(c.hop() >= 1, "STFT hop must be at least one sample");
  detail::require(c.fft_size() >= c.window_length(), "FFT length shorter than the window");
}

/// Periodic Hann window.
inline std::vector<double> hann_window(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double s = std::sin(std::numbers::pi * i / n);
    w[std::size_t(i)] = s * s;
  }
  return w;
}

/// True when shifted copies of the analysis window sum to a constant.
inline bool satisfies_cola(const StftConfig& c, double tol = 1e-9) {
  auto w = hann_window(c.window_length());
  const int hop = c.hop();
  std::vector<double> acc(std::size_t(hop), 0.0);
  for (std::size_t i = 0; i < w.size(); ++i) acc[i % std::size_t(hop)] += w[i];
  auto [mn, mx] = std::minmax_element(acc.begin(), acc.end());
  return *mx - *mn <= tol * *mx;
}

namespace detail {

// FFTW planning is not thread-safe; execution on distinct plans is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

/// Real-to-complex transform pair of a fixed length.
class RealFft {
 public:
  explicit RealFft(int n) : n_(n) {
    real_ = fftw_alloc_real(std::size_t(n));
    spec_ = fftw_alloc_complex(std::size_t(n / 2 + 1));
    std::lock_guard lock(fftw_planner_mutex());
    fwd_ = fftw_plan_dft_r2c_1d(n, real_, spec_, FFTW_ESTIMATE);
    inv_ = fftw_plan_dft_c2r_1d(n, spec_, real_, FFTW_ESTIMATE);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;
  ~RealFft() {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(inv_);
    fftw_free(real_);
    fftw_free(spec_);
  }

  int size() const { return n_; }
  double* real() { return real_; }
  std::complex<double>* spectrum() { return reinterpret_cast<std::complex<double>*>(spec_); }

  void forward() { fftw_execute(fwd_); }
  /// Unnormalized inverse (scaled by n).
  void inverse() { fftw_execute(inv_); }

 private:
  int n_;
  double* real_;
  fftw_complex* spec_;
  fftw_plan fwd_;
  fftw_plan inv_;
};

}  // namespace detail

/// One-sided short-time spectrum of one channel. Rows are bins 0..K/2,
/// columns are frames; frame m covers samples [m*hop, m*hop + window).
struct TFGrid {
  ComplexGrid cells;
  StftConfig config;
  std::size_t signal_length = 0;

  Eigen::Index bins() const { return cells.rows(); }
  Eigen::Index frames() const { return cells.cols(); }
};

inline std::size_t frame_count(std::size_t length, const StftConfig& c) {
  const std::size_t win = std::size_t(c.window_length());
  const std::size_t hop = std::size_t(c.hop());
  if (length < win) return 0;
  return (length - win + hop - 1) / hop + 1;  // last partial frame zero-padded
}

inline TFGrid stft(const Signal& x, const StftConfig& c = {}) {
  validate(c);
  validate(x);
  if (x.rate != c.rate) throw InvalidArgument("signal rate does not match the STFT rate");
  const int win = c.window_length();
  if (x.size() < std::size_t(win)) throw InvalidArgument("signal shorter than one STFT window");

  const std::size_t frames = frame_count(x.size(), c);
  const auto w = hann_window(win);
  detail::RealFft fft(c.fft_size());
  TFGrid g{ComplexGrid(c.bins(), Eigen::Index(frames)), c, x.size()};
  for (std::size_t m = 0; m < frames; ++m) {
    const std::size_t start = m * std::size_t(c.hop());
    double* buf = fft.real();
    std::fill(buf, buf + fft.size(), 0.0);
    for (int i = 0; i < win; ++i) {
      std::size_t idx = start + std::size_t(i);
      buf[i] = idx < x.size() ? x.samples[idx] * w[std::size_t(i)] : 0.0;
    }
    fft.forward();
    const std::complex<double>* s = fft.spectrum();
    for (int k = 0; k < c.bins(); ++k) g.cells(k, Eigen::Index(m)) = s[k];
  }
  return g;
}

/// Weighted overlap-add synthesis (analysis window reused for synthesis,
/// normalised by the accumulated squared window).
inline Signal istft(const TFGrid& g) {
  const StftConfig& c = g.config;
  validate(c);
  if (!satisfies_cola(c)) throw InvalidArgument("STFT configuration does not satisfy COLA");
  if (g.bins() != c.bins()) throw DimensionError("TF grid bin count does not match its config");
  for (Eigen::Index m = 0; m < g.frames(); ++m)
    for (Eigen::Index k = 0; k < g.bins(); ++k)
      if (!std::isfinite(g.cells(k, m).real()) || !std::isfinite(g.cells(k, m).imag()))
        throw InvalidArgument("TF grid contains non-finite cells");

  const int win = c.window_length();
  const std::size_t hop = std::size_t(c.hop());
  const std::size_t frames = std::size_t(g.frames());
  const std::size_t span = frames == 0 ? 0 : (frames - 1) * hop + std::size_t(win);
  std::vector<double> acc(std::max(span, g.signal_length), 0.0);
  std::vector<double> norm(acc.size(), 0.0);
  const auto w = hann_window(win);
  detail::RealFft fft(c.fft_size());
  const double scale = 1.0 / c.fft_size();
  for (std::size_t m = 0; m < frames; ++m) {
    std::complex<double>* s = fft.spectrum();
    for (int k = 0; k < c.bins(); ++k) s[k] = g.cells(k, Eigen::Index(m));
    // The c2r transform assumes a real signal: DC and Nyquist must be real.
    s[0] = s[0].real();
    if (c.fft_size() % 2 == 0) s[c.bins() - 1] = s[c.bins() - 1].real();
    fft.inverse();
    const double* buf = fft.real();
    const std::size_t start = m * hop;
    for (int i = 0; i < win; ++i) {
      acc[start + std::size_t(i)] += buf[i] * scale * w[std::size_t(i)];
      norm[start + std::size_t(i)] += w[std::size_t(i)] * w[std::size_t(i)];
    }
  }
  Signal out{std::vector<double>(g.signal_length, 0.0), c.rate};
  for (std::size_t i = 0; i < g.signal_length; ++i)
    out.samples[i] = norm[i] > 1e-6 ? acc[i] / norm[i] : acc[i];
  return out;
}

inline Grid magnitude(const TFGrid& g) { return g.cells.abs(); }
inline Grid power(const TFGrid& g) { return g.cells.abs2(); }

/// Centre frequency (Hz) of STFT bin k.
inline double bin_frequency(int k, const StftConfig& c) {
  return double(k) * c.rate / c.fft_size();
}

// ---------------------------------------------------------------------------
// Band aggregation.

/// Nonnegative band x bin weights; rows ordered by centre frequency.
struct BandMatrix {
  Eigen::MatrixXd weights;
  std::vector<double> centers;

  Eigen::Index bands() const { return weights.rows(); }
  Eigen::Index bins() const { return weights.cols(); }
};

/// Third-octave band layout on the STFT bins: band j covers bins
/// [first[j], last[j]) whose centre frequencies fall inside
/// [150 * 2^((2j-1)/6), 150 * 2^((2j+1)/6)) Hz; centre 150 * 2^(j/3) Hz.
/// The top band is truncated at Nyquist.
struct ThirdOctaveBands {
  std::vector<int> first;
  std::vector<int> last;
  std::vector<double> centers;

  std::size_t size() const { return first.size(); }
};

inline ThirdOctaveBands third_octave_layout(const StftConfig& c, int bands = 15,
                                            double lowest_center = 150.0) {
  validate(c);
  detail::require(bands >= 1, "need at least one third-octave band");
  const int nbins = c.bins();
  const double nyquist = c.rate / 2.0;
  ThirdOctaveBands t;
  for (int j = 0; j < bands; ++j) {
    const double lo = lowest_center * std::pow(2.0, (2.0 * j - 1.0) / 6.0);
    const double hi = lowest_center * std::pow(2.0, (2.0 * j + 1.0) / 6.0);
    int a = nbins, b = nbins;
    for (int k = 0; k < nbins; ++k) {
      const double f = bin_frequency(k, c);
      const bool inside = f >= lo && (f < hi || (hi > nyquist && f <= nyquist));
      if (inside && a == nbins) a = k;
      if (inside) b = k + 1;
    }
    t.first.push_back(a);
    t.last.push_back(b);
    t.centers.push_back(lowest_center * std::pow(2.0, j / 3.0));
  }
  int nonempty = 0;
  for (std::size_t j = 0; j < t.size(); ++j) nonempty += t.last[j] > t.first[j];
  if (nonempty < bands) throw InvalidArgument("fewer non-empty third-octave bands than requested");
  return t;
}

/// Band amplitudes sqrt(sum |X(k,m)|^2) over each third-octave band.
inline Grid third_octave_bands(const TFGrid& g, int bands = 15) {
  auto layout = third_octave_layout(g.config, bands);
  Grid p = power(g);
  Grid out(bands, g.frames());
  for (int j = 0; j < bands; ++j) {
    const int a = layout.first[std::size_t(j)], b = layout.last[std::size_t(j)];
    out.row(j) = p.middleRows(a, b - a).colwise().sum().sqrt();
  }
  return out;
}

inline double hz_to_erb_rate(double f) { return 21.4 * std::log10(1.0 + 0.00437 * f); }
inline double erb_rate_to_hz(double e) { return (std::pow(10.0, e / 21.4) - 1.0) / 0.00437; }

/// Triangular filters with apexes equally spaced on the ERB-rate scale
/// between 100 Hz and 0.95 * Nyquist. Each triangle reaches zero at its
/// neighbours' centres; the outermost feet sit one ERB step beyond the end
/// centres. A triangle that falls between bins gets unit weight on the bin
/// nearest its apex.
inline BandMatrix erb_bands(int count, const StftConfig& c, double f_lo = 100.0,
                            double f_hi_fraction = 0.95) {
  validate(c);
  detail::require(count >= 2, "ERB filterbank needs at least two bands");
  const double nyquist = c.rate / 2.0;
  const double e_lo = hz_to_erb_rate(f_lo);
  const double e_hi = hz_to_erb_rate(f_hi_fraction * nyquist);
  const double step = (e_hi - e_lo) / (count - 1);

  std::vector<double> apex(std::size_t(count) + 2);
  for (int i = -1; i <= count; ++i)
    apex[std::size_t(i + 1)] = std::clamp(erb_rate_to_hz(e_lo + step * i), 0.0, nyquist);

  BandMatrix bm{Eigen::MatrixXd::Zero(count, c.bins()), {}};
  for (int i = 0; i < count; ++i) {
    const double lo = apex[std::size_t(i)], mid = apex[std::size_t(i) + 1],
                 hi = apex[std::size_t(i) + 2];
    bm.centers.push_back(mid);
    for (int k = 0; k < c.bins(); ++k) {
      const double f = bin_frequency(k, c);
      double w = 0.0;
      if (f > lo && f <= mid)
        w = (f - lo) / (mid - lo);
      else if (f > mid && f < hi)
        w = (hi - f) / (hi - mid);
      bm.weights(i, k) = w;
    }
    if (!(bm.weights.row(i).sum() > 0.0)) {
      int k = std::clamp(int(std::lround(mid * c.fft_size() / c.rate)), 0, c.bins() - 1);
      bm.weights(i, k) = 1.0;
    }
  }
  return bm;
}

/// Weighted mean per band: out(i,m) = sum_k w_i(k) v(k,m) / sum_k w_i(k).
inline Grid band_average(const Grid& values, const BandMatrix& bands) {
  if (values.rows() != bands.bins())
    throw DimensionError("band_average: bin count of values and bands differ");
  Eigen::VectorXd norm = bands.weights.rowwise().sum();
  Eigen::MatrixXd out = bands.weights * values.matrix();
  out.array().colwise() /= norm.array();
  return out.array();
}

}  // namespace binmask
