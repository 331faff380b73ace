// Copyright 2026 The binmask Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <complex>
#include <limits>
#include <string>
#include <vector>

#include "binmask/audio_io.hpp"
#include "binmask/error.hpp"
#include "binmask/features.hpp"
#include "binmask/tf_transform.hpp"

namespace binmask {

/// Speech presence probability per (bin, frame).
using SppGrid = Grid;

/// Per-cell winner of the better-ear fusion: 0 left, 1 right.
using ChannelGrid = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

struct FusedMask {
  Grid value;
  ChannelGrid winner;
};

/// Elementwise max of the two ear masks. Ties go to the left ear.
inline FusedMask better_ear_mask(const Grid& left, const Grid& right) {
  if (left.rows() != right.rows() || left.cols() != right.cols())
    throw DimensionError("left and right masks differ in shape");
  FusedMask f{left.max(right), ChannelGrid(left.rows(), left.cols())};
  f.winner = (right > left).cast<std::uint8_t>();
  return f;
}

enum class ReferenceChannel { better_ear, average, left };
enum class SppMode { direct, absence_prior };

struct OmlsaConfig {
  double g_min = 0.1;  // -20 dB
  double alpha_dd = 0.92;
  double xi_min_db = -25.0;
  double p_min = 0.005;
  double p_max = 0.998;
  ReferenceChannel reference = ReferenceChannel::better_ear;
  SppMode spp_mode = SppMode::direct;
  bool bypass = false;  // unit gain everywhere
  NoiseTrackerConfig tracker;
};

inline void validate(const OmlsaConfig& c) {
  detail::require(c.g_min > 0.0 && c.g_min < 1.0, "G_min must lie in (0, 1)");
  detail::require(c.p_min >= 0.0 && c.p_min < c.p_max && c.p_max <= 1.0,
                  "SPP bounds must satisfy 0 <= p_min < p_max <= 1");
  detail::require(c.alpha_dd >= 0.0 && c.alpha_dd < 1.0, "alpha_dd must lie in [0, 1)");
  detail::require(std::isfinite(c.xi_min_db), "xi_min must be finite");
}

inline SppGrid mask_to_spp(const Grid& mask, const OmlsaConfig& cfg = {}) {
  if (!mask.isFinite().all()) throw InvalidArgument("mask contains non-finite values");
  return mask.max(cfg.p_min).min(cfg.p_max);
}

/// G_H1^p * G_min^(1-p), before clamping.
inline double omlsa_gain_cell(double g_h1, double p, double g_min) {
  return std::pow(g_h1, p) * std::pow(g_min, 1.0 - p);
}

/// Speech presence from the a priori absence q, a priori SNR xi and v.
inline double presence_from_absence(double q, double xi, double v) {
  if (q <= 0.0) return 1.0;
  if (q >= 1.0) return 0.0;
  return 1.0 / (1.0 + q / (1.0 - q) * (1.0 + xi) * std::exp(-v));
}

namespace detail {

/// Spectral statistics of the channel(s) feeding the common gain.
struct GainState {
  NoiseTracker tracker;
  Eigen::ArrayXd prev_clean;  // |G Y|^2 of the last frame
};

inline GainState start_state(const TFGrid& Y, const NoiseTrackerConfig& c) {
  return {init_noise_tracker(Y, c), Eigen::ArrayXd::Zero(Y.bins())};
}

}  // namespace detail

/// One gain grid from the statistics of `channels` (one or two grids of the
/// same shape). `pick(k, m)` selects which channel's statistics feed a cell;
/// -1 averages them.
template <class Pick>
Grid omlsa_gain(const std::vector<const TFGrid*>& channels, const SppGrid& spp, Pick pick,
                const OmlsaConfig& cfg) {
  validate(cfg);
  const TFGrid& Y0 = *channels.front();
  for (const TFGrid* Y : channels)
    if (Y->bins() != Y0.bins() || Y->frames() != Y0.frames())
      throw DimensionError("channel TF grids differ in shape");
  if (spp.rows() != Y0.bins() || spp.cols() != Y0.frames())
    throw DimensionError("SPP grid does not match the TF grid");
  if (cfg.bypass) return Grid::Ones(Y0.bins(), Y0.frames());

  const double xi_min = std::pow(10.0, cfg.xi_min_db / 10.0);
  constexpr double tiny = std::numeric_limits<double>::min();
  std::vector<detail::GainState> st;
  std::vector<Grid> pw;
  for (const TFGrid* Y : channels) {
    st.push_back(detail::start_state(*Y, cfg.tracker));
    pw.push_back(power(*Y));
  }
  Grid G(Y0.bins(), Y0.frames());
  for (Eigen::Index m = 0; m < Y0.frames(); ++m) {
    for (std::size_t c = 0; c < st.size(); ++c) update_noise(st[c].tracker, pw[c].col(m));
    for (Eigen::Index k = 0; k < Y0.bins(); ++k) {
      const int who = pick(k, m);
      double sigma = 0.0, py = 0.0, prev = 0.0;
      if (who < 0) {
        for (std::size_t c = 0; c < st.size(); ++c) {
          sigma += st[c].tracker.noise_psd(k);
          py += pw[c](k, m);
          prev += st[c].prev_clean(k);
        }
      } else {
        const auto c = std::size_t(who);
        sigma = st[c].tracker.noise_psd(k);
        py = pw[c](k, m);
        prev = st[c].prev_clean(k);
      }
      sigma = std::max(sigma, tiny);
      const double gamma = py / sigma;
      const double ml = std::max(gamma - 1.0, 0.0);
      double xi = m == 0 ? ml : cfg.alpha_dd * prev / sigma + (1.0 - cfg.alpha_dd) * ml;
      xi = std::max(xi, xi_min);
      const double v = xi * gamma / (1.0 + xi);
      const double g_h1 = logmmse_gain_cell(xi, gamma);
      double p = spp(k, m);
      if (cfg.spp_mode == SppMode::absence_prior)
        p = std::clamp(presence_from_absence(1.0 - p, xi, v), cfg.p_min, cfg.p_max);
      const double g = g_h1 > 0.0 ? std::clamp(omlsa_gain_cell(g_h1, p, cfg.g_min), cfg.g_min, 1.0)
                                  : cfg.g_min;
      G(k, m) = g;
      for (std::size_t c = 0; c < st.size(); ++c) st[c].prev_clean(k) = g * g * pw[c](k, m);
    }
  }
  return G;
}

/// Single-channel gain.
inline Grid omlsa_gain(const TFGrid& noisy, const SppGrid& spp, const OmlsaConfig& cfg = {}) {
  return omlsa_gain({&noisy}, spp, [](Eigen::Index, Eigen::Index) { return 0; }, cfg);
}

struct EnhancementResult {
  BinauralSignal signal;
  TFGrid left;   // enhanced spectra
  TFGrid right;
  Grid gain;     // common real gain
  SppGrid spp;
};

inline TFGrid apply_gain(const TFGrid& Y, const Grid& G) {
  if (G.rows() != Y.bins() || G.cols() != Y.frames())
    throw DimensionError("gain grid does not match the TF grid");
  TFGrid out = Y;
  out.cells *= G.cast<std::complex<double>>();
  return out;
}

/// Fuses the ear masks, derives one gain grid and applies it to both ears.
inline EnhancementResult enhance_binaural(const BinauralSignal& noisy, const Grid& mask_left,
                                          const Grid& mask_right, const OmlsaConfig& cfg = {},
                                          const StftConfig& stft_cfg = {}) {
  validate(noisy);
  validate(cfg);
  const TFGrid L = stft(noisy.left, stft_cfg), R = stft(noisy.right, stft_cfg);
  if (mask_left.rows() != L.bins() || mask_left.cols() != L.frames())
    throw DimensionError("mask shape " + std::to_string(mask_left.rows()) + "x" +
                         std::to_string(mask_left.cols()) + " does not match the STFT " +
                         std::to_string(L.bins()) + "x" + std::to_string(L.frames()));
  const FusedMask fused = better_ear_mask(mask_left, mask_right);
  EnhancementResult r;
  r.spp = mask_to_spp(fused.value, cfg);
  switch (cfg.reference) {
    case ReferenceChannel::better_ear:
      r.gain = omlsa_gain({&L, &R}, r.spp,
                          [&](Eigen::Index k, Eigen::Index m) { return int(fused.winner(k, m)); }, cfg);
      break;
    case ReferenceChannel::average:
      r.gain = omlsa_gain({&L, &R}, r.spp, [](Eigen::Index, Eigen::Index) { return -1; }, cfg);
      break;
    case ReferenceChannel::left:
      r.gain = omlsa_gain(L, r.spp, cfg);
      break;
  }
  r.left = apply_gain(L, r.gain);
  r.right = apply_gain(R, r.gain);
  r.signal = {istft(r.left), istft(r.right)};
  return r;
}

}  // namespace binmask
