// Copyright 2026 The binmask Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <utility>
#include <vector>

#include "binmask/audio_io.hpp"
#include "binmask/binary_io.hpp"
#include "binmask/error.hpp"
#include "binmask/metrics.hpp"
#include "binmask/tf_transform.hpp"

namespace binmask {

using MaskGrid = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;
using MaskRow = std::vector<std::uint8_t>;

/// Binary gains over (bin, frame).
struct BinaryMask {
  MaskGrid B;
  Eigen::Index bins() const { return B.rows(); }
  Eigen::Index frames() const { return B.cols(); }
};

/// Per-band optimization data on a compacted frame axis. `noisy` holds one
/// or more noise realizations of the same clean speech; with several, the
/// objective averages the cell correlation over them.
struct MaskObjectiveContext {
  Grid clean;                     // X_j(m), bins x N
  std::vector<Grid> noisy;        // Y_j(m) per realization
  Grid weights;                   // I_{j,m}, addressed by the window's last frame
  std::vector<Eigen::Index> frames;  // original frame index of each column
  int M = kModulationFrames;
  double lambda = kClipLambda;

  Eigen::Index bands() const { return clean.rows(); }
  Eigen::Index length() const { return clean.cols(); }
};

inline void validate(const MaskObjectiveContext& c) {
  detail::require(c.M >= 2 && c.M <= 64, "modulation window must be in [2, 64]");
  detail::require(!c.noisy.empty(), "context needs at least one noisy realization");
  for (const Grid& y : c.noisy)
    if (y.rows() != c.clean.rows() || y.cols() != c.clean.cols())
      throw DimensionError("clean and noisy bands differ in shape");
  if (c.weights.rows() != c.clean.rows() || c.weights.cols() != c.clean.cols())
    throw DimensionError("weights do not match the band x frame layout");
  if (c.frames.size() != std::size_t(c.clean.cols()))
    throw DimensionError("frame map length does not match the context");
  detail::require((c.weights >= 0.0).all() && c.weights.allFinite(),
                  "weights must be finite and nonnegative");
}

/// Context over all columns of raw band grids (single realization).
inline MaskObjectiveContext make_context(Grid clean, Grid noisy, Grid weights,
                                         int M = kModulationFrames, double lambda = kClipLambda) {
  MaskObjectiveContext c{std::move(clean), {std::move(noisy)}, std::move(weights), {}, M, lambda};
  c.frames.resize(std::size_t(c.clean.cols()));
  for (std::size_t i = 0; i < c.frames.size(); ++i) c.frames[i] = Eigen::Index(i);
  validate(c);
  return c;
}

namespace detail {

// One band of a context with per-window clean statistics precomputed.
class BandProblem {
 public:
  BandProblem(const MaskObjectiveContext& c, Eigen::Index j)
      : M_(c.M), N_(int(c.length())), lambda_(c.lambda), x_(c.clean.row(j).transpose()) {
    for (const Grid& y : c.noisy) y_.push_back(y.row(j).transpose());
    const int cells = std::max(0, N_ - M_ + 1);
    w_.assign(std::size_t(cells), 0.0);
    xc_.resize(M_, cells);
    xnorm_.assign(std::size_t(cells), 0.0);
    for (int s = 0; s < cells; ++s) {
      const Eigen::ArrayXd win = x_.segment(s, M_);
      const Eigen::ArrayXd centred = win - win.mean();
      const double spread = centred.matrix().norm();
      xc_.col(s) = centred;
      xnorm_[std::size_t(s)] = win.matrix().norm();
      // Cells without clean modulation carry no weight.
      if (spread > 0.0) {
        w_[std::size_t(s)] = c.weights(j, s + M_ - 1);
        xc_.col(s) /= spread;
      }
    }
  }

  int M() const { return M_; }
  int N() const { return N_; }

  // I * E[d] for the cell ending at frame s + M - 1; bit i of `bits` is the
  // mask for frame s + i.
  double cell(int s, std::uint64_t bits) const {
    const double w = w_[std::size_t(s)];
    if (w == 0.0) return 0.0;
    double acc = 0.0;
    double z[64];
    for (const Eigen::ArrayXd& y : y_) {
      double zz = 0.0;
      for (int i = 0; i < M_; ++i) {
        z[i] = (bits >> i) & 1u ? y(s + i) : 0.0;
        zz += z[i] * z[i];
      }
      if (zz == 0.0) continue;
      const double bound = lambda_ * std::sqrt(zz) / xnorm_[std::size_t(s)];
      double mean = 0.0;
      for (int i = 0; i < M_; ++i) {
        z[i] = std::min(z[i], bound * x_(s + i));
        mean += z[i];
      }
      mean /= M_;
      double num = 0.0, var = 0.0;
      for (int i = 0; i < M_; ++i) {
        num += xc_(i, s) * z[i];
        var += (z[i] - mean) * (z[i] - mean);
      }
      if (var > 0.0) acc += num / std::sqrt(var);
    }
    return w * acc / double(y_.size());
  }

  // Correlation of the first `len` frames under `bits`, used to rank
  // prefixes shorter than one window.
  double prefix_score(int len, std::uint64_t bits) const {
    if (len < 2) return 0.0;
    ModulationVector xs = x_.head(len);
    double acc = 0.0;
    for (const Eigen::ArrayXd& y : y_) {
      ModulationVector z(len);
      for (int i = 0; i < len; ++i) z(i) = (bits >> i) & 1u ? y(i) : 0.0;
      acc += cell_correlation(xs, clip_modulation(z, xs, lambda_));
    }
    return acc / double(y_.size());
  }

 private:
  int M_, N_;
  double lambda_;
  Eigen::ArrayXd x_;
  std::vector<Eigen::ArrayXd> y_;
  std::vector<double> w_;
  Eigen::ArrayXXd xc_;  // centred, unit-norm clean windows
  std::vector<double> xnorm_;
};

inline bool better(double a, int ones_a, double b, int ones_b) {
  const double tol = 1e-12 * std::max(1.0, std::max(std::abs(a), std::abs(b)));
  if (a > b + tol) return true;
  if (a < b - tol) return false;
  return ones_a > ones_b;
}

}  // namespace detail

/// Sum over complete windows of I * E[d(x, clipped masked noisy)] for one
/// band. Cells with constant clean modulation are excluded.
inline double masked_objective(const MaskRow& B, const MaskObjectiveContext& ctx, Eigen::Index j) {
  validate(ctx);
  if (B.size() != std::size_t(ctx.length())) throw DimensionError("mask row length mismatch");
  if (ctx.length() < ctx.M) throw InvalidArgument("band shorter than one modulation window");
  detail::require(j >= 0 && j < ctx.bands(), "band index out of range");
  detail::BandProblem p(ctx, j);
  double total = 0.0;
  for (int s = 0; s + p.M() <= p.N(); ++s) {
    std::uint64_t bits = 0;
    for (int i = 0; i < p.M(); ++i) bits |= std::uint64_t(B[std::size_t(s + i)] != 0) << i;
    total += p.cell(s, bits);
  }
  return total;
}

struct BandSolution {
  MaskRow B;
  double objective = 0.0;
};

inline constexpr int kMaxExhaustiveFrames = 16;

/// Enumerates all 2^N rows; ties go to the row with more ones.
inline BandSolution optimize_band_exhaustive(const MaskObjectiveContext& ctx, Eigen::Index j) {
  validate(ctx);
  const int N = int(ctx.length());
  if (N > kMaxExhaustiveFrames)
    throw InvalidArgument("exhaustive search limited to " + std::to_string(kMaxExhaustiveFrames) +
                          " frames");
  if (N < ctx.M) throw InvalidArgument("band shorter than one modulation window");
  detail::require(j >= 0 && j < ctx.bands(), "band index out of range");
  detail::BandProblem p(ctx, j);
  const std::uint64_t window = ctx.M == 64 ? ~0ull : (1ull << ctx.M) - 1;
  std::uint64_t best_bits = 0;
  double best = -std::numeric_limits<double>::infinity();
  int best_ones = -1;
  for (std::uint64_t bits = 0; bits < (1ull << N); ++bits) {
    double total = 0.0;
    for (int s = 0; s + p.M() <= N; ++s) total += p.cell(s, (bits >> s) & window);
    const int ones = std::popcount(bits);
    if (detail::better(total, ones, best, best_ones)) {
      best = total;
      best_ones = ones;
      best_bits = bits;
    }
  }
  BandSolution sol{MaskRow(std::size_t(N)), best};
  for (int i = 0; i < N; ++i) sol.B[std::size_t(i)] = std::uint8_t((best_bits >> i) & 1u);
  return sol;
}

/// Partial path in the beam: trailing bits (bit 0 = oldest kept frame),
/// accumulated objective, ranking key and back-pointer.
struct BeamState {
  std::uint64_t bits = 0;
  double score = 0.0;
  double rank = 0.0;
  int ones = 0;
  int node = -1;
};

/// Keeps, for each distinct trailing-bit pattern, the best-ranked state.
inline void merge_duplicate_states(std::vector<BeamState>& states) {
  std::sort(states.begin(), states.end(), [](const BeamState& a, const BeamState& b) {
    if (a.bits != b.bits) return a.bits < b.bits;
    return detail::better(a.rank, a.ones, b.rank, b.ones);
  });
  states.erase(std::unique(states.begin(), states.end(),
                           [](const BeamState& a, const BeamState& b) { return a.bits == b.bits; }),
               states.end());
}

struct BeamStats {
  std::size_t merged = 0;
  std::size_t pruned = 0;
};

/// Frame-by-frame beam dynamic program. The state after frame m is the last
/// M-1 bits, which determine every later cell touching m, so with
/// W >= 2^(M-1) the search is exact.
inline BandSolution optimize_band_beam(const MaskObjectiveContext& ctx, Eigen::Index j,
                                       int beam_width = 64, BeamStats* stats = nullptr) {
  validate(ctx);
  if (beam_width < 1) throw InvalidArgument("beam width must be at least 1");
  const int N = int(ctx.length());
  if (N < ctx.M) throw InvalidArgument("band shorter than one modulation window");
  detail::require(j >= 0 && j < ctx.bands(), "band index out of range");
  detail::BandProblem p(ctx, j);
  const int M = ctx.M;
  const std::uint64_t keep_mask = (M - 1) == 64 ? ~0ull : (1ull << (M - 1)) - 1;

  struct Node {
    int parent;
    std::uint8_t bit;
  };
  std::vector<Node> nodes;
  nodes.reserve(std::size_t(N) * std::size_t(beam_width) * 2);
  std::vector<BeamState> beam{BeamState{}};
  std::vector<BeamState> next;

  for (int m = 0; m < N; ++m) {
    next.clear();
    for (const BeamState& st : beam) {
      for (std::uint8_t b : {std::uint8_t(1), std::uint8_t(0)}) {
        BeamState c = st;
        c.ones += b;
        nodes.push_back({st.node, b});
        c.node = int(nodes.size()) - 1;
        if (m < M - 1) {
          // Warm-up: the whole prefix is the state.
          c.bits = st.bits | (std::uint64_t(b) << m);
          c.rank = p.prefix_score(m + 1, c.bits);
        } else {
          const std::uint64_t window = st.bits | (std::uint64_t(b) << (M - 1));
          c.score = st.score + p.cell(m - M + 1, window);
          c.rank = c.score;
          c.bits = (window >> 1) & keep_mask;
        }
        next.push_back(c);
      }
    }
    const std::size_t before = next.size();
    merge_duplicate_states(next);
    if (stats) stats->merged += before - next.size();
    if (next.size() > std::size_t(beam_width)) {
      std::nth_element(next.begin(), next.begin() + beam_width - 1, next.end(),
                       [](const BeamState& a, const BeamState& b) {
                         return detail::better(a.rank, a.ones, b.rank, b.ones);
                       });
      if (stats) stats->pruned += next.size() - std::size_t(beam_width);
      next.resize(std::size_t(beam_width));
    }
    beam.swap(next);
  }

  const BeamState* best = &beam.front();
  for (const BeamState& st : beam)
    if (detail::better(st.score, st.ones, best->score, best->ones)) best = &st;
  BandSolution sol{MaskRow(std::size_t(N)), best->score};
  int node = best->node;
  for (int m = N - 1; m >= 0; --m) {
    sol.B[std::size_t(m)] = nodes[std::size_t(node)].bit;
    node = nodes[std::size_t(node)].parent;
  }
  return sol;
}

// ---------------------------------------------------------------------------
// Whole-utterance target masks.

struct TargetMaskConfig {
  StftConfig stft;
  int modulation_frames = kModulationFrames;
  double lambda = kClipLambda;
  int beam_width = 64;
  double silence_range_db = 40.0;
  WeightProvider weights = WeightProvider::uniform;
  int realizations = 1;  // 1: the given noise only; >1: Monte-Carlo average
  std::uint64_t seed = 1;
};

/// Band context for one ear. Silent clean frames are dropped from the frame
/// axis; with realizations > 1 the extra draws replace the noise component
/// by white Gaussian noise of the same RMS.
inline MaskObjectiveContext channel_context(const Signal& clean, const Signal& noisy,
                                            const TargetMaskConfig& cfg) {
  detail::check_pair(clean, noisy, cfg.stft);
  detail::require(cfg.realizations >= 1, "need at least one noise realization");
  const TFGrid X = stft(clean, cfg.stft);
  const auto frames = active_frames(X, cfg.silence_range_db);
  const Grid xm = magnitude(X);
  const Grid weights = make_weights(clean, cfg.weights, cfg.stft).I;

  auto compact = [&](const Grid& g) {
    Grid out(g.rows(), Eigen::Index(frames.size()));
    for (std::size_t i = 0; i < frames.size(); ++i) out.col(Eigen::Index(i)) = g.col(frames[i]);
    return out;
  };
  MaskObjectiveContext ctx;
  ctx.clean = compact(xm);
  ctx.weights = compact(weights);
  ctx.frames = frames;
  ctx.M = cfg.modulation_frames;
  ctx.lambda = cfg.lambda;
  ctx.noisy.push_back(compact(magnitude(stft(noisy, cfg.stft))));

  if (cfg.realizations > 1) {
    double e = 0.0;
    for (std::size_t i = 0; i < clean.size(); ++i) {
      const double r = noisy.samples[i] - clean.samples[i];
      e += r * r;
    }
    const double sigma = std::sqrt(e / double(clean.size()));
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> gauss(0.0, sigma);
    for (int r = 1; r < cfg.realizations; ++r) {
      Signal draw = clean;
      for (double& v : draw.samples) v += gauss(rng);
      ctx.noisy.push_back(compact(magnitude(stft(draw, cfg.stft))));
    }
  }
  validate(ctx);
  return ctx;
}

/// Beam-optimized mask for one ear; frames dropped as silent get 0.
inline BinaryMask channel_target_mask(const Signal& clean, const Signal& noisy,
                                      const TargetMaskConfig& cfg = {}) {
  const MaskObjectiveContext ctx = channel_context(clean, noisy, cfg);
  const TFGrid shape = stft(clean, cfg.stft);
  BinaryMask mask{MaskGrid::Zero(shape.bins(), shape.frames())};
  if (ctx.length() < ctx.M) throw InvalidArgument("too few non-silent frames for a target mask");
  for (Eigen::Index j = 0; j < ctx.bands(); ++j) {
    const BandSolution sol = optimize_band_beam(ctx, j, cfg.beam_width);
    for (std::size_t i = 0; i < sol.B.size(); ++i) mask.B(j, ctx.frames[i]) = sol.B[i];
  }
  return mask;
}

/// Left and right masks, each from its own clean/noisy pair.
inline std::pair<BinaryMask, BinaryMask> compute_hswobm(const BinauralSignal& clean,
                                                        const BinauralSignal& noisy,
                                                        const TargetMaskConfig& cfg = {}) {
  validate(clean);
  validate(noisy);
  TargetMaskConfig right_cfg = cfg;
  right_cfg.seed = cfg.seed + 1;
  return {channel_target_mask(clean.left, noisy.left, cfg),
          channel_target_mask(clean.right, noisy.right, right_cfg)};
}

// ---------------------------------------------------------------------------
// Mask files: "BWMASK", version, kind, bins, frames, hash, payload.

enum class MaskKind : std::uint8_t { binary = 0, continuous = 1 };

inline constexpr std::uint32_t kMaskFileVersion = 1;

inline void write_mask(const std::filesystem::path& path, const BinaryMask& m,
                       std::uint64_t config_hash = 0) {
  ByteWriter w;
  w.raw("BWMASK").put<std::uint32_t>(kMaskFileVersion).put<std::uint8_t>(std::uint8_t(MaskKind::binary));
  w.put<std::uint32_t>(std::uint32_t(m.bins())).put<std::uint32_t>(std::uint32_t(m.frames()));
  w.put<std::uint64_t>(config_hash);
  for (Eigen::Index c = 0; c < m.frames(); ++c)
    for (Eigen::Index r = 0; r < m.bins(); ++r) w.put<std::uint8_t>(m.B(r, c) ? 1 : 0);
  w.save(path);
}

inline void write_mask(const std::filesystem::path& path, const Grid& m,
                       std::uint64_t config_hash = 0) {
  ByteWriter w;
  w.raw("BWMASK").put<std::uint32_t>(kMaskFileVersion).put<std::uint8_t>(std::uint8_t(MaskKind::continuous));
  w.put<std::uint32_t>(std::uint32_t(m.rows())).put<std::uint32_t>(std::uint32_t(m.cols()));
  w.put<std::uint64_t>(config_hash);
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) w.put<float>(float(m(r, c)));
  w.save(path);
}

struct MaskFile {
  MaskKind kind = MaskKind::binary;
  Grid values;  // bins x frames; 0/1 for binary masks
  std::uint64_t config_hash = 0;
};

inline MaskFile read_mask(const std::filesystem::path& path) {
  ByteReader r = ByteReader::open(path);
  r.expect_magic("BWMASK");
  const auto version = r.get<std::uint32_t>();
  if (version != kMaskFileVersion)
    throw FormatError(path.string() + ": mask file version " + std::to_string(version) +
                      " not supported");
  MaskFile f;
  const auto kind = r.get<std::uint8_t>();
  if (kind > 1) throw FormatError(path.string() + ": unknown mask kind");
  f.kind = MaskKind(kind);
  const auto bins = r.get<std::uint32_t>(), frames = r.get<std::uint32_t>();
  f.config_hash = r.get<std::uint64_t>();
  f.values.resize(bins, frames);
  for (Eigen::Index c = 0; c < Eigen::Index(frames); ++c)
    for (Eigen::Index rr = 0; rr < Eigen::Index(bins); ++rr) {
      if (f.kind == MaskKind::binary) {
        const auto v = r.get<std::uint8_t>();
        if (v > 1) throw FormatError(path.string() + ": binary mask entry is not 0 or 1");
        f.values(rr, c) = v;
      } else {
        f.values(rr, c) = r.get<float>();
      }
    }
  r.expect_end();
  return f;
}

}  // namespace binmask
