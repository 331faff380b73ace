// Copyright 2026 The binmask Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "binmask/binary_io.hpp"
#include "binmask/error.hpp"

namespace binmask {

enum class Activation : std::uint8_t { relu = 0, sigmoid = 1 };
enum class Mode { train, infer };

inline const std::vector<int>& default_layer_dims() {
  static const std::vector<int> dims{90, 500, 500, 500, 500, 129};
  return dims;
}

/// Fully connected network; column-vector convention, W[l] is out x in.
template <class Scalar>
struct MlpModel {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  std::vector<int> dims;
  std::vector<Mat> W;
  std::vector<Vec> b;
  std::vector<Activation> act;
  double dropout = 0.2;

  std::size_t layers() const { return W.size(); }
  int inputs() const { return dims.front(); }
  int outputs() const { return dims.back(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < W.size(); ++l) n += std::size_t(W[l].size() + b[l].size());
    return n;
  }

  template <class Other>
  MlpModel<Other> cast() const {
    MlpModel<Other> m{dims, {}, {}, act, dropout};
    for (std::size_t l = 0; l < W.size(); ++l) {
      m.W.push_back(W[l].template cast<Other>());
      m.b.push_back(b[l].template cast<Other>());
    }
    return m;
  }
};

template <class Scalar>
void validate(const MlpModel<Scalar>& m) {
  detail::require(m.dims.size() >= 2, "model needs at least one layer");
  detail::require(m.W.size() + 1 == m.dims.size() && m.b.size() == m.W.size() &&
                      m.act.size() == m.W.size(),
                  "model layer lists are inconsistent");
  for (std::size_t l = 0; l < m.W.size(); ++l) {
    if (m.W[l].rows() != m.dims[l + 1] || m.W[l].cols() != m.dims[l] || m.b[l].size() != m.dims[l + 1])
      throw DimensionError("layer " + std::to_string(l) + " does not match the dimension chain");
    detail::require(m.W[l].allFinite() && m.b[l].allFinite(), "model has non-finite parameters");
  }
  detail::require(m.dropout >= 0.0 && m.dropout < 1.0, "dropout rate must be in [0, 1)");
}

/// He-normal hidden layers, Xavier-normal output layer, zero biases.
template <class Scalar>
MlpModel<Scalar> init_model(std::uint64_t seed, const std::vector<int>& dims = default_layer_dims(),
                            double dropout = 0.2) {
  detail::require(dims.size() >= 2, "model needs at least one layer");
  for (int d : dims) detail::require(d > 0, "layer sizes must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  MlpModel<Scalar> m;
  m.dims = dims;
  m.dropout = dropout;
  const std::size_t L = dims.size() - 1;
  for (std::size_t l = 0; l < L; ++l) {
    const bool last = l + 1 == L;
    const double fan_in = dims[l], fan_out = dims[l + 1];
    const double sd = last ? std::sqrt(2.0 / (fan_in + fan_out)) : std::sqrt(2.0 / fan_in);
    typename MlpModel<Scalar>::Mat w(dims[l + 1], dims[l]);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = Scalar(sd * gauss(rng));
    m.W.push_back(std::move(w));
    m.b.push_back(MlpModel<Scalar>::Vec::Zero(dims[l + 1]));
    m.act.push_back(last ? Activation::sigmoid : Activation::relu);
  }
  return m;
}

/// Per-layer activations kept for backpropagation; a[0] is the input.
template <class Scalar>
struct ForwardCache {
  std::vector<typename MlpModel<Scalar>::Mat> a;
  std::vector<typename MlpModel<Scalar>::Mat> keep;  // inverted-dropout scale per hidden unit
};

/// Batch forward; columns are samples. Train mode draws dropout masks from
/// `rng` after every hidden layer.
template <class Scalar>
typename MlpModel<Scalar>::Mat forward_batch(const MlpModel<Scalar>& m,
                                             const typename MlpModel<Scalar>::Mat& X, Mode mode,
                                             std::mt19937_64* rng = nullptr,
                                             ForwardCache<Scalar>* cache = nullptr) {
  using Mat = typename MlpModel<Scalar>::Mat;
  if (X.rows() != m.inputs()) throw DimensionError("input width does not match the model");
  if (!X.allFinite()) throw InvalidArgument("non-finite model input");
  const bool drop = mode == Mode::train && m.dropout > 0.0;
  if (drop && rng == nullptr) throw InvalidArgument("train mode with dropout needs an RNG");
  if (cache) {
    cache->a.assign(1, X);
    cache->keep.clear();
  }
  Mat h = X;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Scalar scale = Scalar(1.0 / (1.0 - m.dropout));
  for (std::size_t l = 0; l < m.layers(); ++l) {
    Mat z = m.W[l] * h;
    z.colwise() += m.b[l];
    if (m.act[l] == Activation::relu) {
      h = z.cwiseMax(Scalar(0));
    } else {
      // Kept strictly inside (0, 1) where the sigmoid saturates in float.
      constexpr Scalar lo = std::numeric_limits<Scalar>::min();
      constexpr Scalar hi = Scalar(1) - std::numeric_limits<Scalar>::epsilon() / 2;
      h = (Scalar(1) + (-z.array()).exp()).inverse().max(lo).min(hi).matrix();
    }
    if (drop && l + 1 < m.layers()) {
      Mat keep(h.rows(), h.cols());
      for (Eigen::Index j = 0; j < keep.cols(); ++j)
        for (Eigen::Index i = 0; i < keep.rows(); ++i)
          keep(i, j) = u(*rng) < m.dropout ? Scalar(0) : scale;
      h = h.cwiseProduct(keep);
      if (cache) cache->keep.push_back(std::move(keep));
    } else if (cache && l + 1 < m.layers()) {
      cache->keep.push_back(Mat());
    }
    if (cache) cache->a.push_back(h);
  }
  return h;
}

template <class Scalar>
typename MlpModel<Scalar>::Vec forward(const MlpModel<Scalar>& m,
                                       const typename MlpModel<Scalar>::Vec& x,
                                       Mode mode = Mode::infer, std::mt19937_64* rng = nullptr) {
  return forward_batch<Scalar>(m, x, mode, rng).col(0);
}

// ---------------------------------------------------------------------------
// Weighted squared error.

/// as_printed: (1/D) sum(phi e^2) / sum(phi); sum_weights_only drops 1/D.
enum class LossNormalization { as_printed, sum_weights_only };

/// Every element is one (prediction, target, weight) pair.
template <class A, class B, class C>
double weighted_mse(const A& c, const B& zeta, const C& phi,
                    LossNormalization norm = LossNormalization::as_printed) {
  if (c.rows() != zeta.rows() || c.cols() != zeta.cols() || c.rows() != phi.rows() ||
      c.cols() != phi.cols())
    throw DimensionError("loss operands differ in shape");
  const double wsum = phi.template cast<double>().sum();
  if (!(wsum > 0.0)) throw InvalidArgument("loss weights sum to zero");
  const auto e = (c.template cast<double>() - zeta.template cast<double>()).array();
  double j = (phi.template cast<double>().array() * e.square()).sum() / wsum;
  if (norm == LossNormalization::as_printed) j /= double(c.size());
  return j;
}

template <class Scalar>
struct Gradients {
  std::vector<typename MlpModel<Scalar>::Mat> dW;
  std::vector<typename MlpModel<Scalar>::Vec> db;
};

/// Loss on a batch (columns are samples) and its gradient by backprop.
template <class Scalar>
double loss_and_gradient(const MlpModel<Scalar>& m, const typename MlpModel<Scalar>::Mat& X,
                         const typename MlpModel<Scalar>::Mat& Z,
                         const typename MlpModel<Scalar>::Mat& Phi, LossNormalization norm,
                         Mode mode, std::mt19937_64* rng, Gradients<Scalar>& g) {
  using Mat = typename MlpModel<Scalar>::Mat;
  ForwardCache<Scalar> cache;
  const Mat C = forward_batch(m, X, mode, rng, &cache);
  const double J = weighted_mse(C, Z, Phi, norm);
  double coef = 2.0 / Phi.template cast<double>().sum();
  if (norm == LossNormalization::as_printed) coef /= double(C.size());

  const std::size_t L = m.layers();
  g.dW.resize(L);
  g.db.resize(L);
  // Output layer: sigmoid derivative c (1 - c).
  Mat delta = (Scalar(coef) * Phi.cwiseProduct(C - Z)).cwiseProduct(
      C.cwiseProduct((Scalar(1) - C.array()).matrix()));
  for (std::size_t l = L; l-- > 0;) {
    g.dW[l] = delta * cache.a[l].transpose();
    g.db[l] = delta.rowwise().sum();
    if (l == 0) break;
    Mat back = m.W[l].transpose() * delta;
    // a[l] is the post-dropout hidden output of layer l-1.
    if (cache.keep[l - 1].size() > 0) back = back.cwiseProduct(cache.keep[l - 1]);
    const Mat& a = cache.a[l];
    for (Eigen::Index j = 0; j < back.cols(); ++j)
      for (Eigen::Index i = 0; i < back.rows(); ++i)
        if (!(a(i, j) > Scalar(0))) back(i, j) = Scalar(0);
    delta = std::move(back);
  }
  return J;
}

// ---------------------------------------------------------------------------
// Training.

/// Rows are pairs: features (D x inputs), targets and weights (D x outputs).
struct TrainingSet {
  Eigen::MatrixXf features;
  Eigen::MatrixXf targets;
  Eigen::MatrixXf weights;

  Eigen::Index size() const { return features.rows(); }
};

inline void validate(const TrainingSet& s) {
  if (s.targets.rows() != s.features.rows() || s.weights.rows() != s.features.rows() ||
      s.weights.cols() != s.targets.cols())
    throw DimensionError("training set matrices disagree");
  detail::require(s.features.allFinite() && s.targets.allFinite() && s.weights.allFinite(),
                  "training set has non-finite values");
  detail::require((s.weights.array() >= 0.0f).all(), "training weights must be nonnegative");
}

inline TrainingSet select_rows(const TrainingSet& s, const std::vector<Eigen::Index>& rows) {
  TrainingSet out{Eigen::MatrixXf(Eigen::Index(rows.size()), s.features.cols()),
                  Eigen::MatrixXf(Eigen::Index(rows.size()), s.targets.cols()),
                  Eigen::MatrixXf(Eigen::Index(rows.size()), s.weights.cols())};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(Eigen::Index(i)) = s.features.row(rows[i]);
    out.targets.row(Eigen::Index(i)) = s.targets.row(rows[i]);
    out.weights.row(Eigen::Index(i)) = s.weights.row(rows[i]);
  }
  return out;
}

inline TrainingSet concatenate(const std::vector<TrainingSet>& parts) {
  Eigen::Index n = 0;
  for (const auto& p : parts) n += p.size();
  if (parts.empty()) return {};
  TrainingSet out{Eigen::MatrixXf(n, parts[0].features.cols()),
                  Eigen::MatrixXf(n, parts[0].targets.cols()),
                  Eigen::MatrixXf(n, parts[0].weights.cols())};
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    if (p.features.cols() != out.features.cols() || p.targets.cols() != out.targets.cols())
      throw DimensionError("training set parts differ in width");
    out.features.middleRows(r, p.size()) = p.features;
    out.targets.middleRows(r, p.size()) = p.targets;
    out.weights.middleRows(r, p.size()) = p.weights;
    r += p.size();
  }
  return out;
}

/// Shuffled row split; the first part holds (1 - val_fraction) of the rows.
inline std::pair<TrainingSet, TrainingSet> split_rows(const TrainingSet& s, double val_fraction,
                                                      std::uint64_t seed) {
  detail::require(val_fraction > 0.0 && val_fraction < 1.0, "validation fraction must be in (0, 1)");
  std::vector<Eigen::Index> idx(std::size_t(s.size()));
  std::iota(idx.begin(), idx.end(), Eigen::Index(0));
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_val = std::size_t(std::lround(val_fraction * double(idx.size())));
  std::vector<Eigen::Index> val(idx.begin(), idx.begin() + std::ptrdiff_t(n_val));
  std::vector<Eigen::Index> tr(idx.begin() + std::ptrdiff_t(n_val), idx.end());
  return {select_rows(s, tr), select_rows(s, val)};
}

struct TrainConfig {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  int batch = 128;
  int epochs = 50;
  int patience = 5;
  double val_split = 0.3;
  std::uint64_t seed = 1;
  LossNormalization normalization = LossNormalization::sum_weights_only;
  double max_seconds = 0.0;  // 0: no wall-clock limit
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

template <class Scalar>
struct TrainResult {
  MlpModel<Scalar> model;
  std::vector<EpochRecord> history;  // epoch 0 is the initial model
  int best_epoch = 0;
};

template <class Scalar>
double evaluate_loss(const MlpModel<Scalar>& m, const TrainingSet& s, LossNormalization norm,
                     Eigen::Index chunk = 4096) {
  using Mat = typename MlpModel<Scalar>::Mat;
  // Accumulate numerator and weight sum over chunks.
  double num = 0.0, wsum = 0.0;
  for (Eigen::Index r = 0; r < s.size(); r += chunk) {
    const Eigen::Index n = std::min(chunk, s.size() - r);
    const Mat X = s.features.middleRows(r, n).transpose().template cast<Scalar>();
    const Mat C = forward_batch(m, X, Mode::infer);
    const Eigen::MatrixXd e = C.template cast<double>() -
                              s.targets.middleRows(r, n).transpose().cast<double>();
    const Eigen::MatrixXd w = s.weights.middleRows(r, n).transpose().cast<double>();
    num += (w.array() * e.array().square()).sum();
    wsum += w.sum();
  }
  if (!(wsum > 0.0)) throw InvalidArgument("loss weights sum to zero");
  double j = num / wsum;
  if (norm == LossNormalization::as_printed) j /= double(s.size()) * double(s.targets.cols());
  return j;
}

/// Mini-batch momentum gradient descent with early stopping on the
/// validation loss; returns the best-validation parameters.
template <class Scalar>
TrainResult<Scalar> train(MlpModel<Scalar> model, const TrainingSet& tr, const TrainingSet& val,
                          const TrainConfig& cfg) {
  using Mat = typename MlpModel<Scalar>::Mat;
  validate(model);
  validate(tr);
  validate(val);
  if (tr.features.cols() != model.inputs() || tr.targets.cols() != model.outputs())
    throw DimensionError("training set does not match the model dimensions");
  if (tr.size() < cfg.batch) throw InvalidArgument("training set smaller than one batch");
  detail::require(cfg.batch >= 1 && cfg.epochs >= 0 && cfg.patience >= 1, "invalid train config");

  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(cfg.seed);
  TrainResult<Scalar> res{model, {}, 0};
  double best = evaluate_loss(model, val, cfg.normalization);
  res.history.push_back({0, evaluate_loss(model, tr, cfg.normalization), best});

  Gradients<Scalar> vel;
  for (std::size_t l = 0; l < model.layers(); ++l) {
    vel.dW.push_back(Mat::Zero(model.W[l].rows(), model.W[l].cols()));
    vel.db.push_back(MlpModel<Scalar>::Vec::Zero(model.b[l].size()));
  }
  std::vector<Eigen::Index> order(std::size_t(tr.size()));
  std::iota(order.begin(), order.end(), Eigen::Index(0));
  Gradients<Scalar> g;
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    int batches = 0;
    const Eigen::Index full = tr.size() / cfg.batch;  // drop the ragged tail
    Mat X(model.inputs(), cfg.batch), Z(model.outputs(), cfg.batch), P(model.outputs(), cfg.batch);
    for (Eigen::Index bi = 0; bi < full; ++bi) {
      for (int i = 0; i < cfg.batch; ++i) {
        const Eigen::Index r = order[std::size_t(bi * cfg.batch + i)];
        X.col(i) = tr.features.row(r).transpose().template cast<Scalar>();
        Z.col(i) = tr.targets.row(r).transpose().template cast<Scalar>();
        P.col(i) = tr.weights.row(r).transpose().template cast<Scalar>();
      }
      if (!(P.sum() > Scalar(0))) continue;
      const double J = loss_and_gradient(model, X, Z, P, cfg.normalization, Mode::train, &rng, g);
      if (!std::isfinite(J))
        throw PipelineError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(bi) + " (loss " + std::to_string(J) +
                            "); lower the learning rate");
      for (std::size_t l = 0; l < model.layers(); ++l) {
        vel.dW[l] = Scalar(cfg.momentum) * vel.dW[l] - Scalar(cfg.learning_rate) * g.dW[l];
        vel.db[l] = Scalar(cfg.momentum) * vel.db[l] - Scalar(cfg.learning_rate) * g.db[l];
        model.W[l] += vel.dW[l];
        model.b[l] += vel.db[l];
        if (!model.W[l].allFinite() || !model.b[l].allFinite())
          throw PipelineError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(bi) + ": non-finite parameters in layer " +
                              std::to_string(l) + "; lower the learning rate");
      }
      sum += J;
      ++batches;
    }
    const double v = evaluate_loss(model, val, cfg.normalization);
    if (!std::isfinite(v))
      throw PipelineError("validation loss is not finite after epoch " + std::to_string(epoch));
    res.history.push_back({epoch, batches ? sum / batches : 0.0, v});
    if (v < best) {
      best = v;
      res.model = model;
      res.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
    if (cfg.max_seconds > 0.0 &&
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() >
            cfg.max_seconds)
      break;
  }
  return res;
}

/// Row split by `val_split`, then train.
template <class Scalar>
TrainResult<Scalar> train(MlpModel<Scalar> model, const TrainingSet& all, const TrainConfig& cfg) {
  auto [tr, val] = split_rows(all, cfg.val_split, cfg.seed ^ 0x5eedull);
  return train(std::move(model), tr, val, cfg);
}

// ---------------------------------------------------------------------------
// Input standardization, folded into the first layer after training so model
// files take raw features.

struct InputScaling {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;  // x' = (x - mean) / scale
};

/// Per-column mean and standard deviation; constant columns get scale 1.
inline InputScaling fit_input_scaling(const Eigen::MatrixXf& features) {
  if (features.rows() == 0) throw InvalidArgument("cannot fit scaling on an empty set");
  const Eigen::MatrixXd X = features.cast<double>();
  InputScaling s{X.colwise().mean().transpose(), Eigen::VectorXd(X.cols())};
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const double sd = std::sqrt((X.col(j).array() - s.mean(j)).square().mean());
    s.scale(j) = sd > 1e-12 ? sd : 1.0;
  }
  return s;
}

inline Eigen::MatrixXf apply_scaling(const Eigen::MatrixXf& features, const InputScaling& s) {
  if (features.cols() != s.mean.size()) throw DimensionError("scaling width mismatch");
  Eigen::MatrixXd X = features.cast<double>();
  X.rowwise() -= s.mean.transpose();
  X.array().rowwise() /= s.scale.transpose().array();
  return X.cast<float>();
}

/// Model on raw inputs equivalent to `m` on scaled inputs.
template <class Scalar>
void fold_input_scaling(MlpModel<Scalar>& m, const InputScaling& s) {
  if (s.mean.size() != m.inputs()) throw DimensionError("scaling width mismatch");
  const Eigen::MatrixXd W = m.W[0].template cast<double>() * s.scale.cwiseInverse().asDiagonal();
  m.b[0] = (m.b[0].template cast<double>() - W * s.mean).template cast<Scalar>();
  m.W[0] = W.template cast<Scalar>();
}

// ---------------------------------------------------------------------------
// Model files: "BWMLP1", version, layer count, dims, activations, dropout,
// config hash, then per layer W (row-major) and b as float32.

inline constexpr std::uint32_t kModelFileVersion = 1;

template <class Scalar>
void save_model(const std::filesystem::path& path, const MlpModel<Scalar>& m,
                std::uint64_t config_hash = 0) {
  validate(m);
  ByteWriter w;
  w.raw("BWMLP1").put<std::uint32_t>(kModelFileVersion);
  w.put<std::uint32_t>(std::uint32_t(m.dims.size()));
  for (int d : m.dims) w.put<std::uint32_t>(std::uint32_t(d));
  for (Activation a : m.act) w.put<std::uint8_t>(std::uint8_t(a));
  w.put<float>(float(m.dropout)).put<std::uint64_t>(config_hash);
  for (std::size_t l = 0; l < m.layers(); ++l) {
    for (Eigen::Index i = 0; i < m.W[l].rows(); ++i)
      for (Eigen::Index j = 0; j < m.W[l].cols(); ++j) w.put<float>(float(m.W[l](i, j)));
    for (Eigen::Index i = 0; i < m.b[l].size(); ++i) w.put<float>(float(m.b[l](i)));
  }
  w.save(path);
}

template <class Scalar>
struct LoadedModel {
  MlpModel<Scalar> model;
  std::uint64_t config_hash = 0;
};

/// Reads a model; if `expected_dims` is non-empty the layer chain must match.
template <class Scalar = float>
LoadedModel<Scalar> load_model(const std::filesystem::path& path,
                               const std::vector<int>& expected_dims = {}) {
  ByteReader r = ByteReader::open(path);
  r.expect_magic("BWMLP1");
  const auto version = r.get<std::uint32_t>();
  if (version != kModelFileVersion)
    throw FormatError(path.string() + ": model file version " + std::to_string(version) +
                      " not supported (expected " + std::to_string(kModelFileVersion) + ")");
  const auto n = r.get<std::uint32_t>();
  if (n < 2 || n > 64) throw FormatError(path.string() + ": implausible layer count");
  LoadedModel<Scalar> out;
  MlpModel<Scalar>& m = out.model;
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto d = r.get<std::uint32_t>();
    if (d == 0 || d > 1u << 20) throw FormatError(path.string() + ": implausible layer size");
    m.dims.push_back(int(d));
  }
  if (!expected_dims.empty() && m.dims != expected_dims)
    throw DimensionError(path.string() + ": model layer dimensions do not match the pipeline");
  for (std::uint32_t i = 0; i + 1 < n; ++i) {
    const auto a = r.get<std::uint8_t>();
    if (a > 1) throw FormatError(path.string() + ": unknown activation tag");
    m.act.push_back(Activation(a));
  }
  m.dropout = r.get<float>();
  out.config_hash = r.get<std::uint64_t>();
  for (std::size_t l = 0; l + 1 < m.dims.size(); ++l) {
    typename MlpModel<Scalar>::Mat W(m.dims[l + 1], m.dims[l]);
    for (Eigen::Index i = 0; i < W.rows(); ++i)
      for (Eigen::Index j = 0; j < W.cols(); ++j) W(i, j) = Scalar(r.get<float>());
    typename MlpModel<Scalar>::Vec b(m.dims[l + 1]);
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = Scalar(r.get<float>());
    m.W.push_back(std::move(W));
    m.b.push_back(std::move(b));
  }
  r.expect_end();
  validate(m);
  return out;
}

}  // namespace binmask
