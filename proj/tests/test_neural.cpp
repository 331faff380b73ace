// Copyright 2026 The binmask Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "binmask/neural.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace binmask;
using namespace testing;
using Catch::Approx;

TEST_CASE("model initialization", "[neural]") {
  const auto a = init_model<float>(5), b = init_model<float>(5), c = init_model<float>(6);
  REQUIRE(a.layers() == 5);
  CHECK(a.dims == std::vector<int>{90, 500, 500, 500, 500, 129});
  for (std::size_t l = 0; l < a.layers(); ++l) {
    CHECK((a.W[l].array() == b.W[l].array()).all());
    CHECK((a.b[l].array() == 0.0f).all());
  }
  CHECK(!(a.W[0].array() == c.W[0].array()).all());
  for (std::size_t l = 0; l + 1 < a.layers(); ++l) {
    const double sd = std::sqrt(a.W[l].cast<double>().array().square().mean());
    CHECK(sd == Approx(std::sqrt(2.0 / a.dims[l])).epsilon(0.2));
  }
  const double so = std::sqrt(a.W[4].cast<double>().array().square().mean());
  CHECK(so == Approx(std::sqrt(2.0 / (500 + 129))).epsilon(0.2));
  CHECK(a.act.back() == Activation::sigmoid);
  CHECK(a.act.front() == Activation::relu);

  const Eigen::VectorXf y = forward(a, Eigen::VectorXf::Zero(90));
  CHECK((y.array() == 0.5f).all());
}

TEST_CASE("forward pass", "[neural]") {
  auto m = init_model<float>(9);
  std::mt19937_64 rng(2);
  const Eigen::MatrixXf X = random_matrix(90, 50, rng, -8, 8).cast<float>();
  const Eigen::MatrixXf Y = forward_batch(m, X, Mode::infer);
  CHECK(Y.rows() == 129);
  CHECK((Y.array() > 0.0f).all());
  CHECK((Y.array() < 1.0f).all());
  CHECK((forward_batch(m, X, Mode::infer).array() == Y.array()).all());

  std::mt19937_64 d1(4), d2(4);
  const Eigen::MatrixXf T1 = forward_batch(m, X, Mode::train, &d1);
  const Eigen::MatrixXf T2 = forward_batch(m, X, Mode::train, &d2);
  CHECK((T1.array() == T2.array()).all());
  CHECK(!(T1.array() == Y.array()).all());

  Eigen::MatrixXf bad = X;
  bad(3, 3) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(forward_batch(m, bad, Mode::infer), InvalidArgument);
  CHECK_THROWS_AS(forward_batch(m, Eigen::MatrixXf::Zero(89, 1), Mode::infer), DimensionError);
  CHECK_THROWS_AS(forward_batch(m, X, Mode::train), InvalidArgument);
}

TEST_CASE("weighted squared error", "[neural]") {
  MatD c(1, 1), z(1, 1), w(1, 1);
  c << 0.75;
  z << 0.25;
  w << 1.0;
  CHECK(weighted_mse(c, z, w) == Approx(0.25).epsilon(1e-15));
  CHECK(weighted_mse(c, c, w) == 0.0);
  CHECK_THROWS_AS(weighted_mse(c, z, MatD::Zero(1, 1)), InvalidArgument);

  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 1000; ++trial) {
    const MatD C = random_matrix(7, 11, rng, 0, 1), Z = random_matrix(7, 11, rng, 0, 1),
               P = random_matrix(7, 11, rng, 0, 3);
    CHECK(std::abs(weighted_mse(C, Z, P) - oracle_loss(C, Z, P, true)) <= 1e-12);
    CHECK(std::abs(weighted_mse(C, Z, P, LossNormalization::sum_weights_only) -
                   oracle_loss(C, Z, P, false)) <= 1e-12);
    if (trial < 20) {
      CHECK(weighted_mse(C, Z, MatD(4.5 * P)) == Approx(weighted_mse(C, Z, P)).epsilon(1e-13));
    }
  }
}

TEST_CASE("gradients", "[neural]") {
  std::mt19937_64 rng(17);
  SECTION("small network, every layer, with and without dropout") {
    auto m = init_model<double>(3, {6, 8, 7, 5, 4});
    for (auto& b : m.b) b.setRandom();
    const MatD X = random_matrix(6, 5, rng, -1, 1), Z = random_matrix(4, 5, rng, 0, 1),
               P = random_matrix(4, 5, rng, 0.1, 2);
    for (auto norm : {LossNormalization::as_printed, LossNormalization::sum_weights_only}) {
      CHECK(gradient_check(m, X, Z, P, norm, Mode::infer, 40, 1) < 1e-4);
      CHECK(gradient_check(m, X, Z, P, norm, Mode::train, 40, 2) < 1e-4);
    }
  }
  SECTION("full-size network, sampled entries") {
    auto m = init_model<double>(4);
    const MatD X = random_matrix(90, 5, rng, -1, 1), Z = random_matrix(129, 5, rng, 0, 1),
               P = random_matrix(129, 5, rng, 0.1, 2);
    CHECK(gradient_check(m, X, Z, P, LossNormalization::as_printed, Mode::infer, 25, 3) < 1e-4);
  }
}

TEST_CASE("training", "[neural]") {
  SECTION("separable toy problem") {
    // Target 1 when x0 + x1 > 0, else 0.
    std::mt19937_64 rng(21);
    std::normal_distribution<double> n(0.0, 1.0);
    const int N = 1024;
    TrainingSet s{Eigen::MatrixXf(N, 2), Eigen::MatrixXf(N, 1), Eigen::MatrixXf::Ones(N, 1)};
    for (int i = 0; i < N; ++i) {
      s.features(i, 0) = float(n(rng));
      s.features(i, 1) = float(n(rng));
      s.targets(i, 0) = s.features(i, 0) + s.features(i, 1) > 0 ? 1.0f : 0.0f;
    }
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.patience = 200;
    cfg.learning_rate = 0.05;
    auto res = train(init_model<float>(1, {2, 32, 32, 1}, 0.0), s, cfg);
    CHECK(res.history.back().train_loss < 0.01);
    CHECK(res.history[std::size_t(res.best_epoch)].val_loss <= res.history.front().val_loss);

    auto again = train(init_model<float>(1, {2, 32, 32, 1}, 0.0), s, cfg);
    REQUIRE(again.history.size() == res.history.size());
    for (std::size_t i = 0; i < res.history.size(); ++i)
      CHECK(again.history[i].val_loss == res.history[i].val_loss);
  }

  SECTION("zero learning rate leaves parameters unchanged") {
    std::mt19937_64 rng(5);
    TrainingSet s{random_matrix(300, 90, rng, -1, 1).cast<float>(),
                  random_matrix(300, 129, rng, 0, 1).cast<float>(),
                  Eigen::MatrixXf::Ones(300, 129)};
    auto m = init_model<float>(2, default_layer_dims(), 0.0);
    TrainConfig cfg;
    cfg.learning_rate = 0.0;
    cfg.epochs = 2;
    auto res = train(m, s, cfg);
    for (std::size_t l = 0; l < m.layers(); ++l)
      CHECK((res.model.W[l].array() == m.W[l].array()).all());
  }

  SECTION("errors") {
    TrainingSet tiny{Eigen::MatrixXf::Zero(10, 2), Eigen::MatrixXf::Zero(10, 1),
                     Eigen::MatrixXf::Ones(10, 1)};
    CHECK_THROWS_AS(train(init_model<float>(1, {2, 3, 1}), tiny, TrainConfig{}), InvalidArgument);
    TrainingSet s{Eigen::MatrixXf::Ones(400, 2), Eigen::MatrixXf::Ones(400, 1),
                  Eigen::MatrixXf::Ones(400, 1)};
    TrainConfig hot;
    hot.learning_rate = 1e38;
    auto m = init_model<float>(1, {2, 3, 1}, 0.0);
    m.b[0].setConstant(1.0f);
    CHECK_THROWS_AS(train(m, s, hot), PipelineError);
  }
}

TEST_CASE("input scaling folds into the first layer", "[neural]") {
  std::mt19937_64 rng(30);
  Eigen::MatrixXf F = random_matrix(200, 90, rng, -3, 3).cast<float>();
  F.col(7).array() = F.col(7).array() * 40.0f - 25.0f;
  F.col(11).setConstant(2.0f);
  const InputScaling sc = fit_input_scaling(F);
  CHECK(sc.scale(11) == 1.0);
  const Eigen::MatrixXf S = apply_scaling(F, sc);
  CHECK(std::abs(S.col(7).cast<double>().mean()) < 1e-5);
  CHECK(std::sqrt(S.col(7).cast<double>().array().square().mean()) == Approx(1.0).epsilon(1e-5));

  auto m = init_model<double>(31);
  for (auto& b : m.b) b.setRandom();
  const Eigen::MatrixXd before = forward_batch(m, MatD(S.transpose().cast<double>()), Mode::infer);
  fold_input_scaling(m, sc);
  const Eigen::MatrixXd after = forward_batch(m, MatD(F.transpose().cast<double>()), Mode::infer);
  CHECK((before - after).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("model files", "[neural]") {
  testing::TempDir dir("model");
  const auto m = init_model<float>(12);
  save_model(dir / "m.bin", m, 99);
  const auto loaded = load_model<float>(dir / "m.bin", default_layer_dims());
  CHECK(loaded.config_hash == 99);
  std::mt19937_64 rng(3);
  const Eigen::MatrixXf X = random_matrix(90, 20, rng, -2, 2).cast<float>();
  CHECK((forward_batch(loaded.model, X, Mode::infer).array() ==
         forward_batch(m, X, Mode::infer).array())
            .all());

  CHECK_THROWS_AS(load_model<float>(dir / "m.bin", {90, 500, 129}), DimensionError);

  auto bytes = detail::slurp(dir / "m.bin");
  const std::string full(bytes.begin(), bytes.end());
  detail::write_bytes(dir / "trunc.bin", full.substr(0, full.size() - 100));
  CHECK_THROWS_AS(load_model<float>(dir / "trunc.bin"), FormatError);
  std::string v2 = full;
  v2[6] = 2;
  detail::write_bytes(dir / "v2.bin", v2);
  CHECK_THROWS_WITH(load_model<float>(dir / "v2.bin"), Catch::Matchers::ContainsSubstring("version"));
}
