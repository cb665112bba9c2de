#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "objrace/mlp.hpp"

using namespace objrace;

namespace {

Eigen::MatrixXd random_inputs(int n, int d, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd X(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) X(i, j) = g(rng);
  }
  return X;
}

double loss_of(const MlpParams& p, const Eigen::MatrixXd& X, const Eigen::VectorXd& t) {
  double acc = 0.0;
  for (int i = 0; i < X.rows(); ++i) {
    const Eigen::VectorXd x = X.row(i).transpose();
    acc += std::abs(mlp_forward(p, std::span<const double>(x.data(), x.size())) - t[i]);
  }
  return acc / X.rows();
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

}  // namespace

TEST(Forward, ZeroWeightsGiveTheBias) {
  auto p = mlp_zeros(40, 2048);
  p.b2 = -0.75;
  std::vector<double> x(40, 3.0);
  EXPECT_EQ(mlp_forward(p, x), -0.75);
  EXPECT_THROW(mlp_forward(p, std::vector<double>(39, 0.0)), std::invalid_argument);
}

TEST(Forward, OutputLayerIsLinear) {
  auto p = mlp_init(40, 64, 0.01, 3);
  std::mt19937_64 rng(1);
  const Eigen::MatrixXd X = random_inputs(1, 40, rng);
  const Eigen::VectorXd x = X.row(0).transpose();
  const std::span<const double> xs(x.data(), 40);
  const double y = mlp_forward(p, xs);
  auto q = p;
  q.W2 *= -2.5;
  EXPECT_NEAR(mlp_forward(q, xs) - q.b2, -2.5 * (y - p.b2), 1e-12);
}

TEST(Forward, MatchesLoopOracle) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = mlp_init(40, 2048, 0.01, trial);
    const Eigen::MatrixXd X = random_inputs(3, 40, rng);
    const Eigen::VectorXd batch = mlp_forward_batch(p, X);
    for (int i = 0; i < 3; ++i) {
      double y = p.b2;
      for (int h = 0; h < 2048; ++h) {
        double z = p.b1[h];
        for (int c = 0; c < 40; ++c) z += p.W1(h, c) * X(i, c);
        y += p.W2[h] * (z >= 0 ? z : 0.01 * z);
      }
      const Eigen::VectorXd x = X.row(i).transpose();
      EXPECT_NEAR(mlp_forward(p, std::span<const double>(x.data(), 40)), y, 1e-12);
      EXPECT_NEAR(batch[i], y, 1e-12);
    }
  }
}

TEST(Backward, ZeroResidualGivesZeroGradient) {
  const auto p = mlp_init(40, 32, 0.01, 1);
  std::mt19937_64 rng(2);
  const Eigen::MatrixXd X = random_inputs(5, 40, rng);
  const Eigen::VectorXd t = mlp_forward_batch(p, X);
  const auto g = mlp_backward(p, X, t);
  EXPECT_EQ(g.W1.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.b1.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.W2.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.b2, 0.0);
  EXPECT_THROW(mlp_backward(p, Eigen::MatrixXd(0, 40), Eigen::VectorXd(0)), std::invalid_argument);
}

TEST(Backward, FlippedTargetsFlipTheOutputBiasGradient) {
  const auto p = mlp_zeros(40, 8);
  std::mt19937_64 rng(3);
  const Eigen::MatrixXd X = random_inputs(6, 40, rng);
  Eigen::VectorXd t(6);
  t << 1, 2, -3, 4, 5, -6;
  EXPECT_EQ(mlp_backward(p, X, t).b2, -mlp_backward(p, X, -t).b2);
}

TEST(Backward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  const double h = 1e-5;
  for (int trial = 0; trial < 20; ++trial) {
    const int hidden = 8 + 8 * (trial % 4);
    auto p = mlp_init(40, hidden, trial % 2 ? 0.01 : 0.2, 100 + trial);
    const Eigen::MatrixXd X = random_inputs(5, 40, rng);
    // targets well away from the predictions keep the L1 kink out of reach
    Eigen::VectorXd t = mlp_forward_batch(p, X);
    for (int i = 0; i < 5; ++i) t[i] += (i % 2 ? 1.0 : -1.0) * (0.5 + 0.1 * i);
    const auto g = mlp_backward(p, X, t);
    const auto check = [&](double& w, double analytic) {
      const double keep = w;
      w = keep + h;
      const double up = loss_of(p, X, t);
      w = keep - h;
      const double down = loss_of(p, X, t);
      w = keep;
      return rel_err(analytic, (up - down) / (2 * h));
    };
    double worst = 0.0;
    for (int r = 0; r < hidden; ++r) {
      for (int c = 0; c < 40; ++c) worst = std::max(worst, check(p.W1(r, c), g.W1(r, c)));
      worst = std::max(worst, check(p.b1[r], g.b1[r]));
      worst = std::max(worst, check(p.W2[r], g.W2[r]));
    }
    worst = std::max(worst, check(p.b2, g.b2));
    EXPECT_LT(worst, 1e-4) << trial;
  }
}

TEST(Adam, ZeroGradientIsAFixedPoint) {
  auto p = mlp_init(40, 16, 0.01, 4);
  const auto before = p;
  auto s = adam_init(p);
  MlpGrads g{Eigen::MatrixXd::Zero(16, 40), Eigen::VectorXd::Zero(16), Eigen::RowVectorXd::Zero(16), 0.0};
  adam_step(p, g, s, 0.005);
  EXPECT_EQ(p, before);
  auto wrong = adam_init(mlp_zeros(40, 8));
  EXPECT_THROW(adam_step(p, g, wrong, 0.005), std::invalid_argument);
}

TEST(Adam, FirstStepClosedForm) {
  auto p = mlp_init(40, 16, 0.01, 5);
  const auto before = p;
  std::mt19937_64 rng(6);
  const Eigen::MatrixXd X = random_inputs(4, 40, rng);
  const Eigen::VectorXd t = Eigen::VectorXd::Constant(4, 10.0);
  const auto g = mlp_backward(p, X, t);
  auto s = adam_init(p);
  const double lr = TrainConfig{}.lr0;
  EXPECT_EQ(lr, 0.005);
  adam_step(p, g, s, lr);
  const auto bound = lr * (1 + 1e-6);
  for (int r = 0; r < 16; ++r) {
    for (int c = 0; c < 40; ++c) {
      const double d = p.W1(r, c) - before.W1(r, c);
      EXPECT_LE(std::abs(d), bound);
      // bias-corrected first moments cancel: lr * g / (|g| + eps)
      EXPECT_NEAR(d, -lr * g.W1(r, c) / (std::abs(g.W1(r, c)) + 1e-8), 1e-15);
    }
  }
  EXPECT_NEAR(p.b2 - before.b2, lr, 1e-6 * lr);  // every prediction is below 10, so g.b2 = -1
}

TEST(Train, Defaults) {
  const TrainConfig c;
  EXPECT_EQ(c.hidden, 2048);
  EXPECT_EQ(c.batch, 1024);
  EXPECT_EQ(c.epochs, 2000);
  EXPECT_EQ(c.plateau_patience, 10);
}

TEST(Train, OverfitsALinearDataset) {
  std::mt19937_64 rng(8);
  const Eigen::MatrixXd X = random_inputs(100, 40, rng);
  Eigen::VectorXd w(40);
  for (int i = 0; i < 40; ++i) w[i] = std::sin(1.0 + i);
  const Eigen::VectorXd t = X * w * 0.3;
  TrainConfig cfg;
  cfg.epochs = 500;
  cfg.val_fraction = 0.0;
  cfg.seed = 4;
  const auto r = train_mlp(X, t, cfg);
  EXPECT_LT(mean_l1(r.best, X, t), 1e-3);
}

TEST(Train, ConstantTarget) {
  std::mt19937_64 rng(9);
  const Eigen::MatrixXd X = random_inputs(64, 40, rng);
  const Eigen::VectorXd t = Eigen::VectorXd::Constant(64, 2.5);
  TrainConfig cfg;
  cfg.hidden = 64;
  cfg.epochs = 400;
  cfg.val_fraction = 0.0;
  const auto r = train_mlp(X, t, cfg);
  EXPECT_LT(mean_l1(r.best, X, t), 1e-2);
  EXPECT_THROW(train_mlp(Eigen::MatrixXd(0, 40), Eigen::VectorXd(0), cfg), std::invalid_argument);
}

TEST(Train, DeterministicAndBestCheckpoint) {
  std::mt19937_64 rng(10);
  const Eigen::MatrixXd X = random_inputs(300, 40, rng);
  Eigen::VectorXd t(300);
  for (int i = 0; i < 300; ++i) t[i] = std::tanh(X(i, 0) * X(i, 1)) + 0.1 * X(i, 2);
  TrainConfig cfg;
  cfg.hidden = 128;
  cfg.epochs = 60;
  cfg.batch = 64;
  cfg.seed = 21;
  const auto a = train_mlp(X, t, cfg);
  const auto b = train_mlp(X, t, cfg);
  EXPECT_EQ(a.best, b.best);
  EXPECT_EQ(a.last, b.last);
  EXPECT_EQ(a.val_index, b.val_index);
  ASSERT_EQ(a.val_index.size(), 30u);
  Eigen::MatrixXd Xv(30, 40);
  Eigen::VectorXd tv(30);
  for (int i = 0; i < 30; ++i) {
    Xv.row(i) = X.row(a.val_index[i]);
    tv[i] = t[a.val_index[i]];
  }
  EXPECT_LE(mean_l1(a.best, Xv, tv), mean_l1(a.last, Xv, tv));
  EXPECT_EQ(static_cast<int>(a.curve.size()), 60);
  EXPECT_EQ(a.curve.front().lr, 0.005);
  for (std::size_t i = 1; i < a.curve.size(); ++i) EXPECT_LE(a.curve[i].lr, a.curve[i - 1].lr);
}

TEST(ModelFile, RoundTripAndErrors) {
  const auto p = mlp_init(40, 32, 0.01, 12);
  std::stringstream ss;
  save_mlp(ss, p);
  std::string first;
  std::getline(ss, first);
  EXPECT_EQ(first, "40 32 1 0.01");
  ss.seekg(0);
  EXPECT_EQ(load_mlp(ss), p);
  std::stringstream bad("40 32 2 0.01\n");
  EXPECT_THROW(load_mlp(bad), std::runtime_error);
  std::stringstream truncated("2 1 1 0.01\n1 2\n");
  EXPECT_THROW(load_mlp(truncated), std::runtime_error);
}
