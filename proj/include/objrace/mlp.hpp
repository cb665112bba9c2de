#pragma once

// One-hidden-layer regression MLP with leaky ReLU, mean-L1 loss, Adam and
// plateau learning-rate reduction. Double precision, single-threaded.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "objrace/csv.hpp"

namespace objrace {

struct MlpParams {
  Eigen::MatrixXd W1;  // hidden x input
  Eigen::VectorXd b1;
  Eigen::RowVectorXd W2;  // 1 x hidden
  double b2 = 0.0;
  double slope = 0.01;

  int inputs() const { return static_cast<int>(W1.cols()); }
  int hidden() const { return static_cast<int>(W1.rows()); }
  bool operator==(const MlpParams& o) const {
    return W1 == o.W1 && b1 == o.b1 && W2 == o.W2 && b2 == o.b2 && slope == o.slope;
  }
};

inline MlpParams mlp_zeros(int inputs, int hidden, double slope = 0.01) {
  MlpParams p;
  p.W1 = Eigen::MatrixXd::Zero(hidden, inputs);
  p.b1 = Eigen::VectorXd::Zero(hidden);
  p.W2 = Eigen::RowVectorXd::Zero(hidden);
  p.slope = slope;
  return p;
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias.
inline MlpParams mlp_init(int inputs, int hidden, double slope, std::uint64_t seed) {
  if (inputs < 1 || hidden < 1) throw std::invalid_argument("mlp_init: sizes must be positive");
  auto p = mlp_zeros(inputs, hidden, slope);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u1(-1.0 / std::sqrt(inputs), 1.0 / std::sqrt(inputs));
  std::uniform_real_distribution<double> u2(-1.0 / std::sqrt(hidden), 1.0 / std::sqrt(hidden));
  for (int r = 0; r < hidden; ++r) {
    for (int c = 0; c < inputs; ++c) p.W1(r, c) = u1(rng);
  }
  for (int r = 0; r < hidden; ++r) p.b1[r] = u1(rng);
  for (int r = 0; r < hidden; ++r) p.W2[r] = u2(rng);
  p.b2 = u2(rng);
  return p;
}

namespace detail {

inline Eigen::MatrixXd leaky(const Eigen::MatrixXd& z, double slope) {
  return z.unaryExpr([slope](double v) { return v >= 0.0 ? v : slope * v; });
}

}  // namespace detail

inline double mlp_forward(const MlpParams& p, std::span<const double> x) {
  if (static_cast<int>(x.size()) != p.inputs()) throw std::invalid_argument("mlp_forward: feature length mismatch");
  const Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(x.size()));
  const Eigen::VectorXd h = detail::leaky(p.W1 * xv + p.b1, p.slope);
  return p.W2.dot(h) + p.b2;
}

/// Predictions for a batch stored one sample per row.
inline Eigen::VectorXd mlp_forward_batch(const MlpParams& p, const Eigen::MatrixXd& X) {
  if (X.cols() != p.inputs()) throw std::invalid_argument("mlp_forward: feature length mismatch");
  const Eigen::MatrixXd Z = (p.W1 * X.transpose()).colwise() + p.b1;
  return (p.W2 * detail::leaky(Z, p.slope)).transpose().array() + p.b2;
}

struct MlpGrads {
  Eigen::MatrixXd W1;
  Eigen::VectorXd b1;
  Eigen::RowVectorXd W2;
  double b2 = 0.0;
};

/// Gradient of mean |y - t|. The subgradient at zero residual is 0 and the
/// activation uses its positive branch at 0.
inline MlpGrads mlp_backward(const MlpParams& p, const Eigen::MatrixXd& X, const Eigen::VectorXd& t,
                             double* loss = nullptr) {
  if (X.rows() == 0 || X.rows() != t.size()) throw std::invalid_argument("mlp_backward: empty or mismatched batch");
  if (X.cols() != p.inputs()) throw std::invalid_argument("mlp_backward: feature length mismatch");
  const double n = static_cast<double>(X.rows());
  const Eigen::MatrixXd Z = (p.W1 * X.transpose()).colwise() + p.b1;
  const Eigen::MatrixXd A = detail::leaky(Z, p.slope);
  const Eigen::RowVectorXd y = (p.W2 * A).array() + p.b2;
  const Eigen::RowVectorXd r = y - t.transpose();
  if (loss) *loss = r.cwiseAbs().sum() / n;
  const Eigen::RowVectorXd g = r.unaryExpr([n](double v) { return v > 0.0 ? 1.0 / n : (v < 0.0 ? -1.0 / n : 0.0); });
  MlpGrads G;
  G.W2 = g * A.transpose();
  G.b2 = g.sum();
  const double slope = p.slope;
  const Eigen::MatrixXd dZ = (p.W2.transpose() * g).cwiseProduct(
      Z.unaryExpr([slope](double v) { return v >= 0.0 ? 1.0 : slope; }));
  G.W1 = dZ * X;
  G.b1 = dZ.rowwise().sum();
  return G;
}

inline double mean_l1(const MlpParams& p, const Eigen::MatrixXd& X, const Eigen::VectorXd& t) {
  if (X.rows() == 0) return 0.0;
  return (mlp_forward_batch(p, X) - t).cwiseAbs().mean();
}

struct AdamState {
  MlpGrads m;
  MlpGrads v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline AdamState adam_init(const MlpParams& p) {
  AdamState s;
  for (MlpGrads* g : {&s.m, &s.v}) {
    g->W1 = Eigen::MatrixXd::Zero(p.W1.rows(), p.W1.cols());
    g->b1 = Eigen::VectorXd::Zero(p.b1.size());
    g->W2 = Eigen::RowVectorXd::Zero(p.W2.size());
    g->b2 = 0.0;
  }
  return s;
}

inline void adam_step(MlpParams& p, const MlpGrads& g, AdamState& s, double lr) {
  if (s.m.W1.rows() != p.W1.rows() || s.m.W1.cols() != p.W1.cols()) {
    throw std::invalid_argument("adam_step: optimizer state does not match parameters");
  }
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  const double b1 = s.beta1, b2 = s.beta2, eps = s.eps;
  const auto update = [&](auto& param, const auto& grad, auto& m, auto& v) {
    m = b1 * m + (1.0 - b1) * grad;
    v = b2 * v + (1.0 - b2) * grad.cwiseProduct(grad);
    param -= (lr * (m / c1).array() / ((v / c2).array().sqrt() + eps)).matrix();
  };
  update(p.W1, g.W1, s.m.W1, s.v.W1);
  update(p.b1, g.b1, s.m.b1, s.v.b1);
  update(p.W2, g.W2, s.m.W2, s.v.W2);
  s.m.b2 = b1 * s.m.b2 + (1.0 - b1) * g.b2;
  s.v.b2 = b2 * s.v.b2 + (1.0 - b2) * g.b2 * g.b2;
  p.b2 -= lr * (s.m.b2 / c1) / (std::sqrt(s.v.b2 / c2) + eps);
}

struct TrainConfig {
  int hidden = 2048;
  double lr0 = 0.005;
  int batch = 1024;
  int epochs = 2000;
  int plateau_patience = 10;
  double lr_factor = 0.1;
  double leaky_slope = 0.01;
  double val_fraction = 0.1;
  double min_improvement = 1e-6;
  std::uint64_t seed = 1;
};

struct EpochLog {
  int epoch = 0;
  double train_l1 = 0.0;
  double val_l1 = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  MlpParams best;
  MlpParams last;
  std::vector<EpochLog> curve;
  int best_epoch = 0;
  std::vector<int> train_index;
  std::vector<int> val_index;
};

/// Seeded shuffle split, minibatch Adam, plateau LR reduction on the
/// validation loss, best-validation checkpoint. With no validation rows
/// the training loss takes its place.
inline TrainResult train_mlp(const Eigen::MatrixXd& X, const Eigen::VectorXd& t, const TrainConfig& cfg) {
  const int n = static_cast<int>(X.rows());
  if (n == 0) throw std::invalid_argument("train: empty dataset");
  if (t.size() != n) throw std::invalid_argument("train: feature and target counts differ");
  if (!(cfg.lr0 > 0.0) || cfg.batch < 1 || cfg.plateau_patience < 1 || cfg.epochs < 1) {
    throw std::invalid_argument("train: lr0 > 0, batch >= 1, patience >= 1, epochs >= 1 required");
  }
  if (!(cfg.val_fraction >= 0.0 && cfg.val_fraction < 1.0)) throw std::invalid_argument("train: val_fraction must be in [0, 1)");
  std::mt19937_64 rng(cfg.seed);
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  const int n_val = static_cast<int>(std::floor(cfg.val_fraction * n));
  TrainResult res;
  res.val_index.assign(idx.begin(), idx.begin() + n_val);
  res.train_index.assign(idx.begin() + n_val, idx.end());
  if (res.train_index.empty()) throw std::invalid_argument("train: validation split leaves no training rows");

  const auto gather = [&](const std::vector<int>& rows, Eigen::MatrixXd& Xo, Eigen::VectorXd& to) {
    Xo.resize(static_cast<Eigen::Index>(rows.size()), X.cols());
    to.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      Xo.row(static_cast<Eigen::Index>(i)) = X.row(rows[i]);
      to[static_cast<Eigen::Index>(i)] = t[rows[i]];
    }
  };
  Eigen::MatrixXd Xtr, Xval;
  Eigen::VectorXd ttr, tval;
  gather(res.train_index, Xtr, ttr);
  gather(res.val_index, Xval, tval);

  MlpParams p = mlp_init(static_cast<int>(X.cols()), cfg.hidden, cfg.leaky_slope, rng());
  AdamState adam = adam_init(p);
  double lr = cfg.lr0;
  double best = std::numeric_limits<double>::infinity();
  int bad = 0;
  res.best = p;
  const int batch = std::min<int>(cfg.batch, static_cast<int>(res.train_index.size()));
  std::vector<int> order(res.train_index.size());
  std::iota(order.begin(), order.end(), 0);
  Eigen::MatrixXd Xb;
  Eigen::VectorXd tb;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      Xb.resize(static_cast<Eigen::Index>(end - start), X.cols());
      tb.resize(static_cast<Eigen::Index>(end - start));
      for (std::size_t i = start; i < end; ++i) {
        Xb.row(static_cast<Eigen::Index>(i - start)) = Xtr.row(order[i]);
        tb[static_cast<Eigen::Index>(i - start)] = ttr[order[i]];
      }
      adam_step(p, mlp_backward(p, Xb, tb), adam, lr);
    }
    const double tr = mean_l1(p, Xtr, ttr);
    const double va = n_val > 0 ? mean_l1(p, Xval, tval) : tr;
    res.curve.push_back({epoch, tr, va, lr});
    if (va < best - cfg.min_improvement) {
      best = va;
      res.best = p;
      res.best_epoch = epoch;
      bad = 0;
    } else if (++bad >= cfg.plateau_patience) {
      lr *= cfg.lr_factor;
      bad = 0;
    }
  }
  res.last = p;
  return res;
}

inline void save_mlp(std::ostream& out, const MlpParams& p) {
  out << p.inputs() << ' ' << p.hidden() << " 1 " << csv::fmt(p.slope) << '\n';
  const auto write = [&](double v, bool last) { out << csv::fmt(v) << (last ? '\n' : ' '); };
  for (int r = 0; r < p.hidden(); ++r) {
    for (int c = 0; c < p.inputs(); ++c) write(p.W1(r, c), c + 1 == p.inputs());
  }
  for (int r = 0; r < p.hidden(); ++r) write(p.b1[r], r + 1 == p.hidden());
  for (int r = 0; r < p.hidden(); ++r) write(p.W2[r], r + 1 == p.hidden());
  write(p.b2, true);
}

inline MlpParams load_mlp(std::istream& in, const std::string& source = "model") {
  int inputs = 0, hidden = 0, outputs = 0;
  std::string slope_text;
  if (!(in >> inputs >> hidden >> outputs >> slope_text) || inputs < 1 || hidden < 1 || outputs != 1) {
    throw std::runtime_error(source + ": bad model header");
  }
  auto p = mlp_zeros(inputs, hidden, csv::to_double(slope_text, source));
  std::string tok;
  const auto next = [&]() {
    if (!(in >> tok)) throw std::runtime_error(source + ": truncated model file");
    return csv::to_double(tok, source);
  };
  for (int r = 0; r < hidden; ++r) {
    for (int c = 0; c < inputs; ++c) p.W1(r, c) = next();
  }
  for (int r = 0; r < hidden; ++r) p.b1[r] = next();
  for (int r = 0; r < hidden; ++r) p.W2[r] = next();
  p.b2 = next();
  if (in >> tok) throw std::runtime_error(source + ": trailing data in model file");
  return p;
}

inline MlpParams load_mlp_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model file: " + path.string());
  return load_mlp(in, path.string());
}

inline void save_loss_curve(std::ostream& out, const std::vector<EpochLog>& curve) {
  csv::write_row(out, {"epoch", "train_l1", "val_l1", "lr"});
  for (const auto& e : curve) {
    csv::write_row(out, {std::to_string(e.epoch), csv::fmt(e.train_l1), csv::fmt(e.val_l1), csv::fmt(e.lr)});
  }
}

}  // namespace objrace
