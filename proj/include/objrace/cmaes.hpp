#pragma once

// (mu/mu_w, lambda)-CMA-ES with the default strategy parameters of
// Hansen's tutorial. Dimension is dynamic; ask/tell are split so that
// candidate evaluation can happen elsewhere.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

namespace objrace {

struct CmaState {
  Eigen::VectorXd mean;
  double sigma = 1.0;
  Eigen::MatrixXd cov;
  Eigen::VectorXd path_sigma;
  Eigen::VectorXd path_c;
  int generation = 0;
  int lambda = 0;
  int mu = 0;
  Eigen::VectorXd weights;
  double mu_eff = 0.0;
  double c_sigma = 0.0;
  double d_sigma = 0.0;
  double c_c = 0.0;
  double c1 = 0.0;
  double c_mu = 0.0;
  double chi_n = 0.0;
  int repairs = 0;  // eigenvalue floorings applied so far

  int dim() const { return static_cast<int>(mean.size()); }
};

inline CmaState cma_init(const Eigen::VectorXd& mean, double sigma, int lambda = 0) {
  const int n = static_cast<int>(mean.size());
  if (n < 1) throw std::invalid_argument("cma_init: empty mean");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("cma_init: sigma must be positive");
  if (lambda == 0) lambda = 4 + static_cast<int>(std::floor(3.0 * std::log(n)));
  if (lambda < 2) throw std::invalid_argument("cma_init: lambda must be >= 2");
  CmaState s;
  s.mean = mean;
  s.sigma = sigma;
  s.cov = Eigen::MatrixXd::Identity(n, n);
  s.path_sigma = Eigen::VectorXd::Zero(n);
  s.path_c = Eigen::VectorXd::Zero(n);
  s.lambda = lambda;
  s.mu = lambda / 2;
  s.weights.resize(s.mu);
  for (int i = 0; i < s.mu; ++i) s.weights[i] = std::log((lambda + 1.0) / 2.0) - std::log(i + 1.0);
  s.weights /= s.weights.sum();
  s.mu_eff = 1.0 / s.weights.squaredNorm();
  const double nd = n;
  s.c_sigma = (s.mu_eff + 2.0) / (nd + s.mu_eff + 5.0);
  s.d_sigma = 1.0 + 2.0 * std::max(0.0, std::sqrt((s.mu_eff - 1.0) / (nd + 1.0)) - 1.0) + s.c_sigma;
  s.c_c = (4.0 + s.mu_eff / nd) / (nd + 4.0 + 2.0 * s.mu_eff / nd);
  s.c1 = 2.0 / ((nd + 1.3) * (nd + 1.3) + s.mu_eff);
  s.c_mu = std::min(1.0 - s.c1, 2.0 * (s.mu_eff - 2.0 + 1.0 / s.mu_eff) / ((nd + 2.0) * (nd + 2.0) + s.mu_eff));
  s.chi_n = std::sqrt(nd) * (1.0 - 1.0 / (4.0 * nd) + 1.0 / (21.0 * nd * nd));
  return s;
}

namespace detail {

struct CmaEigen {
  Eigen::MatrixXd B;
  Eigen::VectorXd D;  // standard deviations along the axes of B
};

inline CmaEigen cma_eigen(CmaState& s) {
  Eigen::MatrixXd sym = 0.5 * (s.cov + s.cov.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  if (es.info() != Eigen::Success) throw std::runtime_error("cma: eigendecomposition failed");
  Eigen::VectorXd ev = es.eigenvalues();
  bool floored = false;
  for (int i = 0; i < ev.size(); ++i) {
    if (!(ev[i] > 1e-12)) {
      ev[i] = 1e-12;
      floored = true;
    }
  }
  if (floored) {
    ++s.repairs;
    sym = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  }
  s.cov = sym;
  return {es.eigenvectors(), ev.cwiseSqrt()};
}

}  // namespace detail

/// Draws lambda candidates from N(mean, sigma^2 C). Deterministic in seed.
/// Also symmetrizes C and floors its eigenvalues at 1e-12.
inline std::vector<Eigen::VectorXd> cma_ask(CmaState& s, std::uint64_t seed) {
  const auto eig = detail::cma_eigen(s);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Eigen::VectorXd> out;
  out.reserve(s.lambda);
  for (int k = 0; k < s.lambda; ++k) {
    Eigen::VectorXd z(s.dim());
    for (int i = 0; i < s.dim(); ++i) z[i] = gauss(rng);
    out.push_back(s.mean + s.sigma * (eig.B * eig.D.asDiagonal() * z));
  }
  return out;
}

/// Rank-based update; lower fitness is better. Ties are broken by the
/// genome values so the result does not depend on the input order.
inline void cma_tell(CmaState& s, const std::vector<Eigen::VectorXd>& genomes,
                     const std::vector<double>& fitness) {
  const int n = s.dim();
  if (static_cast<int>(genomes.size()) != s.lambda || fitness.size() != genomes.size()) {
    throw std::invalid_argument("cma_tell: expected lambda genomes and fitnesses");
  }
  for (double f : fitness) {
    if (!std::isfinite(f)) throw std::invalid_argument("cma_tell: non-finite fitness");
  }
  for (const auto& g : genomes) {
    if (g.size() != n) throw std::invalid_argument("cma_tell: genome dimension mismatch");
  }
  const auto eig = detail::cma_eigen(s);
  const Eigen::MatrixXd inv_sqrt = eig.B * eig.D.cwiseInverse().asDiagonal() * eig.B.transpose();

  const bool flat = std::all_of(fitness.begin(), fitness.end(), [&](double f) { return f == fitness[0]; });
  Eigen::VectorXd step = Eigen::VectorXd::Zero(n);  // (m' - m) / sigma
  std::vector<int> order(genomes.size());
  std::iota(order.begin(), order.end(), 0);
  if (!flat) {
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (fitness[a] != fitness[b]) return fitness[a] < fitness[b];
      return std::lexicographical_compare(genomes[a].data(), genomes[a].data() + n, genomes[b].data(),
                                          genomes[b].data() + n);
    });
    for (int i = 0; i < s.mu; ++i) step += s.weights[i] * (genomes[order[i]] - s.mean) / s.sigma;
  }

  s.path_sigma = (1.0 - s.c_sigma) * s.path_sigma +
                 std::sqrt(s.c_sigma * (2.0 - s.c_sigma) * s.mu_eff) * (inv_sqrt * step);
  const double ps_norm = s.path_sigma.norm();
  const double denom = std::sqrt(1.0 - std::pow(1.0 - s.c_sigma, 2.0 * (s.generation + 1)));
  const bool h_sigma = ps_norm / denom < (1.4 + 2.0 / (n + 1.0)) * s.chi_n;
  s.path_c = (1.0 - s.c_c) * s.path_c +
             (h_sigma ? std::sqrt(s.c_c * (2.0 - s.c_c) * s.mu_eff) : 0.0) * step;

  if (!flat) {
    Eigen::MatrixXd rank_mu = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < s.mu; ++i) {
      const Eigen::VectorXd y = (genomes[order[i]] - s.mean) / s.sigma;
      rank_mu += s.weights[i] * y * y.transpose();
    }
    const double dh = (1.0 - (h_sigma ? 1.0 : 0.0)) * s.c_c * (2.0 - s.c_c);
    s.cov = (1.0 - s.c1 - s.c_mu) * s.cov + s.c1 * (s.path_c * s.path_c.transpose() + dh * s.cov) +
            s.c_mu * rank_mu;
    s.cov = 0.5 * (s.cov + s.cov.transpose());
    s.mean += s.sigma * step;
  }
  s.sigma *= std::exp((s.c_sigma / s.d_sigma) * (ps_norm / s.chi_n - 1.0));
  ++s.generation;
}

}  // namespace objrace
