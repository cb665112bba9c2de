#pragma once

// Fixed-size determinantal point process sampling (Kulesza & Taskar):
// eigenvector selection conditioned on the subset size through elementary
// symmetric polynomials, then sequential projection sampling.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "objrace/objectives.hpp"

namespace objrace {

inline Eigen::MatrixXd rbf_kernel(const std::vector<ObjectivePoint>& pts, double bandwidth) {
  if (!(bandwidth > 0.0)) throw std::invalid_argument("rbf_kernel: bandwidth must be positive");
  const int n = static_cast<int>(pts.size());
  Eigen::MatrixXd L(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double d = distance(pts[i], pts[j]);
      L(i, j) = std::exp(-d * d / (2.0 * bandwidth * bandwidth));
    }
  }
  return L;
}

/// e[l][m] = elementary symmetric polynomial of degree l over lambda[0..m).
inline std::vector<std::vector<double>> elementary_symmetric(const Eigen::VectorXd& lambda, int k) {
  const int n = static_cast<int>(lambda.size());
  std::vector<std::vector<double>> e(k + 1, std::vector<double>(n + 1, 0.0));
  for (int m = 0; m <= n; ++m) e[0][m] = 1.0;
  for (int l = 1; l <= k; ++l) {
    for (int m = 1; m <= n; ++m) e[l][m] = e[l][m - 1] + lambda[m - 1] * e[l - 1][m - 1];
  }
  return e;
}

/// Samples k indices from the k-DPP with kernel L. Sorted ascending.
inline std::vector<int> kdpp_sample(const Eigen::MatrixXd& L, int k, std::uint64_t seed) {
  const int n = static_cast<int>(L.rows());
  if (L.cols() != n) throw std::invalid_argument("kdpp_sample: kernel must be square");
  if (k < 0 || k > n) throw std::invalid_argument("kdpp_sample: k exceeds the number of points");
  if (k == 0) return {};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (L + L.transpose()));
  if (es.info() != Eigen::Success) throw std::runtime_error("kdpp_sample: eigendecomposition failed");
  Eigen::VectorXd lambda = es.eigenvalues().cwiseMax(1e-12);
  const auto e = elementary_symmetric(lambda, k);

  std::vector<int> chosen_vecs;
  int l = k;
  for (int m = n; m >= 1 && l > 0; --m) {
    const double p = lambda[m - 1] * e[l - 1][m - 1] / e[l][m];
    if (m == l || unit(rng) < p) {
      chosen_vecs.push_back(m - 1);
      --l;
    }
  }

  Eigen::MatrixXd V(n, static_cast<int>(chosen_vecs.size()));
  for (int j = 0; j < V.cols(); ++j) V.col(j) = es.eigenvectors().col(chosen_vecs[j]);

  std::vector<int> out;
  while (V.cols() > 0) {
    Eigen::VectorXd w = V.rowwise().squaredNorm();
    for (int c : out) w[c] = 0.0;
    w /= w.sum();
    double u = unit(rng), acc = 0.0;
    int pick = n - 1;
    while (pick > 0 && !(w[pick] > 0.0)) --pick;
    for (int i = 0; i < n; ++i) {
      acc += w[i];
      if (u < acc) {
        pick = i;
        break;
      }
    }
    out.push_back(pick);

    int pivot = 0;
    for (int j = 1; j < V.cols(); ++j) {
      if (std::abs(V(pick, j)) > std::abs(V(pick, pivot))) pivot = j;
    }
    const Eigen::VectorXd vp = V.col(pivot);
    Eigen::MatrixXd next(n, V.cols() - 1);
    for (int j = 0, c = 0; j < V.cols(); ++j) {
      if (j == pivot) continue;
      next.col(c++) = V.col(j) - vp * (V(pick, j) / vp[pick]);
    }
    for (int j = 0; j < next.cols(); ++j) {
      for (int q = 0; q < j; ++q) next.col(j) -= next.col(q).dot(next.col(j)) * next.col(q);
      const double nrm = next.col(j).norm();
      if (nrm > 0.0) next.col(j) /= nrm;
    }
    V = next;
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<int> dpp_sample(const std::vector<ObjectivePoint>& pts, int k, double bandwidth,
                                   std::uint64_t seed) {
  if (k > static_cast<int>(pts.size())) throw std::invalid_argument("dpp_sample: k exceeds the number of points");
  return kdpp_sample(rbf_kernel(pts, bandwidth), k, seed);
}

}  // namespace objrace
