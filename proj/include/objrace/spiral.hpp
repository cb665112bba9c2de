#pragma once

// Cubic curvature spirals: kappa(s) = a0 + a1 s + a2 s^2 + a3 s^3, solved
// as a two-point boundary value problem by Newton shooting.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "objrace/track.hpp"

namespace objrace {

struct SpiralCoeffs {
  double a0 = 0.0;
  double a1 = 0.0;
  double a2 = 0.0;
  double a3 = 0.0;
  double length = 0.0;

  double kappa(double s) const { return a0 + s * (a1 + s * (a2 + s * a3)); }
  /// Heading change accumulated from 0 to s.
  double heading(double s) const {
    return s * (a0 + s * (a1 / 2.0 + s * (a2 / 3.0 + s * a3 / 4.0)));
  }
};

struct SpiralPoint {
  double x;
  double y;
  double theta;
  double kappa;
  double s;
};

/// Start pose of a spiral: position, heading and curvature.
struct SpiralStart {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
  double kappa = 0.0;
};

/// Knot parameterization: curvatures at s = 0, L/3, 2L/3, L plus L.
struct SpiralKnots {
  double k1 = 0.0;
  double k2 = 0.0;
  double k3 = 0.0;
  double length = 0.0;
};

inline SpiralCoeffs coeffs_from_knots(double k0, const SpiralKnots& p) {
  const double L = p.length;
  SpiralCoeffs c;
  c.a0 = k0;
  c.a1 = -(11.0 * k0 - 18.0 * p.k1 + 9.0 * p.k2 - 2.0 * p.k3) / (2.0 * L);
  c.a2 = 9.0 * (2.0 * k0 - 5.0 * p.k1 + 4.0 * p.k2 - p.k3) / (2.0 * L * L);
  c.a3 = -9.0 * (k0 - 3.0 * p.k1 + 3.0 * p.k2 - p.k3) / (2.0 * L * L * L);
  c.length = L;
  return c;
}

/// End pose of a spiral by composite Simpson quadrature.
inline SpiralPoint integrate_spiral(const SpiralStart& start, const SpiralCoeffs& c,
                                   int intervals = 32) {
  if (intervals % 2) ++intervals;
  const double h = c.length / intervals;
  double sx = 0.0, sy = 0.0;
  for (int i = 0; i <= intervals; ++i) {
    const double s = i * h;
    const double th = start.theta + c.heading(s);
    const double w = (i == 0 || i == intervals) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    sx += w * std::cos(th);
    sy += w * std::sin(th);
  }
  return {start.x + sx * h / 3.0, start.y + sy * h / 3.0,
          wrap_angle(start.theta + c.heading(c.length)), c.kappa(c.length), c.length};
}

/// Samples `count` + 1 evenly spaced points along the spiral (Simpson per step).
inline std::vector<SpiralPoint> sample_spiral(const SpiralStart& start, const SpiralCoeffs& c,
                                              int count) {
  std::vector<SpiralPoint> pts;
  pts.reserve(count + 1);
  const double ds = c.length / count;
  double x = start.x, y = start.y;
  pts.push_back({x, y, wrap_angle(start.theta), c.kappa(0.0), 0.0});
  for (int i = 1; i <= count; ++i) {
    const double s0 = (i - 1) * ds;
    const double sm = s0 + ds / 2;
    const double s1 = i * ds;
    const double t0 = start.theta + c.heading(s0);
    const double tm = start.theta + c.heading(sm);
    const double t1 = start.theta + c.heading(s1);
    x += ds / 6.0 * (std::cos(t0) + 4.0 * std::cos(tm) + std::cos(t1));
    y += ds / 6.0 * (std::sin(t0) + 4.0 * std::sin(tm) + std::sin(t1));
    pts.push_back({x, y, wrap_angle(t1), c.kappa(s1), s1});
  }
  return pts;
}

struct SpiralSolveOptions {
  int max_iters = 25;
  double tol = 1e-3;
  int quadrature_intervals = 32;
};

struct SpiralSolution {
  SpiralCoeffs coeffs;
  SpiralKnots knots;
  int iterations = 0;
};

namespace detail {

inline std::array<double, 4> spiral_residual(const SpiralStart& start, const Pose2& goal,
                                             const SpiralKnots& p, int intervals) {
  const auto c = coeffs_from_knots(start.kappa, p);
  const auto end = integrate_spiral(start, c, intervals);
  return {end.x - goal.x, end.y - goal.y, wrap_angle(end.theta - goal.yaw), p.k3};
}

// Gaussian elimination with partial pivoting; false when singular.
inline bool solve4(std::array<std::array<double, 4>, 4> A, std::array<double, 4> b,
                   std::array<double, 4>& x) {
  for (int col = 0; col < 4; ++col) {
    int piv = col;
    for (int r = col + 1; r < 4; ++r) {
      if (std::abs(A[r][col]) > std::abs(A[piv][col])) piv = r;
    }
    if (std::abs(A[piv][col]) < 1e-14) return false;
    std::swap(A[piv], A[col]);
    std::swap(b[piv], b[col]);
    for (int r = col + 1; r < 4; ++r) {
      const double f = A[r][col] / A[col][col];
      for (int k = col; k < 4; ++k) A[r][k] -= f * A[col][k];
      b[r] -= f * b[col];
    }
  }
  for (int r = 3; r >= 0; --r) {
    double acc = b[r];
    for (int k = r + 1; k < 4; ++k) acc -= A[r][k] * x[k];
    x[r] = acc / A[r][r];
  }
  return true;
}

inline double residual_norm(const std::array<double, 4>& r) {
  return std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2] + r[3] * r[3]);
}

}  // namespace detail

/// Initial knots for a start/goal pair when no warm start is available.
inline SpiralKnots default_spiral_guess(const SpiralStart& start, const Pose2& goal) {
  const double dx = goal.x - start.x, dy = goal.y - start.y;
  const double dist = std::hypot(dx, dy);
  const double dtheta = wrap_angle(goal.yaw - start.theta);
  return {0.0, 0.0, 0.0, dist * (dtheta * dtheta / 5.0 + 1.0) + 2.0 / 5.0 * std::abs(dtheta)};
}

/// Solves for a cubic spiral from `start` to `goal` ending with zero
/// curvature. Newton iteration with a central-difference Jacobian; returns
/// nullopt on non-convergence.
inline std::optional<SpiralSolution> solve_spiral(const SpiralStart& start, const Pose2& goal,
                                                  const SpiralSolveOptions& opt = {},
                                                  std::optional<SpiralKnots> warm = std::nullopt) {
  SpiralKnots p = warm.value_or(default_spiral_guess(start, goal));
  if (!(p.length > 0.0)) p = default_spiral_guess(start, goal);
  if (!(p.length > 0.0)) return std::nullopt;
  const int n = opt.quadrature_intervals;
  auto res = detail::spiral_residual(start, goal, p, n);
  for (int it = 0; it <= opt.max_iters; ++it) {
    if (std::hypot(res[0], res[1]) < opt.tol && std::abs(res[2]) < opt.tol &&
        std::abs(res[3]) < opt.tol) {
      return SpiralSolution{coeffs_from_knots(start.kappa, p), p, it};
    }
    if (it == opt.max_iters) break;
    std::array<std::array<double, 4>, 4> J{};
    for (int j = 0; j < 4; ++j) {
      SpiralKnots lo = p, hi = p;
      double* plo = j == 0 ? &lo.k1 : j == 1 ? &lo.k2 : j == 2 ? &lo.k3 : &lo.length;
      double* phi = j == 0 ? &hi.k1 : j == 1 ? &hi.k2 : j == 2 ? &hi.k3 : &hi.length;
      const double h = 1e-6 * std::max(1.0, std::abs(*phi));
      *plo -= h;
      *phi += h;
      const auto rl = detail::spiral_residual(start, goal, lo, n);
      const auto rh = detail::spiral_residual(start, goal, hi, n);
      for (int i = 0; i < 4; ++i) J[i][j] = (rh[i] - rl[i]) / (2.0 * h);
    }
    std::array<double, 4> delta{};
    if (!detail::solve4(J, {-res[0], -res[1], -res[2], -res[3]}, delta)) return std::nullopt;
    // damped step: halve until the residual shrinks
    const double base = detail::residual_norm(res);
    double step = 1.0;
    bool accepted = false;
    for (int k = 0; k < 8; ++k, step *= 0.5) {
      SpiralKnots trial{p.k1 + step * delta[0], p.k2 + step * delta[1], p.k3 + step * delta[2],
                        p.length + step * delta[3]};
      if (!(trial.length > 1e-3)) continue;
      const auto r = detail::spiral_residual(start, goal, trial, n);
      if (detail::residual_norm(r) < base) {
        p = trial;
        res = r;
        accepted = true;
        break;
      }
    }
    if (!accepted) return std::nullopt;
  }
  return std::nullopt;
}

}  // namespace objrace
