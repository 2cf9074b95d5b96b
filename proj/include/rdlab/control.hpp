#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "rdlab/systems.hpp"

namespace rdlab {

// B = A^T (A A^T + delta I)^{-1} through a symmetric positive-definite
// solve; the regularized right-inverse of the noise-to-state derivative.
inline MatrixXd regularized_right_inverse(const MatrixXd& A, double delta) {
  if (delta <= 0.0)
    throw std::invalid_argument("regularized_right_inverse: delta > 0");
  MatrixXd M = A * A.transpose();
  M.diagonal().array() += delta;
  // B^T = (A A^T + delta I)^{-1} A.
  return M.ldlt().solve(A).transpose();
}

inline MatrixXd orthonormal_basis(const MatrixXd& G) {
  if (G.cols() == 0) return G;
  Eigen::HouseholderQR<MatrixXd> qr(G);
  return qr.householderQ() * MatrixXd::Identity(G.rows(), G.cols());
}

// Max over unit f in span(G) of |A B f - f|.
inline double right_inverse_residual(const MatrixXd& A, const MatrixXd& B,
                                     const MatrixXd& G) {
  if (G.cols() == 0) return 0.0;
  const MatrixXd Q = orthonormal_basis(G);
  const MatrixXd R = (A * B - MatrixXd::Identity(A.rows(), A.rows())) * Q;
  return Eigen::JacobiSVD<MatrixXd>(R).singularValues()(0);
}

inline std::vector<double> regularization_grid() {
  std::vector<double> g;
  for (int e = 0; e >= -8; --e) g.push_back(std::pow(10.0, e));
  return g;
}

struct RegularizationChoice {
  double delta = 0.0;
  double worst_residual = 0.0;
};

// Largest delta on the log grid whose worst-case residual over the sampled
// derivative family stays within eps; failure signals that the approximate
// range condition does not hold at some sampled point.
inline RegularizationChoice select_regularization(
    const std::vector<MatrixXd>& A_family, const MatrixXd& G, double eps) {
  if (A_family.empty())
    throw std::invalid_argument("select_regularization: empty family");
  for (double delta : regularization_grid()) {
    double worst = 0.0;
    for (const MatrixXd& A : A_family)
      worst = std::max(
          worst,
          right_inverse_residual(A, regularized_right_inverse(A, delta), G));
    if (worst <= eps) return {delta, worst};
  }
  throw std::runtime_error(
      "select_regularization: no grid delta meets the residual target "
      "(approximate range condition fails at a sampled point)");
}

struct ControlShiftResult {
  VectorXd shift;     // the noise-space correction
  double c_prime;     // operator norm of the map (v - v') -> shift
};

// Noise shift B_delta(v, xi) P_G D_v S (v - v') steering the second
// trajectory toward the first.
inline ControlShiftResult control_shift(const TimeOneMap& map,
                                        const MatrixXd& G, double delta,
                                        const VectorXd& v, const VectorXd& vp,
                                        const VectorXd& xi) {
  MatrixXd Ds, A;
  map.jacobians(v, xi, Ds, A);
  const MatrixXd B = regularized_right_inverse(A, delta);
  const MatrixXd Q = orthonormal_basis(G);
  MatrixXd op;
  if (Q.cols() == 0)
    op = MatrixXd::Zero(B.rows(), map.dim_state());
  else
    op = B * (Q * (Q.transpose() * Ds));
  ControlShiftResult out;
  out.shift = op * (v - vp);
  out.c_prime = Eigen::JacobiSVD<MatrixXd>(op).singularValues()(0);
  return out;
}

// Max over pairs and noise-grid points of
// |S(v, xi) - S(v', xi + shift)| / |v - v'| in the map's own norm.
inline double squeezing_certificate(
    const TimeOneMap& map, const MatrixXd& G, double delta,
    const std::vector<std::pair<VectorXd, VectorXd>>& pairs,
    const std::vector<VectorXd>& noise_grid) {
  double worst = 0.0;
  for (const auto& [v, vp] : pairs) {
    const double sep = map.state_norm(v - vp);
    if (sep < 1e-14) continue;
    for (const VectorXd& xi : noise_grid) {
      const VectorXd shift = control_shift(map, G, delta, v, vp, xi).shift;
      const VectorXd gap = map.apply(v, xi) - map.apply(vp, xi + shift);
      worst = std::max(worst, map.state_norm(gap) / sep);
    }
  }
  return worst;
}

struct ControllabilityReport {
  MatrixXd gramian;
  int rank = 0;
  double min_eigenvalue = 0.0;
  bool controllable = false;
};

namespace detail {
// Fourth-order Taylor step of the matrix exponential exp(h A); adequate at
// integrator step sizes.
inline MatrixXd expm_step(const MatrixXd& A, double h) {
  const int n = static_cast<int>(A.rows());
  MatrixXd out = MatrixXd::Identity(n, n);
  MatrixXd term = MatrixXd::Identity(n, n);
  for (int k = 1; k <= 4; ++k) {
    term = (h / k) * (A * term);
    out += term;
  }
  return out;
}

inline ControllabilityReport finish_report(const MatrixXd& W, int rank,
                                           double rank_tol_scale) {
  ControllabilityReport rep;
  rep.gramian = 0.5 * (W + W.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(rep.gramian);
  rep.min_eigenvalue = es.eigenvalues().minCoeff();
  const double top = es.eigenvalues().maxCoeff();
  rep.rank = rank;
  rep.controllable = rep.min_eigenvalue > rank_tol_scale * std::max(top, 0.0);
  return rep;
}
}  // namespace detail

// Time-invariant pair (A, B): Kalman-matrix rank plus the unit-horizon
// Gramian int_0^1 e^{A(1-t)} B B^T e^{A^T(1-t)} dt by trapezoid quadrature.
inline ControllabilityReport kalman_controllability(const MatrixXd& A,
                                                    const MatrixXd& B,
                                                    int quad_steps = 200,
                                                    double rank_tol = 1e-8) {
  const int n = static_cast<int>(A.rows());
  MatrixXd K(n, 2 * n * B.cols());
  MatrixXd P = B;
  for (int k = 0; k < 2 * n; ++k) {
    K.middleCols(k * B.cols(), B.cols()) = P;
    P = A * P;
  }
  Eigen::JacobiSVD<MatrixXd> svd(K);
  const auto& sv = svd.singularValues();
  int rank = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv[i] > rank_tol * sv[0]) ++rank;

  const double h = 1.0 / quad_steps;
  const MatrixXd step = detail::expm_step(A, h);
  MatrixXd X = MatrixXd::Identity(n, n);  // e^{A(1-t)} at t = 1 going down
  MatrixXd W = MatrixXd::Zero(n, n);
  MatrixXd XB = X * B;
  W += 0.5 * (XB * XB.transpose());
  for (int k = 1; k <= quad_steps; ++k) {
    X = X * step;
    XB = X * B;
    W += (k == quad_steps ? 0.5 : 1.0) * (XB * XB.transpose());
  }
  W *= h;
  return detail::finish_report(W, rank, rank_tol);
}

// Time-varying linearisation: A sampled on a uniform grid over [0,1]
// (A.size() - 1 steps of size h); Gramian of the transition operator to the
// final time, trapezoid in t, with rank read from the Gramian spectrum.
inline ControllabilityReport kalman_controllability(
    const std::vector<MatrixXd>& A_path, const MatrixXd& B, double h,
    double rank_tol = 1e-8) {
  if (A_path.size() < 2)
    throw std::invalid_argument("kalman_controllability: short A path");
  const int n = static_cast<int>(A_path.front().rows());
  const int steps = static_cast<int>(A_path.size()) - 1;
  // X_k = Phi(1, t_k), built backward: Phi(1, t_k) = Phi(1, t_{k+1}) *
  // exp(h A(mid)).
  MatrixXd X = MatrixXd::Identity(n, n);
  MatrixXd W = MatrixXd::Zero(n, n);
  MatrixXd XB = X * B;
  W += 0.5 * (XB * XB.transpose());
  for (int k = steps - 1; k >= 0; --k) {
    const MatrixXd Amid = 0.5 * (A_path[k] + A_path[k + 1]);
    X = X * detail::expm_step(Amid, h);
    XB = X * B;
    W += (k == 0 ? 0.5 : 1.0) * (XB * XB.transpose());
  }
  W *= h;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (W + W.transpose()));
  int rank = 0;
  const double top = es.eigenvalues().maxCoeff();
  for (int i = 0; i < es.eigenvalues().size(); ++i)
    if (es.eigenvalues()[i] > rank_tol * std::max(top, 0.0)) ++rank;
  return detail::finish_report(W, rank, rank_tol);
}

}  // namespace rdlab
