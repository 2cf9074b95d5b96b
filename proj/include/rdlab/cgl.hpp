#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include "rdlab/systems.hpp"

namespace rdlab {

using Eigen::MatrixXcd;
using Eigen::VectorXcd;

// Complex Ginzburg-Landau equation u_t = -(nu + i) A u - i c |u|^{2s} u on
// (0, pi) with Dirichlet conditions, truncated to N sine modes with
// eigenvalues alpha_j = j^2, advanced by Strang splitting: the linear flow is
// exact in mode space, the nonlinear flow is an exact pointwise phase
// rotation on a padded collocation grid.  The kick map adds the noise
// coefficients after the unit-time free flow, so D_eta S = I.
struct CGLSpec {
  int N = 16;
  double nu = 0.1;
  double c = 1.0;
  int s = 1;
  int substeps = 64;
  int pad = 2;  // collocation grid has pad*N points

  double alpha(int j) const { return double(j) * double(j); }  // j = 1..N
  double kick_amplitude(int j) const { return 0.1 / (double(j) * double(j)); }

  void validate() const {
    if (N < 1 || nu <= 0 || c < 0 || s < 1 || substeps < 1 || pad < 2)
      throw std::invalid_argument("CGLSpec: bad parameters");
  }
};

// State layout: (Re u_1..Re u_N, Im u_1..Im u_N).
class CGLMap final : public TimeOneMap {
 public:
  explicit CGLMap(CGLSpec spec) : s_(spec) {
    s_.validate();
    const int M = s_.pad * s_.N;
    synth_.resize(M, s_.N);
    for (int k = 0; k < M; ++k) {
      const double x = M_PI * (k + 1) / (M + 1);
      for (int j = 0; j < s_.N; ++j) synth_(k, j) = std::sin((j + 1) * x);
    }
    // Discrete sine orthogonality: sum_k sin(j x_k) sin(l x_k) = (M+1)/2.
    analys_ = (2.0 / (M + 1)) * synth_.transpose();
    const double dt = 1.0 / s_.substeps;
    lin_full_.resize(s_.N);
    lin_half_.resize(s_.N);
    for (int j = 0; j < s_.N; ++j) {
      const std::complex<double> lam(-s_.nu * s_.alpha(j + 1),
                                     -s_.alpha(j + 1));
      lin_full_[j] = std::exp(lam * dt);
      lin_half_[j] = std::exp(lam * (dt / 2));
    }
  }

  const CGLSpec& spec() const { return s_; }
  int dim_state() const override { return 2 * s_.N; }
  int dim_noise() const override { return 2 * s_.N; }
  int grid_points() const { return s_.pad * s_.N; }

  VectorXcd to_modes(const VectorXd& v) const {
    VectorXcd u(s_.N);
    for (int j = 0; j < s_.N; ++j)
      u[j] = std::complex<double>(v[j], v[s_.N + j]);
    return u;
  }

  VectorXd from_modes(const VectorXcd& u) const {
    VectorXd v(2 * s_.N);
    for (int j = 0; j < s_.N; ++j) {
      v[j] = u[j].real();
      v[s_.N + j] = u[j].imag();
    }
    return v;
  }

  // Free unit-time flow (no kick).
  VectorXcd free_flow(VectorXcd u) const {
    const double dt = 1.0 / s_.substeps;
    for (int j = 0; j < s_.N; ++j) u[j] *= lin_half_[j];
    for (int step = 0; step < s_.substeps; ++step) {
      nonlinear_rotation(u, dt);
      if (step + 1 < s_.substeps)
        for (int j = 0; j < s_.N; ++j) u[j] *= lin_full_[j];
    }
    for (int j = 0; j < s_.N; ++j) u[j] *= lin_half_[j];
    return u;
  }

  VectorXd apply(const VectorXd& v, const VectorXd& eta) const override {
    if (v.size() != dim_state() || eta.size() != dim_noise())
      throw std::invalid_argument("CGLMap: dim mismatch");
    VectorXd out = from_modes(free_flow(to_modes(v))) + eta;
    if (!out.allFinite()) throw std::runtime_error("CGLMap: blowup");
    return out;
  }

  // Tangent of the free flow propagated through the same splitting stages.
  MatrixXd jac_state(const VectorXd& v, const VectorXd&) const override {
    const double dt = 1.0 / s_.substeps;
    VectorXcd u = to_modes(v);
    MatrixXd J = MatrixXd::Identity(dim_state(), dim_state());
    apply_linear_tangent(u, J, lin_half_);
    for (int step = 0; step < s_.substeps; ++step) {
      nonlinear_tangent(u, J, dt);
      nonlinear_rotation(u, dt);
      if (step + 1 < s_.substeps) apply_linear_tangent(u, J, lin_full_);
    }
    apply_linear_tangent(u, J, lin_half_);
    return J;
  }

  MatrixXd jac_noise(const VectorXd&, const VectorXd&) const override {
    return MatrixXd::Identity(dim_state(), dim_noise());
  }

  // Sobolev-type weights sqrt(alpha_j) = j for both components of mode j.
  VectorXd metric_weight() const override {
    VectorXd w(2 * s_.N);
    for (int j = 0; j < s_.N; ++j) w[j] = w[s_.N + j] = double(j + 1);
    return w;
  }

 private:
  // u(x_k) -> u(x_k) exp(-i c tau |u(x_k)|^{2s}) pointwise, re-analysed onto
  // the first N modes (aliases land above N for s = 1 with pad >= 2).
  void nonlinear_rotation(VectorXcd& u, double tau) const {
    if (s_.c == 0.0) return;
    VectorXcd phys = synth_ * u;
    for (int k = 0; k < phys.size(); ++k) {
      const double amp2 = std::norm(phys[k]);
      phys[k] *= std::exp(std::complex<double>(0.0, -s_.c * tau *
                                               std::pow(amp2, s_.s)));
    }
    u = analys_ * phys;
  }

  // Real-linear tangent of the phase rotation:
  // d(z e^{-i c tau |z|^2s}) = e^{-i...}(dz - i c tau s |z|^{2(s-1)} z *
  //                                       2 Re(conj(z) dz)).
  void nonlinear_tangent(const VectorXcd& u, MatrixXd& J, double tau) const {
    if (s_.c == 0.0) return;
    const int N = s_.N, M = grid_points();
    VectorXcd phys = synth_ * u;
    // Tangent columns in physical space: real and imaginary grid values.
    // J maps input perturbations to mode perturbations (2N rows); convert to
    // grid, rotate, convert back.
    MatrixXd Pr = synth_ * J.topRows(N);     // Re on grid, M x 2N
    MatrixXd Pi = synth_ * J.bottomRows(N);  // Im on grid
    for (int k = 0; k < M; ++k) {
      const double x = phys[k].real(), y = phys[k].imag();
      const double amp2 = x * x + y * y;
      const double theta = -s_.c * tau * std::pow(amp2, s_.s);
      const double dtheta =
          -s_.c * tau * s_.s *
          (s_.s == 1 ? 1.0 : std::pow(amp2, s_.s - 1));
      const double ct = std::cos(theta), st = std::sin(theta);
      for (int col = 0; col < 2 * N; ++col) {
        const double dx = Pr(k, col), dy = Pi(k, col);
        const double damp2 = 2.0 * (x * dx + y * dy);
        // d(z e^{i theta}) = e^{i theta} (dz + i z dtheta * damp2)
        const double ddx = dx - y * dtheta * damp2;
        const double ddy = dy + x * dtheta * damp2;
        Pr(k, col) = ct * ddx - st * ddy;
        Pi(k, col) = st * ddx + ct * ddy;
      }
    }
    J.topRows(N) = analys_ * Pr;
    J.bottomRows(N) = analys_ * Pi;
  }

  void apply_linear_tangent(VectorXcd& u, MatrixXd& J,
                            const std::vector<std::complex<double>>& mult) const {
    const int N = s_.N;
    for (int j = 0; j < N; ++j) {
      u[j] *= mult[j];
      const double a = mult[j].real(), b = mult[j].imag();
      const Eigen::RowVectorXd re = J.row(j), im = J.row(N + j);
      J.row(j) = a * re - b * im;
      J.row(N + j) = b * re + a * im;
    }
  }

  CGLSpec s_;
  MatrixXd synth_, analys_;
  std::vector<std::complex<double>> lin_full_, lin_half_;
};

// Lyapunov functional: (pi/4) sum alpha_j |u_j|^2 + c/(2s+2) int |u|^{2s+2},
// the integral by quadrature on a fine sine-collocation grid.
inline double cgl_energy(const CGLMap& map, const VectorXd& v,
                         int quad_points = 512) {
  const CGLSpec& s = map.spec();
  VectorXcd u = map.to_modes(v);
  double e = 0.0;
  for (int j = 0; j < s.N; ++j)
    e += 0.5 * s.alpha(j + 1) * std::norm(u[j]) * (M_PI / 2.0);
  if (s.c > 0.0) {
    double nl = 0.0;
    for (int k = 0; k < quad_points; ++k) {
      const double x = M_PI * (k + 1) / (quad_points + 1);
      std::complex<double> val(0.0, 0.0);
      for (int j = 0; j < s.N; ++j) val += u[j] * std::sin((j + 1) * x);
      nl += std::pow(std::norm(val), s.s + 1);
    }
    nl *= M_PI / (quad_points + 1);
    e += s.c / (2.0 * s.s + 2.0) * nl;
  }
  return e;
}

inline VectorXd cgl_kick_step(const CGLMap& map, const VectorXd& v,
                              const VectorXd& eta) {
  return map.apply(v, eta);
}

}  // namespace rdlab
