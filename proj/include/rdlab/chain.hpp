#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "rdlab/noise_kernels.hpp"
#include "rdlab/systems.hpp"

namespace rdlab {

// Chain of n coupled oscillators with on-site potentials a_i q_i^2 + F_i(q_i),
// nearest-neighbour coupling b_i (q_i - q_{i+1})^2, linear damping at both
// ends and scalar forcing at both ends.  State layout: (q_1..q_n, p_1..p_n).
struct OscillatorChainSpec {
  int n = 2;
  VectorXd a = VectorXd::Ones(2);
  VectorXd b = VectorXd::Ones(1);
  double gamma1 = 1.0, gamman = 1.0;
  // Perturbation F applied at every site; needs F'(0) = 0 and F'' > -2 a_i.
  std::function<double(double)> F = [](double x) {
    return 0.1 * (1.0 - std::cos(x));
  };
  std::function<double(double)> dF = [](double x) { return 0.1 * std::sin(x); };
  std::function<double(double)> ddF = [](double x) {
    return 0.1 * std::cos(x);
  };
  double h = 1e-3;   // integrator substep
  int n_basis = 2;   // periodic basis functions per forcing channel

  void validate() const {
    if (n < 1 || a.size() != n || b.size() != n - 1)
      throw std::invalid_argument("OscillatorChainSpec: shape mismatch");
    if (gamma1 < 0 || gamman < 0 || h <= 0 || n_basis < 1)
      throw std::invalid_argument("OscillatorChainSpec: bad parameters");
    // The lower-bound condition on the perturbations, on a grid.
    const double amin = a.minCoeff();
    for (int i = 0; i <= 200; ++i) {
      const double x = -10.0 + 0.1 * i;
      if (ddF(x) <= -2.0 * amin)
        throw std::invalid_argument(
            "OscillatorChainSpec: F'' violates the convexity margin");
    }
    if (std::abs(dF(0.0)) > 1e-12)
      throw std::invalid_argument("OscillatorChainSpec: F'(0) must vanish");
  }
};

inline double chain_potential(const OscillatorChainSpec& s, const VectorXd& q) {
  double V = 0.0;
  for (int i = 0; i < s.n; ++i) V += s.a[i] * q[i] * q[i] + s.F(q[i]);
  for (int i = 0; i + 1 < s.n; ++i) {
    const double d = q[i] - q[i + 1];
    V += s.b[i] * d * d;
  }
  return V;
}

inline VectorXd chain_grad_potential(const OscillatorChainSpec& s,
                                     const VectorXd& q) {
  VectorXd g(s.n);
  for (int i = 0; i < s.n; ++i) {
    g[i] = 2.0 * s.a[i] * q[i] + s.dF(q[i]);
    if (i + 1 < s.n) g[i] += 2.0 * s.b[i] * (q[i] - q[i + 1]);
    if (i > 0) g[i] -= 2.0 * s.b[i - 1] * (q[i - 1] - q[i]);
  }
  return g;
}

inline MatrixXd chain_hessian_potential(const OscillatorChainSpec& s,
                                        const VectorXd& q) {
  MatrixXd H = MatrixXd::Zero(s.n, s.n);
  for (int i = 0; i < s.n; ++i) {
    H(i, i) = 2.0 * s.a[i] + s.ddF(q[i]);
    if (i + 1 < s.n) {
      H(i, i) += 2.0 * s.b[i];
      H(i, i + 1) -= 2.0 * s.b[i];
      H(i + 1, i) -= 2.0 * s.b[i];
    }
    if (i > 0) H(i, i) += 2.0 * s.b[i - 1];
  }
  return H;
}

inline double hamiltonian(const OscillatorChainSpec& s, const VectorXd& p,
                          const VectorXd& q) {
  if (p.size() != s.n || q.size() != s.n)
    throw std::invalid_argument("hamiltonian: dim mismatch");
  return 0.5 * p.squaredNorm() + chain_potential(s, q);
}

// Equations of motion with end forcing (zeta_1, zeta_n); x = (q, p).  A
// single-site chain has one physical end: only the first channel acts.
inline VectorXd chain_vector_field(const OscillatorChainSpec& s,
                                   const VectorXd& x, double zeta1,
                                   double zetan) {
  const int n = s.n;
  VectorXd dx(2 * n);
  dx.head(n) = x.tail(n);
  dx.tail(n) = -chain_grad_potential(s, x.head(n));
  dx[n] += -s.gamma1 * x[n] + zeta1;
  if (n > 1) dx[2 * n - 1] += -s.gamman * x[2 * n - 1] + zetan;
  return dx;
}

// Linearisation about a point: dx' = A(q) dx + B (dzeta_1, dzeta_n).
inline MatrixXd chain_state_jacobian(const OscillatorChainSpec& s,
                                     const VectorXd& q) {
  const int n = s.n;
  MatrixXd A = MatrixXd::Zero(2 * n, 2 * n);
  A.topRightCorner(n, n).setIdentity();
  A.bottomLeftCorner(n, n) = -chain_hessian_potential(s, q);
  A(n, n) -= s.gamma1;
  if (n > 1) A(2 * n - 1, 2 * n - 1) -= s.gamman;
  return A;
}

inline MatrixXd chain_forcing_matrix(const OscillatorChainSpec& s) {
  const int channels = s.n > 1 ? 2 : 1;
  MatrixXd B = MatrixXd::Zero(2 * s.n, channels);
  B(s.n, 0) = 1.0;
  if (s.n > 1) B(2 * s.n - 1, 1) = 1.0;
  return B;
}

struct ChainTrajectory {
  std::vector<VectorXd> states;        // one per substep boundary
  std::vector<double> energy;          // H at the boundaries
  std::vector<double> work_increment;  // integrated dissipation + input per substep
  std::vector<std::pair<double, double>> forcing;  // (zeta_1, zeta_n) per substep
  double h = 0.0;
};

// Time-1 flow of the chain.  The forcing path over [0,1] is given by its
// coefficients over the periodic basis (n_basis per end channel) and held
// piecewise constant on integrator substeps, sampled at substep midpoints.
class OscillatorChain final : public TimeOneMap {
 public:
  explicit OscillatorChain(OscillatorChainSpec spec) : s_(std::move(spec)) {
    s_.validate();
    steps_ = static_cast<int>(std::llround(1.0 / s_.h));
    if (std::abs(steps_ * s_.h - 1.0) > 1e-12)
      throw std::invalid_argument("OscillatorChain: 1/h must be an integer");
  }

  const OscillatorChainSpec& spec() const { return s_; }
  int dim_state() const override { return 2 * s_.n; }
  int channels() const { return s_.n > 1 ? 2 : 1; }
  int dim_noise() const override { return channels() * s_.n_basis; }
  int substeps() const { return steps_; }

  std::pair<double, double> forcing_at(const VectorXd& eta, double t) const {
    double z1 = 0.0, zn = 0.0;
    for (int j = 0; j < s_.n_basis; ++j) {
      const double phi = periodic_basis_eval(j, t);
      z1 += eta[j] * phi;
      if (channels() == 2) zn += eta[s_.n_basis + j] * phi;
    }
    return {z1, zn};
  }

  VectorXd apply(const VectorXd& u, const VectorXd& eta) const override {
    return integrate(u, eta, nullptr, nullptr, nullptr);
  }

  ChainTrajectory trajectory(const VectorXd& u, const VectorXd& eta) const {
    ChainTrajectory traj;
    traj.h = s_.h;
    integrate(u, eta, &traj, nullptr, nullptr);
    return traj;
  }

  // Exact derivative of the discrete flow: the variational equations are
  // advanced through the same RK4 stages as the state.
  MatrixXd jac_state(const VectorXd& u, const VectorXd& eta) const override {
    MatrixXd Js = MatrixXd::Identity(dim_state(), dim_state());
    integrate(u, eta, nullptr, &Js, nullptr);
    return Js;
  }

  MatrixXd jac_noise(const VectorXd& u, const VectorXd& eta) const override {
    MatrixXd Jn = MatrixXd::Zero(dim_state(), dim_noise());
    integrate(u, eta, nullptr, nullptr, &Jn);
    return Jn;
  }

  void jacobians(const VectorXd& u, const VectorXd& eta, MatrixXd& Js,
                 MatrixXd& Jn) const override {
    Js = MatrixXd::Identity(dim_state(), dim_state());
    Jn = MatrixXd::Zero(dim_state(), dim_noise());
    integrate(u, eta, nullptr, &Js, &Jn);
  }

 private:
  // One RK4 substep on the augmented system (x, W, Js, Jn) with constant
  // forcing; A(x) is the state Jacobian of the field, Bz the noise injection.
  VectorXd integrate(const VectorXd& u0, const VectorXd& eta,
                     ChainTrajectory* traj, MatrixXd* Js, MatrixXd* Jn) const {
    if (u0.size() != dim_state() || eta.size() != dim_noise())
      throw std::invalid_argument("OscillatorChain: dim mismatch");
    const int n = s_.n;
    const double h = s_.h;
    VectorXd x = u0;
    if (traj) {
      traj->states.push_back(x);
      traj->energy.push_back(hamiltonian(s_, x.tail(n), x.head(n)));
    }
    const MatrixXd Bforce = chain_forcing_matrix(s_);
    // Stage buffers live outside the substep loop: the integrator runs a
    // thousand substeps per unit time and must not allocate inside it.
    const int d = dim_state();
    VectorXd k1(d), k2(d), k3(d), k4(d), x2(d), x3(d), x4(d);
    for (int step = 0; step < steps_; ++step) {
      const double tm = (step + 0.5) * h;
      const auto [z1, zn] = forcing_at(eta, tm);

      auto field_into = [&](const VectorXd& y, VectorXd& dx) {
        for (int i = 0; i < n; ++i) dx[i] = y[n + i];
        for (int i = 0; i < n; ++i) {
          double g = 2.0 * s_.a[i] * y[i] + s_.dF(y[i]);
          if (i + 1 < n) g += 2.0 * s_.b[i] * (y[i] - y[i + 1]);
          if (i > 0) g -= 2.0 * s_.b[i - 1] * (y[i - 1] - y[i]);
          dx[n + i] = -g;
        }
        dx[n] += -s_.gamma1 * y[n] + z1;
        if (n > 1) dx[2 * n - 1] += -s_.gamman * y[2 * n - 1] + zn;
      };
      auto power = [&](const VectorXd& y) {
        const double p1 = y[n], pn = y[2 * n - 1];
        double w = -s_.gamma1 * p1 * p1 + z1 * p1;
        if (n > 1) w += -s_.gamman * pn * pn + zn * pn;
        return w;
      };

      field_into(x, k1);
      x2 = x;
      x2.noalias() += (0.5 * h) * k1;
      field_into(x2, k2);
      x3 = x;
      x3.noalias() += (0.5 * h) * k2;
      field_into(x3, k3);
      x4 = x;
      x4.noalias() += h * k3;
      field_into(x4, k4);

      if (Js || Jn) {
        // d zeta / d eta at this substep (channels x dim_noise).
        MatrixXd dz = MatrixXd::Zero(channels(), dim_noise());
        for (int j = 0; j < s_.n_basis; ++j) {
          const double phi = periodic_basis_eval(j, tm);
          dz(0, j) = phi;
          if (channels() == 2) dz(1, s_.n_basis + j) = phi;
        }
        const MatrixXd Bn = Bforce * dz;
        const MatrixXd A1 = chain_state_jacobian(s_, x.head(n));
        const MatrixXd A2 = chain_state_jacobian(s_, x2.head(n));
        const MatrixXd A3 = chain_state_jacobian(s_, x3.head(n));
        const MatrixXd A4 = chain_state_jacobian(s_, x4.head(n));
        if (Js) {
          const MatrixXd K1 = A1 * (*Js);
          const MatrixXd K2 = A2 * (*Js + 0.5 * h * K1);
          const MatrixXd K3 = A3 * (*Js + 0.5 * h * K2);
          const MatrixXd K4 = A4 * (*Js + h * K3);
          *Js += (h / 6.0) * (K1 + 2 * K2 + 2 * K3 + K4);
        }
        if (Jn) {
          const MatrixXd K1 = A1 * (*Jn) + Bn;
          const MatrixXd K2 = A2 * (*Jn + 0.5 * h * K1) + Bn;
          const MatrixXd K3 = A3 * (*Jn + 0.5 * h * K2) + Bn;
          const MatrixXd K4 = A4 * (*Jn + h * K3) + Bn;
          *Jn += (h / 6.0) * (K1 + 2 * K2 + 2 * K3 + K4);
        }
      }

      double dW = 0.0;
      if (traj)
        dW = (h / 6.0) *
             (power(x) + 2 * power(x2) + 2 * power(x3) + power(x4));

      x += (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4);
      if (!x.allFinite())
        throw std::runtime_error("OscillatorChain: integrator blowup");
      if (traj) {
        traj->states.push_back(x);
        traj->energy.push_back(hamiltonian(s_, x.tail(n), x.head(n)));
        traj->work_increment.push_back(dW);
        traj->forcing.emplace_back(z1, zn);
      }
    }
    return x;
  }

  OscillatorChainSpec s_;
  int steps_ = 0;
};

// Per-substep residual of the energy balance: change of H minus the
// integrated dissipation-plus-input power, divided by the substep to get a
// rate.  O(h^4) for the piecewise-constant-forcing dynamics the integrator
// actually solves.
inline std::vector<double> energy_drift(const ChainTrajectory& traj) {
  std::vector<double> drift;
  for (std::size_t i = 0; i + 1 < traj.energy.size(); ++i)
    drift.push_back(
        (traj.energy[i + 1] - traj.energy[i] - traj.work_increment[i]) /
        traj.h);
  return drift;
}

// Time-varying linearisation (A(t), B) along a stored reference trajectory.
struct LinearizedChain {
  std::vector<MatrixXd> A;  // one per substep boundary
  MatrixXd B;
  double h = 0.0;
};

inline LinearizedChain linearized_chain(const OscillatorChainSpec& s,
                                        const ChainTrajectory& traj) {
  LinearizedChain lin;
  lin.h = traj.h;
  lin.B = chain_forcing_matrix(s);
  for (const VectorXd& x : traj.states)
    lin.A.push_back(chain_state_jacobian(s, x.head(s.n)));
  return lin;
}

}  // namespace rdlab
