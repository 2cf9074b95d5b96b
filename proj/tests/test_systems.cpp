#include "doctest.h"

#include <unsupported/Eigen/MatrixFunctions>
#include <cmath>

#include "rdlab/cgl.hpp"
#include "rdlab/chain.hpp"
#include "rdlab/systems.hpp"

using namespace rdlab;

namespace {

OscillatorChainSpec quadratic_spec(int n = 2) {
  OscillatorChainSpec s;
  s.n = n;
  s.a = VectorXd::Ones(n);
  s.b = VectorXd::Ones(std::max(n - 1, 0));
  s.F = [](double) { return 0.0; };
  s.dF = [](double) { return 0.0; };
  s.ddF = [](double) { return 0.0; };
  return s;
}

double rel_err(const MatrixXd& A, const MatrixXd& B) {
  return (A - B).norm() / std::max(1.0, B.norm());
}

}  // namespace

TEST_CASE("hamiltonian closed forms") {
  OscillatorChainSpec s = quadratic_spec(1);
  CHECK(hamiltonian(s, VectorXd::Zero(1), VectorXd::Zero(1)) == 0.0);
  VectorXd one = VectorXd::Ones(1);
  CHECK(hamiltonian(s, one, one) == doctest::Approx(1.5));
  // With the default perturbation, only F(0) = 0 enters at q = 0.
  OscillatorChainSpec d;  // default n = 2
  CHECK(hamiltonian(d, VectorXd::Zero(2), VectorXd::Zero(2)) == 0.0);
}

TEST_CASE("chain vector field closed forms") {
  OscillatorChainSpec d;
  CHECK(chain_vector_field(d, VectorXd::Zero(4), 0, 0).norm() == 0.0);

  OscillatorChainSpec s1 = quadratic_spec(1);
  VectorXd x(2);
  x << 0.0, 1.0;  // q = 0, p = 1
  VectorXd dx = chain_vector_field(s1, x, 0, 0);
  CHECK(dx[0] == doctest::Approx(1.0));
  CHECK(dx[1] == doctest::Approx(-1.0));

  // Additivity of the forcing.
  RngStream rng(2);
  VectorXd y(4);
  for (int i = 0; i < 4; ++i) y[i] = rng.uniform(-1, 1);
  VectorXd diff = chain_vector_field(d, y, 0.7, -0.3) -
                  chain_vector_field(d, y, 0, 0);
  CHECK(diff[0] == 0.0);
  CHECK(diff[1] == 0.0);
  CHECK(diff[2] == doctest::Approx(0.7));
  CHECK(diff[3] == doctest::Approx(-0.3));
}

TEST_CASE("spec validation rejects broken perturbations") {
  OscillatorChainSpec s;
  s.F = [](double x) { return 0.1 * std::sin(x); };
  s.dF = [](double x) { return 0.1 * std::cos(x); };
  s.ddF = [](double x) { return -0.1 * std::sin(x); };
  CHECK_THROWS_AS(OscillatorChain{s}, std::invalid_argument);  // F'(0) != 0
  OscillatorChainSpec t;
  t.ddF = [](double) { return -3.0; };  // violates F'' > -2 a
  CHECK_THROWS_AS(OscillatorChain{t}, std::invalid_argument);
}

TEST_CASE("free linear chain flow equals the matrix exponential") {
  OscillatorChainSpec s = quadratic_spec(2);
  OscillatorChain map(s);
  const MatrixXd A = chain_state_jacobian(s, VectorXd::Zero(2));
  const MatrixXd eA = A.exp();
  RngStream rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    VectorXd x(4);
    for (int i = 0; i < 4; ++i) x[i] = rng.uniform(-1, 1);
    VectorXd out = map.apply(x, VectorXd::Zero(4));
    CHECK((out - eA * x).norm() < 1e-6);
  }
  // Equilibrium stays put.
  CHECK(map.apply(VectorXd::Zero(4), VectorXd::Zero(4)).norm() == 0.0);
}

TEST_CASE("energy balance along forced chain trajectories") {
  OscillatorChain map{OscillatorChainSpec{}};
  RngStream rng(11);
  VectorXd x(4), eta(4);
  for (int i = 0; i < 4; ++i) {
    x[i] = rng.uniform(-1, 1);
    eta[i] = rng.uniform(-1, 1);
  }
  auto traj = map.trajectory(x, eta);
  for (double d : energy_drift(traj)) CHECK(std::abs(d) < 1e-6);

  // Free flow: H non-increasing within 1e-8 per unit time.
  auto free_traj = map.trajectory(x, VectorXd::Zero(4));
  for (std::size_t i = 0; i + 1 < free_traj.energy.size(); ++i)
    CHECK(free_traj.energy[i + 1] <= free_traj.energy[i] + 1e-8 * map.spec().h);

  // Instantaneous rate at (p,q) = (1,0) for the single damped oscillator:
  // dH/dt = -gamma p^2 = -1.
  OscillatorChainSpec s1 = quadratic_spec(1);
  VectorXd z(2);
  z << 0.0, 1.0;
  VectorXd f = chain_vector_field(s1, z, 0, 0);
  const double dHdt = z[1] * f[1] + chain_grad_potential(s1, z.head(1))[0] * f[0];
  CHECK(dHdt == doctest::Approx(-1.0));

  // Pointwise input-power bound: zeta p - gamma p^2 <= zeta^2/(4 gamma).
  for (int i = 0; i < 200; ++i) {
    const double p = rng.uniform(-3, 3), zeta = rng.uniform(-2, 2);
    CHECK(zeta * p - 1.0 * p * p <= zeta * zeta / 4.0 + 1e-12);
  }
}

TEST_CASE("chain Jacobians match central finite differences") {
  OscillatorChain map{OscillatorChainSpec{}};
  RngStream rng(13);
  for (int trial = 0; trial < 8; ++trial) {
    VectorXd x(4), eta(4);
    for (int i = 0; i < 4; ++i) {
      x[i] = rng.uniform(-1, 1);
      eta[i] = rng.uniform(-1, 1);
    }
    CHECK(rel_err(map.jac_state(x, eta), map.fd_jac_state(x, eta)) < 1e-5);
    CHECK(rel_err(map.jac_noise(x, eta), map.fd_jac_noise(x, eta)) < 1e-5);
  }
}

TEST_CASE("potential Hessian matches the finite-difference gradient") {
  OscillatorChainSpec s;  // default perturbation 0.1 (1 - cos x)
  RngStream rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    VectorXd q(2);
    q << rng.uniform(-2, 2), rng.uniform(-2, 2);
    const MatrixXd H = chain_hessian_potential(s, q);
    CHECK((H - H.transpose()).norm() == 0.0);
    MatrixXd Hfd(2, 2);
    const double d = 1e-6;
    for (int j = 0; j < 2; ++j) {
      VectorXd qp = q, qm = q;
      qp[j] += d;
      qm[j] -= d;
      Hfd.col(j) =
          (chain_grad_potential(s, qp) - chain_grad_potential(s, qm)) / (2 * d);
    }
    CHECK((H - Hfd).norm() < 1e-6);
  }
}

TEST_CASE("linearisation along quadratic-chain trajectories is constant") {
  OscillatorChainSpec s = quadratic_spec(2);
  OscillatorChain map(s);
  VectorXd x(4);
  x << 0.4, -0.2, 0.1, 0.3;
  auto lin = linearized_chain(s, map.trajectory(x, VectorXd::Zero(4)));
  const MatrixXd A0 = chain_state_jacobian(s, VectorXd::Zero(2));
  for (const MatrixXd& A : lin.A) CHECK((A - A0).norm() < 1e-12);
  CHECK(lin.B.rows() == 4);
  CHECK(lin.B.cols() == 2);
  CHECK(lin.B(2, 0) == 1.0);
  CHECK(lin.B(3, 1) == 1.0);
}

TEST_CASE("linear CGL flow is the exact per-mode decay and rotation") {
  CGLSpec spec;
  spec.c = 0.0;
  CGLMap map(spec);
  for (int j : {1, 3, 16}) {
    VectorXd v = VectorXd::Zero(32);
    v[j - 1] = 0.7;  // real amplitude in mode j
    VectorXd out = map.apply(v, VectorXd::Zero(32));
    const std::complex<double> uj(out[j - 1], out[16 + j - 1]);
    const std::complex<double> expect =
        0.7 * std::exp(std::complex<double>(-spec.nu * j * j, -double(j) * j));
    CHECK(std::abs(uj - expect) < 1e-12);
    // All other modes stay zero.
    for (int l = 0; l < 32; ++l)
      if (l != j - 1 && l != 16 + j - 1) CHECK(std::abs(out[l]) < 1e-14);
  }
  CHECK(map.apply(VectorXd::Zero(32), VectorXd::Zero(32)).norm() == 0.0);
}

TEST_CASE("cgl energy closed form and decay") {
  CGLSpec lin_spec;
  lin_spec.c = 0.0;
  CGLMap lin_map(lin_spec);
  VectorXd v = VectorXd::Zero(32);
  v[2] = 0.5;  // mode 3, amplitude 0.5
  CHECK(cgl_energy(lin_map, v) ==
        doctest::Approx(0.5 * 9.0 * 0.25 * M_PI / 2.0).epsilon(1e-12));

  CGLMap map{CGLSpec{}};  // c = 1
  RngStream rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    VectorXd u(32);
    for (int j = 0; j < 16; ++j) {
      const double amp = 0.5 / ((j + 1) * (j + 1));
      u[j] = amp * rng.uniform(-1, 1);
      u[16 + j] = amp * rng.uniform(-1, 1);
    }
    const double before = cgl_energy(map, u);
    const double after = cgl_energy(map, map.apply(u, VectorXd::Zero(32)));
    CHECK(after < before);
  }
}

TEST_CASE("cgl Jacobians match central finite differences") {
  CGLMap map{CGLSpec{}};
  RngStream rng(29);
  for (int trial = 0; trial < 3; ++trial) {
    VectorXd u(32);
    for (int j = 0; j < 16; ++j) {
      const double amp = 0.5 / ((j + 1) * (j + 1));
      u[j] = amp * rng.uniform(-1, 1);
      u[16 + j] = amp * rng.uniform(-1, 1);
    }
    const VectorXd eta = VectorXd::Zero(32);
    CHECK(rel_err(map.jac_state(u, eta), map.fd_jac_state(u, eta)) < 1e-5);
    CHECK((map.jac_noise(u, eta) - MatrixXd::Identity(32, 32)).norm() == 0.0);
  }
}

TEST_CASE("free contraction factors") {
  // Closed-form linear map.
  LinearMap half(0.5 * MatrixXd::Identity(3, 3), MatrixXd::Identity(3, 3));
  std::vector<VectorXd> pts;
  RngStream rng(31);
  for (int i = 0; i < 20; ++i) {
    VectorXd v(3);
    for (int j = 0; j < 3; ++j) v[j] = rng.uniform(-1, 1);
    pts.push_back(v);
  }
  CHECK(free_contraction_factor(half, pts, 1) == doctest::Approx(0.5));
  CHECK(free_contraction_factor(half, pts, 3) == doctest::Approx(0.125));

  // Linear CGL: the slowest mode dominates, factor e^{-nu alpha_1}.
  CGLSpec spec;
  spec.c = 0.0;
  CGLMap cgl(spec);
  std::vector<VectorXd> cpts;
  VectorXd mode1 = VectorXd::Zero(32);
  mode1[0] = 1.0;
  cpts.push_back(mode1);
  for (int i = 0; i < 10; ++i) {
    VectorXd v(32);
    for (int j = 0; j < 32; ++j) v[j] = rng.uniform(-1, 1);
    cpts.push_back(v);
  }
  CHECK(free_contraction_factor(cgl, cpts, 1) ==
        doctest::Approx(std::exp(-spec.nu)).epsilon(1e-9));

  // Damped chain: contraction for moderately many steps.
  OscillatorChain chain{OscillatorChainSpec{}};
  std::vector<VectorXd> xpts;
  for (int i = 0; i < 10; ++i) {
    VectorXd v(4);
    for (int j = 0; j < 4; ++j) v[j] = rng.uniform(-1, 1);
    xpts.push_back(v);
  }
  CHECK(free_contraction_factor(chain, xpts, 10) < 1.0);
}

TEST_CASE("determining defect closed forms") {
  LinearMap diag((MatrixXd(2, 2) << 0.9, 0, 0, 0.3).finished(),
                 MatrixXd::Identity(2, 2));
  std::vector<std::pair<VectorXd, VectorXd>> pts = {
      {VectorXd::Zero(2), VectorXd::Zero(2)}};
  MatrixXd full = MatrixXd::Identity(2, 2);
  CHECK(determining_defect(diag, full, pts) < 1e-12);
  CHECK(determining_defect(diag, full.col(0), pts) == doctest::Approx(0.3));

  // Linear CGL: defect outside the first NG modes is e^{-nu alpha_{NG+1}}.
  CGLSpec spec;
  spec.c = 0.0;
  CGLMap cgl(spec);
  std::vector<std::pair<VectorXd, VectorXd>> cpts = {
      {VectorXd::Zero(32), VectorXd::Zero(32)}};
  double prev = 1.0;
  for (int NG : {2, 4, 8}) {
    MatrixXd G = MatrixXd::Zero(32, 2 * NG);
    for (int j = 0; j < NG; ++j) {
      G(j, 2 * j) = 1.0;
      G(16 + j, 2 * j + 1) = 1.0;
    }
    const double kappa = determining_defect(cgl, G, cpts);
    const double oracle = std::exp(-spec.nu * (NG + 1) * (NG + 1));
    CHECK(kappa == doctest::Approx(oracle).epsilon(1e-9));
    CHECK(kappa < prev);
    prev = kappa;
  }
}

TEST_CASE("absorbing set census") {
  // Contracting linear map with noise bounded by 1: radius about 2.
  LinearMap half(0.5 * MatrixXd::Identity(2, 2), MatrixXd::Identity(2, 2));
  auto unit_noise = [](RngStream& r) {
    VectorXd e(2);
    e << r.uniform(-1, 1), r.uniform(-1, 1);
    return e;
  };
  auto est = absorbing_set_estimate(half, unit_noise, {0.5, 4.0, 8.0}, 50, 60,
                                    101, 4);
  CHECK(est.absorbed);
  CHECK(est.rho < 3.2);
  CHECK(est.entry_times.at(8.0) >= est.entry_times.at(0.5));

  // Forced chain: finite radius, everything re-enters and stays.
  OscillatorChain chain{OscillatorChainSpec{}};
  auto chain_noise = [](RngStream& r) {
    VectorXd e(4);
    for (int i = 0; i < 4; ++i) e[i] = r.uniform(-1, 1);
    return e;
  };
  auto cest =
      absorbing_set_estimate(chain, chain_noise, {1.0, 6.0}, 20, 80, 103, 4);
  CHECK(cest.absorbed);
  CHECK(cest.rho > 0.0);
  CHECK(cest.rho < 20.0);

  // Doubling the noise bound cannot shrink the radius.
  auto double_noise = [](RngStream& r) {
    VectorXd e(2);
    e << r.uniform(-2, 2), r.uniform(-2, 2);
    return e;
  };
  auto est2 = absorbing_set_estimate(half, double_noise, {0.5, 4.0, 8.0}, 50,
                                     60, 101, 4);
  CHECK(est2.rho >= est.rho);
}

TEST_CASE("invariance of the empirical state box under admissible noise") {
  OscillatorChain chain{OscillatorChainSpec{}};
  auto noise = [](RngStream& r) {
    VectorXd e(4);
    for (int i = 0; i < 4; ++i) e[i] = r.uniform(-1, 1);
    return e;
  };
  // Radius from a short census with a generous pad, then check fresh
  // trajectories stay inside.
  auto est = absorbing_set_estimate(chain, noise, {2.0}, 10, 60, 107, 4, 50, 2.0);
  std::vector<char> ok(10, 1);
  parallel_for(10, 4, [&](std::size_t i) {
    RngStream rng(211, i);
    VectorXd u(4);
    for (int j = 0; j < 4; ++j) u[j] = rng.uniform(-0.3, 0.3);
    for (int t = 0; t < 150; ++t) {
      u = chain.apply(u, noise(rng));
      if (chain.state_norm(u) > est.rho) ok[i] = 0;
    }
  });
  for (char c : ok) CHECK(c == 1);
}
