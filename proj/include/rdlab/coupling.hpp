#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "rdlab/control.hpp"
#include "rdlab/noise_kernels.hpp"
#include "rdlab/systems.hpp"

namespace rdlab {

// Point of the lifted phase space: system state plus truncated noise past.
struct LiftedState {
  VectorXd state;
  PastWindow past;
};

struct CouplingParams {
  double theta = 0.05;    // closeness threshold in the lifted metric
  double L = 16.0;        // state weight of the lifted metric
  double delta_reg = 1e-2;
  double eps = 0.05;
  MatrixXd G;             // control subspace (columns)
  // Measured constants, filled by tuning/experiments.
  double q = 0.0;
  double c_prime = 0.0;
  double q_prime = 0.0;
  double N = 0.0;
};

inline double lifted_distance(const LiftedState& U, const LiftedState& Up,
                              const CouplingParams& params,
                              const TimeOneMap& map) {
  return params.L * map.state_norm(U.state - Up.state) +
         past_distance(U.past, Up.past);
}

// One step of the lifted dynamics with a given noise value.
inline LiftedState lift_step(const TimeOneMap& map, const LiftedState& U,
                             const VectorXd& zeta) {
  return {map.apply(U.state, zeta), append_past(U.past, zeta)};
}

// 0.5 * integral |p - q| for densities tabulated on a common grid with the
// given cell volume.
inline double tv_distance_densities(const VectorXd& p, const VectorXd& q,
                                    double cell_volume) {
  if (p.size() != q.size())
    throw std::invalid_argument("tv_distance_densities: size mismatch");
  return 0.5 * (p - q).cwiseAbs().sum() * cell_volume;
}

// Conditional maximal coupling: given x distributed with density p, return y
// with marginal density exactly q, maximizing P(y = x).
struct MaximalCouplingDraw {
  VectorXd value;
  bool met = false;
};

inline MaximalCouplingDraw maximal_coupling_conditional(
    const VectorXd& x, const std::function<double(const VectorXd&)>& p,
    const std::function<double(const VectorXd&)>& q,
    const std::function<VectorXd(RngStream&)>& q_sampler, RngStream& rng,
    int max_attempts = 200000) {
  const double px = p(x), qx = q(x);
  if (px > 0.0 && rng.uniform() * px < qx) return {x, true};
  // Residual branch: density proportional to (q - min(p, q)); propose from q
  // and thin with probability max(0, 1 - p/q).
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    VectorXd y = q_sampler(rng);
    const double qy = q(y);
    if (qy <= 0.0) continue;
    const double accept = 1.0 - p(y) / qy;
    if (accept > 0.0 && rng.uniform() < accept) return {y, false};
  }
  throw std::runtime_error("maximal_coupling_conditional: residual stalled");
}

// Psi(zeta) = zeta + Phi(v, v', zeta): the noise-space steering map for a
// frozen state pair, with fixed-point inversion and a finite-difference
// Jacobian of the shift.
class SteeringMap {
 public:
  SteeringMap(const TimeOneMap& map, const MatrixXd& G, double delta,
              VectorXd v, VectorXd vp)
      : map_(map), G_(G), delta_(delta), v_(std::move(v)), vp_(std::move(vp)) {}

  VectorXd shift(const VectorXd& zeta) const {
    return control_shift(map_, G_, delta_, v_, vp_, zeta).shift;
  }

  VectorXd forward(const VectorXd& zeta) const { return zeta + shift(zeta); }

  // Solve y = z + shift(z); converges when the shift is a contraction in z,
  // which holds for state pairs within the coupling threshold.
  std::optional<VectorXd> invert(const VectorXd& y, int max_iters = 60,
                                 double tol = 1e-11) const {
    VectorXd z = y - shift(y);
    for (int it = 0; it < max_iters; ++it) {
      VectorXd next = y - shift(z);
      const double move = (next - z).norm();
      z = next;
      if (move < tol) return z;
    }
    return std::nullopt;
  }

  MatrixXd shift_jacobian(const VectorXd& zeta, double step = 1e-6) const {
    const int m = static_cast<int>(zeta.size());
    MatrixXd J(m, m);
    const VectorXd base = shift(zeta);
    VectorXd zp = zeta;
    for (int j = 0; j < m; ++j) {
      zp[j] = zeta[j] + step;
      J.col(j) = (shift(zp) - base) / step;
      zp[j] = zeta[j];
    }
    return J;
  }

  // Density of the image of Q(past; .) under Psi, by change of variables;
  // empty when the inversion fails or the Jacobian degenerates.
  std::optional<double> pushforward_density(const NoiseKernel& kernel,
                                            const PastWindow& past,
                                            const VectorXd& y) const {
    auto z = invert(y);
    if (!z) return std::nullopt;
    const int m = static_cast<int>(y.size());
    const double det =
        (MatrixXd::Identity(m, m) + shift_jacobian(*z)).determinant();
    if (std::abs(det) < 1e-12) return std::nullopt;
    return kernel.density(past, *z) / std::abs(det);
  }

 private:
  const TimeOneMap& map_;
  MatrixXd G_;
  double delta_;
  VectorXd v_, vp_;
};

struct CouplingStepStats {
  double distance_before = 0.0;
  double distance_after = 0.0;
  bool independent_branch = false;
  bool met = false;
  bool degraded = false;  // steering non-invertible; fell back to independent
};

// One application of the coupling operator pair (R, R'): independent draws
// far from the diagonal, steered maximal coupling near it.  Both marginals
// are one-step transitions of the lifted chain.
inline std::pair<LiftedState, LiftedState> coupling_step(
    const LiftedState& U, const LiftedState& Up, const TimeOneMap& map,
    const NoiseKernel& kernel, const CouplingParams& params, RngStream& rng,
    CouplingStepStats* stats = nullptr) {
  CouplingStepStats local;
  local.distance_before = lifted_distance(U, Up, params, map);

  VectorXd zeta = kernel.sample(U.past, rng);
  VectorXd zeta_p;
  bool close = local.distance_before <= params.theta;
  if (close) {
    SteeringMap psi(map, params.G, params.delta_reg, U.state, Up.state);
    const VectorXd candidate = psi.forward(zeta);
    auto p_push = [&](const VectorXd& y) {
      auto d = psi.pushforward_density(kernel, U.past, y);
      return d.value_or(-1.0);
    };
    const double p_at_candidate =
        kernel.density(U.past, zeta) /
        std::abs((MatrixXd::Identity(candidate.size(), candidate.size()) +
                  psi.shift_jacobian(zeta))
                     .determinant());
    const bool candidate_ok =
        kernel.support().contains(candidate) && p_at_candidate > 0.0;
    bool degraded = false;
    if (candidate_ok) {
      // Met branch probability min(1, q(x)/p(x)) with x the steered noise.
      const double q_at = kernel.density(Up.past, candidate);
      if (rng.uniform() * p_at_candidate < q_at) {
        zeta_p = candidate;
        local.met = true;
      }
    }
    if (!local.met) {
      // Residual of the maximal coupling: propose from the target law and
      // thin against the pushforward density.
      bool drawn = false;
      for (int attempt = 0; attempt < 5000 && !degraded; ++attempt) {
        VectorXd y = kernel.sample(Up.past, rng);
        const double qy = kernel.density(Up.past, y);
        if (qy <= 0.0) continue;
        const double py = p_push(y);
        if (py < 0.0) {
          degraded = true;  // non-invertible steering at a proposal
          break;
        }
        const double accept = 1.0 - py / qy;
        if (accept > 0.0 && rng.uniform() < accept) {
          zeta_p = y;
          drawn = true;
          break;
        }
      }
      if (!drawn && !degraded) degraded = true;  // residual stalled
    }
    if (degraded) {
      local.degraded = true;
      close = false;  // fall through to the independent branch
    }
  }
  if (!close) {
    local.independent_branch = true;
    local.met = false;
    zeta_p = kernel.sample(Up.past, rng);
  }

  LiftedState next = lift_step(map, U, zeta);
  LiftedState next_p = lift_step(map, Up, zeta_p);
  local.distance_after = lifted_distance(next, next_p, params, map);
  if (stats) *stats = local;
  return {next, next_p};
}

struct CouplingStats {
  std::vector<double> distances;         // lifted distance after each step
  std::vector<CouplingStepStats> steps;
  bool geometric = true;                 // d_k <= q^k d_0 throughout
};

struct CoupledPaths {
  std::vector<LiftedState> a, b;
  CouplingStats stats;
};

inline CoupledPaths iterate_coupling(const LiftedState& U0,
                                     const LiftedState& U0p,
                                     const TimeOneMap& map,
                                     const NoiseKernel& kernel,
                                     const CouplingParams& params, int k_max,
                                     RngStream& rng) {
  CoupledPaths out;
  out.a.push_back(U0);
  out.b.push_back(U0p);
  const double d0 = lifted_distance(U0, U0p, params, map);
  double qk = 1.0;
  for (int k = 0; k < k_max; ++k) {
    CouplingStepStats st;
    auto [A, B] = coupling_step(out.a.back(), out.b.back(), map, kernel,
                                params, rng, &st);
    out.a.push_back(std::move(A));
    out.b.push_back(std::move(B));
    out.stats.distances.push_back(st.distance_after);
    out.stats.steps.push_back(st);
    qk *= params.q > 0.0 ? params.q : 1.0;
    if (params.q > 0.0 && st.distance_after > qk * d0 + 1e-12)
      out.stats.geometric = false;
  }
  return out;
}

// Upper bound on the Kantorovich functional from a coupled sample pairing;
// the optional greedy sweep re-matches pairs when a swap lowers the sum.
inline double kantorovich_estimate(
    const std::function<double(const LiftedState&, const LiftedState&)>& F,
    const std::vector<LiftedState>& mu, std::vector<LiftedState> nu,
    bool greedy = false) {
  if (mu.size() != nu.size() || mu.empty())
    throw std::invalid_argument("kantorovich_estimate: size mismatch");
  const std::size_t n = mu.size();
  if (greedy) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const double cur = F(mu[i], nu[i]) + F(mu[j], nu[j]);
        const double swapped = F(mu[i], nu[j]) + F(mu[j], nu[i]);
        if (swapped < cur - 1e-15) std::swap(nu[i], nu[j]);
      }
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += F(mu[i], nu[i]);
  return total / n;
}

// Measure the squeezing constants and pick the lifted-metric weight and the
// closeness threshold: L is the smallest power of two with C'/L + q' < 1,
// q = max(1/iota, C'/L + q'), theta starts at 0.1/L.
inline CouplingParams tune_coupling_params(
    const TimeOneMap& map, const NoiseKernel& kernel, const MatrixXd& G,
    double eps, const std::vector<std::pair<VectorXd, VectorXd>>& pairs,
    const std::vector<VectorXd>& noise_grid) {
  CouplingParams params;
  params.G = G;
  params.eps = eps;
  std::vector<MatrixXd> family;
  for (const VectorXd& xi : noise_grid) {
    for (const auto& pr : pairs) family.push_back(map.jac_noise(pr.first, xi));
  }
  params.delta_reg = select_regularization(family, G, eps).delta;
  params.q_prime =
      squeezing_certificate(map, G, params.delta_reg, pairs, noise_grid);
  for (const auto& pr : pairs)
    for (const VectorXd& xi : noise_grid)
      params.c_prime = std::max(
          params.c_prime,
          control_shift(map, G, params.delta_reg, pr.first, pr.second, xi)
              .c_prime);
  double L = 1.0;
  while (params.c_prime / L + params.q_prime >= 1.0 && L < 1e9) L *= 2.0;
  if (L >= 1e9)
    throw std::runtime_error("tune_coupling_params: no squeezing weight");
  params.L = L;
  params.q = std::max(1.0 / kernel.iota(),
                      params.c_prime / L + params.q_prime);
  params.theta = 0.1 / L;
  return params;
}

}  // namespace rdlab
