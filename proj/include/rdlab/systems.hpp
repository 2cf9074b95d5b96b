#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <vector>

#include "rdlab/rng.hpp"

namespace rdlab {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Time-1 map S(u, eta) of a random dynamical system, with Jacobians in both
// arguments.  Implementations are immutable and shareable across threads.
class TimeOneMap {
 public:
  virtual ~TimeOneMap() = default;

  virtual int dim_state() const = 0;
  virtual int dim_noise() const = 0;
  virtual VectorXd apply(const VectorXd& u, const VectorXd& eta) const = 0;

  virtual MatrixXd jac_state(const VectorXd& u, const VectorXd& eta) const {
    return fd_jac_state(u, eta);
  }
  virtual MatrixXd jac_noise(const VectorXd& u, const VectorXd& eta) const {
    return fd_jac_noise(u, eta);
  }

  // Both Jacobians at once; implementations that propagate variational
  // equations can share one pass.
  virtual void jacobians(const VectorXd& u, const VectorXd& eta, MatrixXd& Js,
                         MatrixXd& Jn) const {
    Js = jac_state(u, eta);
    Jn = jac_noise(u, eta);
  }

  // Diagonal weights of the norm used on the state space.
  virtual VectorXd metric_weight() const {
    return VectorXd::Ones(dim_state());
  }

  double state_norm(const VectorXd& u) const {
    return metric_weight().cwiseProduct(u).norm();
  }

  MatrixXd fd_jac_state(const VectorXd& u, const VectorXd& eta,
                        double step = 1e-5) const {
    MatrixXd J(dim_state(), dim_state());
    VectorXd up = u, um = u;
    for (int j = 0; j < dim_state(); ++j) {
      const double d = step * std::max(1.0, std::abs(u[j]));
      up[j] = u[j] + d;
      um[j] = u[j] - d;
      J.col(j) = (apply(up, eta) - apply(um, eta)) / (2 * d);
      up[j] = um[j] = u[j];
    }
    return J;
  }

  MatrixXd fd_jac_noise(const VectorXd& u, const VectorXd& eta,
                        double step = 1e-5) const {
    MatrixXd J(dim_state(), dim_noise());
    VectorXd ep = eta, em = eta;
    for (int j = 0; j < dim_noise(); ++j) {
      const double d = step * std::max(1.0, std::abs(eta[j]));
      ep[j] = eta[j] + d;
      em[j] = eta[j] - d;
      J.col(j) = (apply(u, ep) - apply(u, em)) / (2 * d);
      ep[j] = em[j] = eta[j];
    }
    return J;
  }
};

// Affine map u' = M u + N eta; the workhorse of closed-form tests.
class LinearMap final : public TimeOneMap {
 public:
  LinearMap(MatrixXd M, MatrixXd N) : M_(std::move(M)), N_(std::move(N)) {
    if (M_.rows() != M_.cols() || N_.rows() != M_.rows())
      throw std::invalid_argument("LinearMap: shape mismatch");
  }
  int dim_state() const override { return static_cast<int>(M_.rows()); }
  int dim_noise() const override { return static_cast<int>(N_.cols()); }
  VectorXd apply(const VectorXd& u, const VectorXd& eta) const override {
    return M_ * u + N_ * eta;
  }
  MatrixXd jac_state(const VectorXd&, const VectorXd&) const override {
    return M_;
  }
  MatrixXd jac_noise(const VectorXd&, const VectorXd&) const override {
    return N_;
  }

 private:
  MatrixXd M_, N_;
};

// Max over samples of |S^k(u; 0)| / |u| under the map's own norm; the
// global-dissipativity checker passes when the value is below one.
inline double free_contraction_factor(const TimeOneMap& map,
                                      const std::vector<VectorXd>& samples,
                                      int k = 1) {
  if (k < 1) throw std::invalid_argument("free_contraction_factor: k >= 1");
  const VectorXd zero_noise = VectorXd::Zero(map.dim_noise());
  double worst = 0.0;
  for (const VectorXd& u0 : samples) {
    const double n0 = map.state_norm(u0);
    if (n0 < 1e-14) continue;
    VectorXd u = u0;
    for (int i = 0; i < k; ++i) u = map.apply(u, zero_noise);
    worst = std::max(worst, map.state_norm(u) / n0);
  }
  return worst;
}

// Max over sampled (u, eta) of the operator norm of (I - P_G) D_u S in the
// weighted metric; G is given by basis columns in state coordinates.
inline double determining_defect(
    const TimeOneMap& map, const MatrixXd& G,
    const std::vector<std::pair<VectorXd, VectorXd>>& samples) {
  if (G.rows() != map.dim_state())
    throw std::invalid_argument("determining_defect: basis shape");
  const VectorXd w = map.metric_weight();
  // Orthonormalize the weighted basis once.
  MatrixXd Gw = w.asDiagonal() * G;
  Eigen::HouseholderQR<MatrixXd> qr(Gw);
  MatrixXd Q = qr.householderQ() * MatrixXd::Identity(G.rows(), G.cols());
  double worst = 0.0;
  for (const auto& [u, eta] : samples) {
    MatrixXd Jw = w.asDiagonal() * map.jac_state(u, eta) *
                  w.cwiseInverse().asDiagonal();
    MatrixXd R = Jw - Q * (Q.transpose() * Jw);
    worst = std::max(
        worst, Eigen::JacobiSVD<MatrixXd>(R).singularValues()(0));
  }
  return worst;
}

struct AbsorbingSetEstimate {
  double rho = 0.0;                    // empirical absorbing radius
  std::map<double, int> entry_times;   // start radius -> worst entry time
  bool absorbed = true;                // every trajectory entered and stayed
};

// Monte Carlo absorption census: from starts on spheres of the given radii,
// drive with noise drawn by `noise_sampler` (already respecting the bound),
// record the worst time to enter the eventual ball and whether trajectories
// stay inside once entered.
inline AbsorbingSetEstimate absorbing_set_estimate(
    const TimeOneMap& map, const std::function<VectorXd(RngStream&)>& noise_sampler,
    const std::vector<double>& radii, int ensemble, int horizon,
    std::uint64_t seed, int workers = 1, int settle = 50, double pad = 1.05) {
  AbsorbingSetEstimate out;
  const int tail_lo = std::max(horizon - settle, 1);
  std::vector<std::vector<double>> norms_store(radii.size() * ensemble);
  parallel_for(radii.size() * ensemble, workers, [&](std::size_t idx) {
    const std::size_t ri = idx / ensemble;
    RngStream rng(seed + ri, idx % ensemble);
    VectorXd u(map.dim_state());
    for (int i = 0; i < u.size(); ++i) u[i] = rng.normal();
    u *= radii[ri] / std::max(map.state_norm(u), 1e-14);
    std::vector<double> norms(horizon + 1);
    norms[0] = map.state_norm(u);
    for (int t = 1; t <= horizon; ++t) {
      u = map.apply(u, noise_sampler(rng));
      norms[t] = map.state_norm(u);
    }
    norms_store[idx] = std::move(norms);
  });
  // Candidate ball from the worst late-time excursion; entry times are
  // measured against the candidate, and the reported radius pads the worst
  // excursion seen after entry, so trajectories stay inside it by
  // construction once they have entered the candidate.
  double candidate = 0.0;
  for (const auto& norms : norms_store)
    for (int t = tail_lo; t <= horizon; ++t)
      candidate = std::max(candidate, norms[t]);
  candidate = candidate * pad + 1e-12;
  double post_entry_peak = candidate;
  for (std::size_t ri = 0; ri < radii.size(); ++ri) {
    int worst_entry = 0;
    for (int e = 0; e < ensemble; ++e) {
      const auto& norms = norms_store[ri * ensemble + e];
      int entry = -1;
      for (int t = 0; t <= horizon && entry < 0; ++t)
        if (norms[t] <= candidate) entry = t;
      if (entry < 0) {
        out.absorbed = false;
        entry = horizon;
      } else {
        for (int t = entry; t <= horizon; ++t)
          post_entry_peak = std::max(post_entry_peak, norms[t]);
      }
      worst_entry = std::max(worst_entry, entry);
    }
    out.entry_times[radii[ri]] = worst_entry;
  }
  out.rho = post_entry_peak * pad + 1e-12;
  return out;
}

}  // namespace rdlab
