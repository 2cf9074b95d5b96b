#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "rdlab/density1d.hpp"
#include "rdlab/metrics.hpp"
#include "rdlab/past_window.hpp"
#include "rdlab/rng.hpp"

namespace rdlab {

// Conditional law Q(xi; .) of the next noise value given the truncated past,
// as a density, a sampler and a compact support box.  Kernels are immutable
// after construction and safe to share across threads.
class NoiseKernel {
 public:
  virtual ~NoiseKernel() = default;

  virtual int dim() const = 0;
  virtual const Box& support() const = 0;
  virtual double density(const PastWindow& xi, const VectorXd& y) const = 0;
  virtual VectorXd sample(const PastWindow& xi, RngStream& rng) const = 0;

  // Dimension of the finite-dimensional split F_n; the complement is coupled
  // by identity.  All concrete kernels here are fully finite-dimensional.
  virtual int split_dim() const { return dim(); }

  double iota() const { return iota_; }
  double tail_tolerance() const { return tol_tail_; }

  int window_length() const {
    return truncation_length(support().diameter(), iota_, tol_tail_);
  }

  PastWindow zero_past() const {
    return PastWindow(window_length(), dim(), support(), iota_);
  }

  PastWindow constant_past(const VectorXd& y) const {
    PastWindow xi = zero_past();
    for (int k = 0; k < xi.length(); ++k) xi.set_entry(k, y);
    return xi;
  }

 protected:
  double iota_ = 2.0;
  double tol_tail_ = 1e-9;
};

using KernelPtr = std::shared_ptr<const NoiseKernel>;

// ---------------------------------------------------------------------------
// i.i.d. product kernel (no dependence on the past).

class IIDKernel final : public NoiseKernel {
 public:
  explicit IIDKernel(std::vector<DensityPtr> coords)
      : coords_(std::move(coords)) {
    if (coords_.empty()) throw std::invalid_argument("IIDKernel: empty");
    const int d = static_cast<int>(coords_.size());
    support_.lo.resize(d);
    support_.hi.resize(d);
    for (int i = 0; i < d; ++i) {
      support_.lo[i] = coords_[i]->lower();
      support_.hi[i] = coords_[i]->upper();
    }
  }

  int dim() const override { return static_cast<int>(coords_.size()); }
  const Box& support() const override { return support_; }

  double density(const PastWindow&, const VectorXd& y) const override {
    double p = 1.0;
    for (int i = 0; i < dim(); ++i) p *= coords_[i]->pdf(y[i]);
    return p;
  }

  VectorXd sample(const PastWindow&, RngStream& rng) const override {
    VectorXd y(dim());
    for (int i = 0; i < dim(); ++i) y[i] = coords_[i]->sample(rng);
    return y;
  }

  VectorXd mean() const {
    VectorXd m(dim());
    for (int i = 0; i < dim(); ++i) m[i] = coords_[i]->mean();
    return m;
  }

 private:
  std::vector<DensityPtr> coords_;
  Box support_;
};

// ---------------------------------------------------------------------------
// Markov kernel: transition density depends only on the most recent entry.

class MarkovKernel final : public NoiseKernel {
 public:
  using TransitionDensity =
      std::function<double(const VectorXd& prev, const VectorXd& y)>;

  MarkovKernel(int dim, Box support, TransitionDensity rho,
               double density_max, int max_attempts = 1000000)
      : dim_(dim),
        support_(std::move(support)),
        rho_(std::move(rho)),
        density_max_(density_max),
        max_attempts_(max_attempts) {
    if (density_max <= 0.0)
      throw std::invalid_argument("MarkovKernel: density_max must be > 0");
  }

  int dim() const override { return dim_; }
  const Box& support() const override { return support_; }

  double density(const PastWindow& xi, const VectorXd& y) const override {
    return rho_(xi.entry(0), y);
  }

  VectorXd sample(const PastWindow& xi, RngStream& rng) const override {
    // Uniform envelope over the support box scaled by the density max.
    const VectorXd& prev = xi.entry(0);
    for (int attempt = 0; attempt < max_attempts_; ++attempt) {
      VectorXd y(dim_);
      for (int i = 0; i < dim_; ++i)
        y[i] = rng.uniform(support_.lo[i], support_.hi[i]);
      const double p = rho_(prev, y);
      if (p > density_max_ * (1.0 + 1e-9))
        throw std::runtime_error("MarkovKernel: density exceeds envelope");
      if (rng.uniform() * density_max_ < p) return y;
    }
    throw std::runtime_error("MarkovKernel: rejection sampler stalled");
  }

 private:
  int dim_;
  Box support_;
  TransitionDensity rho_;
  double density_max_;
  int max_attempts_;
};

// ---------------------------------------------------------------------------
// Moving-average kernel: eta_k = zeta_k + sum_l a_l zeta_{k-l} with i.i.d.
// innovations.  Coordinates are independent copies driven by the same
// coefficient sequence.  The conditional law of the next value is the
// innovation density shifted by h(xi) = -sum_l b_l xi_{1-l}, where {b_l} is
// the inverse coefficient sequence.

class MovingAverageKernel final : public NoiseKernel {
 public:
  MovingAverageKernel(std::vector<double> coeffs, DensityPtr innovation,
                      int dim = 1)
      : coeffs_(std::move(coeffs)), innovation_(std::move(innovation)),
        dim_(dim) {
    double sum_abs = 0.0;
    for (double a : coeffs_) sum_abs += std::abs(a);
    if (sum_abs >= 1.0)
      throw std::invalid_argument(
          "MovingAverageKernel: need sum |a_l| < 1 for invertibility");
    const double rad =
        (1.0 + sum_abs) *
        std::max(std::abs(innovation_->lower()), std::abs(innovation_->upper()));
    support_ = Box::centered(dim_, rad);
    // Inverse series from the convolution identity (1+a)*(1+b) = 1:
    //   b_k = -a_k - sum_{l<k} a_l b_{k-l}.
    const int len = window_length();
    inverse_.assign(len, 0.0);
    for (int k = 1; k <= len; ++k) {
      double v = k <= static_cast<int>(coeffs_.size()) ? -coeffs_[k - 1] : 0.0;
      for (int l = 1; l < k; ++l) {
        const double a = l <= static_cast<int>(coeffs_.size())
                             ? coeffs_[l - 1]
                             : 0.0;
        v -= a * inverse_[k - l - 1];
      }
      inverse_[k - 1] = v;
    }
  }

  int dim() const override { return dim_; }
  const Box& support() const override { return support_; }
  const std::vector<double>& coeffs() const { return coeffs_; }
  const std::vector<double>& inverse_coeffs() const { return inverse_; }
  const Density1D& innovation() const { return *innovation_; }

  // h(xi) = -sum_{l>=1} b_l xi_{1-l}; entry(l-1) is xi_{1-l}.
  VectorXd conditional_shift(const PastWindow& xi) const {
    if (xi.dim() != dim_)
      throw std::invalid_argument("conditional_shift: dim mismatch");
    VectorXd h = VectorXd::Zero(dim_);
    const int terms = std::min<int>(xi.length(), (int)inverse_.size());
    for (int l = 1; l <= terms; ++l) h -= inverse_[l - 1] * xi.entry(l - 1);
    return h;
  }

  double density(const PastWindow& xi, const VectorXd& y) const override {
    const VectorXd h = conditional_shift(xi);
    double p = 1.0;
    for (int i = 0; i < dim_; ++i) p *= innovation_->pdf(y[i] - h[i]);
    return p;
  }

  VectorXd sample(const PastWindow& xi, RngStream& rng) const override {
    VectorXd y = conditional_shift(xi);
    for (int i = 0; i < dim_; ++i) y[i] += innovation_->sample(rng);
    return y;
  }

 private:
  std::vector<double> coeffs_;
  std::vector<double> inverse_;
  DensityPtr innovation_;
  int dim_;
  Box support_;
};

// ---------------------------------------------------------------------------
// Periodic-basis kernel: the value is a coefficient vector (y_1, ..., y_n)
// over an orthonormal basis of L^2[0,1); the conditional law is
// g(xi, y) * prod_l d_l(y_l) / m(xi) with a Lipschitz weight g >= c > 0 and
// the normalizer m(xi) computed by Monte Carlo quadrature over fixed nodes.

class PeriodicBasisKernel final : public NoiseKernel {
 public:
  using Weight = std::function<double(const PastWindow& xi, const VectorXd& y)>;

  PeriodicBasisKernel(std::vector<DensityPtr> coeff_densities, Weight g,
                      double g_lower, double g_upper,
                      int quadrature_nodes = 4096,
                      std::uint64_t node_seed = 0x9d2c5680u)
      : coords_(std::move(coeff_densities)),
        g_(std::move(g)),
        g_lower_(g_lower),
        g_upper_(g_upper) {
    if (coords_.empty())
      throw std::invalid_argument("PeriodicBasisKernel: no coefficients");
    if (!(g_lower_ > 0.0) || g_upper_ < g_lower_)
      throw std::invalid_argument("PeriodicBasisKernel: need 0 < c <= g_max");
    const int d = dim();
    support_.lo.resize(d);
    support_.hi.resize(d);
    for (int i = 0; i < d; ++i) {
      support_.lo[i] = coords_[i]->lower();
      support_.hi[i] = coords_[i]->upper();
    }
    // Fixed nodes drawn from the product law nu make m(xi) a deterministic
    // function of xi (importance sampling under the base measure).
    RngStream rng(node_seed);
    nodes_.reserve(quadrature_nodes);
    for (int k = 0; k < quadrature_nodes; ++k) {
      VectorXd y(d);
      for (int i = 0; i < d; ++i) y[i] = coords_[i]->sample(rng);
      nodes_.push_back(std::move(y));
    }
  }

  int dim() const override { return static_cast<int>(coords_.size()); }
  const Box& support() const override { return support_; }

  double normalizer(const PastWindow& xi) const {
    double m = 0.0;
    for (const auto& y : nodes_) m += g_(xi, y);
    return m / nodes_.size();
  }

  double density(const PastWindow& xi, const VectorXd& y) const override {
    double base = 1.0;
    for (int i = 0; i < dim(); ++i) base *= coords_[i]->pdf(y[i]);
    return g_(xi, y) * base / normalizer(xi);
  }

  VectorXd sample(const PastWindow& xi, RngStream& rng) const override {
    // Draw from the product law and accept with probability g/g_max.
    for (int attempt = 0; attempt < 1000000; ++attempt) {
      VectorXd y(dim());
      for (int i = 0; i < dim(); ++i) y[i] = coords_[i]->sample(rng);
      const double gv = g_(xi, y);
      if (gv > g_upper_ * (1.0 + 1e-9))
        throw std::runtime_error("PeriodicBasisKernel: weight exceeds bound");
      if (rng.uniform() * g_upper_ < gv) return y;
    }
    throw std::runtime_error("PeriodicBasisKernel: rejection sampler stalled");
  }

 private:
  std::vector<DensityPtr> coords_;
  Weight g_;
  double g_lower_, g_upper_;
  Box support_;
  std::vector<VectorXd> nodes_;
};

// Real Fourier basis on [0,1): 1, sqrt(2) cos(2 pi t), sqrt(2) sin(2 pi t),
// sqrt(2) cos(4 pi t), ...
inline double periodic_basis_eval(int l, double t) {
  if (l == 0) return 1.0;
  const int m = (l + 1) / 2;
  const double arg = 2.0 * M_PI * m * t;
  return std::sqrt(2.0) * (l % 2 == 1 ? std::cos(arg) : std::sin(arg));
}

// ---------------------------------------------------------------------------
// Operations.

inline VectorXd sample_kernel(const NoiseKernel& kernel, const PastWindow& xi,
                              RngStream& rng) {
  return kernel.sample(xi, rng);
}

// One Markov step of the noise-only lift.
inline PastWindow noise_lift_step(const PastWindow& xi,
                                  const NoiseKernel& kernel, RngStream& rng) {
  return append_past(xi, kernel.sample(xi, rng));
}

// Empirical law of Q_k^m(xi; .): run k + m sequential draws and keep the last
// m, stacked into one vector, for `ensemble` independent replicas.
inline std::vector<VectorXd> compose_conditional(const NoiseKernel& kernel,
                                                 const PastWindow& xi, int k,
                                                 int m, int ensemble,
                                                 std::uint64_t seed,
                                                 int workers = 1) {
  if (k < 0 || m < 1)
    throw std::invalid_argument("compose_conditional: need k >= 0, m >= 1");
  std::vector<VectorXd> out(ensemble);
  parallel_for(ensemble, workers, [&](std::size_t r) {
    RngStream rng(seed, r);
    PastWindow cur = xi;
    VectorXd stacked(m * kernel.dim());
    for (int step = 0; step < k + m; ++step) {
      const VectorXd y = kernel.sample(cur, rng);
      cur = append_past(cur, y);
      const int tail = step - k;
      if (tail >= 0) stacked.segment(tail * kernel.dim(), kernel.dim()) = y;
    }
    out[r] = std::move(stacked);
  });
  return out;
}

// Dual-Lipschitz distance between the conditional laws Q_k^m(xi; .) and
// Q_k^m(xi'; .) for each k up to k_max.
inline std::vector<std::pair<int, double>> kernel_convergence_curve(
    const NoiseKernel& kernel, const PastWindow& xi, const PastWindow& xi2,
    int m, int k_max, int ensemble, std::uint64_t seed, int workers = 1,
    std::size_t lp_cap = 1000) {
  const int d = kernel.dim();
  // One trajectory of length k_max + m per replica and per starting past;
  // the window ending at k + m yields a draw from Q_k^m.
  std::vector<std::vector<VectorXd>> draws_a(ensemble), draws_b(ensemble);
  parallel_for(ensemble, workers, [&](std::size_t r) {
    RngStream rng_a(seed, 2 * r);
    RngStream rng_b(seed ^ 0x5851f42d4c957f2dULL, 2 * r + 1);
    PastWindow a = xi, b = xi2;
    for (int step = 0; step < k_max + m; ++step) {
      const VectorXd ya = kernel.sample(a, rng_a);
      const VectorXd yb = kernel.sample(b, rng_b);
      a = append_past(a, ya);
      b = append_past(b, yb);
      draws_a[r].push_back(ya);
      draws_b[r].push_back(yb);
    }
  });
  std::vector<std::pair<int, double>> curve;
  for (int k = 0; k <= k_max; ++k) {
    EmpiricalMeasure ma, mb;
    for (int r = 0; r < ensemble; ++r) {
      VectorXd sa(m * d), sb(m * d);
      for (int j = 0; j < m; ++j) {
        sa.segment(j * d, d) = draws_a[r][k + j];
        sb.segment(j * d, d) = draws_b[r][k + j];
      }
      ma.samples.push_back(std::move(sa));
      mb.samples.push_back(std::move(sb));
    }
    curve.emplace_back(k, dual_lipschitz_estimate(ma, mb, lp_cap));
  }
  return curve;
}

// Monte Carlo estimate of Q_s^n(xi; O_delta(0)), minimized over a grid of
// pasts (strong recurrence to zero).
inline double recurrence_probability(const NoiseKernel& kernel, int n,
                                     double delta, int s, int ensemble,
                                     const std::vector<PastWindow>& past_grid,
                                     std::uint64_t seed, int workers = 1) {
  if (delta <= 0.0)
    throw std::invalid_argument("recurrence_probability: need delta > 0");
  double worst = 1.0;
  for (std::size_t gi = 0; gi < past_grid.size(); ++gi) {
    std::vector<char> hit(ensemble, 0);
    parallel_for(ensemble, workers, [&](std::size_t r) {
      RngStream rng(seed + gi, r);
      PastWindow cur = past_grid[gi];
      bool ok = true;
      for (int step = 0; step < s + n; ++step) {
        const VectorXd y = kernel.sample(cur, rng);
        cur = append_past(cur, y);
        if (step >= s && y.norm() >= delta) {
          ok = false;
          break;
        }
      }
      hit[r] = ok ? 1 : 0;
    });
    double frac = 0.0;
    for (char h : hit) frac += h;
    worst = std::min(worst, frac / ensemble);
  }
  return worst;
}

// Empirical Lipschitz constant of (xi, y) -> density(xi, y) over pairs of
// simulated pasts; the certificate the hypothesis checkers report.
inline double estimate_density_lipschitz(const NoiseKernel& kernel,
                                         std::uint64_t seed, int pairs = 10000,
                                         int burn_in = 64) {
  RngStream rng(seed);
  PastWindow xi = kernel.zero_past();
  for (int i = 0; i < burn_in; ++i) xi = noise_lift_step(xi, kernel, rng);
  double worst = 0.0;
  for (int p = 0; p < pairs; ++p) {
    xi = noise_lift_step(xi, kernel, rng);
    // Perturb one entry within the support box.
    PastWindow xi2 = xi;
    const int k_back = static_cast<int>(rng.uniform_index(xi.length()));
    VectorXd e = xi.entry(k_back);
    for (int i = 0; i < e.size(); ++i) {
      const double span = kernel.support().hi[i] - kernel.support().lo[i];
      e[i] = std::clamp(e[i] + 0.05 * span * rng.uniform(-1, 1),
                        kernel.support().lo[i], kernel.support().hi[i]);
    }
    xi2.set_entry(k_back, e);
    VectorXd y(kernel.dim()), y2(kernel.dim());
    for (int i = 0; i < kernel.dim(); ++i) {
      y[i] = rng.uniform(kernel.support().lo[i], kernel.support().hi[i]);
      y2[i] = std::clamp(y[i] + 0.02 * rng.uniform(-1, 1),
                         kernel.support().lo[i], kernel.support().hi[i]);
    }
    const double denom = past_distance(xi, xi2) + (y - y2).norm();
    if (denom < 1e-12) continue;
    const double num =
        std::abs(kernel.density(xi, y) - kernel.density(xi2, y2));
    worst = std::max(worst, num / denom);
  }
  return worst;
}

}  // namespace rdlab
