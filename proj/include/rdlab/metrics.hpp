#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "rdlab/rng.hpp"
#include "rdlab/transport.hpp"

namespace rdlab {

using Eigen::VectorXd;

// Weighted sample cloud representing a probability measure.
struct EmpiricalMeasure {
  std::vector<VectorXd> samples;
  std::vector<double> weights;  // empty means uniform

  static EmpiricalMeasure from_samples(std::vector<VectorXd> s) {
    EmpiricalMeasure m;
    m.samples = std::move(s);
    return m;
  }

  int dim() const { return samples.empty() ? 0 : (int)samples.front().size(); }
  std::size_t size() const { return samples.size(); }

  std::vector<double> normalized_weights() const {
    std::vector<double> w = weights;
    if (w.empty()) w.assign(samples.size(), 1.0);
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    if (total <= 0.0) throw std::invalid_argument("empirical measure: zero mass");
    for (auto& x : w) x /= total;
    return w;
  }

  // Deterministic stride subsample keeping at most cap points (weights kept
  // proportional).
  EmpiricalMeasure capped(std::size_t cap) const {
    if (samples.size() <= cap) return *this;
    EmpiricalMeasure out;
    const auto w = normalized_weights();
    const double stride = static_cast<double>(samples.size()) / cap;
    for (std::size_t k = 0; k < cap; ++k) {
      const auto i = static_cast<std::size_t>(k * stride);
      out.samples.push_back(samples[i]);
      out.weights.push_back(w[i]);
    }
    return out;
  }
};

// Exact dual-Lipschitz distance between empirical measures:
// sup over |f| <= 1, Lip(f) <= 1 of <f, mu - nu>.  The function class is
// exactly the class of 1-Lipschitz functions for the truncated metric
// min(2, |x - y|) (recentring removes the offset), so by Kantorovich duality
// the supremum equals the optimal transport cost for that metric, which is
// solved exactly.  Supports beyond `cap` points per side are subsampled.
inline double dual_lipschitz_estimate(const EmpiricalMeasure& mu_in,
                                      const EmpiricalMeasure& nu_in,
                                      std::size_t cap = 2000) {
  if (mu_in.dim() != nu_in.dim())
    throw std::invalid_argument("dual_lipschitz_estimate: dim mismatch");
  const EmpiricalMeasure mu = mu_in.capped(cap);
  const EmpiricalMeasure nu = nu_in.capped(cap);
  const int n = static_cast<int>(mu.size());
  const int m = static_cast<int>(nu.size());
  const auto a = mu.normalized_weights();
  const auto b = nu.normalized_weights();

  if (mu.dim() == 1) {
    // Monotone matching is optimal for the untruncated metric; when the data
    // diameter is at most 2 the truncation is inactive and this is exact.
    double span_lo = std::numeric_limits<double>::infinity(), span_hi = -span_lo;
    for (const auto& s : mu.samples) {
      span_lo = std::min(span_lo, s[0]);
      span_hi = std::max(span_hi, s[0]);
    }
    for (const auto& s : nu.samples) {
      span_lo = std::min(span_lo, s[0]);
      span_hi = std::max(span_hi, s[0]);
    }
    if (span_hi - span_lo <= 2.0) {
      std::vector<std::pair<double, double>> xa(n), xb(m);
      for (int i = 0; i < n; ++i) xa[i] = {mu.samples[i][0], a[i]};
      for (int j = 0; j < m; ++j) xb[j] = {nu.samples[j][0], b[j]};
      std::sort(xa.begin(), xa.end());
      std::sort(xb.begin(), xb.end());
      double cost = 0.0;
      int i = 0, j = 0;
      double ra = xa[0].second, rb = xb[0].second;
      while (i < n && j < m) {
        const double t = std::min(ra, rb);
        cost += t * std::abs(xa[i].first - xb[j].first);
        ra -= t;
        rb -= t;
        if (ra <= 1e-16 && i + 1 < n) ra = xa[++i].second;
        else if (ra <= 1e-16) ++i;
        if (rb <= 1e-16 && j + 1 < m) rb = xb[++j].second;
        else if (rb <= 1e-16) ++j;
      }
      return cost;
    }
  }

  std::vector<double> cost(static_cast<std::size_t>(n) * m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j)
      cost[static_cast<std::size_t>(i) * m + j] =
          std::min(2.0, (mu.samples[i] - nu.samples[j]).norm());
  return TransportSimplex::solve(a, b, cost);
}

// Mean absolute difference of sorted samples (1-D Wasserstein-1 with equal
// counts); an upper proxy for the dual-Lipschitz distance.
inline double w1_empirical_1d(std::vector<double> xs, std::vector<double> ys) {
  if (xs.size() != ys.size() || xs.empty())
    throw std::invalid_argument("w1_empirical_1d: need equal nonzero counts");
  std::sort(xs.begin(), xs.end());
  std::sort(ys.begin(), ys.end());
  double s = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) s += std::abs(xs[i] - ys[i]);
  return s / xs.size();
}

// Fitted exponential decay d_k ~ C * exp(-gamma k).
struct MixFit {
  double prefactor = 0.0;  // C
  double rate = 0.0;       // gamma
  double r2 = 0.0;
  int k_lo = 0, k_hi = 0;
  std::size_t points_used = 0;
};

// Least squares of log d against k over [k_lo, k_hi]; nonpositive distances
// and those below `floor` are excluded (MC noise is not part of the decay).
inline MixFit fit_exponential_decay(const std::vector<int>& ks,
                                    const std::vector<double>& ds, int k_lo,
                                    int k_hi, double floor = 0.0) {
  if (ks.size() != ds.size())
    throw std::invalid_argument("fit_exponential_decay: size mismatch");
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] < k_lo || ks[i] > k_hi) continue;
    if (!(ds[i] > 0.0) || ds[i] <= floor) continue;
    xs.push_back(ks[i]);
    ys.push_back(std::log(ds[i]));
  }
  if (xs.size() < 3)
    throw std::runtime_error("fit_exponential_decay: fewer than 3 usable points");
  const auto nn = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
    syy += ys[i] * ys[i];
  }
  const double slope = (nn * sxy - sx * sy) / (nn * sxx - sx * sx);
  const double intercept = (sy - slope * sx) / nn;
  double ss_res = 0.0;
  const double ss_tot = syy - sy * sy / nn;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double e = ys[i] - (intercept + slope * xs[i]);
    ss_res += e * e;
  }
  MixFit fit;
  fit.prefactor = std::exp(intercept);
  fit.rate = -slope;
  fit.r2 = ss_tot > 0.0 ? std::max(0.0, 1.0 - ss_res / ss_tot) : 1.0;
  fit.k_lo = k_lo;
  fit.k_hi = k_hi;
  fit.points_used = xs.size();
  return fit;
}

// Scale of the dual-Lipschitz estimator under the null hypothesis that both
// sample sets come from one law: mean + one standard deviation of the
// distance between two resamples of the pooled cloud.
inline double bootstrap_error(const std::vector<VectorXd>& a,
                              const std::vector<VectorXd>& b, RngStream& rng,
                              int resamples = 200, std::size_t cap = 600) {
  std::vector<VectorXd> pool = a;
  pool.insert(pool.end(), b.begin(), b.end());
  const std::size_t na = std::min(a.size(), cap);
  const std::size_t nb = std::min(b.size(), cap);
  double s1 = 0.0, s2 = 0.0;
  for (int r = 0; r < resamples; ++r) {
    EmpiricalMeasure ra, rb;
    ra.samples.reserve(na);
    rb.samples.reserve(nb);
    for (std::size_t i = 0; i < na; ++i)
      ra.samples.push_back(pool[rng.uniform_index(pool.size())]);
    for (std::size_t i = 0; i < nb; ++i)
      rb.samples.push_back(pool[rng.uniform_index(pool.size())]);
    const double d = dual_lipschitz_estimate(ra, rb, cap);
    s1 += d;
    s2 += d * d;
  }
  const double mean = s1 / resamples;
  const double var = std::max(0.0, s2 / resamples - mean * mean);
  return mean + std::sqrt(var);
}

struct TwoSampleResult {
  double distance = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

inline TwoSampleResult two_sample_check(const std::vector<VectorXd>& a,
                                        const std::vector<VectorXd>& b,
                                        RngStream& rng,
                                        double tol_multiplier = 3.0,
                                        int resamples = 200,
                                        std::size_t cap = 600) {
  TwoSampleResult res;
  res.distance = dual_lipschitz_estimate(EmpiricalMeasure::from_samples(a),
                                         EmpiricalMeasure::from_samples(b), cap);
  res.threshold = tol_multiplier * bootstrap_error(a, b, rng, resamples, cap);
  res.pass = res.distance < res.threshold;
  return res;
}

}  // namespace rdlab
