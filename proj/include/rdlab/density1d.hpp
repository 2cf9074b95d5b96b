#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>

#include "rdlab/rng.hpp"

namespace rdlab {

// One-dimensional compactly supported probability density with closed-form
// CDF and inverse CDF, used as innovation / coefficient laws.
class Density1D {
 public:
  virtual ~Density1D() = default;
  virtual double pdf(double x) const = 0;
  virtual double cdf(double x) const = 0;
  virtual double inv_cdf(double u) const = 0;
  virtual double lower() const = 0;
  virtual double upper() const = 0;
  virtual double mean() const = 0;
  // Whether the density is Lipschitz on the whole line (the uniform one is
  // not, because of the jumps at the endpoints).
  virtual bool lipschitz() const = 0;

  double sample(RngStream& rng) const { return inv_cdf(rng.uniform()); }
};

// Triangular ("tent") density on [-a, a]: pdf(x) = (a - |x|)/a^2.
class TentDensity final : public Density1D {
 public:
  explicit TentDensity(double a = 1.0) : a_(a) {
    if (a <= 0.0) throw std::invalid_argument("TentDensity: a must be > 0");
  }
  double pdf(double x) const override {
    const double t = a_ - std::abs(x);
    return t > 0.0 ? t / (a_ * a_) : 0.0;
  }
  double cdf(double x) const override {
    if (x <= -a_) return 0.0;
    if (x >= a_) return 1.0;
    if (x < 0.0) {
      const double t = (x + a_) / a_;
      return 0.5 * t * t;
    }
    const double t = (a_ - x) / a_;
    return 1.0 - 0.5 * t * t;
  }
  double inv_cdf(double u) const override {
    if (u <= 0.5) return a_ * (std::sqrt(2.0 * u) - 1.0);
    return a_ * (1.0 - std::sqrt(2.0 * (1.0 - u)));
  }
  double lower() const override { return -a_; }
  double upper() const override { return a_; }
  double mean() const override { return 0.0; }
  bool lipschitz() const override { return true; }

 private:
  double a_;
};

class UniformDensity final : public Density1D {
 public:
  UniformDensity(double a, double b) : a_(a), b_(b) {
    if (b <= a) throw std::invalid_argument("UniformDensity: need b > a");
  }
  double pdf(double x) const override {
    return (x >= a_ && x <= b_) ? 1.0 / (b_ - a_) : 0.0;
  }
  double cdf(double x) const override {
    if (x <= a_) return 0.0;
    if (x >= b_) return 1.0;
    return (x - a_) / (b_ - a_);
  }
  double inv_cdf(double u) const override { return a_ + u * (b_ - a_); }
  double lower() const override { return a_; }
  double upper() const override { return b_; }
  double mean() const override { return 0.5 * (a_ + b_); }
  bool lipschitz() const override { return false; }

 private:
  double a_, b_;
};

using DensityPtr = std::shared_ptr<const Density1D>;

inline DensityPtr tent(double a = 1.0) {
  return std::make_shared<TentDensity>(a);
}
inline DensityPtr uniform_density(double a, double b) {
  return std::make_shared<UniformDensity>(a, b);
}

}  // namespace rdlab
