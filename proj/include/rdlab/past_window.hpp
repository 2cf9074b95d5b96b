#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace rdlab {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Axis-aligned compact box in R^d.
struct Box {
  VectorXd lo, hi;

  int dim() const { return static_cast<int>(lo.size()); }

  bool contains(const VectorXd& y, double tol = 1e-12) const {
    if (y.size() != lo.size()) return false;
    for (int i = 0; i < y.size(); ++i) {
      if (y[i] < lo[i] - tol || y[i] > hi[i] + tol) return false;
    }
    return true;
  }

  double diameter() const { return (hi - lo).norm(); }

  static Box centered(int dim, double radius) {
    Box b;
    b.lo = VectorXd::Constant(dim, -radius);
    b.hi = VectorXd::Constant(dim, radius);
    return b;
  }
};

// Truncation length such that the dropped tail of the geometric-weight
// distance is below tol_tail.
inline int truncation_length(double diameter, double iota,
                             double tol_tail = 1e-9) {
  if (diameter <= 0.0) return 1;
  const int l = static_cast<int>(
      std::ceil(std::log(diameter / tol_tail) / std::log(iota)));
  return l < 1 ? 1 : l;
}

// Truncated noise history: entries ordered oldest first, most recent last.
// The metric weight of the entry at offset k back from the newest is iota^-k.
class PastWindow {
 public:
  PastWindow(int length, int dim, Box support, double iota = 2.0)
      : entries_(length, VectorXd::Zero(dim)),
        support_(std::move(support)),
        iota_(iota) {
    if (length < 1) throw std::invalid_argument("PastWindow: length < 1");
    if (iota <= 1.0) throw std::invalid_argument("PastWindow: need iota > 1");
    if (support_.dim() != dim)
      throw std::invalid_argument("PastWindow: support dim mismatch");
  }

  int length() const { return static_cast<int>(entries_.size()); }
  int dim() const { return static_cast<int>(entries_.front().size()); }
  double iota() const { return iota_; }
  const Box& support() const { return support_; }

  // entry(0) is the most recent value, entry(k) the value k steps back.
  const VectorXd& entry(int k_back) const {
    return entries_.at(entries_.size() - 1 - k_back);
  }

  void set_entry(int k_back, const VectorXd& y) {
    if (!support_.contains(y))
      throw std::domain_error("PastWindow: entry outside support");
    entries_.at(entries_.size() - 1 - k_back) = y;
  }

  const std::vector<VectorXd>& raw() const { return entries_; }

 private:
  friend PastWindow append_past(const PastWindow&, const VectorXd&);
  std::vector<VectorXd> entries_;
  Box support_;
  double iota_;
};

inline double past_distance(const PastWindow& a, const PastWindow& b) {
  if (a.length() != b.length() || a.dim() != b.dim())
    throw std::invalid_argument("past_distance: shape mismatch");
  if (a.iota() != b.iota())
    throw std::invalid_argument("past_distance: iota mismatch");
  double d = 0.0;
  double w = 1.0;
  for (int k = 0; k < a.length(); ++k) {
    d += w * (a.entry(k) - b.entry(k)).norm();
    w /= a.iota();
  }
  return d;
}

// Shift semantics of the noise lift: drop the oldest entry, append y.
inline PastWindow append_past(const PastWindow& xi, const VectorXd& y) {
  if (y.size() != xi.dim())
    throw std::invalid_argument("append_past: dim mismatch");
  if (!xi.support().contains(y))
    throw std::domain_error("append_past: value outside support");
  PastWindow out = xi;
  out.entries_.erase(out.entries_.begin());
  out.entries_.push_back(y);
  return out;
}

}  // namespace rdlab
