#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

namespace rdlab {

// Exact solver for the balanced transportation problem
//
//   min sum_{ij} f_ij c_ij   s.t.  sum_j f_ij = a_i,  sum_i f_ij = b_j, f >= 0
//
// by the primal network simplex on the bipartite graph: north-west corner
// start, block pivot search, and incremental tree/potential maintenance.
// Sizes up to a few thousand points per side solve exactly in seconds.
class TransportSimplex {
 public:
  // cost is row-major n x m; a has length n, b length m, both summing to the
  // same total mass (up to rounding).
  static double solve(const std::vector<double>& a, const std::vector<double>& b,
                      const std::vector<double>& cost) {
    const int n = static_cast<int>(a.size());
    const int m = static_cast<int>(b.size());
    if (static_cast<std::size_t>(n) * m != cost.size())
      throw std::invalid_argument("TransportSimplex: cost size mismatch");
    TransportSimplex ts(a, b, cost);
    if (!ts.run()) {
      // Degenerate stall; retry on slightly perturbed masses.  The objective
      // error is bounded by the perturbation times the cost scale.
      std::vector<double> ap = a, bp = b;
      double extra = 0.0;
      for (int i = 0; i < n; ++i) {
        const double e = 1e-13 * (i + 1) / n;
        ap[i] += e;
        extra += e;
      }
      bp[m - 1] += extra;
      TransportSimplex ts2(ap, bp, cost);
      ts2.run();
      return ts2.objective();
    }
    return ts.objective();
  }

 private:
  TransportSimplex(const std::vector<double>& a, const std::vector<double>& b,
                   const std::vector<double>& cost)
      : n_(static_cast<int>(a.size())),
        m_(static_cast<int>(b.size())),
        cost_(cost),
        parent_(n_ + m_, -1),
        flow_(n_ + m_, 0.0),
        depth_(n_ + m_, 0),
        pi_(n_ + m_, 0.0),
        children_(n_ + m_) {
    northwest_start(a, b);
    init_tree();
  }

  double c(int i, int j) const {
    return cost_[static_cast<std::size_t>(i) * m_ + j];
  }
  bool is_source(int v) const { return v < n_; }

  void northwest_start(std::vector<double> a, std::vector<double> b) {
    std::vector<std::pair<int, int>> cells;
    cells.reserve(n_ + m_ - 1);
    std::vector<double> f;
    int i = 0, j = 0;
    while (i < n_ && j < m_) {
      const double t = std::min(a[i], b[j]);
      cells.emplace_back(i, j);
      f.push_back(t);
      a[i] -= t;
      b[j] -= t;
      if (i == n_ - 1 && j == m_ - 1) break;
      if (a[i] <= b[j] && i < n_ - 1) {
        ++i;
      } else {
        ++j;
      }
    }
    std::vector<std::vector<std::pair<int, double>>> adj(n_ + m_);
    for (std::size_t k = 0; k < cells.size(); ++k) {
      const int u = cells[k].first;
      const int v = n_ + cells[k].second;
      adj[u].emplace_back(v, f[k]);
      adj[v].emplace_back(u, f[k]);
    }
    std::vector<int> stack = {0};
    std::vector<char> seen(n_ + m_, 0);
    seen[0] = 1;
    parent_[0] = -1;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      for (auto& [v, fv] : adj[u]) {
        if (seen[v]) continue;
        seen[v] = 1;
        parent_[v] = u;
        flow_[v] = fv;
        stack.push_back(v);
      }
    }
  }

  void init_tree() {
    for (int v = 0; v < n_ + m_; ++v)
      if (parent_[v] >= 0) children_[parent_[v]].push_back(v);
    refresh_subtree(0, 0, 0.0);
  }

  // Recompute depth and potential below `root` given its parent values.
  void refresh_subtree(int root, int root_depth, double root_pi) {
    depth_[root] = root_depth;
    pi_[root] = root_pi;
    scratch_.clear();
    scratch_.push_back(root);
    while (!scratch_.empty()) {
      const int u = scratch_.back();
      scratch_.pop_back();
      for (int v : children_[u]) {
        depth_[v] = depth_[u] + 1;
        pi_[v] = is_source(v) ? pi_[u] - c(v, u - n_) : pi_[u] + c(u, v - n_);
        scratch_.push_back(v);
      }
    }
  }

  void unlink_child(int p, int v) {
    auto& ch = children_[p];
    ch.erase(std::find(ch.begin(), ch.end(), v));
  }

  bool run() {
    const std::int64_t total = static_cast<std::int64_t>(n_) * m_;
    const std::int64_t block =
        std::max<std::int64_t>(64, static_cast<std::int64_t>(
                                       std::sqrt(static_cast<double>(total))));
    const long max_pivots = 400L * (n_ + m_) + 10000L;
    std::int64_t cursor = 0;
    const double tol = 1e-11;
    for (long pivot = 0; pivot < max_pivots; ++pivot) {
      int ei = -1, ej = -1;
      double best = -tol;
      std::int64_t scanned = 0;
      while (scanned < total) {
        const std::int64_t stop = std::min<std::int64_t>(block, total - scanned);
        for (std::int64_t k = 0; k < stop; ++k) {
          std::int64_t idx = cursor + k;
          if (idx >= total) idx -= total;
          const int i = static_cast<int>(idx / m_);
          const int j = static_cast<int>(idx % m_);
          const double rc = c(i, j) - pi_[n_ + j] + pi_[i];
          if (rc < best) {
            best = rc;
            ei = i;
            ej = j;
          }
        }
        cursor += stop;
        if (cursor >= total) cursor -= total;
        scanned += stop;
        if (ei >= 0) break;
      }
      if (ei < 0) return true;  // optimal
      if (!do_pivot(ei, n_ + ej)) return true;
    }
    return false;  // stalled
  }

  // Apply one pivot with entering arc (x source, y sink).
  bool do_pivot(int x, int y) {
    px_.clear();
    py_.clear();
    int u = x, v = y;
    while (depth_[u] > depth_[v]) {
      px_.push_back(u);
      u = parent_[u];
    }
    while (depth_[v] > depth_[u]) {
      py_.push_back(v);
      v = parent_[v];
    }
    while (u != v) {
      px_.push_back(u);
      py_.push_back(v);
      u = parent_[u];
      v = parent_[v];
    }
    // Circulation: +delta on the entering arc x->y, returning from y to x
    // through the tree.  The arc of node w is traversed downward on the x
    // side and upward on the y side.
    double delta = std::numeric_limits<double>::infinity();
    int leave = -1;
    bool leave_on_x_side = false;
    for (int w : px_) {
      if (is_source(w) && flow_[w] < delta) {
        delta = flow_[w];
        leave = w;
        leave_on_x_side = true;
      }
    }
    for (int w : py_) {
      if (!is_source(w) && flow_[w] < delta) {
        delta = flow_[w];
        leave = w;
        leave_on_x_side = false;
      }
    }
    if (leave < 0) return false;
    for (int w : px_) flow_[w] += is_source(w) ? -delta : delta;
    for (int w : py_) flow_[w] += is_source(w) ? delta : -delta;
    // Reverse parent pointers from the entering endpoint on the detached
    // side up to the leaving arc, then attach to the other side.
    const int top = leave;
    int node = leave_on_x_side ? x : y;
    const int attach = leave_on_x_side ? y : x;
    int prev = attach;
    double carry = delta;
    while (true) {
      const int next = parent_[node];
      const double f_old = flow_[node];
      unlink_child(next, node);
      parent_[node] = prev;
      children_[prev].push_back(node);
      flow_[node] = carry;
      if (node == top) break;
      prev = node;
      carry = f_old;
      node = next;
    }
    // Only the re-attached subtree's depths/potentials changed.
    const int sub = leave_on_x_side ? x : y;
    const double pi_sub = is_source(sub) ? pi_[attach] - c(sub, attach - n_)
                                         : pi_[attach] + c(attach, sub - n_);
    refresh_subtree(sub, depth_[attach] + 1, pi_sub);
    return true;
  }

  double objective() const {
    double obj = 0.0;
    for (int v = 0; v < n_ + m_; ++v) {
      const int p = parent_[v];
      if (p < 0) continue;
      obj += flow_[v] * (is_source(v) ? c(v, p - n_) : c(p, v - n_));
    }
    return obj;
  }

  int n_, m_;
  const std::vector<double>& cost_;
  std::vector<int> parent_;
  std::vector<double> flow_;
  std::vector<int> depth_;
  std::vector<double> pi_;
  std::vector<std::vector<int>> children_;
  std::vector<int> scratch_, px_, py_;
};

}  // namespace rdlab
