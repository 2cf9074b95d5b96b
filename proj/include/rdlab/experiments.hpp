#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rdlab/cgl.hpp"
#include "rdlab/chain.hpp"
#include "rdlab/config.hpp"
#include "rdlab/control.hpp"
#include "rdlab/coupling.hpp"
#include "rdlab/metrics.hpp"
#include "rdlab/noise_kernels.hpp"
#include "rdlab/systems.hpp"

namespace rdlab {

using nlohmann::json;

struct RunOptions {
  std::uint64_t seed = 1;
  int workers = 1;
  std::string out_dir;  // empty = no files written
};

// ---------------------------------------------------------------------------
// Experiment setup from a config: a time-one map, a noise kernel whose
// dimension matches the map's forcing, and two initial states.

struct Setup {
  std::shared_ptr<TimeOneMap> map;
  std::shared_ptr<NoiseKernel> kernel;
  VectorXd init_a, init_b;
  std::string system_kind, noise_kind;
  std::optional<OscillatorChainSpec> chain_spec;
};

inline Setup build_setup(const Config& cfg) {
  Setup s;
  s.system_kind = cfg.get_str("system", "kind");
  if (s.system_kind == "toy-linear") {
    const int dim = static_cast<int>(cfg.get_int("system", "dim", 1));
    const double factor = cfg.get_num("system", "factor", 0.5);
    const double gain = cfg.get_num("system", "noise_gain", 1.0);
    s.map = std::make_shared<LinearMap>(
        factor * MatrixXd::Identity(dim, dim),
        gain * MatrixXd::Identity(dim, dim));
  } else if (s.system_kind == "chain") {
    OscillatorChainSpec spec;
    spec.n = static_cast<int>(cfg.get_int("system", "n", 2));
    spec.a = VectorXd::Ones(spec.n);
    spec.b = VectorXd::Ones(std::max(0, spec.n - 1));
    if (cfg.has("system", "a")) {
      const auto a = cfg.get_list("system", "a");
      if (static_cast<int>(a.size()) != spec.n)
        throw std::runtime_error("config: system.a must have n entries");
      for (int i = 0; i < spec.n; ++i) spec.a[i] = a[i];
    }
    if (cfg.has("system", "b")) {
      const auto b = cfg.get_list("system", "b");
      if (static_cast<int>(b.size()) != spec.n - 1)
        throw std::runtime_error("config: system.b must have n-1 entries");
      for (int i = 0; i + 1 < spec.n; ++i) spec.b[i] = b[i];
    }
    spec.gamma1 = cfg.get_num("system", "gamma1", 1.0);
    spec.gamman = cfg.get_num("system", "gamman", 1.0);
    spec.h = cfg.get_num("system", "h", 1e-3);
    spec.n_basis = static_cast<int>(cfg.get_int("system", "n_basis", 2));
    s.chain_spec = spec;
    s.map = std::make_shared<OscillatorChain>(spec);
  } else if (s.system_kind == "cgl") {
    CGLSpec spec;
    spec.N = static_cast<int>(cfg.get_int("system", "modes", 16));
    spec.nu = cfg.get_num("system", "nu", 0.1);
    spec.c = cfg.get_num("system", "c", 1.0);
    spec.s = static_cast<int>(cfg.get_int("system", "s", 1));
    spec.substeps = static_cast<int>(cfg.get_int("system", "substeps", 64));
    s.map = std::make_shared<CGLMap>(spec);
  } else {
    throw std::runtime_error("config: unknown system.kind '" + s.system_kind +
                             "'");
  }

  const int dn = s.map->dim_noise();
  s.noise_kind = cfg.get_str("noise", "kind");
  if (s.noise_kind == "ma") {
    std::vector<double> coeffs{0.5};
    if (cfg.has("noise", "coeffs")) coeffs = cfg.get_list("noise", "coeffs");
    const double amp = cfg.get_num("noise", "amplitude", 1.0);
    s.kernel =
        std::make_shared<MovingAverageKernel>(coeffs, tent(amp), dn);
  } else if (s.noise_kind == "iid") {
    const double amp = cfg.get_num("noise", "amplitude", 1.0);
    std::vector<DensityPtr> coords;
    for (int i = 0; i < dn; ++i) coords.push_back(tent(amp));
    s.kernel = std::make_shared<IIDKernel>(std::move(coords));
  } else if (s.noise_kind == "kick") {
    // Per-mode kick amplitudes of the spectral map (real and imaginary
    // components share the amplitude of their mode).
    const auto* cglm = dynamic_cast<const CGLMap*>(s.map.get());
    if (!cglm)
      throw std::runtime_error("config: noise.kind=kick requires system=cgl");
    const double scale = cfg.get_num("noise", "scale", 1.0);
    const int N = cglm->spec().N;
    std::vector<DensityPtr> coords;
    for (int rep = 0; rep < 2; ++rep)
      for (int j = 1; j <= N; ++j)
        coords.push_back(tent(scale * cglm->spec().kick_amplitude(j)));
    s.kernel = std::make_shared<IIDKernel>(std::move(coords));
  } else if (s.noise_kind == "markov") {
    const double amp = cfg.get_num("noise", "amplitude", 1.0);
    const double kappa = cfg.get_num("noise", "kappa", 0.5);
    if (!(std::abs(kappa) < 1.0))
      throw std::runtime_error("config: noise.kappa must be in (-1, 1)");
    Box box;
    box.lo = VectorXd::Constant(dn, -amp);
    box.hi = VectorXd::Constant(dn, amp);
    auto rho = [dn, amp, kappa](const VectorXd& prev, const VectorXd& y) {
      double p = 1.0;
      for (int i = 0; i < dn; ++i) {
        const double x = std::clamp(prev[i] / amp, -1.0, 1.0);
        p *= (1.0 + kappa * x * (y[i] / amp)) / (2.0 * amp);
      }
      return p;
    };
    const double dmax = std::pow((1.0 + std::abs(kappa)) / (2.0 * amp), dn);
    s.kernel = std::make_shared<MarkovKernel>(dn, box, rho, dmax);
  } else if (s.noise_kind == "periodic-basis") {
    const double amp = cfg.get_num("noise", "amplitude", 1.0);
    const double w = cfg.get_num("noise", "weight", 0.5);
    if (!(w >= 0.0 && w < 1.0))
      throw std::runtime_error("config: noise.weight must be in [0, 1)");
    std::vector<DensityPtr> coords;
    for (int i = 0; i < dn; ++i) coords.push_back(tent(amp));
    auto g = [amp, w](const PastWindow& xi, const VectorXd& y) {
      const double prev = std::clamp(xi.entry(0)[0] / amp, -1.0, 1.0);
      return 1.0 + w * prev * std::sin(M_PI * y[0] / amp);
    };
    s.kernel = std::make_shared<PeriodicBasisKernel>(std::move(coords), g,
                                                     1.0 - w, 1.0 + w);
  } else {
    throw std::runtime_error("config: unknown noise.kind '" + s.noise_kind +
                             "'");
  }

  const int ds = s.map->dim_state();
  s.init_a = VectorXd::Zero(ds);
  s.init_b = VectorXd::Unit(ds, 0);
  s.init_b /= s.map->state_norm(s.init_b);  // distance 1 in the map norm
  auto read_state = [&](const char* key, VectorXd& out) {
    if (!cfg.has("system", key)) return;
    const auto v = cfg.get_list("system", key);
    if (static_cast<int>(v.size()) != ds)
      throw std::runtime_error(std::string("config: system.") + key +
                               " must have dim_state entries");
    for (int i = 0; i < ds; ++i) out[i] = v[i];
  };
  read_state("init_a", s.init_a);
  read_state("init_b", s.init_b);
  return s;
}

// ---------------------------------------------------------------------------
// Output helpers.

namespace detail {

inline void ensure_out_dir(const std::string& dir) {
  if (!dir.empty()) std::filesystem::create_directories(dir);
}

inline void write_text(const std::string& dir, const std::string& name,
                       const std::string& text) {
  if (dir.empty()) return;
  std::ofstream out(std::filesystem::path(dir) / name,
                    std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write output file " + name);
  out << text;
}

// Echo the fully resolved configuration (seed and workers included) next to
// the outputs so a run is reproducible from its artifacts alone.
inline void write_resolved_config(Config cfg, const RunOptions& opts,
                                  const std::string& name) {
  if (opts.out_dir.empty()) return;
  cfg.set("experiment", "seed", std::to_string(opts.seed));
  cfg.set("experiment", "workers", std::to_string(opts.workers));
  write_text(opts.out_dir, name, cfg.serialize());
}

inline std::string format_num(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

// Simulate one noise past to approximate stationarity, then the state
// trajectory; records the state after each of the first `horizon` steps.
inline std::vector<VectorXd> simulate_states(const TimeOneMap& map,
                                             const NoiseKernel& kernel,
                                             VectorXd u, int burn_in,
                                             int horizon, RngStream& rng) {
  PastWindow xi = kernel.zero_past();
  for (int i = 0; i < burn_in; ++i) xi = noise_lift_step(xi, kernel, rng);
  std::vector<VectorXd> out;
  out.reserve(horizon + 1);
  out.push_back(u);
  for (int k = 0; k < horizon; ++k) {
    const VectorXd zeta = kernel.sample(xi, rng);
    u = map.apply(u, zeta);
    xi = append_past(xi, zeta);
    out.push_back(u);
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// mix-rate: dual-Lipschitz distance between the state laws started from two
// deterministic initial conditions, with an exponential fit.

struct MixCurveRow {
  int k = 0;
  double distance = 0.0;
  double stderr_boot = 0.0;
};

struct MixRateResult {
  std::vector<MixCurveRow> curve;
  MixFit fit;
  int points_excluded = 0;  // below the MC noise floor inside the window
};

inline MixRateResult run_mix_rate(const Setup& s, const Config& cfg,
                                  const RunOptions& opts) {
  const int ensemble = static_cast<int>(cfg.get_int("experiment", "ensemble", 2000));
  const int horizon = static_cast<int>(cfg.get_int("experiment", "horizon", 30));
  const int burn_in = static_cast<int>(cfg.get_int("experiment", "burn_in", 64));
  const int fit_lo = static_cast<int>(cfg.get_int("experiment", "fit_lo", 5));
  const int fit_hi = static_cast<int>(cfg.get_int("experiment", "fit_hi", horizon));
  const auto cap = static_cast<std::size_t>(cfg.get_int("experiment", "lp_cap", 2000));
  const int resamples = static_cast<int>(cfg.get_int("experiment", "resamples", 50));
  const auto boot_cap = static_cast<std::size_t>(cfg.get_int("experiment", "boot_cap", 400));
  // Paired mode drives replica r of both ensembles with one shared noise
  // stream (common random numbers).  Members stay independent, so both
  // empirical marginals are exact; by convexity the estimated distance is
  // still an upper bound on the distance between the laws in expectation,
  // but the Monte Carlo floor of the estimator drops by orders of magnitude.
  const bool paired = cfg.get_int("experiment", "paired", 0) != 0;
  if (ensemble < 2 || horizon < 1)
    throw std::runtime_error("config: mix-rate needs ensemble >= 2, horizon >= 1");

  std::vector<std::vector<VectorXd>> at(horizon + 1), bt(horizon + 1);
  for (auto& v : at) v.resize(ensemble);
  for (auto& v : bt) v.resize(ensemble);
  parallel_for(ensemble, opts.workers, [&](std::size_t r) {
    RngStream ra(opts.seed, 2 * r);
    RngStream rb(opts.seed, paired ? 2 * r : 2 * r + 1);
    const auto pa = detail::simulate_states(*s.map, *s.kernel, s.init_a,
                                            burn_in, horizon, ra);
    const auto pb = detail::simulate_states(*s.map, *s.kernel, s.init_b,
                                            burn_in, horizon, rb);
    for (int k = 0; k <= horizon; ++k) {
      at[k][r] = pa[k];
      bt[k][r] = pb[k];
    }
  });

  MixRateResult res;
  res.curve.resize(horizon + 1);
  // The transport problems per k are independent; solve them in parallel
  // with a dedicated bootstrap stream per k so results do not depend on the
  // worker count.
  parallel_for(horizon + 1, opts.workers, [&](std::size_t k) {
    MixCurveRow row;
    row.k = static_cast<int>(k);
    row.distance = dual_lipschitz_estimate(
        EmpiricalMeasure::from_samples(at[k]),
        EmpiricalMeasure::from_samples(bt[k]), cap);
    RngStream boot(opts.seed ^ 0xb00757a9ULL, k);
    row.stderr_boot = bootstrap_error(at[k], bt[k], boot, resamples, boot_cap);
    res.curve[k] = row;
  });

  // Fit log-distance over the window, excluding points at the MC noise
  // floor.  The bootstrap error is the floor of the independent estimator;
  // the paired estimator's floor is only the transport tolerance.
  std::vector<int> ks;
  std::vector<double> ds;
  for (const auto& row : res.curve) {
    if (row.k < fit_lo || row.k > fit_hi) continue;
    const double floor = paired ? 1e-12 : row.stderr_boot;
    if (row.distance <= floor) {
      ++res.points_excluded;
      continue;
    }
    ks.push_back(row.k);
    ds.push_back(row.distance);
  }
  if (ks.size() >= 3) {
    res.fit = fit_exponential_decay(ks, ds, fit_lo, fit_hi);
  } else {
    res.fit = MixFit{};  // curve at the noise floor: no decay to fit
    res.fit.points_used = ks.size();
  }

  detail::ensure_out_dir(opts.out_dir);
  std::ostringstream csv;
  csv << "k,distance,stderr\n";
  for (const auto& row : res.curve)
    csv << row.k << "," << detail::format_num(row.distance) << ","
        << detail::format_num(row.stderr_boot) << "\n";
  detail::write_text(opts.out_dir, "mix_rate.csv", csv.str());
  json summary = {{"gamma", res.fit.rate},
                  {"C", res.fit.prefactor},
                  {"r2", res.fit.r2},
                  {"points_used", res.fit.points_used},
                  {"points_excluded", res.points_excluded},
                  {"ensemble", ensemble},
                  {"horizon", horizon}};
  detail::write_text(opts.out_dir, "mix_rate.json", summary.dump(2) + "\n");
  detail::write_resolved_config(cfg, opts, "mix_rate.resolved.cfg");
  return res;
}

// ---------------------------------------------------------------------------
// kernel-converge: decay of the conditional-law distance in the shift index.

struct KernelConvergeResult {
  std::vector<std::pair<int, double>> curve;
  MixFit fit;
};

inline KernelConvergeResult run_kernel_converge(const Setup& s,
                                                const Config& cfg,
                                                const RunOptions& opts) {
  const int k_max = static_cast<int>(cfg.get_int("experiment", "k_max", 10));
  const int m = static_cast<int>(cfg.get_int("experiment", "m", 1));
  const int ensemble = static_cast<int>(cfg.get_int("experiment", "ensemble", 2000));
  const auto cap = static_cast<std::size_t>(cfg.get_int("experiment", "lp_cap", 1000));
  const double sep = cfg.get_num("experiment", "past_value", 0.5);

  const PastWindow xi_a =
      s.kernel->constant_past(VectorXd::Constant(s.kernel->dim(), sep));
  const PastWindow xi_b =
      s.kernel->constant_past(VectorXd::Constant(s.kernel->dim(), -sep));
  KernelConvergeResult res;
  res.curve = kernel_convergence_curve(*s.kernel, xi_a, xi_b, m, k_max,
                                       ensemble, opts.seed, opts.workers, cap);

  std::vector<int> ks;
  std::vector<double> ds;
  for (const auto& [k, d] : res.curve)
    if (d > 0.0) {
      ks.push_back(k);
      ds.push_back(d);
    }
  if (ks.size() >= 3)
    res.fit = fit_exponential_decay(ks, ds, 0, k_max);

  detail::ensure_out_dir(opts.out_dir);
  std::ostringstream csv;
  csv << "k,distance,stderr\n";
  for (const auto& [k, d] : res.curve)
    csv << k << "," << detail::format_num(d) << ",0\n";
  detail::write_text(opts.out_dir, "kernel_converge.csv", csv.str());
  json summary = {{"gamma", res.fit.rate},
                  {"C", res.fit.prefactor},
                  {"r2", res.fit.r2},
                  {"ensemble", ensemble}};
  detail::write_text(opts.out_dir, "kernel_converge.json",
                     summary.dump(2) + "\n");
  detail::write_resolved_config(cfg, opts, "kernel_converge.resolved.cfg");
  return res;
}

// ---------------------------------------------------------------------------
// couple: tuned coupled iteration over an ensemble of nearby pairs.

struct CoupleResult {
  CouplingParams params;  // tuned constants, with measured q and N filled in
  std::vector<double> mean_distance;  // per step, averaged over pairs
  std::vector<double> met_fraction;
  double measured_q = 0.0;       // worst met-step contraction ratio
  double measured_N = 0.0;       // miss frequency / starting distance
  double contraction_ratio = 1.0;  // mean final distance / mean initial
  int degraded_steps = 0;
};

namespace detail {

// Sample typical states (absorbing-set representatives) and nearby pairs for
// measuring the control constants.
inline std::vector<std::pair<VectorXd, VectorXd>> sample_state_pairs(
    const Setup& s, int count, double gap, std::uint64_t seed) {
  RngStream rng(seed);
  const auto path =
      simulate_states(*s.map, *s.kernel, s.init_a, 64, 40 + count, rng);
  std::vector<std::pair<VectorXd, VectorXd>> pairs;
  for (int i = 0; i < count; ++i) {
    const VectorXd& v = path[40 + i];
    VectorXd dir(v.size());
    for (int j = 0; j < dir.size(); ++j) dir[j] = rng.normal();
    dir *= gap / std::max(s.map->state_norm(dir), 1e-14);
    pairs.emplace_back(v, v + dir);
  }
  return pairs;
}

inline std::vector<VectorXd> sample_noise_grid(const Setup& s, int count,
                                               std::uint64_t seed) {
  RngStream rng(seed);
  PastWindow xi = s.kernel->zero_past();
  for (int i = 0; i < 64; ++i) xi = noise_lift_step(xi, *s.kernel, rng);
  std::vector<VectorXd> grid;
  for (int i = 0; i < count; ++i) {
    const VectorXd zeta = s.kernel->sample(xi, rng);
    xi = append_past(xi, zeta);
    grid.push_back(zeta);
  }
  return grid;
}

inline PastWindow burned_past(const NoiseKernel& kernel, RngStream& rng,
                              int burn_in = 64) {
  PastWindow xi = kernel.zero_past();
  for (int i = 0; i < burn_in; ++i) xi = noise_lift_step(xi, kernel, rng);
  return xi;
}

}  // namespace detail

inline CouplingParams tune_from_setup(const Setup& s, const Config& cfg,
                                      const RunOptions& opts) {
  const double eps = cfg.get_num("experiment", "eps", 0.05);
  const int n_probe = static_cast<int>(cfg.get_int("experiment", "probe_pairs", 8));
  const double gap = cfg.get_num("experiment", "probe_gap", 1e-3);
  MatrixXd G = MatrixXd::Identity(s.map->dim_state(), s.map->dim_state());
  if (cfg.has("experiment", "g_cols")) {
    const int cols = static_cast<int>(cfg.get_int("experiment", "g_cols"));
    if (cols < 0 || cols > s.map->dim_state())
      throw std::runtime_error("config: experiment.g_cols out of range");
    G = G.leftCols(cols).eval();
  }
  const auto pairs =
      detail::sample_state_pairs(s, n_probe, gap, opts.seed ^ 0x70a1289bULL);
  const auto grid =
      detail::sample_noise_grid(s, n_probe, opts.seed ^ 0x3c6ef372ULL);
  return tune_coupling_params(*s.map, *s.kernel, G, eps, pairs, grid);
}

inline CoupleResult run_couple(const Setup& s, const Config& cfg,
                               const RunOptions& opts) {
  const int n_pairs = static_cast<int>(cfg.get_int("experiment", "pairs", 100));
  const int k_max = static_cast<int>(cfg.get_int("experiment", "horizon", 20));
  CoupleResult res;
  res.params = tune_from_setup(s, cfg, opts);
  const double d0 =
      cfg.get_num("experiment", "start_distance", 0.5 * res.params.theta);

  std::vector<CoupledPaths> runs(n_pairs);
  parallel_for(n_pairs, opts.workers, [&](std::size_t r) {
    RngStream rng(opts.seed, r);
    PastWindow xi = detail::burned_past(*s.kernel, rng);
    // A base state in the attracting region, and a partner at lifted
    // distance exactly d0 reached by a pure state offset.
    const auto path =
        detail::simulate_states(*s.map, *s.kernel, s.init_a, 0, 40, rng);
    const VectorXd v = path.back();
    VectorXd dir(v.size());
    for (int j = 0; j < dir.size(); ++j) dir[j] = rng.normal();
    dir *= (d0 / res.params.L) / std::max(s.map->state_norm(dir), 1e-14);
    LiftedState U{v, xi}, Up{v + dir, xi};
    runs[r] = iterate_coupling(U, Up, *s.map, *s.kernel, res.params, k_max,
                               rng);
  });

  res.mean_distance.assign(k_max, 0.0);
  res.met_fraction.assign(k_max, 0.0);
  int misses_at_start = 0;
  double final_sum = 0.0;
  for (const auto& run : runs) {
    for (int k = 0; k < k_max; ++k) {
      const auto& st = run.stats.steps[k];
      res.mean_distance[k] += st.distance_after / n_pairs;
      res.met_fraction[k] += (st.met ? 1.0 : 0.0) / n_pairs;
      if (st.degraded) ++res.degraded_steps;
      if (st.met && st.distance_before > 0.0)
        res.measured_q = std::max(res.measured_q,
                                  st.distance_after / st.distance_before);
    }
    if (!run.stats.steps.front().met) ++misses_at_start;
    final_sum += run.stats.distances.back();
  }
  res.measured_N = (static_cast<double>(misses_at_start) / n_pairs) / d0;
  res.contraction_ratio = final_sum / (n_pairs * d0);
  res.params.q = std::max(res.params.q, res.measured_q);
  res.params.N = res.measured_N;

  detail::ensure_out_dir(opts.out_dir);
  std::ostringstream csv;
  csv << "k,distance,stderr\n";
  for (int k = 0; k < k_max; ++k)
    csv << (k + 1) << "," << detail::format_num(res.mean_distance[k]) << ","
        << detail::format_num(res.met_fraction[k]) << "\n";
  detail::write_text(opts.out_dir, "couple.csv", csv.str());
  json summary = {
      {"constants",
       {{"a", res.params.q_prime},
        {"kappa", res.contraction_ratio},
        {"q", res.params.q},
        {"N", res.params.N},
        {"theta", res.params.theta},
        {"L", res.params.L},
        {"c_prime", res.params.c_prime},
        {"delta_reg", res.params.delta_reg}}},
      {"measured_q", res.measured_q},
      {"degraded_steps", res.degraded_steps},
      {"pairs", n_pairs},
      {"horizon", k_max}};
  detail::write_text(opts.out_dir, "couple.json", summary.dump(2) + "\n");
  detail::write_resolved_config(cfg, opts, "couple.resolved.cfg");
  return res;
}

// ---------------------------------------------------------------------------
// verify: the standing-hypothesis checks.

struct HypothesisCheck {
  std::string name;
  bool pass = false;
  double value = 0.0;   // measured constant (meaning depends on the check)
  std::string error;    // non-empty if the sub-checker itself failed
};

struct VerifyReport {
  std::vector<HypothesisCheck> checks;
  bool all_pass = true;
};

inline VerifyReport run_verify_hypotheses(const Setup& s, const Config& cfg,
                                          const RunOptions& opts) {
  VerifyReport rep;
  auto run_check = [&](const std::string& name, auto&& body) {
    HypothesisCheck c;
    c.name = name;
    try {
      body(c);
    } catch (const std::exception& e) {
      c.pass = false;
      c.error = e.what();
    }
    rep.checks.push_back(c);
    rep.all_pass = rep.all_pass && c.pass;
  };

  const double support_radius = s.kernel->support().hi.cwiseAbs().maxCoeff();

  // Uniform contraction of the free dynamics after k steps.
  run_check("free-contraction", [&](HypothesisCheck& c) {
    const int k = static_cast<int>(cfg.get_int("experiment", "contraction_steps", 5));
    const int n_samples = static_cast<int>(cfg.get_int("experiment", "contraction_samples", 50));
    RngStream rng(opts.seed ^ 0x11ULL);
    std::vector<VectorXd> samples;
    for (int i = 0; i < n_samples; ++i) {
      VectorXd u(s.map->dim_state());
      for (int j = 0; j < u.size(); ++j) u[j] = rng.uniform(-1.0, 1.0);
      u *= rng.uniform(0.1, 2.0) / std::max(s.map->state_norm(u), 1e-14);
      samples.push_back(u);
    }
    c.value = free_contraction_factor(*s.map, samples, k);
    c.pass = c.value < 1.0;
  });

  // Strong recurrence to zero: uniform-in-past mass near the origin.
  run_check("recurrence-to-zero", [&](HypothesisCheck& c) {
    const int n = static_cast<int>(cfg.get_int("experiment", "recur_steps", 2));
    const double delta =
        cfg.get_num("experiment", "recur_delta", 0.5 * support_radius);
    const int ensemble = static_cast<int>(cfg.get_int("experiment", "recur_ensemble", 1000));
    std::vector<PastWindow> grid;
    grid.push_back(s.kernel->zero_past());
    grid.push_back(s.kernel->constant_past(
        VectorXd::Constant(s.kernel->dim(), 0.5 * support_radius)));
    grid.push_back(s.kernel->constant_past(
        VectorXd::Constant(s.kernel->dim(), -0.5 * support_radius)));
    RngStream rng(opts.seed ^ 0x22ULL);
    grid.push_back(detail::burned_past(*s.kernel, rng));
    c.value = recurrence_probability(*s.kernel, n, delta, 0, ensemble, grid,
                                     opts.seed ^ 0x23ULL, opts.workers);
    c.pass = c.value > 0.0;
  });

  // Approximate right-invertibility of the forcing direction.
  run_check("control-residual", [&](HypothesisCheck& c) {
    const double eps = cfg.get_num("experiment", "eps", 0.05);
    const auto pairs = detail::sample_state_pairs(s, 8, 1e-3,
                                                  opts.seed ^ 0x33ULL);
    const auto grid = detail::sample_noise_grid(s, 8, opts.seed ^ 0x34ULL);
    std::vector<MatrixXd> family;
    for (const auto& pr : pairs)
      for (const VectorXd& xi : grid)
        family.push_back(s.map->jac_noise(pr.first, xi));
    const MatrixXd G =
        MatrixXd::Identity(s.map->dim_state(), s.map->dim_state());
    const auto choice = select_regularization(family, G, eps);
    c.value = choice.worst_residual;
    c.pass = choice.worst_residual <= eps;
  });

  // Lipschitz disintegration of the conditional noise density.
  run_check("density-lipschitz", [&](HypothesisCheck& c) {
    c.value = estimate_density_lipschitz(*s.kernel, 200, opts.seed ^ 0x44ULL);
    c.pass = std::isfinite(c.value);
  });

  // Drive to zero: noises conditioned into a delta-ball around the origin
  // bring the state into a small ball around the lifted origin.
  run_check("drive-to-zero", [&](HypothesisCheck& c) {
    const double delta =
        cfg.get_num("experiment", "drive_delta", 0.25 * support_radius);
    const int steps = static_cast<int>(cfg.get_int("experiment", "drive_steps", 80));
    const double eps_ball = cfg.get_num("experiment", "drive_ball", 0.3);
    RngStream rng(opts.seed ^ 0x55ULL);
    PastWindow xi = detail::burned_past(*s.kernel, rng);
    VectorXd u = s.init_b;
    for (int k = 0; k < steps; ++k) {
      VectorXd zeta;
      bool found = false;
      for (int attempt = 0; attempt < 200000; ++attempt) {
        zeta = s.kernel->sample(xi, rng);
        if (zeta.cwiseAbs().maxCoeff() <= delta) {
          found = true;
          break;
        }
      }
      if (!found)
        throw std::runtime_error(
            "conditioned sampler found no mass near zero");
      u = s.map->apply(u, zeta);
      xi = append_past(xi, zeta);
    }
    c.value = s.map->state_norm(u);
    c.pass = c.value <= eps_ball;
  });

  detail::ensure_out_dir(opts.out_dir);
  json out = json::array();
  for (const auto& c : rep.checks)
    out.push_back({{"name", c.name},
                   {"pass", c.pass},
                   {"value", c.value},
                   {"error", c.error}});
  json doc = {{"checks", out}, {"all_pass", rep.all_pass}};
  detail::write_text(opts.out_dir, "verify.json", doc.dump(2) + "\n");
  detail::write_resolved_config(cfg, opts, "verify.resolved.cfg");
  return rep;
}

// ---------------------------------------------------------------------------
// controllability: Kalman rank and unit-horizon Gramian of the linearised
// forcing directions.

struct ControllabilityResult {
  ControllabilityReport lti;
  std::optional<ControllabilityReport> along_trajectory;
};

inline ControllabilityResult run_controllability(const Setup& s,
                                                 const Config& cfg,
                                                 const RunOptions& opts) {
  ControllabilityResult res;
  if (s.system_kind == "chain") {
    const auto& spec = *s.chain_spec;
    const VectorXd q0 = VectorXd::Zero(spec.n);
    res.lti = kalman_controllability(chain_state_jacobian(spec, q0),
                                     chain_forcing_matrix(spec));
    // Time-varying Gramian along one forced trajectory.
    RngStream rng(opts.seed ^ 0x66ULL);
    PastWindow xi = detail::burned_past(*s.kernel, rng);
    const VectorXd eta = s.kernel->sample(xi, rng);
    const auto* chain = dynamic_cast<const OscillatorChain*>(s.map.get());
    const auto traj = chain->trajectory(s.init_b, eta);
    const auto lin = linearized_chain(spec, traj);
    res.along_trajectory = kalman_controllability(lin.A, lin.B, lin.h);
  } else if (s.system_kind == "toy-linear") {
    const VectorXd zero_state = VectorXd::Zero(s.map->dim_state());
    const VectorXd zero_noise = VectorXd::Zero(s.map->dim_noise());
    res.lti = kalman_controllability(s.map->jac_state(zero_state, zero_noise),
                                     s.map->jac_noise(zero_state, zero_noise));
  } else {
    // Additive spectral kick: the forcing matrix is the identity, so the
    // system is trivially controllable in one step.
    const int n = s.map->dim_state();
    res.lti = kalman_controllability(MatrixXd::Zero(n, n),
                                     MatrixXd::Identity(n, n));
  }

  detail::ensure_out_dir(opts.out_dir);
  auto report_json = [](const ControllabilityReport& r) {
    return json{{"rank", r.rank},
                {"min_eigenvalue", r.min_eigenvalue},
                {"controllable", r.controllable}};
  };
  json doc = {{"lti", report_json(res.lti)}};
  if (res.along_trajectory)
    doc["along_trajectory"] = report_json(*res.along_trajectory);
  detail::write_text(opts.out_dir, "controllability.json", doc.dump(2) + "\n");
  detail::write_resolved_config(cfg, opts, "controllability.resolved.cfg");
  return res;
}

}  // namespace rdlab
