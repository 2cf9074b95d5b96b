#include "doctest.h"

#include <cmath>

#include "rdlab/chain.hpp"
#include "rdlab/coupling.hpp"
#include "rdlab/metrics.hpp"

using namespace rdlab;

namespace {

VectorXd v1(double x) {
  VectorXd v(1);
  v[0] = x;
  return v;
}

// Scalar linear system with additive noise and a first-order moving-average
// kernel: the small world where everything has a closed form.
struct ToyWorld {
  LinearMap map{0.5 * MatrixXd::Identity(1, 1), MatrixXd::Identity(1, 1)};
  MovingAverageKernel kernel{{0.5}, tent(1.0)};
  CouplingParams params;

  ToyWorld() {
    params.G = MatrixXd::Identity(1, 1);
    params.delta_reg = 1e-10;
    params.theta = 1.0;
    params.L = 4.0;
    params.q = 0.5;
  }

  LiftedState lifted(double v, double past_fill) const {
    return {v1(v), kernel.constant_past(v1(past_fill))};
  }
};

}  // namespace

TEST_CASE("lifted distance basics") {
  ToyWorld w;
  LiftedState U = w.lifted(0.3, 0.1);
  CHECK(lifted_distance(U, U, w.params, w.map) == 0.0);

  LiftedState Up = U;
  Up.state[0] += 0.1;
  CouplingParams p10 = w.params;
  p10.L = 10.0;
  CHECK(lifted_distance(U, Up, p10, w.map) == doctest::Approx(1.0));

  RngStream rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto rnd = [&] {
      LiftedState s = w.lifted(rng.uniform(-1, 1), 0.0);
      for (int k = 0; k < s.past.length(); ++k)
        s.past.set_entry(k, v1(rng.uniform(-1, 1)));
      return s;
    };
    LiftedState A = rnd(), B = rnd(), C = rnd();
    CHECK(lifted_distance(A, C, w.params, w.map) <=
          lifted_distance(A, B, w.params, w.map) +
              lifted_distance(B, C, w.params, w.map) + 1e-12);
  }
}

TEST_CASE("total variation on a grid") {
  const int n = 4000;
  const double cell = 3.0 / n;
  VectorXd p(n), q(n), r(n);
  for (int i = 0; i < n; ++i) {
    const double x = -0.5 + (i + 0.5) * cell;  // grid over [-0.5, 2.5]
    p[i] = (x >= 0.0 && x <= 1.0) ? 1.0 : 0.0;
    q[i] = (x >= 0.5 && x <= 1.5) ? 1.0 : 0.0;
    r[i] = (x >= 1.2 && x <= 2.2) ? 1.0 : 0.0;
  }
  CHECK(tv_distance_densities(p, p, cell) == 0.0);
  CHECK(tv_distance_densities(p, q, cell) == doctest::Approx(0.5).epsilon(1e-2));
  CHECK(tv_distance_densities(p, r, cell) == doctest::Approx(1.0).epsilon(1e-2));
}

TEST_CASE("maximal coupling meets at one minus total variation") {
  // Identical densities: always met, y = x.
  RngStream rng(5);
  auto p = [](const VectorXd& y) {
    return (y[0] >= 0.0 && y[0] <= 1.0) ? 1.0 : 0.0;
  };
  auto sampler_p = [](RngStream& r) { return (VectorXd(1) << r.uniform()).finished(); };
  for (int i = 0; i < 50; ++i) {
    VectorXd x = sampler_p(rng);
    auto draw = maximal_coupling_conditional(x, p, p, sampler_p, rng);
    CHECK(draw.met);
    CHECK(draw.value[0] == x[0]);
  }

  // Uniform[0,1] toward Uniform[0.5,1.5]: TV = 1/2; meet rate 0.5 +- 0.02.
  auto q = [](const VectorXd& y) {
    return (y[0] >= 0.5 && y[0] <= 1.5) ? 1.0 : 0.0;
  };
  auto sampler_q = [](RngStream& r) {
    return (VectorXd(1) << r.uniform(0.5, 1.5)).finished();
  };
  int met = 0;
  std::vector<VectorXd> coupled, direct;
  for (int i = 0; i < 10000; ++i) {
    VectorXd x = sampler_p(rng);
    auto draw = maximal_coupling_conditional(x, p, q, sampler_q, rng);
    met += draw.met ? 1 : 0;
    coupled.push_back(draw.value);
    direct.push_back(sampler_q(rng));
  }
  CHECK(met / 10000.0 == doctest::Approx(0.5).epsilon(0.04));
  // The marginal of the coupled draw is exactly the target law.
  RngStream boot(7);
  auto check = two_sample_check(coupled, direct, boot, 3.0, 100, 600);
  CHECK(check.pass);
}

TEST_CASE("steering map closed forms on the linear system") {
  ToyWorld w;
  SteeringMap psi(w.map, w.params.G, w.params.delta_reg, v1(0.4), v1(0.1));
  // Shift = M (v - v') = 0.15, independent of zeta.
  CHECK(psi.shift(v1(0.0))[0] == doctest::Approx(0.15).epsilon(1e-6));
  CHECK(psi.shift_jacobian(v1(0.2)).norm() < 1e-6);
  // Forward and inverse round-trip.
  const VectorXd y = psi.forward(v1(0.3));
  CHECK(y[0] == doctest::Approx(0.45).epsilon(1e-6));
  auto z = psi.invert(y);
  REQUIRE(z.has_value());
  CHECK((*z)[0] == doctest::Approx(0.3).epsilon(1e-8));
  // Pushforward density is the translated conditional density.
  PastWindow xi = w.kernel.constant_past(v1(0.2));
  auto d = psi.pushforward_density(w.kernel, xi, v1(0.5));
  REQUIRE(d.has_value());
  CHECK(*d == doctest::Approx(w.kernel.density(xi, v1(0.5 - 0.15))).epsilon(1e-6));
}

TEST_CASE("identical lifted states stay identical through coupling") {
  ToyWorld w;
  LiftedState U = w.lifted(0.2, 0.1);
  RngStream rng(11);
  CouplingStepStats st;
  auto [A, B] = coupling_step(U, U, w.map, w.kernel, w.params, rng, &st);
  CHECK(st.met);
  CHECK(st.distance_after == 0.0);
  CHECK((A.state - B.state).norm() == 0.0);
  CHECK(past_distance(A.past, B.past) == 0.0);
}

TEST_CASE("linear coupling meets and is absorbed on the diagonal") {
  ToyWorld w;
  RngStream rng(13);
  int absorbed = 0;
  for (int rep = 0; rep < 20; ++rep) {
    LiftedState U = w.lifted(0.15, 0.1);
    LiftedState Up = w.lifted(-0.05, -0.05);
    for (int k = 0; k < 150; ++k) {
      CouplingStepStats st;
      std::tie(U, Up) = coupling_step(U, Up, w.map, w.kernel, w.params, rng, &st);
      // Steering is exact on the linear system, so the states coincide on
      // every met step (the pasts may still differ and later steps may draw
      // different noises until the whole window has been flushed).
      if (st.met) CHECK((U.state - Up.state).norm() < 1e-9);
    }
    if (lifted_distance(U, Up, w.params, w.map) < 1e-6) ++absorbed;
  }
  // A long run of consecutive met steps flushes the past window and lands the
  // pair on the diagonal; with meeting probability near one this dominates.
  CHECK(absorbed >= 15);
}

TEST_CASE("coupled marginals match direct simulation (toy system)") {
  ToyWorld w;
  LiftedState U = w.lifted(0.12, 0.3);
  LiftedState Up = w.lifted(0.08, 0.2);
  REQUIRE(lifted_distance(U, Up, w.params, w.map) <= w.params.theta);
  const int n = 4000;
  std::vector<VectorXd> coupled_a, coupled_b, direct_a, direct_b;
  RngStream rng(17);
  for (int i = 0; i < n; ++i) {
    auto [A, B] = coupling_step(U, Up, w.map, w.kernel, w.params, rng);
    coupled_a.push_back(A.state);
    coupled_b.push_back(B.state);
    direct_a.push_back(w.map.apply(U.state, w.kernel.sample(U.past, rng)));
    direct_b.push_back(w.map.apply(Up.state, w.kernel.sample(Up.past, rng)));
  }
  RngStream boot(19);
  CHECK(two_sample_check(coupled_a, direct_a, boot, 3.0, 100, 600).pass);
  CHECK(two_sample_check(coupled_b, direct_b, boot, 3.0, 100, 600).pass);
}

TEST_CASE("independent branch decorrelates the draws") {
  ToyWorld w;
  CouplingParams far = w.params;
  far.theta = 1e-12;  // force the independent branch
  LiftedState U = w.lifted(0.4, 0.2);
  LiftedState Up = w.lifted(-0.4, -0.2);
  RngStream rng(23);
  const int n = 10000;
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  for (int i = 0; i < n; ++i) {
    CouplingStepStats st;
    auto [A, B] = coupling_step(U, Up, w.map, w.kernel, far, rng, &st);
    CHECK(st.independent_branch);
    // Innovations recovered from the linear map.
    const double na = A.state[0] - 0.5 * U.state[0];
    const double nb = B.state[0] - 0.5 * Up.state[0];
    sa += na; sb += nb; saa += na * na; sbb += nb * nb; sab += na * nb;
  }
  const double corr = (sab / n - sa / n * sb / n) /
                      std::sqrt((saa / n - sa / n * sa / n) *
                                (sbb / n - sb / n * sb / n));
  CHECK(std::abs(corr) < 0.03);
}

TEST_CASE("pushforward total variation is linear in the displacement") {
  ToyWorld w;
  PastWindow xi = w.kernel.constant_past(v1(0.2));
  const int grid_n = 2000;
  std::vector<double> seps, tvs;
  for (double sep : {1e-1, 1e-2, 1e-3}) {
    SteeringMap psi(w.map, w.params.G, w.params.delta_reg, v1(sep), v1(0.0));
    VectorXd p(grid_n), q(grid_n);
    const double lo = -2.0, hi = 2.0, cell = (hi - lo) / grid_n;
    for (int i = 0; i < grid_n; ++i) {
      VectorXd y = v1(lo + (i + 0.5) * cell);
      p[i] = w.kernel.density(xi, y);
      q[i] = psi.pushforward_density(w.kernel, xi, y).value_or(0.0);
    }
    seps.push_back(sep);
    tvs.push_back(tv_distance_densities(p, q, cell));
  }
  // log-log slope within 1 +- 0.2.
  const double slope = (std::log(tvs[0]) - std::log(tvs[2])) /
                       (std::log(seps[0]) - std::log(seps[2]));
  CHECK(slope == doctest::Approx(1.0).epsilon(0.2));
}

TEST_CASE("geometric decay of iterated coupling on the all-met event") {
  ToyWorld w;
  RngStream rng(29);
  int geometric_runs = 0;
  for (int rep = 0; rep < 20; ++rep) {
    LiftedState U = w.lifted(0.1, 0.05);
    LiftedState Up = w.lifted(0.06, 0.05);
    auto paths = iterate_coupling(U, Up, w.map, w.kernel, w.params, 15, rng);
    bool all_met = true;
    for (const auto& st : paths.stats.steps) all_met &= st.met;
    if (all_met) {
      ++geometric_runs;
      CHECK(paths.stats.geometric);
    }
  }
  CHECK(geometric_runs >= 5);

  // Identical starting points give identically equal paths.
  LiftedState U = w.lifted(0.3, 0.1);
  auto eq = iterate_coupling(U, U, w.map, w.kernel, w.params, 10, rng);
  for (std::size_t k = 0; k < eq.a.size(); ++k)
    CHECK((eq.a[k].state - eq.b[k].state).norm() == 0.0);
}

TEST_CASE("kantorovich estimates") {
  ToyWorld w;
  auto F = [&](const LiftedState& A, const LiftedState& B) {
    return lifted_distance(A, B, w.params, w.map);
  };
  std::vector<LiftedState> mu = {w.lifted(0.1, 0.0), w.lifted(0.5, 0.0)};
  CHECK(kantorovich_estimate(F, mu, mu) == 0.0);

  // Two Diracs: the unique plan evaluates F at the pair.
  std::vector<LiftedState> one = {w.lifted(0.2, 0.1)};
  std::vector<LiftedState> other = {w.lifted(-0.1, 0.1)};
  CHECK(kantorovich_estimate(F, one, other) ==
        doctest::Approx(w.params.L * 0.3));

  // Greedy re-matching untangles a crossed pairing.
  std::vector<LiftedState> nu = {w.lifted(0.5, 0.0), w.lifted(0.1, 0.0)};
  const double crossed = kantorovich_estimate(F, mu, nu, false);
  const double fixed = kantorovich_estimate(F, mu, nu, true);
  CHECK(fixed == doctest::Approx(0.0));
  CHECK(crossed > fixed);
}

TEST_CASE("tuned chain coupling squeezes near the diagonal") {
  OscillatorChain chain{OscillatorChainSpec{}};
  MovingAverageKernel kernel({0.5}, tent(1.0), 4);
  RngStream rng(31);
  std::vector<std::pair<VectorXd, VectorXd>> pairs;
  std::vector<VectorXd> noise;
  for (int i = 0; i < 4; ++i) {
    VectorXd v(4), e(4);
    for (int j = 0; j < 4; ++j) {
      v[j] = 0.4 * rng.uniform(-1, 1);
      e[j] = 0.5 * rng.uniform(-1, 1);
    }
    pairs.emplace_back(v, v + 0.01 * VectorXd::Ones(4));
    noise.push_back(e);
  }
  auto params = tune_coupling_params(chain, kernel, MatrixXd::Identity(4, 4),
                                     0.05, pairs, noise);
  CHECK(params.q < 1.0);
  CHECK(params.q_prime < 1.0);
  CHECK(std::log2(params.L) == doctest::Approx(std::round(std::log2(params.L))));

  // Coupled steps from a close pair contract the lifted distance on the
  // met branch.
  PastWindow past = kernel.zero_past();
  for (int burn = 0; burn < past.length() + 5; ++burn)
    past = noise_lift_step(past, kernel, rng);
  LiftedState U{VectorXd::Zero(4), past};
  LiftedState Up{VectorXd::Constant(4, 0.3 * params.theta / params.L), past};
  int met = 0, squeezed = 0, total = 30;
  for (int i = 0; i < total; ++i) {
    CouplingStepStats st;
    coupling_step(U, Up, chain, kernel, params, rng, &st);
    CHECK_FALSE(st.independent_branch);
    if (st.met) {
      ++met;
      if (st.distance_after <= params.q * st.distance_before) ++squeezed;
    }
  }
  CHECK(met > 0);
  CHECK(squeezed == met);
}
