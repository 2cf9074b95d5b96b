// Command-line front end: runs the preset experiments from a sectioned
// key-value config file.  Exit codes: 0 = all checks passed, 1 = a check
// failed, 2 = configuration or runtime error.

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "rdlab/experiments.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::uint64_t seed = 1;
  int workers = 1;
  std::string out_dir;
  bool seed_set = false;
  bool workers_set = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "experiment config file")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", args.seed, "master rng seed")
      ->trigger_on_parse()
      ->each([&args](const std::string&) { args.seed_set = true; });
  cmd->add_option("--workers", args.workers, "worker thread count")
      ->check(CLI::PositiveNumber)
      ->trigger_on_parse()
      ->each([&args](const std::string&) { args.workers_set = true; });
  cmd->add_option("--out", args.out_dir, "output directory for CSV/JSON");
}

// Config supplies defaults; command-line flags win.
rdlab::RunOptions resolve_options(const rdlab::Config& cfg,
                                  const CommonArgs& args) {
  rdlab::RunOptions opts;
  opts.seed = args.seed_set
                  ? args.seed
                  : static_cast<std::uint64_t>(
                        cfg.get_int("experiment", "seed", 1));
  opts.workers = args.workers_set
                     ? args.workers
                     : static_cast<int>(cfg.get_int("experiment", "workers", 1));
  if (opts.workers < 1) throw std::runtime_error("workers must be >= 1");
  opts.out_dir = args.out_dir;
  return opts;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"random dynamical systems mixing experiments"};
  app.require_subcommand(1);

  CommonArgs mix_args, couple_args, kernel_args, verify_args, ctrl_args;
  auto* mix = app.add_subcommand(
      "mix-rate", "decay of the distance between two state ensembles");
  add_common(mix, mix_args);
  auto* couple = app.add_subcommand(
      "couple", "coupled iteration statistics and contraction constants");
  add_common(couple, couple_args);
  auto* kernel = app.add_subcommand(
      "kernel-converge", "decay of the conditional noise-law distance");
  add_common(kernel, kernel_args);
  auto* verify = app.add_subcommand(
      "verify", "standing-hypothesis checks for the configured pair");
  add_common(verify, verify_args);
  auto* ctrl = app.add_subcommand(
      "controllability", "Kalman rank and controllability Gramian");
  add_common(ctrl, ctrl_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (mix->parsed()) {
      const auto cfg = rdlab::Config::parse_file(mix_args.config_path);
      const auto opts = resolve_options(cfg, mix_args);
      const auto setup = rdlab::build_setup(cfg);
      const auto res = rdlab::run_mix_rate(setup, cfg, opts);
      std::printf("mix-rate: gamma=%.6g C=%.6g r2=%.4f points=%zu\n",
                  res.fit.rate, res.fit.prefactor, res.fit.r2,
                  res.fit.points_used);
      const bool pass = res.fit.points_used >= 3 && res.fit.rate > 0.0;
      return pass ? 0 : 1;
    }
    if (couple->parsed()) {
      const auto cfg = rdlab::Config::parse_file(couple_args.config_path);
      const auto opts = resolve_options(cfg, couple_args);
      const auto setup = rdlab::build_setup(cfg);
      const auto res = rdlab::run_couple(setup, cfg, opts);
      std::printf(
          "couple: q=%.4f N=%.4g theta=%.4g L=%g contraction=%.4g "
          "degraded=%d\n",
          res.params.q, res.params.N, res.params.theta, res.params.L,
          res.contraction_ratio, res.degraded_steps);
      const bool pass = res.params.q < 1.0 && res.contraction_ratio < 1.0;
      return pass ? 0 : 1;
    }
    if (kernel->parsed()) {
      const auto cfg = rdlab::Config::parse_file(kernel_args.config_path);
      const auto opts = resolve_options(cfg, kernel_args);
      const auto setup = rdlab::build_setup(cfg);
      const auto res = rdlab::run_kernel_converge(setup, cfg, opts);
      std::printf("kernel-converge: gamma=%.6g r2=%.4f\n", res.fit.rate,
                  res.fit.r2);
      return res.curve.back().second <= res.curve.front().second ? 0 : 1;
    }
    if (verify->parsed()) {
      const auto cfg = rdlab::Config::parse_file(verify_args.config_path);
      const auto opts = resolve_options(cfg, verify_args);
      const auto setup = rdlab::build_setup(cfg);
      const auto rep = rdlab::run_verify_hypotheses(setup, cfg, opts);
      for (const auto& c : rep.checks)
        std::printf("%-18s %s  value=%.6g%s%s\n", c.name.c_str(),
                    c.pass ? "pass" : "FAIL", c.value,
                    c.error.empty() ? "" : "  error=", c.error.c_str());
      return rep.all_pass ? 0 : 1;
    }
    if (ctrl->parsed()) {
      const auto cfg = rdlab::Config::parse_file(ctrl_args.config_path);
      const auto opts = resolve_options(cfg, ctrl_args);
      const auto setup = rdlab::build_setup(cfg);
      const auto res = rdlab::run_controllability(setup, cfg, opts);
      std::printf("controllability: rank=%d min_eig=%.6g %s\n", res.lti.rank,
                  res.lti.min_eigenvalue,
                  res.lti.controllable ? "controllable" : "NOT controllable");
      if (res.along_trajectory)
        std::printf("along trajectory: rank=%d min_eig=%.6g %s\n",
                    res.along_trajectory->rank,
                    res.along_trajectory->min_eigenvalue,
                    res.along_trajectory->controllable ? "controllable"
                                                       : "NOT controllable");
      return res.lti.controllable ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;
}
