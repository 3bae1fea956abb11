#include <CLI11.hpp>

#include "slqg/runner.hpp"

// Command-line front end. Every run writes its artifacts plus a manifest into
// a fresh directory; exit codes: 0 success, 1 invalid model/options, 2 solver
// failure (regularity, convergence, stability), 3 I/O failure.
int main(int argc, char** argv) {
  CLI::App app{
      "Zero-sum stochastic linear-quadratic differential games under Markov "
      "regime switching: Riccati solvers, stability certificates, Monte-Carlo "
      "simulation and turnpike diagnostics"};
  app.require_subcommand(1);
  // The step option is spelled --h, so help must not claim the short -h.
  app.set_help_flag("--help", "print help and exit");

  slqg::RunConfig cfg;

  auto add_common = [&cfg](CLI::App* cmd) {
    cmd->set_help_flag("--help", "print help and exit");
    cmd->add_option("model", cfg.model_path, "model JSON file")->required();
    cmd->add_option("--output_dir,-o", cfg.output_dir,
                    "run directory; suffixed with a timestamp when taken");
  };
  auto add_riccati_step = [&cfg](CLI::App* cmd) {
    cmd->add_option("--h", cfg.h, "Riccati integration step")
        ->check(CLI::PositiveNumber);
  };
  auto add_steady = [&cfg, &add_riccati_step](CLI::App* cmd) {
    cmd->add_option("--tol", cfg.tol, "steady-solution residual tolerance")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--T_max", cfg.T_max, "horizon-extension cap")
        ->check(CLI::PositiveNumber);
    add_riccati_step(cmd);
  };
  auto add_horizon = [&cfg](CLI::App* cmd) {
    cmd->add_option("--T", cfg.T, "horizon")->check(CLI::PositiveNumber);
  };
  auto add_monte_carlo = [&cfg](CLI::App* cmd) {
    cmd->add_option("--dt", cfg.dt, "simulation step")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--n_paths", cfg.n_paths, "Monte-Carlo sample size")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--seed", cfg.seed, "base seed");
    cmd->add_option("--threads", cfg.threads,
                    "workers for the simulation path loop")
        ->check(CLI::PositiveNumber);
  };

  add_common(app.add_subcommand("validate",
                                "check the model's structural invariants"));

  auto* cdre = app.add_subcommand(
      "solve-cdre", "integrate the finite-horizon Riccati system");
  add_common(cdre);
  add_horizon(cdre);
  add_riccati_step(cdre);

  auto* care =
      app.add_subcommand("solve-care", "compute the steady solution and gains");
  add_common(care);
  add_steady(care);

  auto* stab = app.add_subcommand(
      "check-stability",
      "certify mean-square stability of the steady closed loop");
  add_common(stab);
  add_steady(stab);

  auto* sim = app.add_subcommand(
      "simulate", "run the closed loop under the finite-horizon gains");
  add_common(sim);
  add_horizon(sim);
  add_riccati_step(sim);
  add_monte_carlo(sim);
  sim->add_flag("--store_paths", cfg.store_paths,
                "dump full trajectories and regime paths (1 GB guard)");

  auto* saddle = app.add_subcommand(
      "saddle-check", "verify the saddle property against random deviations");
  add_common(saddle);
  add_horizon(saddle);
  add_monte_carlo(saddle);
  saddle->add_option("--epsilon_list", cfg.epsilon_list,
                     "perturbation amplitudes");

  auto* turnpike = app.add_subcommand(
      "turnpike-report",
      "compare finite-horizon and steady feedback on shared noise");
  add_common(turnpike);
  add_horizon(turnpike);
  add_steady(turnpike);
  add_monte_carlo(turnpike);

  auto* values = app.add_subcommand(
      "value-table", "tabulate the value against its long-horizon limit");
  add_common(values);
  add_steady(values);
  values->add_option("--horizons", cfg.horizons,
                     "strictly increasing horizon list");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? slqg::kExitOk : slqg::kExitValidation;
  }

  cfg.command = app.get_subcommands().front()->get_name();
  return slqg::run(cfg);
}
