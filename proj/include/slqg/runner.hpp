#pragma once

#include <Eigen/Dense>
#include <chrono>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slqg/errors.hpp"
#include "slqg/io.hpp"
#include "slqg/markov.hpp"
#include "slqg/model.hpp"
#include "slqg/riccati.hpp"
#include "slqg/simulate.hpp"
#include "slqg/stability.hpp"
#include "slqg/turnpike.hpp"

namespace slqg {

inline constexpr const char* kVersion = "1.0.0";

// Exit codes of the command-line front end.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;  // invalid model or options
inline constexpr int kExitSolver = 2;      // regularity/convergence/stability
inline constexpr int kExitIo = 3;          // file system failures

// One run of the front end: a command, a model file, an output directory and
// the numeric options. Fields not used by a command are ignored but still
// recorded in the manifest.
struct RunConfig {
  std::string command;  // validate, solve-cdre, solve-care, check-stability,
                        // simulate, saddle-check, turnpike-report, value-table
  std::string model_path;
  std::string output_dir = "run";

  double T = 1.0;      // horizon for solve-cdre/simulate/saddle/turnpike
  double h = 1e-3;     // Riccati integration step
  double dt = 1e-3;    // simulation step
  long n_paths = 10000;
  std::uint64_t seed = 42;
  double tol = 1e-9;     // steady-solution residual tolerance
  double T_max = 200.0;  // horizon-extension cap for the steady solve
  std::vector<double> epsilon_list = {0.1, 0.5};
  std::vector<double> horizons = {2.0, 4.0, 6.0, 8.0};
  int threads = 1;          // worker count for the simulation path loop only
  bool store_paths = false;  // dump full trajectories (1 GB guard applies)
};

namespace detail {

inline nlohmann::json options_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["T"] = cfg.T;
  j["h"] = cfg.h;
  j["dt"] = cfg.dt;
  j["n_paths"] = cfg.n_paths;
  j["seed"] = cfg.seed;
  j["tol"] = cfg.tol;
  j["T_max"] = cfg.T_max;
  j["epsilon_list"] = cfg.epsilon_list;
  j["horizons"] = cfg.horizons;
  j["threads"] = cfg.threads;
  j["store_paths"] = cfg.store_paths;
  return j;
}

inline nlohmann::json versions_json() {
  nlohmann::json j;
  j["slqg"] = kVersion;
  j["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." +
               std::to_string(EIGEN_MAJOR_VERSION) + "." +
               std::to_string(EIGEN_MINOR_VERSION);
  j["nlohmann_json"] = std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                       std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                       std::to_string(NLOHMANN_JSON_VERSION_PATCH);
#ifdef __VERSION__
  j["compiler"] = __VERSION__;
#endif
  return j;
}

// Simulation settings shared by every Monte-Carlo command: the state starts
// at the all-ones vector in regime 1.
inline SimulationConfig sim_config(const GameModel& model,
                                   const RunConfig& cfg) {
  SimulationConfig sim;
  sim.T = cfg.T;
  sim.dt = cfg.dt;
  sim.n_paths = cfg.n_paths;
  sim.base_seed = cfg.seed;
  sim.x0 = Eigen::VectorXd::Ones(model.n);
  sim.i0 = 1;
  sim.threads = cfg.threads;
  sim.store_paths = cfg.store_paths;
  return sim;
}

struct RunContext {
  std::filesystem::path dir;
  nlohmann::json* manifest = nullptr;

  std::filesystem::path artifact(const std::string& name) const {
    (*manifest)["artifacts"].push_back(name);
    return dir / name;
  }
};

// Loads, validates and echoes the model; writes the violation report. On
// validation failure the command still counts as complete (the negative
// answer is the output).
inline GameModel load_checked(const RunConfig& cfg, const RunContext& ctx,
                              bool* valid_out) {
  GameModel model = load_model(cfg.model_path);
  write_json_file(model_to_json(model), ctx.artifact("model.json"));

  const ValidationReport report = validate_model(model);
  nlohmann::json v;
  v["valid"] = report.valid();
  v["violations"] = nlohmann::json::array();
  for (const auto& violation : report.violations) {
    nlohmann::json item;
    item["field"] = violation.field;
    item["regime"] = violation.regime;
    item["message"] = violation.message;
    v["violations"].push_back(item);
  }
  write_json_file(v, ctx.artifact("validation.json"));

  *valid_out = report.valid();
  if (report.valid()) symmetrize_weights(model);
  return model;
}

inline int run_command(const RunConfig& cfg, const RunContext& ctx) {
  bool valid = false;
  GameModel model = load_checked(cfg, ctx, &valid);
  if (!valid) return kExitValidation;
  if (cfg.command == "validate") return kExitOk;

  if (cfg.command == "solve-cdre") {
    const RiccatiSolution sol = solve_cdre(model, cfg.T, cfg.h);
    write_riccati_csv(sol, ctx.artifact("riccati.csv"));
    return kExitOk;
  }

  if (cfg.command == "solve-care") {
    const CareSolution care = solve_care(model, cfg.tol, cfg.T_max, cfg.h);
    write_json_file(care_to_json(care), ctx.artifact("care.json"));
    return kExitOk;
  }

  if (cfg.command == "check-stability") {
    const CareSolution care = solve_care(model, cfg.tol, cfg.T_max, cfg.h);
    write_json_file(care_to_json(care), ctx.artifact("care.json"));
    const StabilityReport report = is_stabilizer(model, care.theta_inf);
    write_json_file(stability_to_json(report), ctx.artifact("stability.json"));
    if (report.verdict == StabilityVerdict::NotStable)
      throw NotStable(report.detail);
    if (report.verdict == StabilityVerdict::Undecided)
      throw SingularSystem(report.detail);
    return kExitOk;
  }

  if (cfg.command == "simulate") {
    const RiccatiSolution sol = solve_cdre(model, cfg.T, cfg.h);
    const SimulationConfig sim = sim_config(model, cfg);
    const SimulationBatch batch = simulate_closed_loop(model, sol, sim);
    write_batch_csv(batch, ctx.artifact("batch.csv"));
    write_json_file(batch_summary_json(model, batch),
                    ctx.artifact("summary.json"));
    if (cfg.store_paths) {
      write_paths_csv(model, batch, ctx.artifact("paths.csv"));
      write_regimes_csv(batch, ctx.artifact("regimes.csv"));
    }
    return kExitOk;
  }

  if (cfg.command == "saddle-check") {
    SimulationConfig sim = sim_config(model, cfg);
    sim.store_paths = false;
    const int n_perturbations = 10;
    const SaddleReport report =
        saddle_check(model, cfg.T, sim, n_perturbations, cfg.epsilon_list);
    write_saddle_csv(report, ctx.artifact("saddle.csv"));
    write_json_file(saddle_summary_json(report), ctx.artifact("saddle.json"));
    return kExitOk;
  }

  if (cfg.command == "turnpike-report") {
    const RiccatiSolution sol = solve_cdre(model, cfg.T, cfg.h);
    const CareSolution care = solve_care(model, cfg.tol, cfg.T_max, cfg.h);
    SimulationConfig sim = sim_config(model, cfg);
    sim.store_paths = false;
    sim.common_noise = true;
    const TurnpikeReport report = coupled_turnpike(model, care, sol, sim);
    write_turnpike_csv(report, ctx.artifact("turnpike.csv"));
    write_json_file(turnpike_summary_json(report),
                    ctx.artifact("turnpike.json"));
    return kExitOk;
  }

  if (cfg.command == "value-table") {
    const CareSolution care = solve_care(model, cfg.tol, cfg.T_max, cfg.h);
    write_json_file(care_to_json(care), ctx.artifact("care.json"));
    const std::vector<Eigen::VectorXd> xs = {Eigen::VectorXd::Ones(model.n)};
    std::vector<ValueTable> tables;
    bool monotone = true;
    for (int i0 = 1; i0 <= model.L; ++i0) {
      tables.push_back(
          value_convergence(model, care, cfg.horizons, xs, i0, cfg.h));
      monotone = monotone && tables.back().gaps_monotone;
    }
    write_value_csv(tables, ctx.artifact("values.csv"));
    nlohmann::json summary;
    summary["gaps_monotone"] = monotone;
    write_json_file(summary, ctx.artifact("values.json"));
    return kExitOk;
  }

  throw std::invalid_argument("unknown command: " + cfg.command);
}

}  // namespace detail

// Executes one command end to end: creates a fresh run directory, writes the
// command's artifacts, and finishes with manifest.json recording the exact
// inputs (for bit-for-bit replay), versions, wall time, and whether the
// artifact set is complete. Returns the process exit code.
inline int run(const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();

  std::filesystem::path dir;
  try {
    dir = make_run_dir(cfg.output_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }

  nlohmann::json manifest;
  manifest["command"] = cfg.command;
  manifest["model_path"] =
      std::filesystem::absolute(cfg.model_path).string();
  manifest["options"] = detail::options_to_json(cfg);
  manifest["seeds"] = {{"base_seed", cfg.seed}};
  manifest["versions"] = detail::versions_json();
  manifest["artifacts"] = nlohmann::json::array();
  manifest["complete"] = false;

  detail::RunContext ctx{dir, &manifest};
  int code = kExitOk;
  try {
    code = detail::run_command(cfg, ctx);
    manifest["complete"] = true;
  } catch (const RegularityLost& e) {
    code = kExitSolver;
    manifest["error"] = {{"type", "RegularityLost"},
                         {"message", e.what()},
                         {"module", "riccati"},
                         {"time", e.time},
                         {"regime", e.regime}};
  } catch (const NotConverged& e) {
    code = kExitSolver;
    manifest["error"] = {{"type", "NotConverged"},
                         {"message", e.what()},
                         {"module", "riccati"},
                         {"horizon", e.horizon},
                         {"residual", e.residual}};
  } catch (const NotStable& e) {
    code = kExitSolver;
    manifest["error"] = {
        {"type", "NotStable"}, {"message", e.what()}, {"module", "stability"}};
  } catch (const SingularSystem& e) {
    code = kExitSolver;
    manifest["error"] = {{"type", "SingularSystem"},
                         {"message", e.what()},
                         {"module", "stability"}};
  } catch (const DegenerateFit& e) {
    code = kExitSolver;
    manifest["error"] = {{"type", "DegenerateFit"},
                         {"message", e.what()},
                         {"module", "turnpike"}};
  } catch (const FileIoError& e) {
    code = kExitIo;
    manifest["error"] = {{"type", "FileIoError"}, {"message", e.what()}};
  } catch (const ModelFormatError& e) {
    code = kExitValidation;
    manifest["error"] = {{"type", "ModelFormatError"}, {"message", e.what()}};
  } catch (const std::invalid_argument& e) {
    code = kExitValidation;
    manifest["error"] = {{"type", "InvalidArgument"}, {"message", e.what()}};
  } catch (const std::exception& e) {
    code = kExitIo;
    manifest["error"] = {{"type", "Unexpected"}, {"message", e.what()}};
  }

  const auto t1 = std::chrono::steady_clock::now();
  manifest["wall_time_seconds"] =
      std::chrono::duration<double>(t1 - t0).count();
  manifest["exit_code"] = code;

  try {
    write_json_file(manifest, dir / "manifest.json");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }

  if (manifest.contains("error")) {
    std::cerr << "error: " << manifest["error"]["message"].get<std::string>()
              << "\n";
  }
  std::cout << dir.string() << "\n";
  return code;
}

}  // namespace slqg
