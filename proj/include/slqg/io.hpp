#pragma once

#include <Eigen/Dense>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slqg/errors.hpp"
#include "slqg/model.hpp"
#include "slqg/riccati.hpp"
#include "slqg/simulate.hpp"
#include "slqg/stability.hpp"
#include "slqg/turnpike.hpp"

namespace slqg {

// Every floating-point value in text output is printed with 17 significant
// digits so it parses back to the identical double.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

namespace detail {

inline std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FileIoError("cannot open for writing: " + path.string());
  return out;
}

inline void finish_write(std::ofstream& out,
                         const std::filesystem::path& path) {
  out.flush();
  if (!out) throw FileIoError("write failed: " + path.string());
}

// Column labels entry_r_c in column-stacked order, matching value emission.
inline void matrix_header(std::string& line, const std::string& prefix,
                          Eigen::Index rows, Eigen::Index cols) {
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) {
      line += "," + prefix + "_" + std::to_string(r + 1) + "_" +
              std::to_string(c + 1);
    }
  }
}

inline void matrix_values(std::string& line, const Eigen::MatrixXd& M) {
  for (Eigen::Index c = 0; c < M.cols(); ++c) {
    for (Eigen::Index r = 0; r < M.rows(); ++r) {
      line += "," + format_double(M(r, c));
    }
  }
}

}  // namespace detail

// One row per grid point per regime: model time, regime, the value matrix and
// feedback gains column-stacked, and the definiteness margin of that grid
// point (the minimum over regimes, so it repeats on each regime row).
inline void write_riccati_csv(const RiccatiSolution& sol,
                              const std::filesystem::path& path) {
  auto out = detail::open_for_write(path);
  const Eigen::Index n = sol.P.front().front().rows();
  const Eigen::Index m = sol.theta.front().front().rows();

  std::string header = "t,i";
  detail::matrix_header(header, "P", n, n);
  detail::matrix_header(header, "theta", m, n);
  header += ",delta_margin";
  out << header << "\n";

  for (std::size_t g = 0; g < sol.grid.size(); ++g) {
    for (std::size_t i = 0; i < sol.P[g].size(); ++i) {
      std::string line =
          format_double(sol.grid[g]) + "," + std::to_string(i + 1);
      detail::matrix_values(line, sol.P[g][i]);
      detail::matrix_values(line, sol.theta[g][i]);
      line += "," + format_double(sol.delta_margin[g]);
      out << line << "\n";
    }
  }
  detail::finish_write(out, path);
}

inline nlohmann::json care_to_json(const CareSolution& care) {
  nlohmann::json j;
  j["P_inf"] = detail::family_to_json(care.P_inf);
  j["theta_inf"] = detail::family_to_json(care.theta_inf);
  j["residual"] = care.residual;
  j["delta_margin"] = care.delta_margin;
  j["horizon_used"] = care.horizon_used;
  return j;
}

inline nlohmann::json stability_to_json(const StabilityReport& report) {
  nlohmann::json j;
  switch (report.verdict) {
    case StabilityVerdict::Certified: j["verdict"] = "certified"; break;
    case StabilityVerdict::NotStable: j["verdict"] = "not_stable"; break;
    case StabilityVerdict::Undecided: j["verdict"] = "undecided"; break;
  }
  j["detail"] = report.detail;
  if (report.certificate) {
    const auto& cert = *report.certificate;
    const DecayBound bound = decay_bound(cert);
    j["Sigma"] = detail::family_to_json(cert.Sigma);
    j["mu1"] = cert.mu1;
    j["residual"] = cert.residual;
    j["K_est"] = bound.K_est;
    j["mu_est"] = bound.mu_est;
  }
  return j;
}

// Time grid with mean-square state and control sizes and their standard
// errors.
inline void write_batch_csv(const SimulationBatch& batch,
                            const std::filesystem::path& path) {
  auto out = detail::open_for_write(path);
  out << "t,mean_x2,se_x2,mean_u1,se_u1,mean_u2,se_u2\n";
  for (std::size_t k = 0; k < batch.times.size(); ++k) {
    out << format_double(batch.times[k]) << ','
        << format_double(batch.mean_x2[k]) << ','
        << format_double(batch.se_x2[k]) << ','
        << format_double(batch.mean_u1[k]) << ','
        << format_double(batch.se_u1[k]) << ','
        << format_double(batch.mean_u2[k]) << ','
        << format_double(batch.se_u2[k]) << "\n";
  }
  detail::finish_write(out, path);
}

inline nlohmann::json batch_summary_json(const GameModel& model,
                                         const SimulationBatch& batch) {
  nlohmann::json j;
  j["n_paths"] = batch.n_paths;
  j["blowups"] = batch.blowups;
  if (batch.blowups == 0) {
    const auto cost = estimate_cost(model, batch);
    j["cost_mean"] = cost.first;
    j["cost_se"] = cost.second;
  }
  return j;
}

// Stored trajectories: one row per path per grid time with the state and the
// two control blocks. Only available when the run stored paths.
inline void write_paths_csv(const GameModel& model,
                            const SimulationBatch& batch,
                            const std::filesystem::path& path) {
  if (batch.states.empty())
    throw std::invalid_argument("run did not store trajectories");
  auto out = detail::open_for_write(path);
  std::string header = "path,t";
  for (int r = 1; r <= model.n; ++r) header += ",x_" + std::to_string(r);
  for (int r = 1; r <= model.m1; ++r) header += ",u1_" + std::to_string(r);
  for (int r = 1; r <= model.m2; ++r) header += ",u2_" + std::to_string(r);
  out << header << "\n";
  for (std::size_t p = 0; p < batch.states.size(); ++p) {
    for (std::size_t k = 0; k < batch.times.size(); ++k) {
      std::string line =
          std::to_string(p + 1) + "," + format_double(batch.times[k]);
      for (int r = 0; r < model.n; ++r) {
        line += "," + format_double(
                          batch.states[p](r, static_cast<Eigen::Index>(k)));
      }
      for (int r = 0; r < model.m(); ++r) {
        line += "," + format_double(
                          batch.controls[p](r, static_cast<Eigen::Index>(k)));
      }
      out << line << "\n";
    }
  }
  detail::finish_write(out, path);
}

// Regime path segments: the chain sits at `state` from `segment_start` until
// the next row of the same path (or the horizon).
inline void write_regimes_csv(const SimulationBatch& batch,
                              const std::filesystem::path& path) {
  if (batch.regimes.empty())
    throw std::invalid_argument("run did not store trajectories");
  auto out = detail::open_for_write(path);
  out << "path,segment_start,state\n";
  for (std::size_t p = 0; p < batch.regimes.size(); ++p) {
    const auto& rp = batch.regimes[p];
    for (std::size_t k = 0; k < rp.jump_times.size(); ++k) {
      out << (p + 1) << ',' << format_double(rp.jump_times[k]) << ','
          << rp.states[k] << "\n";
    }
  }
  detail::finish_write(out, path);
}

inline void write_turnpike_csv(const TurnpikeReport& report,
                               const std::filesystem::path& path) {
  auto out = detail::open_for_write(path);
  out << "t,dev_state,dev_u1,dev_u2,envelope\n";
  const auto& d = report.deviation;
  for (std::size_t k = 0; k < d.times.size(); ++k) {
    out << format_double(d.times[k]) << ',' << format_double(d.dev_state[k])
        << ',' << format_double(d.dev_u1[k]) << ','
        << format_double(d.dev_u2[k]) << ','
        << format_double(report.state.envelope[k]) << "\n";
  }
  detail::finish_write(out, path);
}

inline nlohmann::json turnpike_summary_json(const TurnpikeReport& report) {
  nlohmann::json j;
  j["K_hat"] = report.state.K_hat;
  j["mu_hat"] = report.mu_hat;
  j["r_squared"] = report.r_squared;
  j["violations"] = report.state.violation_times.size() +
                    report.u1.violation_times.size() +
                    report.u2.violation_times.size();
  j["violation_times_state"] = report.state.violation_times;
  j["violation_times_u1"] = report.u1.violation_times;
  j["violation_times_u2"] = report.u2.violation_times;
  j["K_hat_u1"] = report.u1.K_hat;
  j["K_hat_u2"] = report.u2.K_hat;
  j["mu_init"] = report.mu_init;
  j["fit_points"] = report.fit_points;
  j["n_paths"] = report.n_paths;
  j["horizon"] = report.horizon;
  return j;
}

inline void write_saddle_csv(const SaddleReport& report,
                             const std::filesystem::path& path) {
  auto out = detail::open_for_write(path);
  out << "side,draw,eps,J_mean,J_se,gap_mean,gap_se,violation\n";
  for (const auto& p : report.probes) {
    out << p.side << ',' << p.draw << ',' << format_double(p.eps) << ','
        << format_double(p.J_mean) << ',' << format_double(p.J_se) << ','
        << format_double(p.gap_mean) << ',' << format_double(p.gap_se) << ','
        << (p.violation ? 1 : 0) << "\n";
  }
  detail::finish_write(out, path);
}

inline nlohmann::json saddle_summary_json(const SaddleReport& report) {
  auto response = [](const QuadraticResponse& r) {
    nlohmann::json j;
    j["linear"] = r.linear;
    j["curvature"] = r.curvature;
    j["r_squared"] = r.r_squared;
    return j;
  };
  nlohmann::json j;
  j["J_base_mean"] = report.J_base_mean;
  j["J_base_se"] = report.J_base_se;
  j["response1"] = response(report.response1);
  j["response2"] = response(report.response2);
  j["violations"] = report.violations;
  j["epsilon_list"] = report.epsilon_list;
  j["n_perturbations"] = report.n_perturbations;
  return j;
}

// One row per (horizon, initial regime, sample).
inline void write_value_csv(const std::vector<ValueTable>& tables,
                            const std::filesystem::path& path) {
  auto out = detail::open_for_write(path);
  out << "T,i0,sample,value,limit,gap\n";
  for (const auto& table : tables) {
    for (std::size_t t = 0; t < table.horizons.size(); ++t) {
      for (std::size_t s = 0; s < table.x_samples.size(); ++s) {
        out << format_double(table.horizons[t]) << ',' << table.i0 << ','
            << (s + 1) << ',' << format_double(table.value[t][s]) << ','
            << format_double(table.limit[s]) << ','
            << format_double(table.gap[t][s]) << "\n";
      }
    }
  }
  detail::finish_write(out, path);
}

inline void write_json_file(const nlohmann::json& j,
                            const std::filesystem::path& path) {
  auto out = detail::open_for_write(path);
  out << j.dump(2) << "\n";
  detail::finish_write(out, path);
}

// ---------------------------------------------------------------------------
// Run directories and the manifest.
// ---------------------------------------------------------------------------

// Creates and returns a fresh directory: the requested path when it does not
// exist yet, otherwise the same path suffixed with a UTC timestamp (and a
// counter when several runs land in the same second). Never reuses an
// existing directory.
inline std::filesystem::path make_run_dir(const std::string& requested) {
  namespace fs = std::filesystem;
  auto try_create = [](const fs::path& p) -> bool {
    if (fs::exists(p)) return false;
    std::error_code ec;
    fs::create_directories(p, ec);
    return !ec && fs::exists(p);
  };
  const fs::path want(requested);
  if (try_create(want)) return want;

  const std::time_t now =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%dT%H%M%SZ", &tm);

  for (int k = 0; k < 10000; ++k) {
    fs::path candidate(requested + "-" + stamp +
                       (k == 0 ? std::string() : "-" + std::to_string(k)));
    if (try_create(candidate)) return candidate;
  }
  throw FileIoError("cannot create a fresh run directory near " + requested);
}

}  // namespace slqg
