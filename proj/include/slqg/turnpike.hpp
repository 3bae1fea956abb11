#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "slqg/errors.hpp"
#include "slqg/model.hpp"
#include "slqg/riccati.hpp"
#include "slqg/simulate.hpp"

namespace slqg {

// Entries below this are treated as exactly converged and excluded from log
// fits: they carry rounding noise, not decay information.
inline constexpr double kDecayFloor = 1e-13;

// Log-linear fit of a gap curve against time-to-go:
//   e(s) ~= K_hat * exp(-mu_hat * s),   s = horizon - t.
struct DecayFit {
  double K_hat = 0.0;
  double mu_hat = 0.0;     // positive when the gap actually decays
  double r_squared = 0.0;  // centered R^2 of the log-space regression
  std::size_t n_points = 0;
  double window_lo = 0.0;  // fitted range of s
  double window_hi = 0.0;
};

namespace detail {

// Least squares of log(e) against s over s in [lo, hi], dropping entries
// below kDecayFloor. Throws DegenerateFit when fewer than 10 points remain.
inline DecayFit fit_log_linear(const std::vector<double>& s,
                               const std::vector<double>& e, double lo,
                               double hi) {
  std::vector<double> xs, ys;
  xs.reserve(s.size());
  ys.reserve(s.size());
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (s[k] < lo - 1e-12 || s[k] > hi + 1e-12) continue;
    if (!(e[k] >= kDecayFloor)) continue;
    xs.push_back(s[k]);
    ys.push_back(std::log(e[k]));
  }
  if (xs.size() < 10) {
    throw DegenerateFit("decay fit needs at least 10 usable points, got " +
                        std::to_string(xs.size()));
  }

  const double n = static_cast<double>(xs.size());
  double sx = 0.0, sy = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    sx += xs[k];
    sy += ys[k];
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const double dx = xs[k] - mx, dy = ys[k] - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (!(sxx > 0.0)) {
    throw DegenerateFit("decay fit window has no spread in time-to-go");
  }
  const double slope = sxy / sxx;
  const double intercept = my - slope * mx;

  double sse = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const double r = ys[k] - (intercept + slope * xs[k]);
    sse += r * r;
  }

  DecayFit fit;
  fit.K_hat = std::exp(intercept);
  fit.mu_hat = -slope;
  fit.r_squared = (syy > 0.0) ? std::max(0.0, 1.0 - sse / syy)
                              : (sse <= 1e-12 ? 1.0 : 0.0);
  fit.n_points = xs.size();
  fit.window_lo = lo;
  fit.window_hi = hi;
  return fit;
}

// Worst-regime Frobenius gap between a per-grid-point family and a fixed
// target family.
inline std::vector<double> family_gap(const std::vector<RegimeFamily>& flow,
                                      const RegimeFamily& target) {
  std::vector<double> gap(flow.size(), 0.0);
  for (std::size_t g = 0; g < flow.size(); ++g) {
    double worst = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
      worst = std::max(worst, (flow[g][i] - target[i]).norm());
    }
    gap[g] = worst;
  }
  return gap;
}

inline void require_fit_window(double horizon) {
  if (!(horizon >= 3.0)) {
    throw DegenerateFit(
        "horizon " + std::to_string(horizon) +
        " leaves no fit window [1, horizon-1] of positive length");
  }
}

}  // namespace detail

namespace detail {

// The stored grid runs in model time t; the fits regress on time-to-go
// s = horizon - t, where the decay is a function of s alone.
inline std::vector<double> time_to_go(const RiccatiSolution& sol) {
  std::vector<double> s(sol.grid.size());
  for (std::size_t g = 0; g < sol.grid.size(); ++g) {
    s[g] = sol.horizon - sol.grid[g];
  }
  return s;
}

}  // namespace detail

// Fit the decay of the finite-horizon value matrices toward the steady family
// as a function of time-to-go, over the window s in [1, horizon-1].
inline DecayFit riccati_decay(const CareSolution& care,
                              const RiccatiSolution& sol) {
  detail::require_fit_window(sol.horizon);
  const std::vector<double> gap = detail::family_gap(sol.P, care.P_inf);
  return detail::fit_log_linear(detail::time_to_go(sol), gap, 1.0,
                                sol.horizon - 1.0);
}

// Same fit for the feedback gains (both players stacked).
inline DecayFit gain_decay(const CareSolution& care,
                           const RiccatiSolution& sol) {
  detail::require_fit_window(sol.horizon);
  const std::vector<double> gap = detail::family_gap(sol.theta, care.theta_inf);
  return detail::fit_log_linear(detail::time_to_go(sol), gap, 1.0,
                                sol.horizon - 1.0);
}

// One deviation series bounded by a two-branch envelope
//   env(t) = K_hat * (exp(-mu (T-t)) + exp(-mu t))
// with the decay rate mu shared across series.
struct SeriesEnvelope {
  double K_hat = 0.0;              // 0 when the series never left the floor
  std::vector<double> envelope;    // evaluated on the report grid
  std::vector<double> violation_times;  // dev > 2*envelope, first/last step
                                        // excluded
};

struct TurnpikeReport {
  PairDeviation deviation;  // times and mean-square deviations with SEs
  double mu_hat = 0.0;      // shared envelope rate
  double mu_init = 0.0;     // rate suggested by the Riccati decay fit
  double r_squared = 0.0;   // log-space fit quality on the state series
  std::size_t fit_points = 0;
  SeriesEnvelope state, u1, u2;
  long n_paths = 0;
  double horizon = 0.0;
};

namespace detail {

inline double envelope_shape(double t, double T, double mu) {
  return std::exp(-mu * (T - t)) + std::exp(-mu * t);
}

// Amplitude of the two-branch envelope for one series at a fixed rate:
// closed-form least squares of log(dev) - log(shape) over the window.
// Returns 0 when fewer than 10 window points clear the floor.
inline double envelope_amplitude(const std::vector<double>& times,
                                 const std::vector<double>& dev, double T,
                                 double mu, double lo, double hi) {
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (times[k] < lo - 1e-12 || times[k] > hi + 1e-12) continue;
    if (!(dev[k] >= kDecayFloor)) continue;
    acc += std::log(dev[k]) - std::log(envelope_shape(times[k], T, mu));
    ++count;
  }
  if (count < 10) return 0.0;
  return std::exp(acc / static_cast<double>(count));
}

inline SeriesEnvelope build_envelope(const std::vector<double>& times,
                                     const std::vector<double>& dev, double T,
                                     double mu, double lo, double hi,
                                     double tiny_floor) {
  SeriesEnvelope out;
  out.K_hat = envelope_amplitude(times, dev, T, mu, lo, hi);
  out.envelope.assign(times.size(), 0.0);
  if (out.K_hat == 0.0) return out;  // nothing measurable: no bound claimed
  for (std::size_t k = 0; k < times.size(); ++k) {
    out.envelope[k] = out.K_hat * envelope_shape(times[k], T, mu);
  }
  for (std::size_t k = 1; k + 1 < times.size(); ++k) {
    if (dev[k] > 2.0 * out.envelope[k] + tiny_floor) {
      out.violation_times.push_back(times[k]);
    }
  }
  return out;
}

}  // namespace detail

// Compare the finite-horizon feedback against the steady feedback on shared
// regime paths and Brownian increments, and bound the mean-square deviations
// by a fitted two-branch envelope: trajectories agree in the middle of the
// horizon and split near both ends, at the rate the Riccati flow converges.
//
// cfg.T must equal the finite-horizon solution's horizon and common random
// numbers must be enabled (the comparison is path-by-path).
inline TurnpikeReport coupled_turnpike(const GameModel& model,
                                       const CareSolution& care,
                                       const RiccatiSolution& sol,
                                       const SimulationConfig& cfg) {
  if (!cfg.common_noise) {
    throw std::invalid_argument(
        "coupled_turnpike requires common random numbers across the pair");
  }
  if (std::abs(cfg.T - sol.horizon) > 1e-9 * (1.0 + sol.horizon)) {
    throw std::invalid_argument(
        "simulation horizon must match the finite-horizon solution");
  }
  const double T = sol.horizon;
  const DecayFit riccati_fit = riccati_decay(care, sol);
  if (!(riccati_fit.mu_hat > 0.0)) {
    throw DegenerateFit("value-matrix gap shows no decaying trend (mu_hat " +
                        std::to_string(riccati_fit.mu_hat) + ")");
  }

  const GainTable finite = gain_table(sol, model);
  const GainTable steady = gain_table(care, model);
  PairSimulation pair = simulate_pair(model, finite, steady, cfg);

  TurnpikeReport report;
  report.deviation = std::move(pair.deviation);
  report.mu_init = riccati_fit.mu_hat;
  report.n_paths = cfg.n_paths - pair.first.blowups;
  report.horizon = T;

  const std::vector<double>& times = report.deviation.times;
  const std::vector<double>& dev = report.deviation.dev_state;

  // Fit on the half of the horizon where the terminal branch dominates; on
  // the full window the two branches trade off and the rate is not
  // identifiable from a one-sided envelope.
  const double lo = std::max(1.0, T / 2.0);
  const double hi = T - 1.0;
  if (!(hi > lo)) {
    throw DegenerateFit("horizon too short for an envelope window");
  }

  std::vector<double> xs, ys;
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (times[k] < lo - 1e-12 || times[k] > hi + 1e-12) continue;
    if (!(dev[k] >= kDecayFloor)) continue;
    xs.push_back(times[k]);
    ys.push_back(std::log(dev[k]));
  }
  if (xs.size() < 10) {
    throw DegenerateFit(
        "state deviation never left the floor inside the fit window");
  }

  // Scan the rate around the Riccati suggestion; the amplitude is closed-form
  // at each candidate.
  const double mu_lo = riccati_fit.mu_hat / 3.0;
  const double mu_hi = riccati_fit.mu_hat * 3.0;
  const int n_scan = 1201;
  double best_mu = riccati_fit.mu_hat;
  double best_sse = std::numeric_limits<double>::infinity();
  double best_logk = 0.0;
  for (int j = 0; j < n_scan; ++j) {
    const double mu =
        mu_lo + (mu_hi - mu_lo) * static_cast<double>(j) /
                    static_cast<double>(n_scan - 1);
    double acc = 0.0;
    std::vector<double> logg(xs.size());
    for (std::size_t k = 0; k < xs.size(); ++k) {
      logg[k] = std::log(detail::envelope_shape(xs[k], T, mu));
      acc += ys[k] - logg[k];
    }
    const double logk = acc / static_cast<double>(xs.size());
    double sse = 0.0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      const double r = ys[k] - logk - logg[k];
      sse += r * r;
    }
    if (sse < best_sse) {
      best_sse = sse;
      best_mu = mu;
      best_logk = logk;
    }
  }

  double my = 0.0;
  for (double y : ys) my += y;
  my /= static_cast<double>(ys.size());
  double syy = 0.0;
  for (double y : ys) syy += (y - my) * (y - my);

  report.mu_hat = best_mu;
  report.r_squared = (syy > 0.0) ? std::max(0.0, 1.0 - best_sse / syy)
                                 : (best_sse <= 1e-12 ? 1.0 : 0.0);
  report.fit_points = xs.size();

  // Per-series amplitudes at the shared rate; a small absolute floor keeps
  // rounding-level deviations from flagging violations.
  const double tiny = 1e-12 * (1.0 + cfg.x0.squaredNorm());
  report.state.K_hat = std::exp(best_logk);
  report.state.envelope.assign(times.size(), 0.0);
  for (std::size_t k = 0; k < times.size(); ++k) {
    report.state.envelope[k] =
        report.state.K_hat * detail::envelope_shape(times[k], T, best_mu);
  }
  for (std::size_t k = 1; k + 1 < times.size(); ++k) {
    if (dev[k] > 2.0 * report.state.envelope[k] + tiny) {
      report.state.violation_times.push_back(times[k]);
    }
  }
  report.u1 = detail::build_envelope(times, report.deviation.dev_u1, T,
                                     best_mu, lo, hi, tiny);
  report.u2 = detail::build_envelope(times, report.deviation.dev_u2, T,
                                     best_mu, lo, hi, tiny);
  return report;
}

// Value of the game over a family of horizons, against the steady limit.
struct ValueTable {
  std::vector<double> horizons;
  std::vector<Eigen::VectorXd> x_samples;
  int i0 = 1;
  // value[h][s] = <P_T(0) x_s, x_s> at horizons[h]; limit[s] = <P_inf x_s, x_s>
  std::vector<std::vector<double>> value;
  std::vector<double> limit;
  std::vector<std::vector<double>> gap;  // |value - limit|
  bool gaps_monotone = true;  // nonincreasing in the horizon for every sample
};

inline ValueTable value_convergence(const GameModel& model,
                                    const CareSolution& care,
                                    const std::vector<double>& horizons,
                                    const std::vector<Eigen::VectorXd>& xs,
                                    int i0 = 1, double h = 1e-3) {
  if (i0 < 1 || i0 > model.L) throw std::invalid_argument("regime out of range");
  for (std::size_t s = 0; s < xs.size(); ++s) {
    if (xs[s].size() != model.n) {
      throw std::invalid_argument("sample state dimension mismatch");
    }
  }
  for (std::size_t k = 0; k + 1 < horizons.size(); ++k) {
    if (!(horizons[k] < horizons[k + 1])) {
      throw std::invalid_argument("horizons must be strictly increasing");
    }
  }

  ValueTable table;
  table.horizons = horizons;
  table.x_samples = xs;
  table.i0 = i0;
  table.limit.resize(xs.size());
  const Eigen::MatrixXd& Pinf = care.P_inf[static_cast<std::size_t>(i0 - 1)];
  for (std::size_t s = 0; s < xs.size(); ++s) {
    table.limit[s] = xs[s].dot(Pinf * xs[s]);
  }

  table.value.resize(horizons.size());
  table.gap.resize(horizons.size());
  for (std::size_t t = 0; t < horizons.size(); ++t) {
    const RiccatiSolution sol = solve_cdre(model, horizons[t], h);
    // The grid runs in model time: P at time 0 is the first entry.
    const Eigen::MatrixXd& P0 = sol.P.front()[static_cast<std::size_t>(i0 - 1)];
    table.value[t].resize(xs.size());
    table.gap[t].resize(xs.size());
    for (std::size_t s = 0; s < xs.size(); ++s) {
      table.value[t][s] = xs[s].dot(P0 * xs[s]);
      table.gap[t][s] = std::abs(table.value[t][s] - table.limit[s]);
    }
  }

  for (std::size_t s = 0; s < xs.size(); ++s) {
    for (std::size_t t = 0; t + 1 < horizons.size(); ++t) {
      if (table.gap[t + 1][s] > table.gap[t][s] + 1e-12) {
        table.gaps_monotone = false;
      }
    }
  }
  return table;
}

}  // namespace slqg
