#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <vector>

#include "slqg/errors.hpp"
#include "slqg/riccati.hpp"
#include "slqg/simulate.hpp"
#include "slqg/turnpike.hpp"
#include "test_support.hpp"

using Catch::Approx;
using slqg::CareSolution;
using slqg::GameModel;
using slqg::RiccatiSolution;
using slqg::SimulationConfig;

namespace {

// A finite-horizon solution that already sits at the steady family at every
// grid point: every gap is below the floor.
RiccatiSolution steady_flow_like(const RiccatiSolution& proto,
                                 const CareSolution& care) {
  RiccatiSolution s = proto;
  for (auto& fam : s.P) fam = care.P_inf;
  for (auto& fam : s.theta) fam = care.theta_inf;
  return s;
}

double worst_gap(const slqg::RegimeFamily& a, const slqg::RegimeFamily& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, (a[i] - b[i]).norm());
  return worst;
}

}  // namespace

TEST_CASE("scalar value-matrix gap decays at the closed-form rate",
          "[turnpike]") {
  // P_T(t) = tanh(T - t) and P_inf = 1, so the gap 1 - tanh(s) behaves like
  // 2 exp(-2 s) for moderate time-to-go s.
  auto m = slqg_test::scalar_model();
  auto sol = slqg::solve_cdre(m, 10.0, 1e-3);
  auto care = slqg::solve_care(m);

  auto fit = slqg::riccati_decay(care, sol);
  REQUIRE(fit.mu_hat == Approx(2.0).margin(0.05));
  REQUIRE(fit.K_hat == Approx(2.0).margin(0.2));
  REQUIRE(fit.r_squared >= 0.999);
  REQUIRE(fit.n_points >= 7000);
  REQUIRE(fit.window_lo == 1.0);
  REQUIRE(fit.window_hi == 9.0);

  // The fitted curve tracks the measured gap within 50% across the window.
  for (std::size_t g = 0; g < sol.grid.size(); g += 200) {
    const double s = sol.horizon - sol.grid[g];  // time-to-go
    if (s < 1.0 || s > 9.0) continue;
    const double gap = std::abs(care.P_inf[0](0, 0) - sol.P[g][0](0, 0));
    if (gap < slqg::kDecayFloor) continue;
    const double env = fit.K_hat * std::exp(-fit.mu_hat * s);
    REQUIRE(env >= gap / 1.5);
    REQUIRE(env <= gap * 1.5);
  }
}

TEST_CASE("scalar gain gap decays at the value-matrix rate", "[turnpike]") {
  auto m = slqg_test::scalar_model();
  auto sol = slqg::solve_cdre(m, 10.0, 1e-3);
  auto care = slqg::solve_care(m);

  // theta1 = -tanh(s) against -1; the player-2 row is identically zero.
  auto fit = slqg::gain_decay(care, sol);
  REQUIRE(fit.mu_hat == Approx(2.0).margin(0.05));
  REQUIRE(fit.K_hat == Approx(2.0).margin(0.2));
  REQUIRE(fit.r_squared >= 0.999);
}

TEST_CASE("two-regime value and gain rates agree and the gap shrinks with "
          "the horizon",
          "[turnpike]") {
  auto m = slqg_test::tworegime_model();
  auto care = slqg::solve_care(m);
  auto sol = slqg::solve_cdre(m, 8.0, 1e-3);

  auto pfit = slqg::riccati_decay(care, sol);
  auto gfit = slqg::gain_decay(care, sol);
  REQUIRE(pfit.mu_hat > 0.0);
  REQUIRE(pfit.r_squared >= 0.99);
  REQUIRE(gfit.mu_hat == Approx(pfit.mu_hat).epsilon(0.2));

  // At fixed model time t = 1 the remaining gap is controlled by the time to
  // go, so doubling the horizon collapses it.
  auto sol16 = slqg::solve_cdre(m, 16.0, 1e-3);
  const std::size_t g8 = 1000;   // t = 1, seven units to go on the T = 8 grid
  const std::size_t g16 = 1000;  // t = 1, fifteen units to go on T = 16
  REQUIRE(sol.grid[g8] == Approx(1.0).margin(1e-9));
  REQUIRE(sol16.grid[g16] == Approx(1.0).margin(1e-9));
  const double gap8 = worst_gap(sol.P[g8], care.P_inf);
  const double gap16 = worst_gap(sol16.P[g16], care.P_inf);
  REQUIRE(gap8 > 0.0);
  REQUIRE(gap16 < 0.2 * gap8);
}

TEST_CASE("decay fits reject degenerate inputs", "[turnpike]") {
  auto m = slqg_test::scalar_model();
  auto care = slqg::solve_care(m);
  auto proto = slqg::solve_cdre(m, 6.0, 1e-2);

  auto flat = steady_flow_like(proto, care);
  REQUIRE_THROWS_AS(slqg::riccati_decay(care, flat), slqg::DegenerateFit);
  REQUIRE_THROWS_AS(slqg::gain_decay(care, flat), slqg::DegenerateFit);

  // A horizon of 2 leaves no window [1, horizon - 1] to fit on.
  auto shorty = slqg::solve_cdre(m, 2.0, 1e-2);
  REQUIRE_THROWS_AS(slqg::riccati_decay(care, shorty), slqg::DegenerateFit);
}

TEST_CASE("scalar trajectory deviation obeys the fitted envelope",
          "[turnpike]") {
  // Noiseless scalar game: the pair simulation is deterministic, and the
  // squared trajectory deviation is x0^2 (cosh(T-t)/cosh(T) - e^{-t})^2,
  // an exact exponential split near the terminal end.
  auto m = slqg_test::scalar_model();
  const double T = 10.0;
  auto sol = slqg::solve_cdre(m, T, 1e-3);
  auto care = slqg::solve_care(m);

  SimulationConfig cfg;
  cfg.T = T;
  cfg.dt = 1e-3;
  cfg.n_paths = 4;
  cfg.threads = 2;
  cfg.x0 = Eigen::VectorXd::Constant(1, 2.0);
  cfg.i0 = 1;

  auto rep = slqg::coupled_turnpike(m, care, sol, cfg);
  REQUIRE(rep.horizon == T);
  REQUIRE(rep.n_paths == 4);
  REQUIRE(rep.mu_init == Approx(2.0).margin(0.05));
  REQUIRE(rep.mu_hat == Approx(2.0).margin(0.2));
  REQUIRE(rep.r_squared >= 0.99);
  REQUIRE(rep.fit_points >= 100);

  REQUIRE(rep.state.violation_times.empty());
  REQUIRE(rep.u1.violation_times.empty());
  REQUIRE(rep.u2.violation_times.empty());

  // Both runs start at the same point, and player 2 never acts.
  REQUIRE(rep.deviation.dev_state.front() == 0.0);
  REQUIRE(rep.u2.K_hat == 0.0);
  for (double d : rep.deviation.dev_u2) REQUIRE(d == 0.0);

  // Amplitude of the terminal branch: |x0|^2 e^{-2T} up to fit slack.
  const double expected_K = 4.0 * std::exp(-2.0 * T);
  REQUIRE(rep.state.K_hat > 0.5 * expected_K);
  REQUIRE(rep.state.K_hat < 2.0 * expected_K);

  // Midpoint deviation sits under the envelope with room to spare.
  const std::size_t mid = rep.deviation.times.size() / 2;
  REQUIRE(rep.deviation.dev_state[mid] <= 2.0 * rep.state.envelope[mid]);
}

TEST_CASE("two-regime deviation envelope holds under jumps and noise",
          "[turnpike]") {
  auto m = slqg_test::tworegime_model();
  const double T = 6.0;
  auto sol = slqg::solve_cdre(m, T, 1e-3);
  auto care = slqg::solve_care(m);

  SimulationConfig cfg;
  cfg.T = T;
  cfg.dt = 2e-3;
  cfg.n_paths = 1500;
  cfg.threads = 3;
  cfg.x0 = Eigen::VectorXd::Constant(2, 1.0);
  cfg.i0 = 1;

  auto rep = slqg::coupled_turnpike(m, care, sol, cfg);
  REQUIRE(rep.mu_init > 0.0);
  REQUIRE(rep.mu_hat > 0.0);
  REQUIRE(rep.fit_points >= 10);
  REQUIRE(rep.state.violation_times.empty());
  REQUIRE(rep.u1.violation_times.empty());
  REQUIRE(rep.u2.violation_times.empty());
  REQUIRE(rep.deviation.dev_state.front() == 0.0);

  // The split is concentrated near the terminal end: the midpoint deviation
  // is far below the late-horizon peak.
  const auto& dev = rep.deviation.dev_state;
  const std::size_t mid = dev.size() / 2;
  double peak = 0.0;
  for (double d : dev) peak = std::max(peak, d);
  REQUIRE(peak > 0.0);
  REQUIRE(dev[mid] < 0.1 * peak);
}

TEST_CASE("turnpike preconditions are enforced", "[turnpike]") {
  auto m = slqg_test::scalar_model();
  auto sol = slqg::solve_cdre(m, 6.0, 1e-2);
  auto care = slqg::solve_care(m);

  SimulationConfig cfg;
  cfg.T = 6.0;
  cfg.dt = 1e-2;
  cfg.n_paths = 2;
  cfg.x0 = Eigen::VectorXd::Constant(1, 1.0);

  SimulationConfig no_crn = cfg;
  no_crn.common_noise = false;
  REQUIRE_THROWS_AS(slqg::coupled_turnpike(m, care, sol, no_crn),
                    std::invalid_argument);

  SimulationConfig wrong_T = cfg;
  wrong_T.T = 5.0;
  REQUIRE_THROWS_AS(slqg::coupled_turnpike(m, care, sol, wrong_T),
                    std::invalid_argument);

  // A flow already at the steady family has no decaying trend to calibrate
  // the envelope on.
  auto flat = steady_flow_like(sol, care);
  REQUIRE_THROWS_AS(slqg::coupled_turnpike(m, care, flat, cfg),
                    slqg::DegenerateFit);
}

TEST_CASE("value table reproduces the closed-form scalar limit",
          "[turnpike]") {
  auto m = slqg_test::scalar_model();
  auto care = slqg::solve_care(m);
  const std::vector<double> horizons = {2.0, 4.0, 6.0, 8.0};
  std::vector<Eigen::VectorXd> xs = {Eigen::VectorXd::Constant(1, 1.0),
                                     Eigen::VectorXd::Constant(1, 2.0),
                                     Eigen::VectorXd::Zero(1)};

  auto table = slqg::value_convergence(m, care, horizons, xs);
  REQUIRE(table.gaps_monotone);
  for (std::size_t t = 0; t < horizons.size(); ++t) {
    for (std::size_t s = 0; s < xs.size(); ++s) {
      const double x2 = xs[s].squaredNorm();
      REQUIRE(table.value[t][s] ==
              Approx(std::tanh(horizons[t]) * x2).margin(1e-8));
      REQUIRE(table.limit[s] == Approx(x2).margin(1e-6));
      REQUIRE(table.gap[t][s] ==
              Approx((1.0 - std::tanh(horizons[t])) * x2).margin(1e-6));
    }
  }
  // Strictly decreasing for nonzero samples, identically zero at the origin.
  for (std::size_t t = 0; t + 1 < horizons.size(); ++t) {
    REQUIRE(table.gap[t + 1][0] < table.gap[t][0]);
  }
  for (std::size_t t = 0; t < horizons.size(); ++t) {
    REQUIRE(table.gap[t][2] <= 1e-12);
  }
}

TEST_CASE("value table gaps are monotone for the two-regime game",
          "[turnpike]") {
  auto m = slqg_test::tworegime_model();
  auto care = slqg::solve_care(m);
  const std::vector<double> horizons = {2.0, 4.0, 6.0, 8.0};
  std::vector<Eigen::VectorXd> xs = {Eigen::VectorXd::Constant(2, 1.0)};
  Eigen::VectorXd tilted(2);
  tilted << 1.0, -0.5;
  xs.push_back(tilted);

  for (int i0 : {1, 2}) {
    auto table = slqg::value_convergence(m, care, horizons, xs, i0);
    REQUIRE(table.gaps_monotone);
    for (std::size_t s = 0; s < xs.size(); ++s) {
      REQUIRE(table.limit[s] > 0.0);
      REQUIRE(table.gap.front()[s] > table.gap.back()[s]);
    }
  }
}

TEST_CASE("value table validates its inputs", "[turnpike]") {
  auto m = slqg_test::scalar_model();
  auto care = slqg::solve_care(m);
  std::vector<Eigen::VectorXd> xs = {Eigen::VectorXd::Constant(1, 1.0)};

  REQUIRE_THROWS_AS(slqg::value_convergence(m, care, {4.0, 2.0}, xs),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(slqg::value_convergence(m, care, {2.0, 4.0}, xs, 2),
                    std::invalid_argument);
  std::vector<Eigen::VectorXd> bad = {Eigen::VectorXd::Constant(2, 1.0)};
  REQUIRE_THROWS_AS(slqg::value_convergence(m, care, {2.0, 4.0}, bad),
                    std::invalid_argument);
}
