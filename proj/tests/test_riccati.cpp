#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "slqg/riccati.hpp"
#include "test_support.hpp"

using slqg::CareSolution;
using slqg::cdre_rhs;
using slqg::eval_mln;
using slqg::GameModel;
using slqg::invert_N;
using slqg::RegimeFamily;
using slqg::RiccatiSolution;
using slqg::solve_care;
using slqg::solve_cdre;

namespace {

GameModel scalar_with(double A, double C, double Q, double R11, double R22) {
  GameModel m = slqg_test::scalar_model();
  m.A[0] << A;
  m.C[0] << C;
  m.Q[0] << Q;
  m.R11[0] << R11;
  m.R22[0] << R22;
  return m;
}

// Model whose right side vanishes identically: zero weights, block-definite R.
GameModel zero_weight_model() {
  GameModel m = slqg_test::tworegime_model();
  for (int k = 0; k < m.L; ++k) {
    m.Q[k].setZero();
    m.S1[k].setZero();
    m.S2[k].setZero();
    m.R11[k] = Eigen::MatrixXd::Identity(m.m1, m.m1);
    m.R12[k].setZero();
    m.R22[k] = -Eigen::MatrixXd::Identity(m.m2, m.m2);
  }
  return m;
}

double max_abs_vs_tanh(const RiccatiSolution& sol) {
  double worst = 0.0;
  for (std::size_t g = 0; g < sol.grid.size(); ++g) {
    const double expect = std::tanh(sol.horizon - sol.grid[g]);
    worst = std::max(worst, std::abs(sol.P[g][0](0, 0) - expect));
  }
  return worst;
}

// Single-family Riccati integration with the same scheme (elapsed-time RK4,
// stage symmetrization, compensated update) written independently of the
// library loop; used as a brute-force oracle for reduction properties.
Eigen::MatrixXd integrate_reduced(
    const std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>& rhs, int n,
    double T, double h) {
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(n, n);
  auto sym = [](const Eigen::MatrixXd& M) {
    return Eigen::MatrixXd(0.5 * (M + M.transpose()));
  };
  const long steps = std::lround(T / h);
  for (long k = 0; k < steps; ++k) {
    const Eigen::MatrixXd k1 = rhs(P);
    const Eigen::MatrixXd k2 = rhs(sym(P + (0.5 * h) * k1));
    const Eigen::MatrixXd k3 = rhs(sym(P + (0.5 * h) * k2));
    const Eigen::MatrixXd k4 = rhs(sym(P + h * k3));
    const Eigen::MatrixXd inc =
        (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    const Eigen::MatrixXd y = inc - comp;
    const Eigen::MatrixXd t = P + y;
    comp = (t - P) - y;
    P = t;
  }
  return P;
}

}  // namespace

TEST_CASE("eval_mln at P = 0 returns the raw weights", "[riccati]") {
  auto m = slqg_test::tworegime_model();
  RegimeFamily zero(m.L, Eigen::MatrixXd::Zero(m.n, m.n));
  for (int i = 1; i <= m.L; ++i) {
    auto t = eval_mln(m, zero, i);
    auto s = slqg::stack(m, i);
    REQUIRE(t.M == m.Q[i - 1]);
    REQUIRE(t.Lmap == Eigen::MatrixXd(s.S.transpose()));
    REQUIRE(t.N == s.R);
  }
}

TEST_CASE("eval_mln scalar substitution", "[riccati]") {
  // n=m1=m2=L=1, A=2, C=0, Q=1, P=3, B=(1,0), D=(0,0), S=0, R=diag(1,-1):
  // M = 3*2 + 2*3 + 1 = 13, Lmap = (3, 0), N = diag(1, -1).
  auto m = scalar_with(2.0, 0.0, 1.0, 1.0, -1.0);
  RegimeFamily P{Eigen::MatrixXd::Constant(1, 1, 3.0)};
  auto t = eval_mln(m, P, 1);
  REQUIRE(t.M(0, 0) == 13.0);
  REQUIRE(t.Lmap(0, 0) == 3.0);
  REQUIRE(t.Lmap(0, 1) == 0.0);
  Eigen::MatrixXd N_expect(2, 2);
  N_expect << 1.0, 0.0, 0.0, -1.0;
  REQUIRE(t.N == N_expect);
}

TEST_CASE("eval_mln generator coupling term", "[riccati]") {
  // L=2, generator [[-1,1],[1,-1]], P=(1,5), A=C=Q=0:
  // M(1) = -1*1 + 1*5 = 4.
  GameModel m = slqg_test::load_valid("mcswitch.json");
  for (int k = 0; k < 2; ++k) {
    m.A[k].setZero();
    m.C[k].setZero();
    m.Q[k].setZero();
  }
  RegimeFamily P{Eigen::MatrixXd::Constant(1, 1, 1.0),
                 Eigen::MatrixXd::Constant(1, 1, 5.0)};
  auto t = eval_mln(m, P, 1);
  REQUIRE(t.M(0, 0) == 4.0);
}

TEST_CASE("invert_N matches analytic inverses", "[riccati]") {
  Eigen::MatrixXd Nd(2, 2);
  Nd << 2.0, 0.0, 0.0, -3.0;
  Eigen::MatrixXd inv = invert_N(Nd, 1, 1);
  REQUIRE(inv(0, 0) == Catch::Approx(0.5).margin(1e-15));
  REQUIRE(inv(1, 1) == Catch::Approx(-1.0 / 3.0).margin(1e-15));
  REQUIRE(inv(0, 1) == 0.0);

  Eigen::MatrixXd Nf(2, 2);
  Nf << 2.0, 1.0, 1.0, -2.0;
  inv = invert_N(Nf, 1, 1);
  REQUIRE(inv(0, 0) == Catch::Approx(0.4).margin(1e-15));
  REQUIRE(inv(0, 1) == Catch::Approx(0.2).margin(1e-15));
  REQUIRE(inv(1, 0) == Catch::Approx(0.2).margin(1e-15));
  REQUIRE(inv(1, 1) == Catch::Approx(-0.4).margin(1e-15));
}

TEST_CASE("invert_N enforces the definiteness floor", "[riccati]") {
  Eigen::MatrixXd N(2, 2);
  N << 1e-12, 0.0, 0.0, -1.0;
  REQUIRE_THROWS_AS(invert_N(N, 1, 1, 1e-6), slqg::RegularityLost);
  // Indefinite upper block fails regardless of floor sign conventions.
  N << -1.0, 0.0, 0.0, -1.0;
  REQUIRE_THROWS_AS(invert_N(N, 1, 1), slqg::RegularityLost);
}

TEST_CASE("invert_N block-Schur inverse is accurate on random blocks",
          "[riccati]") {
  std::mt19937_64 eng(12);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 25; ++trial) {
    const int m1 = 2, m2 = 3, m = m1 + m2;
    Eigen::MatrixXd G(m, m);
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < m; ++c) G(r, c) = u(eng);
    Eigen::MatrixXd N = 0.5 * (G + G.transpose());
    N.topLeftCorner(m1, m1) += 4.0 * Eigen::MatrixXd::Identity(m1, m1);
    N.bottomRightCorner(m2, m2) -= 5.0 * Eigen::MatrixXd::Identity(m2, m2);
    Eigen::MatrixXd inv = invert_N(N, m1, m2);
    const double err = (N * inv - Eigen::MatrixXd::Identity(m, m)).norm();
    REQUIRE(err <= 1e-10 * N.norm());
    REQUIRE(inv == Eigen::MatrixXd(inv.transpose()));
  }
}

TEST_CASE("cdre_rhs vanishes on the zero-weight model", "[riccati]") {
  auto m = zero_weight_model();
  RegimeFamily zero(m.L, Eigen::MatrixXd::Zero(m.n, m.n));
  auto r = cdre_rhs(m, zero);
  for (const auto& Ri : r) REQUIRE(Ri == Eigen::MatrixXd::Zero(m.n, m.n));
}

TEST_CASE("cdre_rhs scalar values", "[riccati]") {
  auto m = slqg_test::scalar_model();
  RegimeFamily half{Eigen::MatrixXd::Constant(1, 1, 0.5)};
  REQUIRE(cdre_rhs(m, half)[0](0, 0) == 0.75);  // 1 - 0.25
  RegimeFamily one{Eigen::MatrixXd::Constant(1, 1, 1.0)};
  REQUIRE(cdre_rhs(m, one)[0](0, 0) == 0.0);  // fixed point
}

TEST_CASE("solve_cdre keeps the zero solution exactly", "[riccati]") {
  auto m = zero_weight_model();
  auto sol = solve_cdre(m, 2.0, 1e-2);
  for (std::size_t g = 0; g < sol.grid.size(); ++g) {
    for (int i = 0; i < m.L; ++i) {
      REQUIRE(sol.P[g][i] == Eigen::MatrixXd::Zero(m.n, m.n));
      REQUIRE(sol.theta[g][i] == Eigen::MatrixXd::Zero(m.m(), m.n));
    }
  }
}

TEST_CASE("scalar benchmark matches the closed form", "[riccati]") {
  auto m = slqg_test::scalar_model();
  auto sol = solve_cdre(m, 5.0, 1e-3);
  REQUIRE(sol.grid.front() == 0.0);
  REQUIRE(sol.grid.back() == 5.0);
  REQUIRE(sol.P.back()[0](0, 0) == 0.0);  // terminal data
  REQUIRE(max_abs_vs_tanh(sol) <= 1e-8);

  // Gains at t=0: Theta = (-tanh(5), 0) within 1e-6.
  const Eigen::MatrixXd theta0 = sol.theta.front()[0];
  REQUIRE(theta0(0, 0) == Catch::Approx(-std::tanh(5.0)).margin(1e-6));
  REQUIRE(theta0(1, 0) == Catch::Approx(0.0).margin(1e-12));

  // N is constant diag(1,-1) here, so the recorded margin is exactly 1.
  for (double dm : sol.delta_margin) REQUIRE(dm == 1.0);
}

TEST_CASE("halving the step scales the scalar error like a 4th-order method",
          "[riccati]") {
  auto m = slqg_test::scalar_model();
  const double e1 = max_abs_vs_tanh(solve_cdre(m, 5.0, 1e-3));
  const double e2 = max_abs_vs_tanh(solve_cdre(m, 5.0, 5e-4));
  REQUIRE(e2 > 0.0);
  const double ratio = e1 / e2;
  REQUIRE(ratio >= 12.0);
  REQUIRE(ratio <= 20.0);
}

TEST_CASE("stored solutions are exactly symmetric", "[riccati]") {
  auto m = slqg_test::tworegime_model();
  auto sol = solve_cdre(m, 2.0, 1e-3);
  for (std::size_t g = 0; g < sol.grid.size(); ++g)
    for (int i = 0; i < m.L; ++i)
      REQUIRE(sol.P[g][i] == Eigen::MatrixXd(sol.P[g][i].transpose()));
}

TEST_CASE("regularity margins stay positive on converging instances",
          "[riccati]") {
  auto m = slqg_test::tworegime_model();
  auto sol = solve_cdre(m, 5.0, 1e-3);
  for (double dm : sol.delta_margin) REQUIRE(dm > 0.0);
}

TEST_CASE("nested horizons agree bit for bit at equal time-to-go",
          "[riccati]") {
  // Solutions depend only on elapsed time since the terminal point, and the
  // integrator state at equal elapsed time is identical across horizons, so
  // the T=8 solution restricted to its last two units must equal the T=2
  // solution exactly (well below the 1e-7 design tolerance).
  auto m = slqg_test::tworegime_model();
  const double h = 1e-3;
  auto s2 = solve_cdre(m, 2.0, h);
  auto s4 = solve_cdre(m, 4.0, h);
  auto s8 = solve_cdre(m, 8.0, h);
  const std::size_t off84 = s8.grid.size() - s4.grid.size();
  const std::size_t off82 = s8.grid.size() - s2.grid.size();
  double worst = 0.0;
  for (std::size_t g = 0; g < s2.grid.size(); ++g)
    for (int i = 0; i < m.L; ++i)
      worst = std::max(worst, (s8.P[g + off82][i] - s2.P[g][i]).norm());
  for (std::size_t g = 0; g < s4.grid.size(); ++g)
    for (int i = 0; i < m.L; ++i)
      worst = std::max(worst, (s8.P[g + off84][i] - s4.P[g][i]).norm());
  REQUIRE(worst == 0.0);
}

TEST_CASE("player-2-free models reduce to the one-player equation",
          "[riccati]") {
  auto m = slqg_test::tworegime_model();
  for (int k = 0; k < m.L; ++k) {
    m.B2[k].setZero();
    m.D2[k].setZero();
    m.S2[k].setZero();
    m.R12[k].setZero();
  }
  const double T = 3.0, h = 1e-3;
  auto sol = solve_cdre(m, T, h);

  // Oracle: coupled family of reduced (player-1-only) equations integrated
  // with the same scheme on stacked storage.
  const int n = m.n;
  auto rhs_reduced = [&](const std::vector<Eigen::MatrixXd>& P) {
    std::vector<Eigen::MatrixXd> out(m.L);
    for (int k = 0; k < m.L; ++k) {
      Eigen::MatrixXd M = P[k] * m.A[k] + m.A[k].transpose() * P[k] +
                          m.C[k].transpose() * P[k] * m.C[k] + m.Q[k];
      for (int j = 0; j < m.L; ++j) M += m.generator(k, j) * P[j];
      Eigen::MatrixXd Lr = P[k] * m.B1[k] +
                           m.C[k].transpose() * P[k] * m.D1[k] +
                           m.S1[k].transpose();
      Eigen::MatrixXd Nr = m.D1[k].transpose() * P[k] * m.D1[k] + m.R11[k];
      Eigen::MatrixXd F = M - Lr * Nr.llt().solve(Lr.transpose());
      out[k] = 0.5 * (F + F.transpose());
    }
    return out;
  };
  std::vector<Eigen::MatrixXd> P(m.L, Eigen::MatrixXd::Zero(n, n)),
      comp(m.L, Eigen::MatrixXd::Zero(n, n));
  auto sym = [](const Eigen::MatrixXd& M) {
    return Eigen::MatrixXd(0.5 * (M + M.transpose()));
  };
  const long steps = std::lround(T / h);
  for (long s = 0; s < steps; ++s) {
    auto k1 = rhs_reduced(P);
    std::vector<Eigen::MatrixXd> tmp(m.L);
    for (int i = 0; i < m.L; ++i) tmp[i] = sym(P[i] + (0.5 * h) * k1[i]);
    auto k2 = rhs_reduced(tmp);
    for (int i = 0; i < m.L; ++i) tmp[i] = sym(P[i] + (0.5 * h) * k2[i]);
    auto k3 = rhs_reduced(tmp);
    for (int i = 0; i < m.L; ++i) tmp[i] = sym(P[i] + h * k3[i]);
    auto k4 = rhs_reduced(tmp);
    for (int i = 0; i < m.L; ++i) {
      Eigen::MatrixXd inc =
          (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
      Eigen::MatrixXd y = inc - comp[i];
      Eigen::MatrixXd t = P[i] + y;
      comp[i] = (t - P[i]) - y;
      P[i] = t;
    }
  }
  for (int i = 0; i < m.L; ++i)
    REQUIRE((sol.P.front()[i] - P[i]).norm() <= 1e-9);
}

TEST_CASE("single-regime solutions ignore the vanishing coupling term",
          "[riccati]") {
  // L=1 instance solved by the library vs a direct single-regime integration
  // of the same scheme without any generator term: bit-for-bit equal.
  auto m = slqg_test::load_valid("mc2d.json");
  const double T = 2.0, h = 1e-3;
  auto sol = solve_cdre(m, T, h);

  auto s1 = slqg::stack(m, 1);
  auto rhs_direct = [&](const Eigen::MatrixXd& P) {
    Eigen::MatrixXd M = P * m.A[0] + m.A[0].transpose() * P +
                        m.C[0].transpose() * P * m.C[0] + m.Q[0] +
                        m.generator(0, 0) * P;
    Eigen::MatrixXd Lr =
        P * s1.B + m.C[0].transpose() * P * s1.D + s1.S.transpose();
    Eigen::MatrixXd N = 0.5 * ((s1.D.transpose() * P * s1.D + s1.R) +
                               (s1.D.transpose() * P * s1.D + s1.R).transpose());
    Eigen::MatrixXd Ninv = slqg::detail::invert_n_unchecked(N, m.m1);
    Eigen::MatrixXd F = M - Lr * Ninv * Lr.transpose();
    return Eigen::MatrixXd(0.5 * (F + F.transpose()));
  };
  // The library's M map symmetrizes before subtracting; replicate exactly.
  auto rhs_exact = [&](const Eigen::MatrixXd& P) {
    slqg::RegimeFamily fam{P};
    auto t = eval_mln(m, fam, 1);
    Eigen::MatrixXd Ninv = slqg::detail::invert_n_unchecked(t.N, m.m1);
    Eigen::MatrixXd F = t.M - t.Lmap * Ninv * t.Lmap.transpose();
    return Eigen::MatrixXd(0.5 * (F + F.transpose()));
  };
  (void)rhs_direct;
  Eigen::MatrixXd P_direct = integrate_reduced(rhs_exact, m.n, T, h);
  REQUIRE(sol.P.front()[0] == P_direct);
}

TEST_CASE("regularity violations raise RegularityLost with context",
          "[riccati]") {
  auto flat = slqg_test::load_valid("regularity_violation.json");
  try {
    solve_cdre(flat, 1.0, 1e-2);
    FAIL("expected RegularityLost");
  } catch (const slqg::RegularityLost& e) {
    REQUIRE(e.regime == 1);
    REQUIRE(e.margin <= 0.0);
    REQUIRE(e.time == 1.0);  // margin already fails at the terminal point
  }
  auto negative = slqg_test::load_valid("regularity_violation_negative.json");
  REQUIRE_THROWS_AS(solve_cdre(negative, 1.0, 1e-2), slqg::RegularityLost);
  REQUIRE_THROWS_AS(solve_care(negative), slqg::RegularityLost);
}

TEST_CASE("solve_care recovers the scalar steady solution", "[riccati]") {
  auto m = slqg_test::scalar_model();
  auto care = solve_care(m, 1e-10, 50.0, 1e-3);
  REQUIRE(care.residual <= 1e-10);
  REQUIRE(care.P_inf[0](0, 0) == Catch::Approx(1.0).margin(1e-9));
  REQUIRE(care.theta_inf[0](0, 0) == Catch::Approx(-1.0).margin(1e-9));
  REQUIRE(care.theta_inf[0](1, 0) == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(care.delta_margin > 0.0);
  REQUIRE(care.horizon_used < 30.0);
}

TEST_CASE("solve_care on the zero-weight model stops at zero immediately",
          "[riccati]") {
  auto m = zero_weight_model();
  auto care = solve_care(m, 1e-9, 10.0, 1e-2);
  for (int i = 0; i < m.L; ++i) {
    REQUIRE(care.P_inf[i] == Eigen::MatrixXd::Zero(m.n, m.n));
    REQUIRE(care.theta_inf[i] == Eigen::MatrixXd::Zero(m.m(), m.n));
  }
  REQUIRE(care.residual == 0.0);
}

TEST_CASE("solve_care self-consistency on the coupled instance", "[riccati]") {
  auto m = slqg_test::tworegime_model();
  auto care = solve_care(m, 1e-9, 60.0, 1e-3);
  REQUIRE(care.residual <= 1e-9);
  // Independent residual recomputation through the public pieces.
  double res = 0.0;
  for (int i = 1; i <= m.L; ++i) {
    auto t = eval_mln(m, care.P_inf, i);
    Eigen::MatrixXd Ninv = invert_N(t.N, m.m1, m.m2);
    res = std::max(
        res, (t.M - t.Lmap * Ninv * t.Lmap.transpose()).norm());
  }
  REQUIRE(res <= 1e-9);
}

TEST_CASE("uncontrollable unstable scalar never converges", "[riccati]") {
  auto m = slqg_test::load_valid("unstable_scalar.json");
  REQUIRE_THROWS_AS(solve_care(m, 1e-9, 50.0, 1e-2), slqg::NotConverged);
}

TEST_CASE("short final step lands exactly on t = 0", "[riccati]") {
  auto m = slqg_test::scalar_model();
  auto sol = solve_cdre(m, 1.0, 0.3);  // 3 full steps + short 0.1 step
  REQUIRE(sol.grid.size() == 5);
  REQUIRE(sol.grid.front() == 0.0);
  REQUIRE(sol.grid.back() == 1.0);
  REQUIRE(sol.P.front()[0](0, 0) ==
          Catch::Approx(std::tanh(1.0)).margin(1e-3));
}
