#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "slqg/errors.hpp"
#include "slqg/model.hpp"

namespace slqg {

// Default floor for the definiteness margin of the N-blocks. A positive
// computed margin is reported rather than assumed; dropping below this floor
// raises RegularityLost.
inline constexpr double kDeltaFloor = 1e-8;

// The three coefficient maps of the game at a given symmetric family P, for
// one regime.
struct MlnTriple {
  Eigen::MatrixXd M;     // n x n symmetric
  Eigen::MatrixXd Lmap;  // n x m
  Eigen::MatrixXd N;     // m x m symmetric, blocks split at m1
};

// Finite-horizon solution on a time grid. grid[g] runs increasing from 0 to
// horizon; P[g]/theta[g] are per-regime families at grid[g]; delta_margin[g]
// is min over regimes of min(lambda_min(N11), -lambda_max(N22)) there.
struct RiccatiSolution {
  std::vector<double> grid;
  std::vector<RegimeFamily> P;      // n x n per regime
  std::vector<RegimeFamily> theta;  // (m1+m2) x n per regime
  std::vector<double> delta_margin;
  double horizon = 0.0;
  double step = 0.0;
};

// Steady (long-horizon limit) solution.
struct CareSolution {
  RegimeFamily P_inf;      // n x n per regime
  RegimeFamily theta_inf;  // (m1+m2) x n per regime
  double residual = std::numeric_limits<double>::infinity();
  double delta_margin = 0.0;
  double horizon_used = 0.0;  // elapsed horizon at which the stop rule fired
};

namespace detail {

inline Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& M) {
  return 0.5 * (M + M.transpose());
}

// min(lambda_min(N11), -lambda_max(N22)) — the strong-regularity margin.
inline double n_block_margin(const Eigen::MatrixXd& N, int m1) {
  const int m2 = static_cast<int>(N.rows()) - m1;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> e11(
      N.topLeftCorner(m1, m1), Eigen::EigenvaluesOnly);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> e22(
      N.bottomRightCorner(m2, m2), Eigen::EigenvaluesOnly);
  return std::min(e11.eigenvalues().minCoeff(),
                  -e22.eigenvalues().maxCoeff());
}

// Block-Schur inverse of N = [[N11, N12], [N12^T, N22]] with N11 positive
// definite and N22 negative definite:
//   X    = N11^{-1} N12
//   S22  = N22 - N12^T X            (negative definite Schur complement)
//   T22  = S22^{-1}
//   T12  = -X T22
//   T11  = N11^{-1} + X T22 X^T.
// Using definiteness-aware Cholesky factorizations on N11 and -S22.
inline Eigen::MatrixXd invert_n_unchecked(const Eigen::MatrixXd& N, int m1) {
  const int m2 = static_cast<int>(N.rows()) - m1;
  const Eigen::MatrixXd N11 = N.topLeftCorner(m1, m1);
  const Eigen::MatrixXd N12 = N.topRightCorner(m1, m2);
  const Eigen::MatrixXd N22 = N.bottomRightCorner(m2, m2);

  Eigen::LLT<Eigen::MatrixXd> llt11(N11);
  const Eigen::MatrixXd X = llt11.solve(N12);
  const Eigen::MatrixXd S22 = N22 - N12.transpose() * X;
  Eigen::LLT<Eigen::MatrixXd> llt22(Eigen::MatrixXd(-S22));
  const Eigen::MatrixXd T22 =
      -llt22.solve(Eigen::MatrixXd::Identity(m2, m2));
  const Eigen::MatrixXd T12 = -X * T22;
  const Eigen::MatrixXd T11 =
      llt11.solve(Eigen::MatrixXd::Identity(m1, m1)) + X * T22 * X.transpose();

  Eigen::MatrixXd inv(m1 + m2, m1 + m2);
  inv.topLeftCorner(m1, m1) = T11;
  inv.topRightCorner(m1, m2) = T12;
  inv.bottomLeftCorner(m2, m1) = T12.transpose();
  inv.bottomRightCorner(m2, m2) = T22;
  return symmetrized(inv);
}

}  // namespace detail

// Coefficient maps at family P (regime i is 1-based):
//   M = P A + A^T P + C^T P C + Q + sum_j pi_ij P(j)
//   Lmap = P B + C^T P D + S^T
//   N = D^T P D + R.
inline MlnTriple eval_mln(const GameModel& model, const RegimeFamily& P_family,
                          int i) {
  if (i < 1 || i > model.L)
    throw std::out_of_range("regime index " + std::to_string(i) +
                            " outside 1.." + std::to_string(model.L));
  const int k = i - 1;
  const StackedCoefficients sc = stack(model, i);
  const Eigen::MatrixXd& P = P_family[k];
  const Eigen::MatrixXd& A = model.A[k];
  const Eigen::MatrixXd& C = model.C[k];

  MlnTriple out;
  out.M = P * A + A.transpose() * P + C.transpose() * P * C + model.Q[k];
  // Generator coupling in fixed index order so concurrent callers reproduce
  // the sequential result bit for bit.
  for (int j = 0; j < model.L; ++j)
    out.M += model.generator(k, j) * P_family[j];
  out.M = detail::symmetrized(out.M);
  out.Lmap = P * sc.B + C.transpose() * P * sc.D + sc.S.transpose();
  out.N = detail::symmetrized(Eigen::MatrixXd(
      sc.D.transpose() * P * sc.D + sc.R));
  return out;
}

// Inverse of the N-block matrix via its Schur-complement factorization.
// Throws RegularityLost (without time/regime context) when the definiteness
// margin is below delta_floor.
inline Eigen::MatrixXd invert_N(const Eigen::MatrixXd& N, int m1, int m2,
                                double delta_floor = kDeltaFloor) {
  if (N.rows() != m1 + m2 || N.cols() != m1 + m2)
    throw std::invalid_argument("N must be (m1+m2) x (m1+m2)");
  const double margin = detail::n_block_margin(N, m1);
  if (!(margin >= delta_floor))
    throw RegularityLost(std::numeric_limits<double>::quiet_NaN(), 0, margin,
                         delta_floor);
  return detail::invert_n_unchecked(N, m1);
}

namespace detail {

// Right side of dP/ds = M - L N^{-1} L^T (s = elapsed time since the
// terminal point), one regime family in, one out, with the minimum margin
// reported. `time_for_errors` is the model time attached to RegularityLost.
inline RegimeFamily cdre_rhs_impl(const GameModel& model,
                                  const RegimeFamily& P_all,
                                  double delta_floor, double time_for_errors,
                                  double* min_margin_out) {
  RegimeFamily out(model.L);
  double min_margin = std::numeric_limits<double>::infinity();
  for (int i = 1; i <= model.L; ++i) {
    MlnTriple t = eval_mln(model, P_all, i);
    const double margin = n_block_margin(t.N, model.m1);
    min_margin = std::min(min_margin, margin);
    if (!(margin >= delta_floor))
      throw RegularityLost(time_for_errors, i, margin, delta_floor);
    const Eigen::MatrixXd Ninv = invert_n_unchecked(t.N, model.m1);
    out[i - 1] = symmetrized(Eigen::MatrixXd(
        t.M - t.Lmap * Ninv * t.Lmap.transpose()));
  }
  if (min_margin_out) *min_margin_out = min_margin;
  return out;
}

// One classical RK4 step of size h on the family, with every stage value
// symmetrized and the update accumulated with Kahan compensation so that the
// committed error stays at the truncation level instead of drifting with the
// step count. k1 (the right side at the current point) is passed in so grid
// bookkeeping and the step share one evaluation.
struct Rk4State {
  RegimeFamily P;
  RegimeFamily comp;  // Kahan compensation carried alongside P
};

inline void rk4_step_from_k1(const GameModel& model, Rk4State& st,
                             const RegimeFamily& k1, double h,
                             double delta_floor, double time_for_errors) {
  const int L = model.L;
  auto stage = [&](const RegimeFamily& base, double c,
                   const RegimeFamily& k) {
    RegimeFamily out(L);
    for (int i = 0; i < L; ++i)
      out[i] = symmetrized(Eigen::MatrixXd(base[i] + c * k[i]));
    return out;
  };
  const RegimeFamily k2 = cdre_rhs_impl(model, stage(st.P, 0.5 * h, k1),
                                        delta_floor, time_for_errors, nullptr);
  const RegimeFamily k3 = cdre_rhs_impl(model, stage(st.P, 0.5 * h, k2),
                                        delta_floor, time_for_errors, nullptr);
  const RegimeFamily k4 = cdre_rhs_impl(model, stage(st.P, h, k3), delta_floor,
                                        time_for_errors, nullptr);
  for (int i = 0; i < L; ++i) {
    const Eigen::MatrixXd inc =
        (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    const Eigen::MatrixXd y = inc - st.comp[i];
    const Eigen::MatrixXd t = st.P[i] + y;
    st.comp[i] = (t - st.P[i]) - y;
    st.P[i] = t;
  }
}

inline void rk4_step(const GameModel& model, Rk4State& st, double h,
                     double delta_floor, double time_for_errors) {
  const RegimeFamily k1 =
      cdre_rhs_impl(model, st.P, delta_floor, time_for_errors, nullptr);
  rk4_step_from_k1(model, st, k1, h, delta_floor, time_for_errors);
}

inline RegimeFamily zero_family(int L, int rows, int cols) {
  return RegimeFamily(L, Eigen::MatrixXd::Zero(rows, cols));
}

// Everything the solver records at one grid point, from a single pass over
// the regimes: gains, minimum margin, and the right side (reused as RK4 k1).
struct GridEval {
  RegimeFamily rhs;
  RegimeFamily theta;
  double margin = 0.0;
};

inline GridEval grid_eval(const GameModel& model, const RegimeFamily& P_all,
                          double delta_floor, double time_for_errors) {
  GridEval out;
  out.rhs.resize(model.L);
  out.theta.resize(model.L);
  out.margin = std::numeric_limits<double>::infinity();
  for (int i = 1; i <= model.L; ++i) {
    MlnTriple t = eval_mln(model, P_all, i);
    const double margin = n_block_margin(t.N, model.m1);
    out.margin = std::min(out.margin, margin);
    if (!(margin >= delta_floor))
      throw RegularityLost(time_for_errors, i, margin, delta_floor);
    const Eigen::MatrixXd Ninv = invert_n_unchecked(t.N, model.m1);
    out.theta[i - 1] = -(Ninv * t.Lmap.transpose());
    out.rhs[i - 1] = symmetrized(
        Eigen::MatrixXd(t.M - t.Lmap * Ninv * t.Lmap.transpose()));
  }
  return out;
}

}  // namespace detail

// Right side of the coupled Riccati system expressed in elapsed time
// s = horizon - t: dP/ds(i) = M(P,i) - L(P,i) N(P,i)^{-1} L(P,i)^T,
// symmetrized. (Equivalently, -dP/dt backward in model time.)
inline RegimeFamily cdre_rhs(const GameModel& model, const RegimeFamily& P_all,
                             double delta_floor = kDeltaFloor) {
  return detail::cdre_rhs_impl(model, P_all, delta_floor,
                               std::numeric_limits<double>::quiet_NaN(),
                               nullptr);
}

// Feedback gain family Theta(i) = -N(P,i)^{-1} L(P,i)^T at family P.
inline RegimeFamily gains_at(const GameModel& model,
                             const RegimeFamily& P_all,
                             double delta_floor = kDeltaFloor) {
  RegimeFamily theta(model.L);
  for (int i = 1; i <= model.L; ++i) {
    MlnTriple t = eval_mln(model, P_all, i);
    const double margin = detail::n_block_margin(t.N, model.m1);
    if (!(margin >= delta_floor))
      throw RegularityLost(std::numeric_limits<double>::quiet_NaN(), i, margin,
                           delta_floor);
    theta[i - 1] =
        -(detail::invert_n_unchecked(t.N, model.m1) * t.Lmap.transpose());
  }
  return theta;
}

// Integrates the coupled Riccati system from zero terminal data over [0, T]
// with classical fixed-step RK4 (the last backward step is shortened to land
// exactly on t = 0 when h does not divide T). Internally the integration
// runs forward in elapsed time s = T - t, which makes solutions for nested
// horizons agree bit for bit on shared s values. Records P, gains and the
// regularity margin at every grid point.
inline RiccatiSolution solve_cdre(const GameModel& model, double T, double h,
                                  double delta_floor = kDeltaFloor) {
  if (!(T > 0.0)) throw std::invalid_argument("horizon must be positive");
  if (!(h > 0.0)) throw std::invalid_argument("step must be positive");

  const long full_steps = static_cast<long>(std::floor(T / h + 1e-9));
  const double remainder = T - static_cast<double>(full_steps) * h;
  const bool has_short = remainder > 1e-12 * std::max(1.0, T);
  const long K = full_steps + (has_short ? 1 : 0);  // grid has K+1 points

  RiccatiSolution sol;
  sol.horizon = T;
  sol.step = h;
  sol.grid.resize(K + 1);
  sol.P.resize(K + 1);
  sol.theta.resize(K + 1);
  sol.delta_margin.resize(K + 1);

  detail::Rk4State st{detail::zero_family(model.L, model.n, model.n),
                      detail::zero_family(model.L, model.n, model.n)};

  for (long j = 0; j <= K; ++j) {
    const double s = (has_short && j == K) ? T : static_cast<double>(j) * h;
    const double t = T - s;
    const long g = K - j;  // store in increasing model time
    detail::GridEval ev = detail::grid_eval(model, st.P, delta_floor, t);
    sol.grid[g] = t;
    sol.P[g] = st.P;
    sol.theta[g] = std::move(ev.theta);
    sol.delta_margin[g] = ev.margin;
    if (j < K) {
      const double step = (has_short && j == K - 1) ? remainder : h;
      detail::rk4_step_from_k1(model, st, ev.rhs, step, delta_floor, t);
    }
  }
  return sol;
}

// Long-horizon limit of the finite-horizon solution at fixed model time,
// found by extending the elapsed horizon in unit increments: since the
// finite-horizon solution depends only on time-to-go, one integration in
// s tracks every horizon at once. Stops when the change of P over the last
// unit interval is at most tol/10 AND the steady-equation residual
// max_i ||M(P,i) - L N^{-1} L^T||_F is at most tol.
inline CareSolution solve_care(const GameModel& model, double tol = 1e-9,
                               double T_max = 200.0, double h = 1e-3,
                               double delta_floor = kDeltaFloor) {
  if (!(tol > 0.0)) throw std::invalid_argument("tol must be positive");
  if (!(T_max > 0.0)) throw std::invalid_argument("T_max must be positive");
  if (!(h > 0.0)) throw std::invalid_argument("step must be positive");

  const long steps_per_unit =
      std::max<long>(1, static_cast<long>(std::llround(1.0 / h)));
  detail::Rk4State st{detail::zero_family(model.L, model.n, model.n),
                      detail::zero_family(model.L, model.n, model.n)};
  RegimeFamily prev_unit = st.P;

  double s = 0.0;
  double residual = std::numeric_limits<double>::infinity();
  while (s < T_max) {
    for (long k = 0; k < steps_per_unit && s < T_max; ++k) {
      detail::rk4_step(model, st, h, delta_floor, s);
      s += h;
    }
    double norm_max = 0.0;
    for (const auto& P : st.P) {
      if (!P.allFinite())
        throw NotConverged(s, std::numeric_limits<double>::infinity(), tol);
      norm_max = std::max(norm_max, P.norm());
    }
    if (norm_max > 1e12)
      throw NotConverged(s, std::numeric_limits<double>::infinity(), tol);

    double change = 0.0;
    for (int i = 0; i < model.L; ++i)
      change = std::max(change, (st.P[i] - prev_unit[i]).norm());
    prev_unit = st.P;

    double margin = 0.0;
    const RegimeFamily rhs =
        detail::cdre_rhs_impl(model, st.P, delta_floor, s, &margin);
    residual = 0.0;
    for (const auto& r : rhs) residual = std::max(residual, r.norm());

    if (change <= tol / 10.0 && residual <= tol) {
      CareSolution out;
      out.P_inf = st.P;
      out.theta_inf = gains_at(model, st.P, delta_floor);
      out.residual = residual;
      out.delta_margin = margin;
      out.horizon_used = s;
      return out;
    }
  }
  throw NotConverged(s, residual, tol);
}

}  // namespace slqg
