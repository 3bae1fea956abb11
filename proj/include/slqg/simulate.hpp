#pragma once

// Monte-Carlo simulation of the regime-switching closed-loop state equation
// by Euler-Maruyama with exact-jump substeps, cost estimation over the grid
// quadrature, coupled two-system runs under common random numbers, and the
// saddle-inequality probe with piecewise-constant control perturbations.
//
// Determinism contract: every path's randomness is derived from
// (base_seed, stream, path_index) alone, and per-block partial sums are
// merged in fixed block order, so results are bit-identical across runs and
// across worker counts.

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include "slqg/errors.hpp"
#include "slqg/markov.hpp"
#include "slqg/model.hpp"
#include "slqg/riccati.hpp"
#include "slqg/rng.hpp"

namespace slqg {

struct SimulationConfig {
  long n_paths = 10000;
  double dt = 1e-3;
  std::uint64_t base_seed = 42;
  Eigen::VectorXd x0;
  int i0 = 1;
  double T = 1.0;
  // When set (default), noise seeds come from the shared CRN stream so that
  // separate calls with one base seed ride identical draws; when cleared, an
  // independent stream decouples this run from any CRN comparison.
  bool common_noise = true;
  bool store_paths = false;
  int threads = 1;
};

// Feedback gains on a time grid, flattened for constant-time lookup.  Lookup
// semantics are left-constant: the gain at the last grid time <= t applies.
struct GainTable {
  int n = 0;
  int m = 0;
  int L = 0;
  double horizon = std::numeric_limits<double>::infinity();
  std::vector<double> grid;  // increasing; empty grid means constant gains
  double step = 0.0;         // uniform spacing from grid[1] onward
  std::vector<double> data;  // [(g*L + i)] column-major m x n blocks

  const double* gains(std::size_t g, int regime_index) const {
    return data.data() +
           (g * static_cast<std::size_t>(L) + static_cast<std::size_t>(regime_index)) *
               static_cast<std::size_t>(m) * static_cast<std::size_t>(n);
  }

  std::size_t index_for_time(double t) const {
    const std::size_t G = grid.size();
    if (G <= 1) return 0;
    if (t < grid[1]) return 0;
    if (t >= grid.back()) return G - 1;
    const std::size_t g =
        1 + static_cast<std::size_t>((t - grid[1]) / step + 1e-9);
    return std::min(g, G - 1);
  }
};

inline GainTable gain_table(const RiccatiSolution& sol, const GameModel& model) {
  GainTable t;
  t.n = model.n;
  t.m = model.m();
  t.L = model.L;
  t.horizon = sol.horizon;
  t.grid = sol.grid;
  if (t.grid.size() >= 3)
    t.step = (t.grid.back() - t.grid[1]) / static_cast<double>(t.grid.size() - 2);
  else if (t.grid.size() == 2)
    t.step = t.grid[1] - t.grid[0];
  t.data.resize(t.grid.size() * sol.theta[0].size() *
                static_cast<std::size_t>(t.m) * static_cast<std::size_t>(t.n));
  std::size_t off = 0;
  for (std::size_t g = 0; g < t.grid.size(); ++g)
    for (const Eigen::MatrixXd& th : sol.theta[g]) {
      std::copy(th.data(), th.data() + th.size(), t.data.begin() + off);
      off += static_cast<std::size_t>(th.size());
    }
  return t;
}

inline GainTable constant_gains(const RegimeFamily& theta, const GameModel& model) {
  GainTable t;
  t.n = model.n;
  t.m = model.m();
  t.L = model.L;
  t.data.resize(theta.size() * static_cast<std::size_t>(t.m) *
                static_cast<std::size_t>(t.n));
  std::size_t off = 0;
  for (const Eigen::MatrixXd& th : theta) {
    std::copy(th.data(), th.data() + th.size(), t.data.begin() + off);
    off += static_cast<std::size_t>(th.size());
  }
  return t;
}

inline GainTable gain_table(const CareSolution& care, const GameModel& model) {
  return constant_gains(care.theta_inf, model);
}

struct SimulationBatch {
  std::vector<double> times;  // K+1 grid boundaries, 0 .. T
  std::vector<double> mean_x2, se_x2;
  std::vector<double> mean_u1, se_u1;
  std::vector<double> mean_u2, se_u2;
  std::vector<double> cost_samples;  // per path; NaN for aborted paths
  long n_paths = 0;
  long blowups = 0;
  // Full trajectories, populated only when cfg.store_paths is set.
  std::vector<Eigen::MatrixXd> states;    // per path, n x (K+1)
  std::vector<Eigen::MatrixXd> controls;  // per path, m x (K+1)
  std::vector<RegimePath> regimes;        // per path
};

// Common-random-number deviations between two simultaneously simulated
// systems: second moments of state and per-player control differences.
struct PairDeviation {
  std::vector<double> times;
  std::vector<double> dev_state, se_state;
  std::vector<double> dev_u1, se_u1;
  std::vector<double> dev_u2, se_u2;
};

namespace detail {

constexpr double kBlowupNorm = 1e12;
constexpr long kBlockSize = 1024;

// Per-regime coefficient blocks flattened to column-major buffers with the
// two players' inputs stacked, sized for tight per-substep loops.
struct FlatModel {
  int n = 0, m1 = 0, m2 = 0, m = 0, L = 0;
  std::vector<double> A, B, C, D, Q, S, R;

  static FlatModel build(const GameModel& g) {
    FlatModel f;
    f.n = g.n;
    f.m1 = g.m1;
    f.m2 = g.m2;
    f.m = g.m();
    f.L = g.L;
    const auto put = [](std::vector<double>& dst, const Eigen::MatrixXd& M) {
      dst.insert(dst.end(), M.data(), M.data() + M.size());
    };
    for (int i = 1; i <= g.L; ++i) {
      const StackedCoefficients s = stack(g, i);
      put(f.A, g.A[i - 1]);
      put(f.C, g.C[i - 1]);
      put(f.Q, g.Q[i - 1]);
      put(f.B, s.B);
      put(f.D, s.D);
      put(f.S, s.S);
      put(f.R, s.R);
    }
    return f;
  }

  const double* Ap(int i) const { return A.data() + static_cast<std::size_t>(i) * n * n; }
  const double* Cp(int i) const { return C.data() + static_cast<std::size_t>(i) * n * n; }
  const double* Qp(int i) const { return Q.data() + static_cast<std::size_t>(i) * n * n; }
  const double* Bp(int i) const { return B.data() + static_cast<std::size_t>(i) * n * m; }
  const double* Dp(int i) const { return D.data() + static_cast<std::size_t>(i) * n * m; }
  const double* Sp(int i) const { return S.data() + static_cast<std::size_t>(i) * m * n; }
  const double* Rp(int i) const { return R.data() + static_cast<std::size_t>(i) * m * m; }
};

inline void matvec(const double* M, int rows, int cols, const double* x,
                   double* y) {
  for (int r = 0; r < rows; ++r) y[r] = 0.0;
  for (int c = 0; c < cols; ++c) {
    const double xc = x[c];
    const double* col = M + static_cast<std::size_t>(c) * rows;
    for (int r = 0; r < rows; ++r) y[r] += col[r] * xc;
  }
}

inline double quad_form(const double* M, int dim, const double* x) {
  double acc = 0.0;
  for (int c = 0; c < dim; ++c) {
    const double* col = M + static_cast<std::size_t>(c) * dim;
    double dot = 0.0;
    for (int r = 0; r < dim; ++r) dot += col[r] * x[r];
    acc += dot * x[c];
  }
  return acc;
}

inline double sq_norm(const double* x, int lo, int hi) {
  double acc = 0.0;
  for (int j = lo; j < hi; ++j) acc += x[j] * x[j];
  return acc;
}

inline double sq_diff(const double* a, const double* b, int lo, int hi) {
  double acc = 0.0;
  for (int j = lo; j < hi; ++j) {
    const double d = a[j] - b[j];
    acc += d * d;
  }
  return acc;
}

// Running cost integrand (x' Q x + 2 u' S x + u' R u) at one regime.
inline double stage_cost(const FlatModel& f, int i, const double* x,
                         const double* u, double* scratch_m) {
  matvec(f.Sp(i), f.m, f.n, x, scratch_m);
  double cross = 0.0;
  for (int r = 0; r < f.m; ++r) cross += u[r] * scratch_m[r];
  return quad_form(f.Qp(i), f.n, x) + 2.0 * cross + quad_form(f.Rp(i), f.m, u);
}

inline bool state_ok(const double* x, int n) {
  for (int j = 0; j < n; ++j)
    if (!std::isfinite(x[j]) || std::abs(x[j]) > kBlowupNorm) return false;
  return true;
}

struct BlockPartial {
  // Per system: 6 channels (sum/sumsq of |x|^2, |u1|^2, |u2|^2) per grid time.
  std::vector<double> sys;
  // Pair deviations (2-system runs): 6 channels per grid time.
  std::vector<double> pair;
  std::vector<long long> count;  // valid paths contributing at each grid time
  long blown = 0;
};

struct SimOutputs {
  std::vector<SimulationBatch> batches;
  PairDeviation pair;
  bool has_pair = false;
};

inline long grid_steps(double T, double dt) {
  const long K = std::lround(T / dt);
  if (K < 1 || std::abs(static_cast<double>(K) * dt - T) > 1e-9 * std::max(1.0, T))
    throw std::invalid_argument("dt must divide the horizon T");
  return K;
}

inline void check_config(const GameModel& model, const SimulationConfig& cfg) {
  if (cfg.n_paths < 1) throw std::invalid_argument("n_paths must be >= 1");
  if (!(cfg.dt > 0.0)) throw std::invalid_argument("dt must be positive");
  if (cfg.x0.size() != model.n)
    throw std::invalid_argument("x0 dimension does not match the model");
  if (cfg.i0 < 1 || cfg.i0 > model.L)
    throw std::invalid_argument("initial regime out of range");
  if (!(cfg.T > 0.0)) throw std::invalid_argument("horizon must be positive");
}

// Core multi-system driver.  All systems share one regime path and one
// Brownian increment sequence per path (common random numbers); they differ
// only in their gain tables.  Statistics are accumulated into fixed-size
// blocks of consecutive paths and merged in block order, which makes the
// result independent of the worker count.
inline SimOutputs simulate_multi(const GameModel& model,
                                 const std::vector<const GainTable*>& tables,
                                 const SimulationConfig& cfg) {
  check_config(model, cfg);
  const int S = static_cast<int>(tables.size());
  if (S < 1) throw std::invalid_argument("at least one gain table required");
  for (const GainTable* t : tables) {
    if (t->n != model.n || t->m != model.m() || t->L != model.L)
      throw std::invalid_argument("gain table shape does not match the model");
    if (t->horizon < cfg.T - 1e-9)
      throw std::invalid_argument("gain table horizon is shorter than cfg.T");
    if (t->grid.size() > 1 && t->step > cfg.dt * (1.0 + 1e-9))
      throw std::invalid_argument("gain grid must be at least as fine as dt");
  }

  const FlatModel fm = FlatModel::build(model);
  const long K = grid_steps(cfg.T, cfg.dt);
  const std::size_t G = static_cast<std::size_t>(K) + 1;
  const int n = fm.n, m = fm.m, m1 = fm.m1;

  SimOutputs out;
  out.batches.assign(S, SimulationBatch{});
  for (auto& b : out.batches) {
    b.n_paths = cfg.n_paths;
    b.times.resize(G);
    for (std::size_t g = 0; g < G; ++g)
      b.times[g] = (g == G - 1) ? cfg.T : static_cast<double>(g) * cfg.dt;
    b.cost_samples.assign(cfg.n_paths,
                          std::numeric_limits<double>::quiet_NaN());
    if (cfg.store_paths) {
      const double bytes = static_cast<double>(cfg.n_paths) * G * (n + m) * 8.0 * S;
      if (bytes > 1e9)
        throw std::invalid_argument(
            "store_paths would exceed the 1 GB trajectory budget");
      b.states.assign(cfg.n_paths, Eigen::MatrixXd::Zero(n, G));
      b.controls.assign(cfg.n_paths, Eigen::MatrixXd::Zero(m, G));
      b.regimes.resize(cfg.n_paths);
    }
  }
  out.has_pair = (S == 2);
  if (out.has_pair) out.pair.times = out.batches[0].times;

  const long n_blocks = (cfg.n_paths + kBlockSize - 1) / kBlockSize;
  std::vector<BlockPartial> partials(n_blocks);
  for (auto& p : partials) {
    p.sys.assign(static_cast<std::size_t>(S) * 6 * G, 0.0);
    if (out.has_pair) p.pair.assign(6 * G, 0.0);
    p.count.assign(G, 0);
  }

  const Stream noise_stream =
      cfg.common_noise ? Stream::Noise : Stream::NoiseIndependent;

  auto run_block = [&](long block) {
    BlockPartial& bp = partials[block];
    const long lo = block * kBlockSize;
    const long hi = std::min(cfg.n_paths, lo + kBlockSize);
    std::vector<double> x(static_cast<std::size_t>(S) * n);
    std::vector<double> u(static_cast<std::size_t>(S) * m);
    std::vector<double> drift(n), diff(n), bu(n), du(n), sm(m);
    std::vector<double> cost(S);

    for (long p = lo; p < hi; ++p) {
      const RegimePath path = sample_path(
          model.generator, cfg.i0, cfg.T, cfg.base_seed, static_cast<std::uint64_t>(p));
      std::mt19937_64 noise =
          make_engine(cfg.base_seed, noise_stream, static_cast<std::uint64_t>(p));
      std::normal_distribution<double> gauss(0.0, 1.0);

      for (int s = 0; s < S; ++s)
        for (int j = 0; j < n; ++j) x[static_cast<std::size_t>(s) * n + j] = cfg.x0(j);
      std::fill(cost.begin(), cost.end(), 0.0);
      std::size_t cur = 0;  // current regime segment
      const std::size_t n_segs = path.states.size();
      bool blown = false;

      for (long k = 0; k <= K && !blown; ++k) {
        const double t0 = (k == K) ? cfg.T : static_cast<double>(k) * cfg.dt;
        while (cur + 1 < n_segs && path.jump_times[cur + 1] <= t0) ++cur;
        const int regime = path.states[cur] - 1;

        // Record statistics and the running cost at the grid point.
        for (int s = 0; s < S; ++s)
          if (!state_ok(x.data() + static_cast<std::size_t>(s) * n, n)) blown = true;
        if (blown) {
          ++bp.blown;
          break;
        }
        for (int s = 0; s < S; ++s) {
          const double* xs = x.data() + static_cast<std::size_t>(s) * n;
          double* us = u.data() + static_cast<std::size_t>(s) * m;
          const GainTable& tb = *tables[s];
          matvec(tb.gains(tb.index_for_time(t0), regime), m, n, xs, us);
          double* ch = bp.sys.data() + (static_cast<std::size_t>(s) * 6) * G;
          const double x2 = sq_norm(xs, 0, n);
          const double u1 = sq_norm(us, 0, m1);
          const double u2 = sq_norm(us, m1, m);
          ch[0 * G + k] += x2;
          ch[1 * G + k] += x2 * x2;
          ch[2 * G + k] += u1;
          ch[3 * G + k] += u1 * u1;
          ch[4 * G + k] += u2;
          ch[5 * G + k] += u2 * u2;
          if (k < K) cost[s] += stage_cost(fm, regime, xs, us, sm.data()) * cfg.dt;
          if (cfg.store_paths) {
            auto& batch = out.batches[s];
            for (int j = 0; j < n; ++j) batch.states[p](j, k) = xs[j];
            for (int r = 0; r < m; ++r) batch.controls[p](r, k) = us[r];
          }
        }
        if (out.has_pair) {
          const double* xa = x.data();
          const double* xb = x.data() + n;
          const double* ua = u.data();
          const double* ub = u.data() + m;
          const double dx = sq_diff(xa, xb, 0, n);
          const double d1 = sq_diff(ua, ub, 0, m1);
          const double d2 = sq_diff(ua, ub, m1, m);
          bp.pair[0 * G + k] += dx;
          bp.pair[1 * G + k] += dx * dx;
          bp.pair[2 * G + k] += d1;
          bp.pair[3 * G + k] += d1 * d1;
          bp.pair[4 * G + k] += d2;
          bp.pair[5 * G + k] += d2 * d2;
        }
        ++bp.count[k];
        if (k == K) break;

        // Advance one Euler step, splitting substeps at exact jump times.
        const double t1 = (k == K - 1) ? cfg.T : static_cast<double>(k + 1) * cfg.dt;
        double a = t0;
        std::size_t seg = cur;
        while (a < t1) {
          const double nj = (seg + 1 < n_segs)
                                ? path.jump_times[seg + 1]
                                : std::numeric_limits<double>::infinity();
          const double b = std::min(t1, nj);
          if (b > a) {
            const int ri = path.states[seg] - 1;
            const double sdt = b - a;
            const double dw = std::sqrt(sdt) * gauss(noise);
            for (int s = 0; s < S; ++s) {
              double* xs = x.data() + static_cast<std::size_t>(s) * n;
              double* us = u.data() + static_cast<std::size_t>(s) * m;
              const GainTable& tb = *tables[s];
              matvec(tb.gains(tb.index_for_time(a), ri), m, n, xs, us);
              matvec(fm.Ap(ri), n, n, xs, drift.data());
              matvec(fm.Bp(ri), n, m, us, bu.data());
              matvec(fm.Cp(ri), n, n, xs, diff.data());
              matvec(fm.Dp(ri), n, m, us, du.data());
              for (int j = 0; j < n; ++j)
                xs[j] += (drift[j] + bu[j]) * sdt + (diff[j] + du[j]) * dw;
            }
          }
          if (nj <= t1 && seg + 1 < n_segs) ++seg;
          a = b;
        }
      }

      if (!blown) {
        for (int s = 0; s < S; ++s) out.batches[s].cost_samples[p] = cost[s];
      }
      if (cfg.store_paths)
        for (int s = 0; s < S; ++s) out.batches[s].regimes[p] = path;
    }
  };

  const int workers = std::max(1, std::min<int>(cfg.threads, static_cast<int>(n_blocks)));
  if (workers == 1) {
    for (long blk = 0; blk < n_blocks; ++blk) run_block(blk);
  } else {
    std::atomic<long> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (long blk = next.fetch_add(1); blk < n_blocks; blk = next.fetch_add(1))
          run_block(blk);
      });
    for (auto& th : pool) th.join();
  }

  // Merge per-block partials in block order (worker-count independent).
  std::vector<double> sys_tot(static_cast<std::size_t>(S) * 6 * G, 0.0);
  std::vector<double> pair_tot(out.has_pair ? 6 * G : 0, 0.0);
  std::vector<long long> count_tot(G, 0);
  long blown_total = 0;
  for (const auto& bp : partials) {
    for (std::size_t j = 0; j < sys_tot.size(); ++j) sys_tot[j] += bp.sys[j];
    for (std::size_t j = 0; j < pair_tot.size(); ++j) pair_tot[j] += bp.pair[j];
    for (std::size_t g = 0; g < G; ++g) count_tot[g] += bp.count[g];
    blown_total += bp.blown;
  }

  const auto finalize = [](double sum, double sumsq, long long N, double& mean,
                           double& se) {
    if (N <= 0) {
      mean = std::numeric_limits<double>::quiet_NaN();
      se = std::numeric_limits<double>::quiet_NaN();
      return;
    }
    mean = sum / static_cast<double>(N);
    if (N == 1) {
      se = 0.0;
      return;
    }
    const double var =
        std::max(0.0, (sumsq - sum * mean) / static_cast<double>(N - 1));
    se = std::sqrt(var / static_cast<double>(N));
  };

  for (int s = 0; s < S; ++s) {
    auto& b = out.batches[s];
    b.blowups = blown_total;
    b.mean_x2.resize(G);
    b.se_x2.resize(G);
    b.mean_u1.resize(G);
    b.se_u1.resize(G);
    b.mean_u2.resize(G);
    b.se_u2.resize(G);
    const double* ch = sys_tot.data() + (static_cast<std::size_t>(s) * 6) * G;
    for (std::size_t g = 0; g < G; ++g) {
      finalize(ch[0 * G + g], ch[1 * G + g], count_tot[g], b.mean_x2[g], b.se_x2[g]);
      finalize(ch[2 * G + g], ch[3 * G + g], count_tot[g], b.mean_u1[g], b.se_u1[g]);
      finalize(ch[4 * G + g], ch[5 * G + g], count_tot[g], b.mean_u2[g], b.se_u2[g]);
    }
  }
  if (out.has_pair) {
    auto& pr = out.pair;
    pr.dev_state.resize(G);
    pr.se_state.resize(G);
    pr.dev_u1.resize(G);
    pr.se_u1.resize(G);
    pr.dev_u2.resize(G);
    pr.se_u2.resize(G);
    for (std::size_t g = 0; g < G; ++g) {
      finalize(pair_tot[0 * G + g], pair_tot[1 * G + g], count_tot[g], pr.dev_state[g], pr.se_state[g]);
      finalize(pair_tot[2 * G + g], pair_tot[3 * G + g], count_tot[g], pr.dev_u1[g], pr.se_u1[g]);
      finalize(pair_tot[4 * G + g], pair_tot[5 * G + g], count_tot[g], pr.dev_u2[g], pr.se_u2[g]);
    }
  }
  return out;
}

}  // namespace detail

inline SimulationBatch simulate_closed_loop(const GameModel& model,
                                            const GainTable& gains,
                                            const SimulationConfig& cfg) {
  auto out = detail::simulate_multi(model, {&gains}, cfg);
  return std::move(out.batches[0]);
}

inline SimulationBatch simulate_closed_loop(const GameModel& model,
                                            const RiccatiSolution& sol,
                                            const SimulationConfig& cfg) {
  const GainTable t = gain_table(sol, model);
  return simulate_closed_loop(model, t, cfg);
}

inline SimulationBatch simulate_closed_loop(const GameModel& model,
                                            const CareSolution& care,
                                            const SimulationConfig& cfg) {
  const GainTable t = gain_table(care, model);
  return simulate_closed_loop(model, t, cfg);
}

struct PairSimulation {
  SimulationBatch first;
  SimulationBatch second;
  PairDeviation deviation;
};

// Simulate two gain laws on identical regime paths and Brownian increments.
inline PairSimulation simulate_pair(const GameModel& model,
                                    const GainTable& first,
                                    const GainTable& second,
                                    const SimulationConfig& cfg) {
  auto out = detail::simulate_multi(model, {&first, &second}, cfg);
  PairSimulation ps;
  ps.first = std::move(out.batches[0]);
  ps.second = std::move(out.batches[1]);
  ps.deviation = std::move(out.pair);
  return ps;
}

// Sample mean and standard error of the per-path cost.  When trajectories
// were stored the costs are recomputed from them with the same grid-step
// quadrature; otherwise the costs accumulated during simulation are used.
inline std::pair<double, double> estimate_cost(const GameModel& model,
                                               const SimulationBatch& batch) {
  if (batch.blowups > 0)
    throw std::invalid_argument(
        "cost estimate requested on a batch with blown-up paths");
  const detail::FlatModel fm = detail::FlatModel::build(model);
  std::vector<double> sm(fm.m);
  double sum = 0.0, sumsq = 0.0;
  long N = 0;
  const bool stored = !batch.states.empty();
  for (long p = 0; p < batch.n_paths; ++p) {
    double c;
    if (stored) {
      const std::size_t G = batch.times.size();
      // Uniform grid weight (times[1] is exactly 1*dt), matching the
      // quadrature used when costs are accumulated during simulation.
      const double dt = G > 1 ? batch.times[1] - batch.times[0] : 0.0;
      c = 0.0;
      for (std::size_t k = 0; k + 1 < G; ++k) {
        const int regime = batch.regimes[p].state_at(batch.times[k]) - 1;
        c += detail::stage_cost(fm, regime, batch.states[p].col(k).data(),
                                batch.controls[p].col(k).data(), sm.data()) *
             dt;
      }
    } else {
      c = batch.cost_samples[p];
    }
    if (!std::isfinite(c)) continue;
    sum += c;
    sumsq += c * c;
    ++N;
  }
  if (N == 0) throw std::invalid_argument("no finite cost samples");
  const double mean = sum / static_cast<double>(N);
  double se = 0.0;
  if (N > 1) {
    const double var =
        std::max(0.0, (sumsq - sum * mean) / static_cast<double>(N - 1));
    se = std::sqrt(var / static_cast<double>(N));
  }
  return {mean, se};
}

// Piecewise-constant vector process on a uniform coarse grid; the level in
// cell c applies on [c*cell, (c+1)*cell) and the last level extends to T.
struct PiecewiseConstantProcess {
  double cell = 0.1;
  Eigen::MatrixXd levels;  // channels x n_cells

  const double* value_at(double t) const {
    const int c = std::min(static_cast<int>(levels.cols()) - 1,
                           std::max(0, static_cast<int>(t / cell + 1e-12)));
    return levels.col(c).data();
  }

  // Exact squared L2(0,T) norm of the process.
  double l2_norm_sq(double T) const {
    double acc = 0.0;
    for (int c = 0; c < levels.cols(); ++c) {
      const double lo = cell * static_cast<double>(c);
      const double hi = (c + 1 == levels.cols()) ? T : lo + cell;
      if (hi <= lo) break;
      acc += levels.col(c).squaredNorm() * (std::min(hi, T) - lo);
    }
    return acc;
  }
};

// Seeded standard-normal perturbation draws on the coarse cell grid, one
// independent process per draw index via the Perturbation stream.
inline std::vector<PiecewiseConstantProcess> random_perturbations(
    int channels, double T, double cell, int count, std::uint64_t base_seed) {
  std::vector<PiecewiseConstantProcess> out(count);
  const int cells = std::max(1, static_cast<int>(std::ceil(T / cell - 1e-12)));
  for (int d = 0; d < count; ++d) {
    auto eng = make_engine(base_seed, Stream::Perturbation,
                           static_cast<std::uint64_t>(d));
    std::normal_distribution<double> gauss(0.0, 1.0);
    out[d].cell = cell;
    out[d].levels.resize(channels, cells);
    for (int c = 0; c < cells; ++c)
      for (int r = 0; r < channels; ++r) out[d].levels(r, c) = gauss(eng);
  }
  return out;
}

struct SaddleProbe {
  int side = 0;    // 1: minimizer perturbed, 2: maximizer perturbed
  int draw = 0;    // perturbation index
  double eps = 0.0;
  double J_mean = 0.0, J_se = 0.0;     // cost of the perturbed pair
  double gap_mean = 0.0, gap_se = 0.0; // paired J_perturbed - J_saddle
  bool violation = false;
};

struct QuadraticResponse {
  double linear = 0.0;     // fitted coefficient of eps
  double curvature = 0.0;  // fitted coefficient of eps^2
  double r_squared = 1.0;  // uncentered, parabola constrained through 0
};

struct SaddleReport {
  double J_base_mean = 0.0, J_base_se = 0.0;
  std::vector<SaddleProbe> probes;
  QuadraticResponse response1, response2;  // mean gap vs eps per side
  long violations = 0;
  std::vector<double> epsilon_list;
  int n_perturbations = 0;
};

namespace detail {

// Fit y = a*eps + b*eps^2 (through the origin) to the mean gap per epsilon.
inline QuadraticResponse fit_quadratic_response(
    const std::vector<double>& eps, const std::vector<double>& y) {
  QuadraticResponse q;
  double s22 = 0, s23 = 0, s33 = 0, r1 = 0, r2 = 0;
  for (std::size_t j = 0; j < eps.size(); ++j) {
    const double e1 = eps[j], e2 = eps[j] * eps[j];
    s22 += e1 * e1;
    s23 += e1 * e2;
    s33 += e2 * e2;
    r1 += e1 * y[j];
    r2 += e2 * y[j];
  }
  const double det = s22 * s33 - s23 * s23;
  if (std::abs(det) > 1e-300) {
    q.linear = (r1 * s33 - r2 * s23) / det;
    q.curvature = (s22 * r2 - s23 * r1) / det;
  } else if (s33 > 0.0) {  // single usable epsilon: pure quadratic response
    q.linear = 0.0;
    q.curvature = r2 / s33;
  }
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t j = 0; j < eps.size(); ++j) {
    const double pred = q.linear * eps[j] + q.curvature * eps[j] * eps[j];
    ss_res += (y[j] - pred) * (y[j] - pred);
    ss_tot += y[j] * y[j];
  }
  q.r_squared = (ss_tot > 0.0) ? 1.0 - ss_res / ss_tot : 1.0;
  return q;
}

}  // namespace detail

// Probe the saddle inequalities.  The saddle control pair is realized by the
// closed-loop gains along each sample path; perturbed evaluations transplant
// that realized control as an open-loop input and add eps times a fixed
// perturbation process on one player's channels, all under common random
// numbers.  A probe is a violation when the minimizer's perturbation lowers
// the cost, or the maximizer's raises it, beyond 3 paired standard errors.
inline SaddleReport saddle_check_with(
    const GameModel& model, const RiccatiSolution& cdre,
    const SimulationConfig& cfg,
    const std::vector<PiecewiseConstantProcess>& v1,
    const std::vector<PiecewiseConstantProcess>& v2,
    const std::vector<double>& epsilon_list) {
  detail::check_config(model, cfg);
  const GainTable table = gain_table(cdre, model);
  if (table.horizon < cfg.T - 1e-9)
    throw std::invalid_argument("gain horizon shorter than cfg.T");

  const detail::FlatModel fm = detail::FlatModel::build(model);
  const long K = detail::grid_steps(cfg.T, cfg.dt);
  const int n = fm.n, m = fm.m, m1 = fm.m1;

  struct ProbeSpec {
    int side;
    int draw;
    double eps;
    const PiecewiseConstantProcess* v;
  };
  std::vector<ProbeSpec> specs;
  for (int d = 0; d < static_cast<int>(v1.size()); ++d)
    for (double e : epsilon_list) specs.push_back({1, d, e, &v1[d]});
  for (int d = 0; d < static_cast<int>(v2.size()); ++d)
    for (double e : epsilon_list) specs.push_back({2, d, e, &v2[d]});
  const int P = static_cast<int>(specs.size());
  const int S = P + 1;  // systems: base + probes

  struct Partial {
    std::vector<double> sum, sumsq;  // [0]=base J, then per-probe gap
    long long valid = 0;
    long blown = 0;
  };
  const long n_blocks = (cfg.n_paths + detail::kBlockSize - 1) / detail::kBlockSize;
  std::vector<Partial> partials(n_blocks);
  for (auto& p : partials) {
    p.sum.assign(S, 0.0);
    p.sumsq.assign(S, 0.0);
  }

  const Stream noise_stream =
      cfg.common_noise ? Stream::Noise : Stream::NoiseIndependent;

  auto run_block = [&](long block) {
    Partial& bp = partials[block];
    const long lo = block * detail::kBlockSize;
    const long hi = std::min(cfg.n_paths, lo + detail::kBlockSize);
    std::vector<double> x(static_cast<std::size_t>(S) * n);
    std::vector<double> u(m), up(m), drift(n), diffv(n), bu(n), du(n), sm(m);
    std::vector<double> cost(S);

    for (long p = lo; p < hi; ++p) {
      const RegimePath path = sample_path(model.generator, cfg.i0, cfg.T,
                                          cfg.base_seed, static_cast<std::uint64_t>(p));
      std::mt19937_64 noise =
          make_engine(cfg.base_seed, noise_stream, static_cast<std::uint64_t>(p));
      std::normal_distribution<double> gauss(0.0, 1.0);

      for (int s = 0; s < S; ++s)
        for (int j = 0; j < n; ++j) x[static_cast<std::size_t>(s) * n + j] = cfg.x0(j);
      std::fill(cost.begin(), cost.end(), 0.0);
      std::size_t cur = 0;
      const std::size_t n_segs = path.states.size();
      bool blown = false;

      for (long k = 0; k < K && !blown; ++k) {
        const double t0 = static_cast<double>(k) * cfg.dt;
        const double t1 = (k == K - 1) ? cfg.T : static_cast<double>(k + 1) * cfg.dt;
        while (cur + 1 < n_segs && path.jump_times[cur + 1] <= t0) ++cur;
        for (int s = 0; s < S && !blown; ++s)
          blown = !detail::state_ok(x.data() + static_cast<std::size_t>(s) * n, n);
        if (blown) {
          ++bp.blown;
          break;
        }

        double a = t0;
        std::size_t seg = cur;
        bool first = true;
        while (a < t1) {
          const double nj = (seg + 1 < n_segs)
                                ? path.jump_times[seg + 1]
                                : std::numeric_limits<double>::infinity();
          const double b = std::min(t1, nj);
          if (b > a) {
            const int ri = path.states[seg] - 1;
            const double sdt = b - a;
            const double dw = std::sqrt(sdt) * gauss(noise);
            // The saddle control is the feedback along the base state; the
            // probes reuse it as an open-loop input plus their perturbation.
            const double* xb = x.data();
            detail::matvec(table.gains(table.index_for_time(a), ri), m, n, xb, u.data());
            if (first) cost[0] += detail::stage_cost(fm, ri, xb, u.data(), sm.data()) * cfg.dt;
            for (int s = 1; s <= P; ++s) {
              const ProbeSpec& ps = specs[s - 1];
              const double* lv = ps.v->value_at(a);
              const int off = (ps.side == 1) ? 0 : m1;
              const int ch = (ps.side == 1) ? m1 : m - m1;
              for (int r = 0; r < m; ++r) up[r] = u[r];
              for (int r = 0; r < ch; ++r) up[off + r] += ps.eps * lv[r];
              double* xs = x.data() + static_cast<std::size_t>(s) * n;
              if (first)
                cost[s] += detail::stage_cost(fm, ri, xs, up.data(), sm.data()) * cfg.dt;
              detail::matvec(fm.Ap(ri), n, n, xs, drift.data());
              detail::matvec(fm.Bp(ri), n, m, up.data(), bu.data());
              detail::matvec(fm.Cp(ri), n, n, xs, diffv.data());
              detail::matvec(fm.Dp(ri), n, m, up.data(), du.data());
              for (int j = 0; j < n; ++j)
                xs[j] += (drift[j] + bu[j]) * sdt + (diffv[j] + du[j]) * dw;
            }
            {  // base state update last: its pre-update value fed the probes
              double* xs = x.data();
              detail::matvec(fm.Ap(ri), n, n, xs, drift.data());
              detail::matvec(fm.Bp(ri), n, m, u.data(), bu.data());
              detail::matvec(fm.Cp(ri), n, n, xs, diffv.data());
              detail::matvec(fm.Dp(ri), n, m, u.data(), du.data());
              for (int j = 0; j < n; ++j)
                xs[j] += (drift[j] + bu[j]) * sdt + (diffv[j] + du[j]) * dw;
            }
            first = false;
          }
          if (nj <= t1 && seg + 1 < n_segs) ++seg;
          a = b;
        }
      }
      if (!blown) {
        for (int s = 0; s < S && !blown; ++s) blown = !std::isfinite(cost[s]);
      }
      if (!blown) {
        bp.sum[0] += cost[0];
        bp.sumsq[0] += cost[0] * cost[0];
        for (int s = 1; s <= P; ++s) {
          const double gap = cost[s] - cost[0];
          bp.sum[s] += gap;
          bp.sumsq[s] += gap * gap;
        }
        ++bp.valid;
      }
    }
  };

  const int workers = std::max(1, std::min<int>(cfg.threads, static_cast<int>(n_blocks)));
  if (workers == 1) {
    for (long blk = 0; blk < n_blocks; ++blk) run_block(blk);
  } else {
    std::atomic<long> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (long blk = next.fetch_add(1); blk < n_blocks; blk = next.fetch_add(1))
          run_block(blk);
      });
    for (auto& th : pool) th.join();
  }

  std::vector<double> sum(S, 0.0), sumsq(S, 0.0);
  long long valid = 0;
  long blown_total = 0;
  for (const auto& bp : partials) {
    for (int s = 0; s < S; ++s) {
      sum[s] += bp.sum[s];
      sumsq[s] += bp.sumsq[s];
    }
    valid += bp.valid;
    blown_total += bp.blown;
  }
  if (valid == 0) throw std::invalid_argument("all paths aborted");

  const auto stats = [&](int s) {
    const double mean = sum[s] / static_cast<double>(valid);
    double se = 0.0;
    if (valid > 1) {
      const double var = std::max(
          0.0, (sumsq[s] - sum[s] * mean) / static_cast<double>(valid - 1));
      se = std::sqrt(var / static_cast<double>(valid));
    }
    return std::pair<double, double>(mean, se);
  };

  SaddleReport rep;
  rep.epsilon_list = epsilon_list;
  rep.n_perturbations = static_cast<int>(std::max(v1.size(), v2.size()));
  std::tie(rep.J_base_mean, rep.J_base_se) = stats(0);
  const double floor = 1e-12 * (1.0 + std::abs(rep.J_base_mean));
  (void)blown_total;

  for (int s = 1; s <= P; ++s) {
    const ProbeSpec& ps = specs[s - 1];
    SaddleProbe probe;
    probe.side = ps.side;
    probe.draw = ps.draw;
    probe.eps = ps.eps;
    std::tie(probe.gap_mean, probe.gap_se) = stats(s);
    probe.J_mean = rep.J_base_mean + probe.gap_mean;
    probe.J_se = probe.gap_se;  // paired spread relative to the base cost
    if (ps.side == 1)
      probe.violation = probe.gap_mean < -(3.0 * probe.gap_se + floor);
    else
      probe.violation = probe.gap_mean > (3.0 * probe.gap_se + floor);
    if (probe.violation) ++rep.violations;
    rep.probes.push_back(probe);
  }

  // Mean gap per epsilon and side -> parabola through the origin.
  for (int side = 1; side <= 2; ++side) {
    std::vector<double> eps, ybar;
    for (double e : epsilon_list) {
      double acc = 0.0;
      int cnt = 0;
      for (const auto& pr : rep.probes)
        if (pr.side == side && pr.eps == e) {
          acc += pr.gap_mean;
          ++cnt;
        }
      if (cnt > 0) {
        eps.push_back(e);
        ybar.push_back(acc / cnt);
      }
    }
    const QuadraticResponse q = detail::fit_quadratic_response(eps, ybar);
    if (side == 1)
      rep.response1 = q;
    else
      rep.response2 = q;
  }
  return rep;
}

// Front door: draws the perturbation processes itself (one seeded
// standard-normal piecewise-constant process per draw and player) and then
// delegates to saddle_check_with.
inline SaddleReport saddle_check(const GameModel& model, double T,
                                 const SimulationConfig& cfg_in,
                                 int n_perturbations,
                                 const std::vector<double>& epsilon_list) {
  SimulationConfig cfg = cfg_in;
  cfg.T = T;
  const double h = std::min(1e-3, cfg.dt);
  const RiccatiSolution cdre = solve_cdre(model, T, h);
  auto v1 = random_perturbations(model.m1, T, 0.1, n_perturbations, cfg.base_seed);
  auto v2 = random_perturbations(model.m2, T, 0.1, n_perturbations,
                                 cfg.base_seed ^ 0x51ed270b9e3779b9ULL);
  return saddle_check_with(model, cdre, cfg, v1, v2, epsilon_list);
}

}  // namespace slqg
