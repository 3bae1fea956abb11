#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "slqg/rng.hpp"

namespace slqg {

// A continuous-time chain trajectory on [0, horizon]: the chain equals
// states[k] (1-based regime) on [jump_times[k], jump_times[k+1]) and
// states.back() on [jump_times.back(), horizon].
struct RegimePath {
  std::vector<double> jump_times;  // strictly increasing, starts at 0, all < horizon
  std::vector<int> states;         // one per segment, consecutive entries differ
  double horizon = 0.0;

  int state_at(double t) const {
    // Segments are few at desk scale; linear scan from the back is cheapest.
    for (std::size_t k = jump_times.size(); k-- > 0;)
      if (t >= jump_times[k]) return states[k];
    return states.front();
  }
};

// Jump intensity out of regime i (1-based): -pi_ii.
inline double holding_rate(const Eigen::MatrixXd& generator, int i) {
  if (i < 1 || i > generator.rows())
    throw std::out_of_range("regime index " + std::to_string(i) +
                            " outside 1.." + std::to_string(generator.rows()));
  return -generator(i - 1, i - 1);
}

// Samples one chain path by competing exponential clocks: hold Exp(-pi_ii),
// then move to j != i with probability pi_ij / (-pi_ii). Exact jump times (no
// time discretization). Deterministic given the engine state; absorbing
// states (zero holding rate) end the path.
inline RegimePath sample_path(const Eigen::MatrixXd& generator, int i0,
                              double T, std::mt19937_64& engine) {
  const int L = static_cast<int>(generator.rows());
  if (i0 < 1 || i0 > L)
    throw std::out_of_range("initial regime " + std::to_string(i0) +
                            " outside 1.." + std::to_string(L));
  if (!(T > 0.0)) throw std::invalid_argument("horizon must be positive");

  RegimePath path;
  path.horizon = T;
  path.jump_times.push_back(0.0);
  path.states.push_back(i0);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double t = 0.0;
  int state = i0;
  while (true) {
    const double rate = holding_rate(generator, state);
    if (!(rate > 0.0)) break;  // absorbing: no further jumps
    std::exponential_distribution<double> hold(rate);
    t += hold(engine);
    if (t >= T) break;
    // Next state by cumulative probabilities in fixed index order.
    const double u = unit(engine) * rate;
    double acc = 0.0;
    int next = -1;
    for (int j = 1; j <= L; ++j) {
      if (j == state) continue;
      acc += generator(state - 1, j - 1);
      if (u <= acc) {
        next = j;
        break;
      }
    }
    if (next < 0) {
      // Rounding put u a hair past the last positive increment; take the
      // largest admissible target so probabilities still sum to one.
      for (int j = L; j >= 1; --j) {
        if (j != state && generator(state - 1, j - 1) > 0.0) {
          next = j;
          break;
        }
      }
    }
    path.jump_times.push_back(t);
    path.states.push_back(next);
    state = next;
  }
  return path;
}

// Convenience overload: engine derived from (base_seed, Chain stream, index).
inline RegimePath sample_path(const Eigen::MatrixXd& generator, int i0,
                              double T, std::uint64_t base_seed,
                              std::uint64_t path_index = 0) {
  auto engine = make_engine(base_seed, Stream::Chain, path_index);
  return sample_path(generator, i0, T, engine);
}

}  // namespace slqg
