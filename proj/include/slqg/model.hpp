#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "slqg/errors.hpp"

namespace slqg {

// One matrix per regime i in {1,...,L}; stored 0-based, reported 1-based in
// every external interface (JSON, CSV, error messages).
using RegimeFamily = std::vector<Eigen::MatrixXd>;

// Two-player regime-switching linear-quadratic game data.
//
// Dynamics per regime i:
//   dX = (A X + B1 u1 + B2 u2) dt + (C X + D1 u1 + D2 u2) dW,
// cost integrand: <Q X, X> + 2<S1 X, u1> + 2<S2 X, u2>
//                 + <R11 u1, u1> + 2<R12 u2, u1> + <R22 u2, u2>,
// with the regime driven by a continuous-time Markov chain with generator Pi.
// Player 1 (dimension m1) minimizes, player 2 (dimension m2) maximizes.
struct GameModel {
  int n = 0;   // state dimension
  int m1 = 0;  // player-1 control dimension
  int m2 = 0;  // player-2 control dimension
  int L = 0;   // number of regimes

  RegimeFamily A, C;        // n x n
  RegimeFamily B1, D1;      // n x m1
  RegimeFamily B2, D2;      // n x m2
  RegimeFamily Q;           // n x n symmetric
  RegimeFamily S1;          // m1 x n
  RegimeFamily S2;          // m2 x n
  RegimeFamily R11;         // m1 x m1 symmetric
  RegimeFamily R12;         // m1 x m2
  RegimeFamily R22;         // m2 x m2 symmetric
  Eigen::MatrixXd generator;  // L x L, rows sum to zero, off-diagonal >= 0

  int m() const { return m1 + m2; }
};

// Combined-control view of one regime: controls stacked as u = (u1; u2).
struct StackedCoefficients {
  Eigen::MatrixXd B;  // n x (m1+m2) = [B1 | B2]
  Eigen::MatrixXd D;  // n x (m1+m2) = [D1 | D2]
  Eigen::MatrixXd S;  // (m1+m2) x n = [S1; S2]
  Eigen::MatrixXd R;  // (m1+m2) x (m1+m2) = [[R11, R12], [R12^T, R22]]
};

struct Violation {
  std::string field;    // e.g. "Q", "generator", "dimensions"
  int regime = 0;       // 1-based; 0 when not regime-specific
  std::string message;  // human-readable description
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool valid() const { return violations.empty(); }
};

// Entrywise absolute tolerance for symmetry and generator row sums.
inline constexpr double kSymmetryTol = 1e-12;

namespace detail {

inline void check_dims(std::vector<Violation>& out, const char* field,
                       const RegimeFamily& fam, int L, int rows, int cols) {
  if (static_cast<int>(fam.size()) != L) {
    out.push_back({field, 0,
                   std::string(field) + " has " + std::to_string(fam.size()) +
                       " entries, expected L=" + std::to_string(L)});
    return;
  }
  for (int i = 0; i < L; ++i) {
    if (fam[i].rows() != rows || fam[i].cols() != cols) {
      out.push_back({field, i + 1,
                     std::string(field) + "(" + std::to_string(i + 1) +
                         ") is " + std::to_string(fam[i].rows()) + "x" +
                         std::to_string(fam[i].cols()) + ", expected " +
                         std::to_string(rows) + "x" + std::to_string(cols)});
    }
  }
}

inline void check_symmetric(std::vector<Violation>& out, const char* field,
                            const RegimeFamily& fam) {
  for (std::size_t i = 0; i < fam.size(); ++i) {
    if (fam[i].rows() != fam[i].cols()) continue;  // dimension check reports it
    double dev = (fam[i] - fam[i].transpose()).cwiseAbs().maxCoeff();
    if (!(dev <= kSymmetryTol)) {
      out.push_back({field, static_cast<int>(i + 1),
                     std::string(field) + "(" + std::to_string(i + 1) +
                         ") not symmetric (max asymmetry " +
                         std::to_string(dev) + ")"});
    }
  }
}

}  // namespace detail

// Lists every violated structural invariant; never throws. An empty report
// means the model is usable by every solver in the library.
inline ValidationReport validate_model(const GameModel& model) {
  ValidationReport report;
  auto& out = report.violations;

  if (model.n <= 0) out.push_back({"n", 0, "state dimension must be positive"});
  if (model.m1 <= 0) out.push_back({"m1", 0, "m1 must be positive"});
  if (model.m2 <= 0) out.push_back({"m2", 0, "m2 must be positive"});
  if (model.L <= 0) out.push_back({"L", 0, "regime count must be positive"});
  if (!out.empty()) return report;  // families are meaningless without dims

  const int n = model.n, m1 = model.m1, m2 = model.m2, L = model.L;
  detail::check_dims(out, "A", model.A, L, n, n);
  detail::check_dims(out, "C", model.C, L, n, n);
  detail::check_dims(out, "B1", model.B1, L, n, m1);
  detail::check_dims(out, "D1", model.D1, L, n, m1);
  detail::check_dims(out, "B2", model.B2, L, n, m2);
  detail::check_dims(out, "D2", model.D2, L, n, m2);
  detail::check_dims(out, "Q", model.Q, L, n, n);
  detail::check_dims(out, "S1", model.S1, L, m1, n);
  detail::check_dims(out, "S2", model.S2, L, m2, n);
  detail::check_dims(out, "R11", model.R11, L, m1, m1);
  detail::check_dims(out, "R12", model.R12, L, m1, m2);
  detail::check_dims(out, "R22", model.R22, L, m2, m2);

  detail::check_symmetric(out, "Q", model.Q);
  detail::check_symmetric(out, "R11", model.R11);
  detail::check_symmetric(out, "R22", model.R22);

  if (model.generator.rows() != L || model.generator.cols() != L) {
    out.push_back({"generator", 0,
                   "generator is " + std::to_string(model.generator.rows()) +
                       "x" + std::to_string(model.generator.cols()) +
                       ", expected " + std::to_string(L) + "x" +
                       std::to_string(L)});
  } else {
    for (int i = 0; i < L; ++i) {
      double row_sum = model.generator.row(i).sum();
      if (!(std::abs(row_sum) <= kSymmetryTol)) {
        out.push_back({"generator", i + 1,
                       "row " + std::to_string(i + 1) + " sums to " +
                           std::to_string(row_sum)});
      }
      for (int j = 0; j < L; ++j) {
        if (i != j && model.generator(i, j) < 0.0) {
          out.push_back({"generator", i + 1,
                         "off-diagonal entry (" + std::to_string(i + 1) + "," +
                             std::to_string(j + 1) + ") is negative"});
        }
      }
    }
  }
  return report;
}

// Replaces the nominally-symmetric weights by their exact symmetric parts.
// Callers run this after validation so downstream integrators can assume
// bit-exact symmetry rather than 1e-12-level representational noise.
inline void symmetrize_weights(GameModel& model) {
  auto sym = [](Eigen::MatrixXd& M) {
    M = (0.5 * (M + M.transpose())).eval();
  };
  for (auto& M : model.Q) sym(M);
  for (auto& M : model.R11) sym(M);
  for (auto& M : model.R22) sym(M);
}

// Combined-control blocks for regime i (1-based).
inline StackedCoefficients stack(const GameModel& model, int i) {
  if (i < 1 || i > model.L)
    throw std::out_of_range("regime index " + std::to_string(i) +
                            " outside 1.." + std::to_string(model.L));
  const int k = i - 1;
  const int n = model.n, m1 = model.m1, m2 = model.m2;
  StackedCoefficients s;
  s.B.resize(n, m1 + m2);
  s.B << model.B1[k], model.B2[k];
  s.D.resize(n, m1 + m2);
  s.D << model.D1[k], model.D2[k];
  s.S.resize(m1 + m2, n);
  s.S << model.S1[k], model.S2[k];
  s.R.resize(m1 + m2, m1 + m2);
  s.R << model.R11[k], model.R12[k], model.R12[k].transpose(), model.R22[k];
  return s;
}

// ---------------------------------------------------------------------------
// JSON model files: {n, m1, m2, L, generator, A, B1, B2, C, D1, D2, Q, S1,
// S2, R11, R12, R22}, matrices as row-major nested arrays, families as arrays
// of matrices ordered by regime.
// ---------------------------------------------------------------------------

namespace detail {

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j,
                                        const std::string& where) {
  if (!j.is_array() || j.empty())
    throw ModelFormatError(where + ": expected a non-empty nested array");
  const std::size_t rows = j.size();
  std::size_t cols = 0;
  Eigen::MatrixXd M;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto& row = j.at(r);
    if (!row.is_array())
      throw ModelFormatError(where + ": row " + std::to_string(r + 1) +
                             " is not an array");
    if (r == 0) {
      cols = row.size();
      if (cols == 0)
        throw ModelFormatError(where + ": empty first row");
      M.resize(static_cast<Eigen::Index>(rows),
               static_cast<Eigen::Index>(cols));
    } else if (row.size() != cols) {
      throw ModelFormatError(where + ": ragged rows");
    }
    for (std::size_t c = 0; c < cols; ++c) {
      if (!row.at(c).is_number())
        throw ModelFormatError(where + ": non-numeric entry");
      M(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          row.at(c).get<double>();
    }
  }
  return M;
}

inline RegimeFamily family_from_json(const nlohmann::json& j,
                                     const std::string& field) {
  if (!j.contains(field))
    throw ModelFormatError("missing field '" + field + "'");
  const auto& arr = j.at(field);
  if (!arr.is_array() || arr.empty())
    throw ModelFormatError("field '" + field +
                           "' must be a non-empty array of matrices");
  RegimeFamily fam;
  fam.reserve(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i)
    fam.push_back(matrix_from_json(
        arr.at(i), field + "(" + std::to_string(i + 1) + ")"));
  return fam;
}

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& M) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < M.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < M.cols(); ++c) row.push_back(M(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline nlohmann::json family_to_json(const RegimeFamily& fam) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& M : fam) arr.push_back(matrix_to_json(M));
  return arr;
}

}  // namespace detail

inline GameModel model_from_json(const nlohmann::json& j) {
  GameModel model;
  for (const char* key : {"n", "m1", "m2", "L"})
    if (!j.contains(key) || !j.at(key).is_number_integer())
      throw ModelFormatError(std::string("missing or non-integer field '") +
                             key + "'");
  model.n = j.at("n").get<int>();
  model.m1 = j.at("m1").get<int>();
  model.m2 = j.at("m2").get<int>();
  model.L = j.at("L").get<int>();
  if (!j.contains("generator"))
    throw ModelFormatError("missing field 'generator'");
  model.generator = detail::matrix_from_json(j.at("generator"), "generator");
  model.A = detail::family_from_json(j, "A");
  model.B1 = detail::family_from_json(j, "B1");
  model.B2 = detail::family_from_json(j, "B2");
  model.C = detail::family_from_json(j, "C");
  model.D1 = detail::family_from_json(j, "D1");
  model.D2 = detail::family_from_json(j, "D2");
  model.Q = detail::family_from_json(j, "Q");
  model.S1 = detail::family_from_json(j, "S1");
  model.S2 = detail::family_from_json(j, "S2");
  model.R11 = detail::family_from_json(j, "R11");
  model.R12 = detail::family_from_json(j, "R12");
  model.R22 = detail::family_from_json(j, "R22");
  return model;
}

inline nlohmann::json model_to_json(const GameModel& model) {
  nlohmann::json j;
  j["n"] = model.n;
  j["m1"] = model.m1;
  j["m2"] = model.m2;
  j["L"] = model.L;
  j["generator"] = detail::matrix_to_json(model.generator);
  j["A"] = detail::family_to_json(model.A);
  j["B1"] = detail::family_to_json(model.B1);
  j["B2"] = detail::family_to_json(model.B2);
  j["C"] = detail::family_to_json(model.C);
  j["D1"] = detail::family_to_json(model.D1);
  j["D2"] = detail::family_to_json(model.D2);
  j["Q"] = detail::family_to_json(model.Q);
  j["S1"] = detail::family_to_json(model.S1);
  j["S2"] = detail::family_to_json(model.S2);
  j["R11"] = detail::family_to_json(model.R11);
  j["R12"] = detail::family_to_json(model.R12);
  j["R22"] = detail::family_to_json(model.R22);
  return j;
}

// Reads a model file. Stream failures throw FileIoError; parse and schema
// failures throw ModelFormatError. Structural invariants are NOT enforced
// here; call validate_model on the result.
inline GameModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileIoError("cannot open model file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ModelFormatError(path + ": " + e.what());
  }
  try {
    return model_from_json(j);
  } catch (const ModelFormatError& e) {
    throw ModelFormatError(path + ": " + e.what());
  }
}

}  // namespace slqg
