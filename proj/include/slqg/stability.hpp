#pragma once

// Mean-square (L2) stability certification for regime-switching closed loops
// via coupled Lyapunov equations, plus the exponential decay envelope that a
// certificate implies.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "slqg/errors.hpp"
#include "slqg/model.hpp"

namespace slqg {

struct ClosedLoop {
  RegimeFamily A_cl;  // A(i) + B(i) Theta(i)
  RegimeFamily C_cl;  // C(i) + D(i) Theta(i)
};

struct LyapunovCertificate {
  RegimeFamily Sigma;  // positive definite solutions, one per regime
  double mu1 = 0.0;    // min_i lmin(W_i) / (2 max_i lmax(Sigma_i))
  double residual = 0.0;  // worst Frobenius defect of the solved equations
};

enum class StabilityVerdict { Certified, NotStable, Undecided };

struct StabilityReport {
  StabilityVerdict verdict = StabilityVerdict::Undecided;
  std::optional<LyapunovCertificate> certificate;
  std::string detail;
};

struct DecayBound {
  double K_est = 0.0;
  double mu_est = 0.0;
};

inline ClosedLoop closed_loop(const GameModel& model,
                              const RegimeFamily& theta) {
  ClosedLoop cl;
  cl.A_cl.resize(model.L);
  cl.C_cl.resize(model.L);
  for (int k = 0; k < model.L; ++k) {
    const auto s = stack(model, k + 1);
    cl.A_cl[k] = model.A[k] + s.B * theta[k];
    cl.C_cl[k] = model.C[k] + s.D * theta[k];
  }
  return cl;
}

// Left side of the coupled Lyapunov system applied to a candidate family:
//   lhs_i = A_cl(i)' S(i) + S(i) A_cl(i) + C_cl(i)' S(i) C_cl(i)
//           + sum_j pi_ij S(j).
inline RegimeFamily lyapunov_lhs(const Eigen::MatrixXd& generator,
                                 const RegimeFamily& A_cl,
                                 const RegimeFamily& C_cl,
                                 const RegimeFamily& Sigma) {
  const int L = static_cast<int>(A_cl.size());
  RegimeFamily out(L);
  for (int i = 0; i < L; ++i) {
    Eigen::MatrixXd lhs = A_cl[i].transpose() * Sigma[i] +
                          Sigma[i] * A_cl[i] +
                          C_cl[i].transpose() * Sigma[i] * C_cl[i];
    for (int j = 0; j < L; ++j) lhs += generator(i, j) * Sigma[j];
    out[i] = 0.5 * (lhs + lhs.transpose());
  }
  return out;
}

namespace detail {

// Symmetric-matrix coordinates: a symmetric n x n matrix is stored as its
// upper triangle read row by row (q = n(n+1)/2 numbers).  pack/unpack are
// mutually inverse linear bijections.
inline int sym_dim(int n) { return n * (n + 1) / 2; }

inline Eigen::VectorXd sym_pack(const Eigen::MatrixXd& M) {
  const int n = static_cast<int>(M.rows());
  Eigen::VectorXd v(sym_dim(n));
  int b = 0;
  for (int r = 0; r < n; ++r)
    for (int c = r; c < n; ++c) v(b++) = M(r, c);
  return v;
}

inline Eigen::MatrixXd sym_unpack(const Eigen::VectorXd& v, int n) {
  Eigen::MatrixXd M(n, n);
  int b = 0;
  for (int r = 0; r < n; ++r)
    for (int c = r; c < n; ++c) {
      M(r, c) = v(b);
      M(c, r) = v(b);
      ++b;
    }
  return M;
}

}  // namespace detail

// Solve the coupled Lyapunov system  lyapunov_lhs(Sigma) = -W  for the
// symmetric family Sigma.  Throws SingularSystem when the linear operator is
// rank deficient (spectral abscissa on the boundary); otherwise returns the
// unique solution and optionally reports the achieved residual
// max_i ||lhs_i + W_i||_F.
inline RegimeFamily solve_coupled_lyapunov(const Eigen::MatrixXd& generator,
                                           const RegimeFamily& A_cl,
                                           const RegimeFamily& C_cl,
                                           const RegimeFamily& W,
                                           double* residual_out = nullptr) {
  const int L = static_cast<int>(A_cl.size());
  const int n = static_cast<int>(A_cl[0].rows());
  const int q = detail::sym_dim(n);
  const int dim = L * q;

  Eigen::MatrixXd op(dim, dim);
  RegimeFamily basis(L, Eigen::MatrixXd::Zero(n, n));
  for (int j = 0; j < L; ++j) {
    for (int b = 0; b < q; ++b) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(q);
      e(b) = 1.0;
      basis[j] = detail::sym_unpack(e, n);
      const RegimeFamily img = lyapunov_lhs(generator, A_cl, C_cl, basis);
      for (int i = 0; i < L; ++i)
        op.block(i * q, j * q + b, q, 1) = detail::sym_pack(img[i]);
      basis[j].setZero();
    }
  }

  Eigen::VectorXd rhs(dim);
  for (int i = 0; i < L; ++i)
    rhs.segment(i * q, q) = detail::sym_pack(Eigen::MatrixXd(-W[i]));

  Eigen::FullPivLU<Eigen::MatrixXd> lu(op);
  if (!lu.isInvertible())
    throw SingularSystem(
        "coupled Lyapunov operator is singular; stability is undecidable at "
        "this tolerance");
  const Eigen::VectorXd x = lu.solve(rhs);

  RegimeFamily Sigma(L);
  for (int i = 0; i < L; ++i)
    Sigma[i] = detail::sym_unpack(x.segment(i * q, q), n);

  if (residual_out != nullptr) {
    const RegimeFamily lhs = lyapunov_lhs(generator, A_cl, C_cl, Sigma);
    double res = 0.0;
    for (int i = 0; i < L; ++i) res = std::max(res, (lhs[i] + W[i]).norm());
    *residual_out = res;
  }
  return Sigma;
}

// Decide whether the state feedback family theta renders the closed loop
// mean-square stable.  Solves the coupled Lyapunov system with W = I; a
// positive definite solution certifies stability, a solution with a
// non-positive direction refutes it, and a singular or badly conditioned
// system leaves the question undecided.
inline StabilityReport is_stabilizer(const GameModel& model,
                                     const RegimeFamily& theta) {
  StabilityReport report;
  const ClosedLoop cl = closed_loop(model, theta);
  RegimeFamily W(model.L, Eigen::MatrixXd::Identity(model.n, model.n));

  RegimeFamily Sigma;
  double residual = 0.0;
  try {
    Sigma = solve_coupled_lyapunov(model.generator, cl.A_cl, cl.C_cl, W,
                                   &residual);
  } catch (const SingularSystem& e) {
    report.verdict = StabilityVerdict::Undecided;
    report.detail = e.what();
    return report;
  }

  double min_eig = std::numeric_limits<double>::infinity();
  double max_eig = -std::numeric_limits<double>::infinity();
  double max_norm = 0.0;
  int worst_regime = 0;
  for (int i = 0; i < model.L; ++i) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
        Sigma[i], Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    if (lo < min_eig) {
      min_eig = lo;
      worst_regime = i + 1;
    }
    max_eig = std::max(max_eig, hi);
    max_norm = std::max(max_norm, Sigma[i].norm());
  }

  if (residual > 1e-6 * (1.0 + max_norm)) {
    report.verdict = StabilityVerdict::Undecided;
    std::ostringstream os;
    os << "Lyapunov solve residual " << residual
       << " too large to certify either way";
    report.detail = os.str();
    return report;
  }

  if (min_eig <= 0.0) {
    report.verdict = StabilityVerdict::NotStable;
    std::ostringstream os;
    os << "Lyapunov solution indefinite in regime " << worst_regime
       << " (min eigenvalue " << min_eig << ")";
    report.detail = os.str();
    return report;
  }

  LyapunovCertificate cert;
  cert.Sigma = std::move(Sigma);
  cert.residual = residual;
  cert.mu1 = 1.0 / (2.0 * max_eig);  // lmin(W) = 1 for W = I
  report.verdict = StabilityVerdict::Certified;
  report.certificate = std::move(cert);
  report.detail = "certified";
  return report;
}

// Exponential envelope implied by a certificate:
//   E|X(t)|^2 <= K_est * exp(-mu_est * t) * |x0|^2.
inline DecayBound decay_bound(const LyapunovCertificate& cert) {
  double min_eig = std::numeric_limits<double>::infinity();
  double max_eig = -std::numeric_limits<double>::infinity();
  for (const auto& S : cert.Sigma) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
        S, Eigen::EigenvaluesOnly);
    min_eig = std::min(min_eig, es.eigenvalues().minCoeff());
    max_eig = std::max(max_eig, es.eigenvalues().maxCoeff());
  }
  DecayBound b;
  b.K_est = max_eig / min_eig;
  b.mu_est = 2.0 * cert.mu1;
  return b;
}

}  // namespace slqg
