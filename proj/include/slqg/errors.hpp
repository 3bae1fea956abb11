#pragma once

#include <stdexcept>
#include <string>

namespace slqg {

// Thrown when the definiteness margin of the N-blocks drops below the
// configured floor during Riccati evaluation: the instance is not certified
// strongly regular at that point.
class RegularityLost : public std::runtime_error {
 public:
  RegularityLost(double time, int regime, double margin, double floor)
      : std::runtime_error("regularity lost at time " + std::to_string(time) +
                           ", regime " + std::to_string(regime) + ": margin " +
                           std::to_string(margin) + " below floor " +
                           std::to_string(floor)),
        time(time),
        regime(regime),
        margin(margin),
        floor(floor) {}

  double time;   // model time t at which the margin failed
  int regime;    // 1-based regime index
  double margin; // offending min(lambda_min(N11), -lambda_max(N22))
  double floor;  // configured positive floor
};

// Thrown when a horizon-extension iteration hits its cap without meeting the
// residual tolerance.
class NotConverged : public std::runtime_error {
 public:
  NotConverged(double horizon, double residual, double tol)
      : std::runtime_error("no steady solution after horizon " +
                           std::to_string(horizon) + ": residual " +
                           std::to_string(residual) + " > tol " +
                           std::to_string(tol)),
        horizon(horizon),
        residual(residual),
        tol(tol) {}

  double horizon;
  double residual;
  double tol;
};

// Thrown when a Lyapunov solve succeeds but the solution is not positive
// definite: the closed loop is certified unstable in mean square.
class NotStable : public std::runtime_error {
 public:
  explicit NotStable(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when a linear system that should determine a certificate is
// (numerically) singular; the stability question is undecided.
class SingularSystem : public std::runtime_error {
 public:
  explicit SingularSystem(const std::string& what)
      : std::runtime_error(what) {}
};

// Thrown by decay fitting when too few usable points remain above the
// floating-point floor.
class DegenerateFit : public std::runtime_error {
 public:
  explicit DegenerateFit(const std::string& what)
      : std::runtime_error(what) {}
};

// File could not be read or written (maps to the I/O exit code in the CLI).
class FileIoError : public std::runtime_error {
 public:
  explicit FileIoError(const std::string& what) : std::runtime_error(what) {}
};

// File was readable but does not parse into the model schema (maps to the
// validation exit code in the CLI).
class ModelFormatError : public std::runtime_error {
 public:
  explicit ModelFormatError(const std::string& what)
      : std::runtime_error(what) {}
};

}  // namespace slqg
