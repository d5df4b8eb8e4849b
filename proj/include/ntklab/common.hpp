#pragma once

#include <Eigen/Dense>

#include <cstdio>
#include <stdexcept>
#include <string>

namespace ntklab {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Row-major dense matrix; used where rows are the unit of access
/// (per-sample gradient rows, CSV emission).
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Base class for every error this library throws.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// numkit
struct NotSymmetric : Error { using Error::Error; };
struct NonFinite : Error { using Error::Error; };
struct ZeroVector : Error { using Error::Error; };
struct DegenerateX : Error { using Error::Error; };

// net
struct ShapeMismatch : Error { using Error::Error; };

// ntk
struct BudgetExceeded : Error { using Error::Error; };
struct NonPositiveEigenvalue : Error { using Error::Error; };
struct IdenticalParams : Error { using Error::Error; };

// landscape / trainer / analysis
struct DegeneratePair : Error { using Error::Error; };
struct EmptyTrajectory : Error { using Error::Error; };
struct InsufficientPoints : Error { using Error::Error; };
struct RateOutOfRange : Error { using Error::Error; };
struct MismatchedLengths : Error { using Error::Error; };

// datasets
struct BadMagic : Error { using Error::Error; };
struct TruncatedFile : Error { using Error::Error; };
struct CountMismatch : Error { using Error::Error; };
struct ClassAbsent : Error { using Error::Error; };

// experiment / cli
struct ConfigError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

/// Formats a double with 17 significant digits, the shortest count that
/// round-trips every binary64 value. All emitted numeric text uses this.
inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace ntklab
