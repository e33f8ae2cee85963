#pragma once

#include <stdexcept>
#include <string>

namespace slq {

// Base class for all library failures that are detectable at runtime and
// attributable to the problem data (as opposed to programming errors, which
// throw std::invalid_argument / std::logic_error).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operands do not conform (e.g. gain shape vs. system dimensions).
class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

// A least-squares system lost column rank; upstream this usually means the
// excitation plan does not span the symmetric-matrix space.
class RankDeficient : public Error {
 public:
  using Error::Error;
};

// The generalized Lyapunov operator is singular or inconsistent for the
// requested right-hand side (typical cause: closed loop not mean-square
// stable).
class SingularOperator : public Error {
 public:
  using Error::Error;
};

// R + D'PD is numerically singular in a policy-improvement or residual step.
class SingularInnerMatrix : public Error {
 public:
  using Error::Error;
};

// A gain that must be mean-square stabilizing is not.
class NotStabilizing : public Error {
 public:
  using Error::Error;
};

// An iteration budget was exhausted before the stopping rule fired.
class MaxIterationsExceeded : public Error {
 public:
  using Error::Error;
};

// A simulated state left the trust region (norm above the blow-up bound);
// the closed loop is unstable or dt is too coarse.
class NumericalBlowup : public Error {
 public:
  using Error::Error;
};

// The sample Gram matrix X X' of the identification data is rank deficient
// (unexciting trajectory, e.g. started at the origin).
class SingularGram : public Error {
 public:
  using Error::Error;
};

// No usable feedback gain for data collection: D lacks full column rank and
// the caller supplied none.
class NoValidGain : public Error {
 public:
  using Error::Error;
};

// Experiment configuration failed to parse or validate.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace slq
