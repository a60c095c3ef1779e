#pragma once

#include <stdexcept>
#include <string>

namespace pplab {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed input or violated precondition.
struct ValidationError : Error {
  using Error::Error;
};

/// The requested attack cannot be constructed on this instance.
struct InfeasibleError : Error {
  using Error::Error;
};

/// A guarantee that should hold by construction did not.
struct VerificationError : Error {
  using Error::Error;
};

/// Optimizer ran out of iterations.
struct ConvergenceError : Error {
  ConvergenceError(const std::string& what, double grad_norm)
      : Error(what), grad_norm(grad_norm) {}
  double grad_norm;
};

}  // namespace pplab
