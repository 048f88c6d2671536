#pragma once

#include <stdexcept>
#include <string>

namespace anonqcd {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Operation requested on a model kind it does not support (e.g. Gaussian
// groups passed to a type-based routine).
class UnsupportedKind : public Error {
 public:
  using Error::Error;
};

// Batch has zero likelihood under both hypotheses.
class InvalidBatch : public Error {
 public:
  using Error::Error;
};

class NoConvergence : public Error {
 public:
  NoConvergence(const std::string& what, double best_residual)
      : Error(what), best_residual_(best_residual) {}
  double best_residual() const noexcept { return best_residual_; }

 private:
  double best_residual_;
};

class DegenerateModel : public Error {
 public:
  using Error::Error;
};

class CalibrationError : public Error {
 public:
  using Error::Error;
};

class CapacityError : public Error {
 public:
  using Error::Error;
};

class CensoringError : public Error {
 public:
  using Error::Error;
};

// Stepping a detector that has already stopped.
class StoppedDetector : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace anonqcd
