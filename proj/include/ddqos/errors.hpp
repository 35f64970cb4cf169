#pragma once

#include <stdexcept>
#include <string>

namespace ddqos {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A parameter or input violates a documented precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Matrix or series dimensions do not agree.
class DimensionMismatch : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

/// An iterative numerical method failed to meet its tolerance.
class NumericalFailure : public Error {
 public:
  using Error::Error;
};

/// Neither the proposed nor the corrective action keeps a QoS value in bounds.
class InfeasibleBounds : public Error {
 public:
  using Error::Error;
};

/// Fitted AR polynomial has a root on or outside the unit circle.
class UnstableFit : public Error {
 public:
  using Error::Error;
};

/// Closed loop has a pole with modulus >= 1.
class UnstableLoop : public Error {
 public:
  using Error::Error;
};

/// Experiment configuration is malformed or inconsistent.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// No reference scale in the search bracket meets the tracking target.
class CalibrationFailure : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidArgument(message);
}

}  // namespace detail
}  // namespace ddqos
