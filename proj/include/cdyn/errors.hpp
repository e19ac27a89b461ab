#pragma once

#include <stdexcept>
#include <string>

namespace cdyn {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A computation produced a non-finite value.
class OverflowError : public Error {
 public:
  OverflowError(const std::string& what, long index) : Error(what), index_(index) {}
  /// Time index (0-based) at which the overflow occurred, or -1 if unknown.
  long index() const noexcept { return index_; }

 private:
  long index_;
};

/// An evolution rule violates its declared stability bound.
class StabilityError : public Error {
 public:
  using Error::Error;
};

/// A request that the dynamics cannot serve (e.g. recurrent form of a nonlinear readout).
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

/// Malformed configuration or out-of-range argument.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace cdyn
