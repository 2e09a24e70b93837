#pragma once

#include <stdexcept>
#include <string>

namespace gelp {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument (shape, range, configuration) was violated.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity appeared where only finite values are allowed.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// Autocorrelation was not positive definite; no all-pole envelope exists.
class DegenerateSpectrum : public Error {
 public:
  using Error::Error;
};

/// Malformed or incompatible file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidArgument(message);
}

}  // namespace gelp
