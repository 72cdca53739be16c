#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mako {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Precondition violated by the caller (shapes, ranges, empty inputs).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// A derivative evaluation produced a non-finite entry.
class IntegrationError : public Error {
 public:
  IntegrationError(const std::string& what, std::ptrdiff_t component)
      : Error(what), component_(component) {}
  std::ptrdiff_t component() const noexcept { return component_; }

 private:
  std::ptrdiff_t component_;
};

/// Simulated state left the physically meaningful range.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Non-finite gradient or residual; the offending update was not applied.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or version-mismatched file.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace mako
