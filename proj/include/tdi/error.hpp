// SPDX-License-Identifier: MIT
#pragma once

#include <stdexcept>
#include <string>

namespace tdi {

/// Failure category. The numeric value doubles as the CLI exit code.
enum class ErrorKind : int { usage = 2, data = 3, numerical = 4 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Bad argument value (negative penalty, rank out of range, level outside (0,1)).
class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& w) : Error(ErrorKind::usage, w) {}
};

/// Shapes that do not line up.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& w) : Error(ErrorKind::data, w) {}
};

/// Unreadable, malformed or degenerate input data.
class DataError : public Error {
 public:
  explicit DataError(const std::string& w) : Error(ErrorKind::data, w) {}
};

/// Singular systems, indefinite covariance estimates, failed factorizations.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& w) : Error(ErrorKind::numerical, w) {}
};

}  // namespace tdi
