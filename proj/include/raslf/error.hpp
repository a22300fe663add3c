#pragma once

#include <stdexcept>
#include <string>

namespace raslf {

/// Base class for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand extents do not satisfy an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable files, inconsistent containers and checkpoints.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, divergence, failed numerical self-checks.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values or option combinations.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace raslf
