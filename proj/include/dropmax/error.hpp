#pragma once

#include <stdexcept>
#include <string>

namespace dropmax {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand extents do not line up (matmul inner extents, broadcast shapes).
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed file header or magic number.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Truncated payload.
class LengthError : public Error {
 public:
  using Error::Error;
};

/// Request exceeds a hard size bound (e.g. a 2^K enumeration).
class SizeError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace dropmax
