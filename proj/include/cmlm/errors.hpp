#pragma once

#include <stdexcept>
#include <string>

namespace cmlm {

// Base class for every error raised by the library. The CLI maps
// UsageError to exit code 1 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Caller violated a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// A forward value or gradient became NaN/Inf.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

// Input without enough structure (all-zero matrix, rank deficiency, ...).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

// Corrupt or truncated files.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

// Checkpoint or config that does not match what the caller expects.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace cmlm
