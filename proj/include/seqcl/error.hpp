#pragma once

#include <stdexcept>
#include <string>

namespace seqcl {

/// Base of every error thrown by the library. The CLI maps the subclasses
/// onto exit codes (usage 1, data 2, numeric 3).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform for the named op.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf in a forward value, a diverging loss, or a failed probe.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or otherwise unreadable file or dataset.
class DataError : public Error {
 public:
  using Error::Error;
};

/// File written by an incompatible format version.
class VersionError : public DataError {
 public:
  using DataError::DataError;
};

/// Invalid configuration, arguments or hyper-parameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace seqcl
