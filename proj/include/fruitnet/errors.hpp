#pragma once

#include <stdexcept>
#include <string>

namespace fruitnet {

// Base of every error raised by the library. The CLI maps subclasses onto
// exit codes, so new error kinds should derive from one of these.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or a layer wired to the wrong input size.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN/Inf showed up, or a statistic left its valid domain.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameters or option combinations.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input files that do not follow the expected on-disk format.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A weight file is well formed but does not fit the model.
class LoadError : public Error {
 public:
  using Error::Error;
};

/// Dataset ingestion problems (missing directories, undecodable images).
class DataError : public Error {
 public:
  using Error::Error;
};

/// An operation was called in the wrong order (e.g. backward before forward).
class StateError : public Error {
 public:
  using Error::Error;
};

}  // namespace fruitnet
