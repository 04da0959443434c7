#pragma once

#include <stdexcept>
#include <string>

namespace rdlgn {

/// Base class for all errors raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration (bad field, violated cross-field constraint).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Missing or malformed input data, checkpoints included.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Shape or contract violation detected at runtime.
class ShapeError : public Error {
 public:
  using Error::Error;
};

}  // namespace rdlgn
