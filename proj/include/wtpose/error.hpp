#pragma once

#include <stdexcept>
#include <string>

namespace wtpose {

// Base of every error thrown by the library. Subclasses map onto the error
// kinds named by the operation contracts.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class AnnotationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class CorruptionError : public Error {
 public:
  using Error::Error;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

// Checkpoint/model mismatch (tensor missing, shape conflict, dtype conflict).
class LoadError : public Error {
 public:
  using Error::Error;
};

}  // namespace wtpose
