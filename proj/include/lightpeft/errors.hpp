#pragma once

#include <stdexcept>
#include <string>

namespace lightpeft {

// Base of every error thrown by the library. Callers that only care about
// "something failed" catch this; the CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Token id, label or other index outside its valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

// Mask or pruning plan that disagrees with the model's head/FFN layout.
class LayoutError : public Error {
 public:
  using Error::Error;
};

// Violated precondition of an operation (wrong kind, missing grad, bad rate).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Dataset problems: empty eval split, fewer samples than one batch.
class DataError : public Error {
 public:
  using Error::Error;
};

// Config file parse errors and out-of-range values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Adapter checkpoint whose pruning plan does not fit the base model.
class CompatibilityError : public Error {
 public:
  using Error::Error;
};

// Checkpoint loading failures. Each failure mode has its own type so
// callers can distinguish a foreign file from a damaged one.
class LoadError : public Error {
 public:
  using Error::Error;
};

class BadMagicError : public LoadError {
 public:
  using LoadError::LoadError;
};

class BadVersionError : public LoadError {
 public:
  using LoadError::LoadError;
};

class ChecksumError : public LoadError {
 public:
  using LoadError::LoadError;
};

}  // namespace lightpeft
