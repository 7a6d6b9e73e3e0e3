#pragma once

#include <stdexcept>
#include <string>

namespace pvrnn {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes or ranges in a configuration do not agree.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation (e.g. sigma <= 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Adaptation vectors missing for a requested step.
class WindowError : public Error {
 public:
  using Error::Error;
};

/// A rollout record lacks the epsilon draws needed for gradient replay.
class ReplayError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated, or version-mismatched file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Loss or gradient became non-finite.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace pvrnn
