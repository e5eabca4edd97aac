#pragma once

#include <stdexcept>
#include <string>

namespace restv2 {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible. The message names both shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A configuration violates a divisibility or range constraint.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Token/image layout mismatch (n != H*W, inconsistent window metadata).
class LayoutError : public Error {
 public:
  using Error::Error;
};

/// Malformed weight or tensor file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. backward() on a non-scalar.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace restv2
