#pragma once

#include <stdexcept>
#include <string>

namespace matter {

// Base of all library errors. The CLI maps each subclass to an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Mismatched extents, even kernel sizes and other contract violations on
// array arguments.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Malformed files, missing paths, catalogs that cannot satisfy a sampler.
class DataError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced by a computation.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Bad configuration keys or values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace matter
