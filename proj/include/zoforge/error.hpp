#pragma once

#include <stdexcept>
#include <string>

namespace zoforge {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Layer shapes do not compose, or inputs do not match the model.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A NaN or Inf appeared inside a forward or backward pass.
class NumericError : public Error {
 public:
  using Error::Error;
};

// forward_from() was handed a cache whose upstream parameters or batch differ
// from the ones it is being reused with.
class StaleCacheError : public Error {
 public:
  using Error::Error;
};

class UnsupportedLayerError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Explicit diffusion step violates nu * dt / dx^2 <= 1/2.
class StabilityError : public Error {
 public:
  using Error::Error;
};

}  // namespace zoforge
