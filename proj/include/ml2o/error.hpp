#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ml2o {

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

// Raised when an unroll produces a non-finite loss or gradient.
class NonFiniteError : public Error {
 public:
  NonFiniteError(const std::string& what, std::size_t step)
      : Error(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace ml2o
