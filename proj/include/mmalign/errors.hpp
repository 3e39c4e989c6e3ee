#pragma once

#include <stdexcept>
#include <string>

namespace mmalign {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand extents do not conform.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or degenerate input such as a zero-norm vector.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

class LoadError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace mmalign
