#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ssmflow {

// Base for every error raised by the library. The CLI maps these onto exit
// codes: usage/config problems are 2, numeric failures are 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Graph evaluated with an input leaf that has no bound value.
class MissingInput : public Error {
 public:
  using Error::Error;
};

// Operation called out of order (e.g. backward before forward).
class StateError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// A graph node produced NaN; carries the primitive that produced it.
class NumericFault : public NumericError {
 public:
  NumericFault(std::string op, const std::string& what)
      : NumericError(what), op_(std::move(op)) {}
  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
};

class InvalidVariance : public NumericError {
 public:
  using NumericError::NumericError;
};

class InvalidParameter : public NumericError {
 public:
  using NumericError::NumericError;
};

class DegenerateDiffusion : public NumericError {
 public:
  DegenerateDiffusion(std::size_t grid_index, const std::string& what)
      : NumericError(what), grid_index_(grid_index) {}
  std::size_t grid_index() const noexcept { return grid_index_; }

 private:
  std::size_t grid_index_;
};

class SimulationFailure : public NumericError {
 public:
  using NumericError::NumericError;
};

// sigma head of a flow layer hit exactly 0 or 1.
class SaturationError : public NumericError {
 public:
  using NumericError::NumericError;
};

class StuckChain : public NumericError {
 public:
  using NumericError::NumericError;
};

class TrainingFailure : public NumericError {
 public:
  TrainingFailure(std::size_t iteration, const std::string& what)
      : NumericError(what), iteration_(iteration) {}
  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

}  // namespace ssmflow
