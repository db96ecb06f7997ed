#pragma once

#include <stdexcept>
#include <string>

namespace patrac {

// Dimension disagreement between shapes, parameter sets, masks, or data.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Invalid configuration value or malformed option.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Non-finite value produced during optimisation or sampling.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input file.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Chain whose evaluations carry no variance anywhere on the grid.
struct DegenerateChainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Hyperparameter fit ended worse than its reference point.
struct FitError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace patrac
