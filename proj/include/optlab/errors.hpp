#pragma once

#include <stdexcept>
#include <string>

namespace optlab {

// Shape/dimension mismatches between tensors.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Out-of-range token ids, class indices, node ids.
struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

// Non-finite values where finite ones are required.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid or inconsistent configuration.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Corpus/batch sizing problems (too small for the requested plan).
struct SizingError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// API misuse (e.g. backward from a non-scalar node).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// File and serialization failures.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace optlab
