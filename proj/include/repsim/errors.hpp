#pragma once

#include <stdexcept>
#include <string>

namespace repsim {

// Bad argument values (ranks out of range, empty lists, invalid configs).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Inconsistent dimensions between operands.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Input is valid in shape but the requested quantity is undefined for it
// (zero norm, zero denominator, all-tied ranks, ...).
class DegenerateInputError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Iterative kernel failed or produced non-finite output.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace repsim
