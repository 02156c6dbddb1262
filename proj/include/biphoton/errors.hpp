#pragma once

#include <stdexcept>

namespace biphoton {

// Precondition or argument outside the valid domain.
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

// Malformed or mismatched input data (files, frames, config text).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerical failure: rank deficiency, too few usable equations.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace biphoton
