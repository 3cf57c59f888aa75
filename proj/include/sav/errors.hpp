#pragma once

#include <stdexcept>
#include <string>

namespace sav {

// Bad user input: malformed config files, unknown method names, inconsistent
// grid or tableau dimensions.  The CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerical failure while stepping: singular shifted solve, vanishing scalar
// denominator, non-finite field values.  The CLI maps this to exit code 3.
struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace sav
