#pragma once

#include <stdexcept>
#include <string>

namespace semsurf {

// Base for every error the library raises on purpose. Anything else escaping
// a stage is treated as an internal failure by the CLI.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad, missing or malformed input (files, arguments, contract violations).
class InputError : public Error {
 public:
  using Error::Error;
};

// Input was well formed but the geometry/numerics are degenerate.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

}  // namespace semsurf
