#pragma once

#include <stdexcept>
#include <string>

namespace mvsum {

// Base for every data or validation failure raised by the library. The CLI
// maps these to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input text or files.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Operand shapes or dimensions that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced or consumed where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace mvsum
