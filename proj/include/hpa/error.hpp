#pragma once

#include <stdexcept>
#include <string>

namespace hpa {

// Malformed input text (JSON syntax, wrong value types).
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

// Well-formed input that violates a domain invariant. The message names the
// offending field.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what)
      : std::invalid_argument(what) {}
};

// NaN/Inf encountered or a numerical routine could not proceed.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what)
      : std::runtime_error(what) {}
};

}  // namespace hpa
