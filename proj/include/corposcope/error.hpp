#pragma once

#include <stdexcept>
#include <string>

namespace corposcope {

// Runtime failure inside a stage (exit code 1).
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Malformed input, bad configuration, unresolvable references (exit code 2).
class ValidationError : public Error {
public:
  using Error::Error;
};

} // namespace corposcope
