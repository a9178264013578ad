#pragma once

#include <stdexcept>
#include <string>

namespace opendas {

// Base for everything the library throws on purpose.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Bad input: malformed files, broken invariants, inconsistent configs.
// The CLI maps these to exit status 2.
class ValidationError : public Error {
  public:
    using Error::Error;
};

class ShapeError : public ValidationError {
  public:
    using ValidationError::ValidationError;
};

class ParseError : public ValidationError {
  public:
    using ValidationError::ValidationError;
};

class IoError : public Error {
  public:
    using Error::Error;
};

} // namespace opendas
