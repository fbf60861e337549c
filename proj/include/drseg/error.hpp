#pragma once

#include <stdexcept>
#include <string>

namespace drseg {

// Root of every error thrown by the library. The CLI maps these to exit code 2.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
public:
  using Error::Error;
};

// Tensor file errors. Each failure mode of the reader has its own type.
class MalformedHeaderError : public IoError {
public:
  using IoError::IoError;
};

class UnsupportedDtypeError : public IoError {
public:
  using IoError::IoError;
};

class TruncatedPayloadError : public IoError {
public:
  using IoError::IoError;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

class DimensionError : public Error {
public:
  using Error::Error;
};

// Invalid arguments to an operation (out-of-range index, degenerate sizes, missing class...).
class ArgumentError : public Error {
public:
  using Error::Error;
};

// Raised when training produces a non-finite loss.
class DivergenceError : public Error {
public:
  using Error::Error;
};

} // namespace drseg
