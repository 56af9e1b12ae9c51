#pragma once

#include <stdexcept>
#include <string>

namespace pat {

// Every error raised by the library derives from Error so callers can map
// categories onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class PipelineError : public Error {
 public:
  using Error::Error;
};

class IntegrityError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

class GradCheckError : public Error {
 public:
  using Error::Error;
};

// FPT1 container errors.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class NotFpt1Error : public FormatError {
 public:
  NotFpt1Error() : FormatError("not an FPT1 file") {}
};

class UnexpectedEndError : public FormatError {
 public:
  explicit UnexpectedEndError(const std::string& where)
      : FormatError("unexpected end of FPT1 data while reading " + where) {}
};

class UnsupportedDtypeError : public FormatError {
 public:
  explicit UnsupportedDtypeError(int code)
      : FormatError("unsupported dtype code " + std::to_string(code)) {}
};

}  // namespace pat
