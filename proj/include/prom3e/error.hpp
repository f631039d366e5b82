#pragma once

#include <stdexcept>
#include <string>

namespace prom3e {

// Broad failure classes. The CLI maps these onto its exit codes.
enum class ErrorKind {
  usage,    // bad configuration, flags, or arguments
  data,     // malformed or inconsistent input data
  numeric,  // non-finite values during computation
  io,       // file could not be opened / written
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

class ShapeError : public DataError {
 public:
  explicit ShapeError(const std::string& what) : DataError(what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

// Binary file decoding failures. Each has its own type so callers (and the
// C API) can tell them apart.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};
class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};
class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace prom3e
