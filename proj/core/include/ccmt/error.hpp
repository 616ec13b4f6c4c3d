#ifndef CCMT_ERROR_HPP_
#define CCMT_ERROR_HPP_

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ccmt {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that cannot be combined by the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Caller broke an operation precondition (wrong variant, non-scalar root,
/// missing node input, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid user-supplied value (labels, config keys, CLI arguments).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered in a loss or gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Filesystem or stream failure; carries the offending path.
class IoError : public Error {
 public:
  IoError(const std::string& path, const std::string& what)
      : Error(path + ": " + what), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Malformed IDX input. `offset` is the byte position where parsing failed.
class IngestionError : public IoError {
 public:
  IngestionError(const std::string& path, std::uint64_t offset, const std::string& what)
      : IoError(path, what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Malformed or incompatible model bundle file.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace ccmt

#endif  // CCMT_ERROR_HPP_
