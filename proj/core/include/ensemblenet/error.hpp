#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace enet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A value violates a documented precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A configuration cannot be resolved (unknown enum name, inconsistent fields).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Tensor or image dimensions do not match what an operation expects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Filesystem problem: missing directory, unreadable or unwritable file.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed dataset file name.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Feature matrices that should describe the same images do not line up.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint contents disagree with the model layout.
class LoadError : public Error {
 public:
  using Error::Error;
};

/// Binary file is truncated or carries a bad magic/version.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Training produced a NaN or infinite objective.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace enet
