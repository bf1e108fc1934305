#pragma once

#include <stdexcept>
#include <string>

namespace calm {

/// Precondition violated by a caller-supplied value.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A file could not be opened, read, or written.
class FileError : public std::runtime_error {
 public:
  FileError(std::string path, const std::string& what);
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// A document parsed but a field is missing, mistyped, or out of range.
class SchemaError : public std::runtime_error {
 public:
  SchemaError(std::string field, const std::string& what);
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Two values that must share a dimension do not.
class DimensionError : public std::runtime_error {
 public:
  DimensionError(std::string field, const std::string& what);
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// A weighted point set has no mass left to average.
class DegeneratePoint : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace calm
