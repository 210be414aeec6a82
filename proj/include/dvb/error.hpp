#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dvb {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// A dataset or transcript line that does not match its schema.
class SchemaError : public Error {
 public:
  SchemaError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A structurally well-formed record that violates a data invariant.
class ValidationError : public Error {
 public:
  ValidationError(std::string sample_id, std::string field, const std::string& what)
      : Error("sample '" + sample_id + "', field '" + field + "': " + what),
        sample_id_(std::move(sample_id)),
        field_(std::move(field)) {}
  const std::string& sample_id() const noexcept { return sample_id_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::string sample_id_;
  std::string field_;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace dvb
