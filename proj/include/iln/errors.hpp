#pragma once

#include <stdexcept>
#include <string>

namespace iln {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// A query or value outside the domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration (flags, config files, params).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary or text file. Carries the byte offset where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

  [[nodiscard]] std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Violated API precondition (e.g. non-scalar loss, missing gradient).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Dataset is missing files or resolutions.
class DatasetError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Training diverged; `step` is the optimizer step that produced the value.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::size_t step)
      : Error(what + " at step " + std::to_string(step)), step_(step) {}

  [[nodiscard]] std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace iln
