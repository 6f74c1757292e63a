#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nvpf {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Raised when a training or flow computation produces non-finite values.
// An op produced NaN or infinity.
class NonFiniteError : public DomainError {
 public:
  using DomainError::DomainError;
};

class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& what, long step = -1)
      : Error(what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed input. Line-oriented readers attach the 1-based line number;
// line() is 0 otherwise.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(what), line_(0) {}
  FormatError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ChecksumError : public Error {
 public:
  using Error::Error;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

}  // namespace nvpf
