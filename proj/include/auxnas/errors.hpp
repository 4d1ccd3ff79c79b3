#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace auxnas {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition was not met by the caller.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// A forward value became NaN or infinite.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss. The network has been restored to
/// the last finite snapshot when this is thrown from the trainer.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// An internal invariant failed; `name()` identifies which one.
class InvariantViolation : public Error {
 public:
  InvariantViolation(std::string name, const std::string& detail)
      : Error(name + ": " + detail), name_(std::move(name)) {}
  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

}  // namespace auxnas
