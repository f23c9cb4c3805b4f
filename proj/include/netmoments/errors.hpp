#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace netmoments {

// Invalid parameters or configuration (CLI exit code 2).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Shape mismatch between sketches that must be merged.
class StructuralError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Requested operation is not supported at this size.
class UnsupportedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file; carries the 1-based line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// The error budget cannot be met within the sketch capacity (CLI exit code 3).
class InfeasibleBudget : public std::runtime_error {
 public:
  InfeasibleBudget(const std::string& what, std::uint64_t required_r1, std::uint64_t required_r2)
      : std::runtime_error(what), required_r1_(required_r1), required_r2_(required_r2) {}
  std::uint64_t required_r1() const noexcept { return required_r1_; }
  std::uint64_t required_r2() const noexcept { return required_r2_; }

 private:
  std::uint64_t required_r1_;
  std::uint64_t required_r2_;
};

}  // namespace netmoments
