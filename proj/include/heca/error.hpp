#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace heca {

// Base of every error raised by the library. The CLI maps the concrete
// types onto process exit codes (see exit_code()).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

// Malformed input cell. Row and column are 1-based, counting the header row.
class ParseError : public ValidationError {
 public:
  ParseError(const std::string& what, std::size_t row, std::size_t column)
      : ValidationError(what + " (row " + std::to_string(row) + ", column " +
                        std::to_string(column) + ")"),
        row_(row),
        column_(column) {}

  std::size_t row() const noexcept { return row_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::size_t column_;
};

class InfeasibleError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Not enough realized history before the requested round.
class BurnInError : public Error {
 public:
  BurnInError(const std::string& what, std::size_t first_feasible)
      : Error(what + " (first feasible round index: " +
              std::to_string(first_feasible) + ")"),
        first_feasible_(first_feasible) {}

  std::size_t first_feasible() const noexcept { return first_feasible_; }

 private:
  std::size_t first_feasible_;
};

class ResourceError : public Error {
 public:
  using Error::Error;
};

// Raised when an iterative solver fails to certify its result.
class NumericalError : public Error {
 public:
  using Error::Error;
};

inline int exit_code(const std::exception& e) noexcept {
  if (dynamic_cast<const ValidationError*>(&e)) return 2;
  if (dynamic_cast<const BurnInError*>(&e)) return 3;
  if (dynamic_cast<const ResourceError*>(&e)) return 4;
  return 1;
}

}  // namespace heca
