#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace a2a {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

using Symbol = std::string;
using Word = std::vector<Symbol>;

enum class ErrorKind {
  symbol_not_in_alphabet,
  invalid_model,
  parse,
  dimension_mismatch,
  budget_exceeded,
  non_convergence,
  calibration,
  invalid_argument,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::symbol_not_in_alphabet: return "symbol-not-in-alphabet";
    case ErrorKind::invalid_model: return "invalid-model";
    case ErrorKind::parse: return "parse";
    case ErrorKind::dimension_mismatch: return "dimension-mismatch";
    case ErrorKind::budget_exceeded: return "budget-exceeded";
    case ErrorKind::non_convergence: return "non-convergence";
    case ErrorKind::calibration: return "calibration";
    case ErrorKind::invalid_argument: return "invalid-argument";
  }
  return "unknown";
}

// Base of every error raised by the library. The kind is stable and is what
// callers (the CLI in particular) dispatch on.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class SymbolError : public Error {
 public:
  explicit SymbolError(const Symbol& s)
      : Error(ErrorKind::symbol_not_in_alphabet, "symbol '" + s + "' is not in the alphabet"),
        symbol_(s) {}
  const Symbol& symbol() const noexcept { return symbol_; }

 private:
  Symbol symbol_;
};

class InvalidModelError : public Error {
 public:
  explicit InvalidModelError(const std::string& what) : Error(ErrorKind::invalid_model, what) {}
};

// `position` is a 0-based token index for tree strings and a 1-based line
// number for model files; `line` tells which one applies.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t position, bool line = false)
      : Error(ErrorKind::parse,
              what + (line ? " (line " : " (token ") + std::to_string(position) + ")"),
        position_(position),
        is_line_(line) {}
  std::size_t position() const noexcept { return position_; }
  bool is_line() const noexcept { return is_line_; }

 private:
  std::size_t position_;
  bool is_line_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(ErrorKind::dimension_mismatch, what) {}
};

class BudgetError : public Error {
 public:
  explicit BudgetError(const std::string& what) : Error(ErrorKind::budget_exceeded, what) {}
};

class ConvergenceError : public Error {
 public:
  explicit ConvergenceError(const std::string& what) : Error(ErrorKind::non_convergence, what) {}
};

class CalibrationError : public Error {
 public:
  explicit CalibrationError(const std::string& what) : Error(ErrorKind::calibration, what) {}
};

class ArgumentError : public Error {
 public:
  explicit ArgumentError(const std::string& what) : Error(ErrorKind::invalid_argument, what) {}
};

inline void require_dims(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

inline bool is_power_of_two(std::size_t x) { return x != 0 && (x & (x - 1)) == 0; }

inline std::size_t ceil_log2(std::size_t x) {
  std::size_t r = 0;
  while ((std::size_t{1} << r) < x) ++r;
  return r;
}

inline std::size_t next_power_of_two(std::size_t x) { return std::size_t{1} << ceil_log2(x); }

}  // namespace a2a
