#pragma once

#include <stdexcept>
#include <string>

namespace perfskill {

// Invalid arguments to an operation (bad level count, unknown profile...).
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Data cannot support the requested statistic (too few levels, empty cell...).
class AnalysisError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The system under test could not be driven at all.
class AdapterError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent procedural document.
class DocumentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Predicate evaluation failure. symbol() is set for unresolved names.
class EvalError : public std::runtime_error {
 public:
  EvalError(const std::string& what, std::string symbol = {})
      : std::runtime_error(what), symbol_(std::move(symbol)) {}
  const std::string& symbol() const noexcept { return symbol_; }

 private:
  std::string symbol_;
};

// Command-line misuse, including stage-order violations.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace perfskill
