#pragma once

#include <map>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <variant>

namespace perfskill {

using ReferenceValue = std::variant<double, std::string>;
using ReferenceData = std::map<std::string, ReferenceValue>;
using SignalStore = std::map<std::string, double>;

// Closed predicate grammar:
//   expr   := or
//   or     := and (("or" | "||") and)*
//   and    := not (("and" | "&&") not)*
//   not    := ("not" | "!") not | cmp
//   cmp    := sum (("<" | "<=" | "=" | "==" | "!=" | ">=" | ">") sum)?
//   sum    := prod (("+" | "-") prod)*
//   prod   := unary (("*" | "/") unary)*
//   unary  := "-" unary | atom
//   atom   := number | "true" | "false" | ident | ident "(" expr ("," expr)* ")" | "(" expr ")"
// Functions: min, max, abs. Identifiers may contain dots.
// Truth is a nonzero value; comparisons yield 1 or 0.
class Expression {
 public:
  struct Node;

  // Throws DocumentError on a syntax error.
  static Expression parse(std::string_view text);

  const std::string& text() const { return text_; }
  // Free identifiers, excluding function names.
  std::set<std::string> symbols() const;

  // Signals shadow reference data. Unknown or non-numeric symbols throw
  // EvalError carrying the symbol; so does division by zero.
  double evaluate(const SignalStore& signals, const ReferenceData& reference) const;
  bool test(const SignalStore& signals, const ReferenceData& reference) const {
    return evaluate(signals, reference) != 0.0;
  }

 private:
  std::string text_;
  std::shared_ptr<const Node> root_;
};

bool evaluate_predicate(std::string_view expr, const SignalStore& signals,
                        const ReferenceData& reference);

}  // namespace perfskill
