#include "perfskill/expression.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <vector>

#include "perfskill/error.hpp"

namespace perfskill {

enum class Op { num, sym, call, neg, not_, and_, or_, add, sub, mul, div, lt, le, eq, ne, ge, gt };

struct Expression::Node {
  Op op = Op::num;
  double value = 0.0;
  std::string name;
  std::vector<std::shared_ptr<const Node>> args;
};

namespace {

using NodePtr = std::shared_ptr<const Expression::Node>;

NodePtr make(Op op, std::vector<NodePtr> args = {}, std::string name = {}, double v = 0.0) {
  auto n = std::make_shared<Expression::Node>();
  n->op = op;
  n->args = std::move(args);
  n->name = std::move(name);
  n->value = v;
  return n;
}

class Parser {
 public:
  explicit Parser(std::string_view s) : s_(s) {}

  NodePtr parse() {
    auto n = parse_or();
    skip_ws();
    if (pos_ != s_.size()) fail("unexpected '" + std::string(s_.substr(pos_, 1)) + "'");
    return n;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    throw DocumentError("expression \"" + std::string(s_) + "\": " + msg + " at offset " +
                        std::to_string(pos_));
  }

  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  bool eat(std::string_view tok) {
    skip_ws();
    if (s_.substr(pos_, tok.size()) != tok) return false;
    pos_ += tok.size();
    return true;
  }

  static bool ident_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
  }

  // Keyword match that does not swallow the prefix of a longer identifier.
  bool eat_word(std::string_view w) {
    skip_ws();
    if (s_.substr(pos_, w.size()) != w) return false;
    if (pos_ + w.size() < s_.size() && ident_char(s_[pos_ + w.size()])) return false;
    pos_ += w.size();
    return true;
  }

  NodePtr parse_or() {
    auto lhs = parse_and();
    while (eat_word("or") || eat("||")) lhs = make(Op::or_, {lhs, parse_and()});
    return lhs;
  }

  NodePtr parse_and() {
    auto lhs = parse_not();
    while (eat_word("and") || eat("&&")) lhs = make(Op::and_, {lhs, parse_not()});
    return lhs;
  }

  NodePtr parse_not() {
    skip_ws();
    if (eat_word("not")) return make(Op::not_, {parse_not()});
    if (s_.substr(pos_, 2) != "!=" && eat("!")) return make(Op::not_, {parse_not()});
    return parse_cmp();
  }

  NodePtr parse_cmp() {
    auto lhs = parse_sum();
    static const std::pair<std::string_view, Op> ops[] = {
        {"<=", Op::le}, {">=", Op::ge}, {"==", Op::eq}, {"!=", Op::ne},
        {"\xE2\x89\xA4", Op::le}, {"\xE2\x89\xA5", Op::ge}, {"<", Op::lt},
        {">", Op::gt},  {"=", Op::eq}};
    for (const auto& [tok, op] : ops) {
      if (eat(tok)) return make(op, {lhs, parse_sum()});
    }
    return lhs;
  }

  NodePtr parse_sum() {
    auto lhs = parse_prod();
    for (;;) {
      if (eat("+")) {
        lhs = make(Op::add, {lhs, parse_prod()});
      } else if (eat("-")) {
        lhs = make(Op::sub, {lhs, parse_prod()});
      } else {
        return lhs;
      }
    }
  }

  NodePtr parse_prod() {
    auto lhs = parse_unary();
    for (;;) {
      if (eat("*")) {
        lhs = make(Op::mul, {lhs, parse_unary()});
      } else if (eat("/")) {
        lhs = make(Op::div, {lhs, parse_unary()});
      } else {
        return lhs;
      }
    }
  }

  NodePtr parse_unary() {
    if (eat("-")) return make(Op::neg, {parse_unary()});
    return parse_atom();
  }

  NodePtr parse_atom() {
    skip_ws();
    if (pos_ >= s_.size()) fail("unexpected end");
    if (eat("(")) {
      auto n = parse_or();
      if (!eat(")")) fail("expected ')'");
      return n;
    }
    const char c = s_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      double v = 0.0;
      auto res = std::from_chars(s_.data() + pos_, s_.data() + s_.size(), v);
      if (res.ec != std::errc()) fail("bad number");
      pos_ = static_cast<std::size_t>(res.ptr - s_.data());
      return make(Op::num, {}, {}, v);
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      const std::size_t start = pos_;
      while (pos_ < s_.size() && ident_char(s_[pos_])) ++pos_;
      std::string name(s_.substr(start, pos_ - start));
      if (name == "true") return make(Op::num, {}, {}, 1.0);
      if (name == "false") return make(Op::num, {}, {}, 0.0);
      if (name == "and" || name == "or" || name == "not") fail("misplaced '" + name + "'");
      if (eat("(")) {
        if (name != "min" && name != "max" && name != "abs") fail("unknown function " + name);
        std::vector<NodePtr> args{parse_or()};
        while (eat(",")) args.push_back(parse_or());
        if (!eat(")")) fail("expected ')'");
        if (name == "abs" ? args.size() != 1 : args.size() < 2) {
          fail("wrong argument count for " + name);
        }
        return make(Op::call, std::move(args), std::move(name));
      }
      return make(Op::sym, {}, std::move(name));
    }
    fail("unexpected '" + std::string(1, c) + "'");
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

void collect(const Expression::Node& n, std::set<std::string>& out) {
  if (n.op == Op::sym) out.insert(n.name);
  for (const auto& a : n.args) collect(*a, out);
}

double eval(const Expression::Node& n, const SignalStore& sig, const ReferenceData& ref) {
  auto arg = [&](std::size_t i) { return eval(*n.args[i], sig, ref); };
  switch (n.op) {
    case Op::num:
      return n.value;
    case Op::sym: {
      if (auto it = sig.find(n.name); it != sig.end()) return it->second;
      auto it = ref.find(n.name);
      if (it == ref.end()) throw EvalError("unresolved symbol " + n.name, n.name);
      if (const double* d = std::get_if<double>(&it->second)) return *d;
      throw EvalError("symbol " + n.name + " is not numeric", n.name);
    }
    case Op::call: {
      if (n.name == "abs") return std::fabs(arg(0));
      double acc = arg(0);
      for (std::size_t i = 1; i < n.args.size(); ++i) {
        acc = n.name == "min" ? std::min(acc, arg(i)) : std::max(acc, arg(i));
      }
      return acc;
    }
    case Op::neg:
      return -arg(0);
    case Op::not_:
      return arg(0) == 0.0 ? 1.0 : 0.0;
    // Both sides are always evaluated so an unresolved symbol is never hidden
    // by short-circuiting.
    case Op::and_: {
      const double a = arg(0), b = arg(1);
      return a != 0.0 && b != 0.0 ? 1.0 : 0.0;
    }
    case Op::or_: {
      const double a = arg(0), b = arg(1);
      return a != 0.0 || b != 0.0 ? 1.0 : 0.0;
    }
    case Op::add:
      return arg(0) + arg(1);
    case Op::sub:
      return arg(0) - arg(1);
    case Op::mul:
      return arg(0) * arg(1);
    case Op::div: {
      const double d = arg(1);
      if (d == 0.0) throw EvalError("division by zero");
      return arg(0) / d;
    }
    case Op::lt:
      return arg(0) < arg(1) ? 1.0 : 0.0;
    case Op::le:
      return arg(0) <= arg(1) ? 1.0 : 0.0;
    case Op::eq:
      return arg(0) == arg(1) ? 1.0 : 0.0;
    case Op::ne:
      return arg(0) != arg(1) ? 1.0 : 0.0;
    case Op::ge:
      return arg(0) >= arg(1) ? 1.0 : 0.0;
    case Op::gt:
      return arg(0) > arg(1) ? 1.0 : 0.0;
  }
  return 0.0;
}

}  // namespace

Expression Expression::parse(std::string_view text) {
  Expression e;
  e.text_ = std::string(text);
  e.root_ = Parser(e.text_).parse();
  return e;
}

std::set<std::string> Expression::symbols() const {
  std::set<std::string> out;
  if (root_) collect(*root_, out);
  return out;
}

double Expression::evaluate(const SignalStore& signals, const ReferenceData& reference) const {
  if (!root_) throw EvalError("empty expression");
  return eval(*root_, signals, reference);
}

bool evaluate_predicate(std::string_view expr, const SignalStore& signals,
                        const ReferenceData& reference) {
  return Expression::parse(expr).test(signals, reference);
}

}  // namespace perfskill
