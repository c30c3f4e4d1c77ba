#include "doctest.h"
#include "support.hpp"

using namespace perfskill;

TEST_CASE("predicate examples") {
  CHECK(evaluate_predicate("eta2 > 0.15", {{"eta2", 0.39}}, {}));
  CHECK(evaluate_predicate("cv >= 0 and cv <= 0", {{"cv", 0.0}}, {}));
  try {
    evaluate_predicate("missing_sym > 1", {}, {});
    FAIL("expected EvalError");
  } catch (const EvalError& e) {
    CHECK(e.symbol() == "missing_sym");
    CHECK(std::string(e.what()).find("missing_sym") != std::string::npos);
  }
}

TEST_CASE("grammar") {
  const SignalStore s = {{"x", 2}, {"y", 3}, {"a.b", 5}};
  const ReferenceData r = {{"k", 10.0}, {"name", std::string("text")}};
  auto eval = [&](const char* e) { return Expression::parse(e).evaluate(s, r); };
  CHECK(eval("x + y * 2") == 8);
  CHECK(eval("(x + y) * 2") == 10);
  CHECK(eval("-x + k / 4") == 0.5);
  CHECK(eval("min(x, y, 1) + max(x, y) + abs(-4)") == 8);
  CHECK(eval("a.b = 5") == 1);
  CHECK(eval("x != y && !(x > y) || false") == 1);
  CHECK(eval("not true or x ≤ 2") == 1);
  CHECK(eval("y ≥ 4") == 0);
  CHECK(eval("x == 2") == 1);
  // Signals shadow reference data.
  CHECK(Expression::parse("k").evaluate({{"k", 1}}, r) == 1);
  CHECK_THROWS_AS(eval("name > 1"), EvalError);
  CHECK_THROWS_AS(eval("x / 0"), EvalError);
  // Both sides of a connective are evaluated, so unknown names are never masked.
  CHECK_THROWS_AS(eval("false and nope > 1"), EvalError);
  CHECK_THROWS_AS(eval("true or nope > 1"), EvalError);
}

TEST_CASE("syntax errors and symbols") {
  CHECK_THROWS_AS(Expression::parse("x >"), DocumentError);
  CHECK_THROWS_AS(Expression::parse("(x"), DocumentError);
  CHECK_THROWS_AS(Expression::parse("x y"), DocumentError);
  CHECK_THROWS_AS(Expression::parse(""), DocumentError);
  CHECK(Expression::parse("max(a, b.c) > 0.1 and not d").symbols() ==
        std::set<std::string>{"a", "b.c", "d"});
  CHECK(Expression::parse("  x>1 ").text() == "  x>1 ");
}
