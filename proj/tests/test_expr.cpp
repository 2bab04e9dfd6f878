#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <thread>

#include "tfh/expr.hpp"

using namespace tfh;

TEST(Parse, ThermostatField) {
  const Expr e = parse_expr("-0.2*x + 5", {"x"});
  EXPECT_EQ(e.kind(), Expr::Kind::Add);
  EXPECT_EQ(e.child(0).kind(), Expr::Kind::Mul);
  EXPECT_DOUBLE_EQ(e.child(0).child(0).value(), -0.2);
  EXPECT_EQ(e.child(0).child(1).name(), "x");
  EXPECT_DOUBLE_EQ(e.child(1).value(), 5.0);
}

TEST(Parse, ConstantLiteral) {
  const Expr e = parse_expr("0", {});
  EXPECT_TRUE(e.is_constant(0.0));
}

TEST(Parse, CarSwitchingFunction) {
  const Expr e = parse_expr("(v-10)/5", {"q", "v"});
  ASSERT_EQ(e.kind(), Expr::Kind::Div);
  ASSERT_EQ(e.child(0).kind(), Expr::Kind::Sub);
  EXPECT_EQ(e.child(0).child(0).index(), 1u);
  EXPECT_DOUBLE_EQ(e.child(0).child(1).value(), 10.0);
  EXPECT_DOUBLE_EQ(e.child(1).value(), 5.0);
}

TEST(Parse, PrecedenceAndAssociativity) {
  const std::vector<double> p{2.0, 3.0};
  EXPECT_DOUBLE_EQ(evaluate(parse_expr("a - b - 1", {"a", "b"}), p), -2.0);
  EXPECT_DOUBLE_EQ(evaluate(parse_expr("a / b / 2", {"a", "b"}), p), 2.0 / 3.0 / 2.0);
  EXPECT_DOUBLE_EQ(evaluate(parse_expr("-a^2", {"a", "b"}), p), -4.0);
  EXPECT_DOUBLE_EQ(evaluate(parse_expr("a^2^1", {"a", "b"}), p), 4.0);
  EXPECT_DOUBLE_EQ(evaluate(parse_expr("2*a + b*3", {"a", "b"}), p), 13.0);
  EXPECT_DOUBLE_EQ(evaluate(parse_expr("1.5e1 + 2E-1", {}), p), 15.2);
  EXPECT_DOUBLE_EQ(evaluate(parse_expr("sqrt(b*3) + exp(0) + cos(0) + sin(0)", {"a", "b"}), p), 5.0);
}

TEST(Parse, ErrorsCarryOffsets) {
  try {
    parse_expr("x + * 2", {"x"});
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 4u);
  }
  try {
    parse_expr("x + y", {"x"});
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 4u);
    EXPECT_NE(std::string(e.what()).find("y"), std::string::npos);
  }
  EXPECT_THROW(parse_expr("tan(x)", {"x"}), ParseError);
  EXPECT_THROW(parse_expr("(x", {"x"}), ParseError);
  EXPECT_THROW(parse_expr("x^0.5", {"x"}), ParseError);
  EXPECT_THROW(parse_expr("x^y", {"x", "y"}), ParseError);
  EXPECT_THROW(parse_expr("", {"x"}), ParseError);
  EXPECT_THROW(parse_expr("x 2", {"x"}), ParseError);
}

TEST(Eval, HandExamples) {
  const ExprFunction fa({"x"}, {parse_expr("-0.2*x + 5", {"x"})});
  EXPECT_DOUBLE_EQ(fa.eval_scalar(std::vector<double>{15.0}), 2.0);
  const ExprFunction id({"a", "b"}, {parse_expr("a", {"a", "b"}), parse_expr("b", {"a", "b"})});
  EXPECT_EQ(id.eval(std::vector<double>{1.25, -7.0}), (std::vector<double>{1.25, -7.0}));
  const ExprFunction gamma({"x"}, {parse_expr("x^2/(1 + x^2)", {"x"})});
  EXPECT_DOUBLE_EQ(gamma.eval_scalar(std::vector<double>{-1.0}), 0.5);
}

TEST(Eval, NonFiniteReportsPath) {
  const ExprFunction f({"x"}, {parse_expr("1 + 1/x", {"x"})});
  try {
    f.eval(std::vector<double>{0.0});
    FAIL();
  } catch (const EvalError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("output[0]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("div"), std::string::npos) << msg;
  }
  const ExprFunction g({"x"}, {parse_expr("sqrt(x)", {"x"})});
  EXPECT_THROW(g.eval(std::vector<double>{-1.0}), EvalError);
  EXPECT_THROW(f.eval(std::vector<double>{1.0, 2.0}), std::invalid_argument);
}

TEST(Eval, RejectsUndeclaredIndices) {
  const auto vars = make_variables(std::vector<std::string>{"a", "b"});
  EXPECT_THROW(ExprFunction({"a"}, {vars[1]}), std::invalid_argument);
  EXPECT_THROW(ExprFunction({"a", "c"}, {vars[1]}), std::invalid_argument);
}

TEST(Derivative, Examples) {
  EXPECT_TRUE(derivative(parse_expr("-0.2*x + 5", {"x"}), 0).is_constant(-0.2));
  const Expr g = parse_expr("2*p^2/(1 + p^2)", {"p"});
  const Expr dg = derivative(g, 0);
  EXPECT_DOUBLE_EQ(evaluate(dg, std::vector<double>{0.0}), 0.0);
  for (double p : {-2.0, -0.3, 0.7, 1.9})
    EXPECT_NEAR(evaluate(dg, std::vector<double>{p}), 4.0 * p / std::pow(1.0 + p * p, 2), 1e-14);
  const ExprFunction prod({"a", "b"}, {parse_expr("a*b", {"a", "b"})});
  const auto jac = prod.jacobian().eval(std::vector<double>{3.0, -4.0});
  EXPECT_EQ(jac, (std::vector<double>{-4.0, 3.0}));
}

TEST(Derivative, TwiceGivesHessian) {
  const ExprFunction f({"a", "b"}, {parse_expr("a^3*b + sin(a*b)", {"a", "b"})});
  const auto h = f.jacobian().jacobian().eval(std::vector<double>{0.4, -1.3});
  const double a = 0.4;
  const double b = -1.3;
  const double s = std::sin(a * b);
  const double c = std::cos(a * b);
  EXPECT_NEAR(h[0], 6 * a * b - b * b * s, 1e-13);
  EXPECT_NEAR(h[1], 3 * a * a + c - a * b * s, 1e-13);
  EXPECT_NEAR(h[2], h[1], 1e-15);
  EXPECT_NEAR(h[3], -a * a * s, 1e-13);
}

namespace {

// Random expression over n variables with safe domains: divisions and sqrt
// only see strictly positive arguments.
Expr random_expr(std::mt19937& rng, const std::vector<Expr>& vars, int depth) {
  std::uniform_int_distribution<int> pick(0, depth <= 0 ? 1 : 10);
  std::uniform_real_distribution<double> cst(-2.0, 2.0);
  const int k = pick(rng);
  if (k == 0) return Expr(std::round(cst(rng) * 1000.0) / 1000.0 + 0.123456789012345);
  if (k == 1) return vars[std::uniform_int_distribution<std::size_t>(0, vars.size() - 1)(rng)];
  const Expr a = random_expr(rng, vars, depth - 1);
  const Expr b = random_expr(rng, vars, depth - 1);
  switch (k) {
    case 2: return a + b;
    case 3: return a - b;
    case 4: return a * b;
    case 5: return a / (1.5 + pow(b, 2));
    case 6: return -a;
    case 7: return sin(a);
    case 8: return cos(b) * exp(Expr(0.1) * a);
    case 9: return sqrt(1.0 + pow(a, 2));
    default: return pow(a, 3);
  }
}

}  // namespace

TEST(RoundTrip, PrintParseIsEvaluationEquivalent) {
  std::mt19937 rng(7);
  const std::vector<std::string> names{"x", "y", "z"};
  const auto vars = make_variables(names);
  std::uniform_real_distribution<double> pt(-1.5, 1.5);
  for (int trial = 0; trial < 40; ++trial) {
    const Expr e = random_expr(rng, vars, 5);
    const std::string text = to_string(e);
    const Expr back = parse_expr(text, names);
    for (int k = 0; k < 100; ++k) {
      const std::vector<double> p{pt(rng), pt(rng), pt(rng)};
      const double v0 = evaluate(e, p);
      const double v1 = evaluate(back, p);
      EXPECT_LE(std::abs(v0 - v1), 1e-12 * std::max(1.0, std::abs(v0))) << text;
    }
  }
}

TEST(RoundTrip, PrintsNegativesUnambiguously) {
  const std::vector<std::string> names{"x"};
  for (const char* t : {"x - -2", "-(x - 1)", "2 - (x - 3)", "-x^2", "(-x)^2", "x/(2*x)", "2^-1 + x"}) {
    const Expr e = parse_expr(t, names);
    const Expr back = parse_expr(to_string(e), names);
    for (double x : {-1.7, 0.3, 2.2})
      EXPECT_DOUBLE_EQ(evaluate(e, std::vector<double>{x}), evaluate(back, std::vector<double>{x})) << t;
  }
}

TEST(Jacobian, MatchesCentralDifferences) {
  std::mt19937 rng(11);
  const std::vector<std::string> names{"x", "y", "z"};
  const auto vars = make_variables(names);
  std::uniform_real_distribution<double> pt(-1.2, 1.2);
  for (int trial = 0; trial < 30; ++trial) {
    const ExprFunction f(names, {random_expr(rng, vars, 4), random_expr(rng, vars, 4)});
    const ExprFunction jac = f.jacobian();
    for (int k = 0; k < 20; ++k) {
      std::vector<double> p{pt(rng), pt(rng), pt(rng)};
      const auto j = jac.eval(p);
      for (std::size_t v = 0; v < 3; ++v) {
        auto hi = p;
        auto lo = p;
        hi[v] += 1e-6;
        lo[v] -= 1e-6;
        const auto fh = f.eval(hi);
        const auto fl = f.eval(lo);
        for (std::size_t o = 0; o < 2; ++o) {
          const double fd = (fh[o] - fl[o]) / 2e-6;
          EXPECT_NEAR(j[o * 3 + v], fd, 1e-6 * std::max(1.0, std::abs(fd)));
        }
      }
    }
  }
}

TEST(Tape, DeterministicAcrossThreads) {
  const std::vector<std::string> names{"x", "y"};
  const ExprFunction f(names, {parse_expr("sin(x)*exp(y) + x^5/(1 + y^2)", names)});
  const std::vector<double> p{0.37, -1.21};
  const double ref = f.eval_scalar(p);
  std::vector<double> results(8);
  std::vector<std::thread> pool;
  for (std::size_t i = 0; i < results.size(); ++i)
    pool.emplace_back([&, i] {
      double v = 0.0;
      for (int k = 0; k < 1000; ++k) v = f.eval_scalar(p);
      results[i] = v;
    });
  for (auto& t : pool) t.join();
  for (double r : results) EXPECT_EQ(r, ref);
}

TEST(Substitute, ReplacesByIndex) {
  const std::vector<std::string> names{"a", "b"};
  const Expr e = parse_expr("a*b + a", names);
  const auto z = make_variables(std::vector<std::string>{"p", "q", "r"});
  const std::vector<Expr> repl{z[2], z[0] + 1.0};
  const Expr s = substitute(e, repl);
  EXPECT_EQ(free_variables(s), (std::vector<std::size_t>{0, 2}));
  EXPECT_DOUBLE_EQ(evaluate(s, std::vector<double>{2.0, 0.0, 3.0}), 3.0 * 3.0 + 3.0);
}

TEST(Folding, ConstantsAndIdentities) {
  const auto x = make_variables(std::vector<std::string>{"x"})[0];
  EXPECT_TRUE((Expr(2.0) * 3.0 + 1.0).is_constant(7.0));
  EXPECT_EQ((x + 0.0).id(), x.id());
  EXPECT_EQ((1.0 * x).id(), x.id());
  EXPECT_TRUE((0.0 * x).is_constant(0.0));
  EXPECT_TRUE((x - x).is_constant(0.0));
  EXPECT_EQ((-(-x)).id(), x.id());
  EXPECT_EQ((Expr(1.0) / 0.0).kind(), Expr::Kind::Div);
}
