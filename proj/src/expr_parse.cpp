#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>

#include "tfh/expr.hpp"

namespace tfh {

namespace {

// Recursive-descent parser; grammar in docs/expression_grammar.md.
class Parser {
 public:
  Parser(std::string_view text, std::span<const std::string> vars) : text_(text), vars_(vars) {}

  Expr parse() {
    Expr e = parse_sum();
    skip_ws();
    if (pos_ != text_.size()) fail("unexpected character '" + std::string(1, text_[pos_]) + "'");
    return e;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(msg, pos_); }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  Expr parse_sum() {
    Expr lhs = parse_product();
    for (;;) {
      if (accept('+')) {
        lhs = lhs + parse_product();
      } else if (accept('-')) {
        lhs = lhs - parse_product();
      } else {
        return lhs;
      }
    }
  }

  Expr parse_product() {
    Expr lhs = parse_unary();
    for (;;) {
      if (accept('*')) {
        lhs = lhs * parse_unary();
      } else if (accept('/')) {
        lhs = lhs / parse_unary();
      } else {
        return lhs;
      }
    }
  }

  Expr parse_unary() {
    if (accept('-')) return -parse_unary();
    if (accept('+')) return parse_unary();
    return parse_power();
  }

  Expr parse_power() {
    Expr base = parse_primary();
    skip_ws();
    const std::size_t at = pos_;
    if (!accept('^')) return base;
    Expr ex = parse_unary();
    if (!ex.is_constant() || ex.value() != std::floor(ex.value()) || std::abs(ex.value()) > 1e6) {
      pos_ = at;
      fail("exponent must be a constant integer");
    }
    return pow(base, static_cast<int>(ex.value()));
  }

  Expr parse_primary() {
    skip_ws();
    if (pos_ >= text_.size()) fail("unexpected end of input");
    const char c = text_[pos_];
    if (c == '(') {
      ++pos_;
      Expr e = parse_sum();
      if (!accept(')')) fail("expected ')'");
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_identifier();
    fail("unexpected character '" + std::string(1, c) + "'");
  }

  Expr parse_number() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() && (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.'))
      ++pos_;
    if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
      std::size_t p = pos_ + 1;
      if (p < text_.size() && (text_[p] == '+' || text_[p] == '-')) ++p;
      if (p < text_.size() && std::isdigit(static_cast<unsigned char>(text_[p]))) {
        pos_ = p;
        while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
      }
    }
    double v = 0.0;
    const auto* first = text_.data() + start;
    const auto* last = text_.data() + pos_;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) {
      pos_ = start;
      fail("malformed number");
    }
    return Expr(v);
  }

  Expr parse_identifier() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() &&
           (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
      ++pos_;
    const std::string name(text_.substr(start, pos_ - start));
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == '(') {
      ++pos_;
      Expr arg = parse_sum();
      if (!accept(')')) fail("expected ')' after function argument");
      if (name == "sin") return sin(arg);
      if (name == "cos") return cos(arg);
      if (name == "exp") return exp(arg);
      if (name == "sqrt") return sqrt(arg);
      pos_ = start;
      fail("unknown function '" + name + "'");
    }
    for (std::size_t i = 0; i < vars_.size(); ++i)
      if (vars_[i] == name) return Expr::variable(name, i);
    pos_ = start;
    fail("undeclared identifier '" + name + "'");
  }

  std::string_view text_;
  std::span<const std::string> vars_;
  std::size_t pos_ = 0;
};

// Precedence used when printing: higher binds tighter.
int precedence(const Expr& e) {
  switch (e.kind()) {
    case Expr::Kind::Constant: return e.value() < 0.0 || std::signbit(e.value()) ? 3 : 5;
    case Expr::Kind::Variable: return 5;
    case Expr::Kind::Add:
    case Expr::Kind::Sub: return 1;
    case Expr::Kind::Mul:
    case Expr::Kind::Div: return 2;
    case Expr::Kind::Neg: return 3;
    case Expr::Kind::Pow: return 4;
    default: return 5;  // function calls
  }
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void print(const Expr& e, std::string& out);

void print_wrapped(const Expr& e, bool wrap, std::string& out) {
  if (wrap) out += '(';
  print(e, out);
  if (wrap) out += ')';
}

void print(const Expr& e, std::string& out) {
  using K = Expr::Kind;
  switch (e.kind()) {
    case K::Constant: out += format_number(e.value()); return;
    case K::Variable: out += e.name().empty() ? "v" + std::to_string(e.index()) : e.name(); return;
    case K::Neg:
      out += '-';
      print_wrapped(e.child(0), precedence(e.child(0)) < 4, out);
      return;
    case K::Sin:
    case K::Cos:
    case K::Exp:
    case K::Sqrt: {
      static constexpr const char* names[] = {"sin", "cos", "exp", "sqrt"};
      out += names[static_cast<int>(e.kind()) - static_cast<int>(K::Sin)];
      print_wrapped(e.child(0), true, out);
      return;
    }
    case K::Pow:
      print_wrapped(e.child(0), precedence(e.child(0)) < 5, out);
      out += '^';
      print_wrapped(e.child(1), e.exponent() < 0, out);
      return;
    default: break;
  }
  const int p = precedence(e);
  const char op = e.kind() == K::Add ? '+' : e.kind() == K::Sub ? '-' : e.kind() == K::Mul ? '*' : '/';
  const Expr lhs = e.child(0);
  const Expr rhs = e.child(1);
  print_wrapped(lhs, precedence(lhs) < p, out);
  out += ' ';
  out += op;
  out += ' ';
  // Right operands are wrapped unless they bind strictly tighter, and negative
  // operands are always wrapped for readability.
  print_wrapped(rhs, precedence(rhs) <= p || precedence(rhs) == 3, out);
}

}  // namespace

Expr parse_expr(std::string_view text, std::span<const std::string> variables) {
  return Parser(text, variables).parse();
}

Expr parse_expr(std::string_view text, std::initializer_list<std::string> variables) {
  return parse_expr(text, std::span<const std::string>(variables.begin(), variables.size()));
}

std::string to_string(const Expr& e) {
  std::string out;
  print(e, out);
  return out;
}

}  // namespace tfh
