#pragma once

// Immutable scalar expression DAG with parsing, printing, evaluation and
// symbolic differentiation. All dynamics, switching functions, constraints and
// their derivatives in the library are represented with these types.

#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tfh {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset);
  /// Byte offset into the parsed text where the problem was detected.
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Raised when an intermediate value becomes NaN or infinite. The message
/// carries the path from the output root to the offending node.
class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Expr {
 public:
  enum class Kind : std::uint8_t {
    Constant,
    Variable,
    Neg,
    Sin,
    Cos,
    Exp,
    Sqrt,
    Add,
    Sub,
    Mul,
    Div,
    Pow,  // integer exponent, stored as a constant right child
  };

  struct Node;

  Expr();  // constant zero
  Expr(double value);  // NOLINT(google-explicit-constructor): constants mix freely
  Expr(int value) : Expr(static_cast<double>(value)) {}  // NOLINT

  static Expr variable(std::string name, std::size_t index);

  Kind kind() const noexcept;
  bool is_constant() const noexcept { return kind() == Kind::Constant; }
  bool is_constant(double v) const noexcept;
  double value() const noexcept;                // Constant
  std::size_t index() const noexcept;           // Variable
  const std::string& name() const noexcept;     // Variable
  int exponent() const noexcept;                // Pow
  std::size_t arity() const noexcept;
  Expr child(std::size_t i) const noexcept;

  /// Node identity; stable for the lifetime of any Expr sharing the node.
  const Node* id() const noexcept { return node_.get(); }

  friend Expr operator+(const Expr& a, const Expr& b);
  friend Expr operator-(const Expr& a, const Expr& b);
  friend Expr operator*(const Expr& a, const Expr& b);
  friend Expr operator/(const Expr& a, const Expr& b);
  friend Expr operator-(const Expr& a);
  friend Expr pow(const Expr& base, int exponent);
  friend Expr sin(const Expr& a);
  friend Expr cos(const Expr& a);
  friend Expr exp(const Expr& a);
  friend Expr sqrt(const Expr& a);

  Expr& operator+=(const Expr& o) { return *this = *this + o; }
  Expr& operator-=(const Expr& o) { return *this = *this - o; }
  Expr& operator*=(const Expr& o) { return *this = *this * o; }

 private:
  explicit Expr(std::shared_ptr<const Node> n) : node_(std::move(n)) {}
  static Expr make_unary(Kind k, const Expr& a);
  static Expr make_binary(Kind k, const Expr& a, const Expr& b);

  std::shared_ptr<const Node> node_;
};

struct Expr::Node {
  Kind kind = Kind::Constant;
  double value = 0.0;
  std::size_t index = 0;
  std::string name;
  std::array<std::shared_ptr<const Node>, 2> children;
};

/// Evaluates a single expression; `point` is indexed by variable index.
double evaluate(const Expr& e, std::span<const double> point);

/// Partial derivative with respect to the variable with the given index.
Expr derivative(const Expr& e, std::size_t var_index);

/// Replaces variable k by replacements[k]; variables beyond the span are kept.
Expr substitute(const Expr& e, std::span<const Expr> replacements);

/// Sorted, unique variable indices appearing in `e`.
std::vector<std::size_t> free_variables(const Expr& e);

/// Largest variable index + 1 (0 for closed expressions).
std::size_t variable_bound(const Expr& e);

std::size_t node_count(const Expr& e);

/// Round-trippable textual form (constants printed with 17 significant digits).
std::string to_string(const Expr& e);

/// Parses `text` using the grammar documented in docs/expression_grammar.md.
/// Identifiers must appear in `variables`; their position is the variable index.
Expr parse_expr(std::string_view text, std::span<const std::string> variables);
Expr parse_expr(std::string_view text, std::initializer_list<std::string> variables);

/// Flat instruction list compiled from a set of expressions. Evaluation writes
/// into caller-provided scratch so one tape can be shared across threads.
class Tape {
 public:
  Tape() = default;
  explicit Tape(std::span<const Expr> outputs);

  std::size_t n_outputs() const noexcept { return outputs_.size(); }
  std::size_t n_nodes() const noexcept { return ops_.size(); }
  std::size_t input_bound() const noexcept { return input_bound_; }

  /// Returns false when a non-finite intermediate was produced.
  bool eval(std::span<const double> in, std::span<double> out, std::vector<double>& work) const;

 private:
  struct Op {
    Expr::Kind kind;
    std::uint32_t a = 0;
    std::uint32_t b = 0;
    double value = 0.0;  // constant value, variable index, or integer exponent
  };
  std::vector<Op> ops_;
  std::vector<std::uint32_t> outputs_;
  std::size_t input_bound_ = 0;
};

/// A vector-valued function of named scalar inputs.
class ExprFunction {
 public:
  ExprFunction() = default;
  ExprFunction(std::vector<std::string> inputs, std::vector<Expr> outputs);

  std::size_t n_in() const noexcept { return inputs_.size(); }
  std::size_t n_out() const noexcept { return outputs_.size(); }
  const std::vector<std::string>& inputs() const noexcept { return inputs_; }
  const std::vector<Expr>& outputs() const noexcept { return outputs_; }
  const Expr& output(std::size_t i) const { return outputs_.at(i); }

  /// Throws std::invalid_argument on size mismatch and EvalError on
  /// non-finite intermediates.
  std::vector<double> eval(std::span<const double> point) const;
  void eval(std::span<const double> point, std::span<double> out) const;
  double eval_scalar(std::span<const double> point) const;

  /// Symbolic Jacobian with respect to the inputs listed in `wrt`. Outputs are
  /// laid out row-major: entry (i, k) is output i * wrt.size() + k.
  ExprFunction jacobian(std::span<const std::size_t> wrt) const;
  ExprFunction jacobian() const;

  /// Outputs concatenated with those of `other`; inputs must match.
  ExprFunction concat(const ExprFunction& other) const;

 private:
  std::vector<std::string> inputs_;
  std::vector<Expr> outputs_;
  std::shared_ptr<const Tape> tape_;
};

/// Symbols 0..n-1 named after `names`, convenient for building expressions.
std::vector<Expr> make_variables(std::span<const std::string> names, std::size_t offset = 0);

}  // namespace tfh
