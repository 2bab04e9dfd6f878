#include "tfh/expr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>
#include <unordered_set>

namespace tfh {

namespace {

using Kind = Expr::Kind;

bool is_unary(Kind k) {
  return k == Kind::Neg || k == Kind::Sin || k == Kind::Cos || k == Kind::Exp || k == Kind::Sqrt;
}

const char* kind_name(Kind k) {
  switch (k) {
    case Kind::Constant: return "const";
    case Kind::Variable: return "var";
    case Kind::Neg: return "neg";
    case Kind::Sin: return "sin";
    case Kind::Cos: return "cos";
    case Kind::Exp: return "exp";
    case Kind::Sqrt: return "sqrt";
    case Kind::Add: return "add";
    case Kind::Sub: return "sub";
    case Kind::Mul: return "mul";
    case Kind::Div: return "div";
    case Kind::Pow: return "pow";
  }
  return "?";
}

double apply_unary(Kind k, double a) {
  switch (k) {
    case Kind::Neg: return -a;
    case Kind::Sin: return std::sin(a);
    case Kind::Cos: return std::cos(a);
    case Kind::Exp: return std::exp(a);
    case Kind::Sqrt: return std::sqrt(a);
    default: return std::numeric_limits<double>::quiet_NaN();
  }
}

double ipow(double base, int n) {
  if (n < 0) return 1.0 / ipow(base, -n);
  double result = 1.0;
  double b = base;
  auto e = static_cast<unsigned>(n);
  while (e != 0) {
    if (e & 1U) result *= b;
    b *= b;
    e >>= 1U;
  }
  return result;
}

double apply_binary(Kind k, double a, double b) {
  switch (k) {
    case Kind::Add: return a + b;
    case Kind::Sub: return a - b;
    case Kind::Mul: return a * b;
    case Kind::Div: return a / b;
    case Kind::Pow: return ipow(a, static_cast<int>(b));
    default: return std::numeric_limits<double>::quiet_NaN();
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Construction

ParseError::ParseError(const std::string& what, std::size_t offset)
    : std::runtime_error(what + " at offset " + std::to_string(offset)), offset_(offset) {}

Expr::Expr() : Expr(0.0) {}

Expr::Expr(double value) {
  auto n = std::make_shared<Node>();
  n->kind = Kind::Constant;
  n->value = value;
  node_ = std::move(n);
}

Expr Expr::variable(std::string name, std::size_t index) {
  auto n = std::make_shared<Node>();
  n->kind = Kind::Variable;
  n->index = index;
  n->name = std::move(name);
  return Expr(std::shared_ptr<const Node>(std::move(n)));
}

Expr::Kind Expr::kind() const noexcept { return node_->kind; }
bool Expr::is_constant(double v) const noexcept { return is_constant() && node_->value == v; }
double Expr::value() const noexcept { return node_->value; }
std::size_t Expr::index() const noexcept { return node_->index; }
const std::string& Expr::name() const noexcept { return node_->name; }
int Expr::exponent() const noexcept { return static_cast<int>(node_->value); }

std::size_t Expr::arity() const noexcept {
  const Kind k = kind();
  if (k == Kind::Constant || k == Kind::Variable) return 0;
  return is_unary(k) ? 1 : 2;
}

Expr Expr::child(std::size_t i) const noexcept { return Expr(node_->children[i]); }

Expr Expr::make_unary(Kind k, const Expr& a) {
  if (a.is_constant()) {
    const double v = apply_unary(k, a.value());
    if (std::isfinite(v)) return Expr(v);
  }
  if (k == Kind::Neg && a.kind() == Kind::Neg) return a.child(0);
  auto n = std::make_shared<Node>();
  n->kind = k;
  n->children[0] = a.node_;
  return Expr(std::shared_ptr<const Node>(std::move(n)));
}

Expr Expr::make_binary(Kind k, const Expr& a, const Expr& b) {
  if (a.is_constant() && b.is_constant()) {
    const double v = apply_binary(k, a.value(), b.value());
    if (std::isfinite(v)) return Expr(v);
  }
  auto n = std::make_shared<Node>();
  n->kind = k;
  n->children[0] = a.node_;
  n->children[1] = b.node_;
  if (k == Kind::Pow) n->value = b.value();
  return Expr(std::shared_ptr<const Node>(std::move(n)));
}

Expr operator+(const Expr& a, const Expr& b) {
  if (a.is_constant(0.0)) return b;
  if (b.is_constant(0.0)) return a;
  return Expr::make_binary(Expr::Kind::Add, a, b);
}

Expr operator-(const Expr& a, const Expr& b) {
  if (b.is_constant(0.0)) return a;
  if (a.is_constant(0.0)) return -b;
  if (a.id() == b.id()) return Expr(0.0);
  return Expr::make_binary(Expr::Kind::Sub, a, b);
}

Expr operator*(const Expr& a, const Expr& b) {
  if (a.is_constant(0.0) || b.is_constant(0.0)) return Expr(0.0);
  if (a.is_constant(1.0)) return b;
  if (b.is_constant(1.0)) return a;
  if (a.is_constant(-1.0)) return -b;
  if (b.is_constant(-1.0)) return -a;
  return Expr::make_binary(Expr::Kind::Mul, a, b);
}

Expr operator/(const Expr& a, const Expr& b) {
  if (b.is_constant(1.0)) return a;
  if (a.is_constant(0.0) && !b.is_constant(0.0)) return Expr(0.0);
  return Expr::make_binary(Expr::Kind::Div, a, b);
}

Expr operator-(const Expr& a) { return Expr::make_unary(Expr::Kind::Neg, a); }

Expr pow(const Expr& base, int exponent) {
  if (exponent == 0) return Expr(1.0);
  if (exponent == 1) return base;
  return Expr::make_binary(Expr::Kind::Pow, base, Expr(static_cast<double>(exponent)));
}

Expr sin(const Expr& a) { return Expr::make_unary(Expr::Kind::Sin, a); }
Expr cos(const Expr& a) { return Expr::make_unary(Expr::Kind::Cos, a); }
Expr exp(const Expr& a) { return Expr::make_unary(Expr::Kind::Exp, a); }
Expr sqrt(const Expr& a) { return Expr::make_unary(Expr::Kind::Sqrt, a); }

// ---------------------------------------------------------------------------
// Traversal helpers

namespace {

// Post-order list of unique nodes reachable from the roots.
std::vector<Expr> topological_order(std::span<const Expr> roots) {
  std::vector<Expr> order;
  std::unordered_set<const Expr::Node*> seen;
  struct Frame {
    Expr e;
    std::size_t next_child;
  };
  std::vector<Frame> stack;
  for (const Expr& root : roots) {
    if (!seen.insert(root.id()).second) continue;
    stack.push_back({root, 0});
    while (!stack.empty()) {
      Frame& top = stack.back();
      if (top.next_child < top.e.arity()) {
        Expr c = top.e.child(top.next_child++);
        if (seen.insert(c.id()).second) stack.push_back({c, 0});
      } else {
        order.push_back(top.e);
        stack.pop_back();
      }
    }
  }
  return order;
}

// Recursive evaluation that reports the path to the first non-finite node.
double eval_with_path(const Expr& e, std::span<const double> point, std::string& path) {
  const Kind k = e.kind();
  double v = 0.0;
  if (k == Kind::Constant) {
    v = e.value();
  } else if (k == Kind::Variable) {
    v = point[e.index()];
  } else if (is_unary(k)) {
    const std::size_t mark = path.size();
    path += std::string("/") + kind_name(k);
    const double a = eval_with_path(e.child(0), point, path);
    if (!std::isfinite(a)) return a;
    v = apply_unary(k, a);
    if (std::isfinite(v)) path.resize(mark);
    return v;
  } else {
    const std::size_t mark = path.size();
    path += std::string("/") + kind_name(k);
    const std::size_t mark_op = path.size();
    path += ".lhs";
    const double a = eval_with_path(e.child(0), point, path);
    if (!std::isfinite(a)) return a;
    path.resize(mark_op);
    path += ".rhs";
    const double b = eval_with_path(e.child(1), point, path);
    if (!std::isfinite(b)) return b;
    path.resize(mark_op);
    v = apply_binary(k, a, b);
    if (std::isfinite(v)) path.resize(mark);
    return v;
  }
  if (!std::isfinite(v)) path += std::string("/") + kind_name(k);
  return v;
}

}  // namespace

double evaluate(const Expr& e, std::span<const double> point) {
  if (variable_bound(e) > point.size())
    throw std::invalid_argument("evaluate: point shorter than variable index range");
  std::string path = "root";
  const double v = eval_with_path(e, point, path);
  if (!std::isfinite(v)) throw EvalError("non-finite value at " + path);
  return v;
}

std::vector<std::size_t> free_variables(const Expr& e) {
  std::vector<std::size_t> vars;
  for (const Expr& n : topological_order(std::span<const Expr>(&e, 1)))
    if (n.kind() == Kind::Variable) vars.push_back(n.index());
  std::sort(vars.begin(), vars.end());
  vars.erase(std::unique(vars.begin(), vars.end()), vars.end());
  return vars;
}

std::size_t variable_bound(const Expr& e) {
  const auto vars = free_variables(e);
  return vars.empty() ? 0 : vars.back() + 1;
}

std::size_t node_count(const Expr& e) { return topological_order(std::span<const Expr>(&e, 1)).size(); }

// ---------------------------------------------------------------------------
// Differentiation

namespace {

class Differentiator {
 public:
  explicit Differentiator(std::size_t var) : var_(var) {}

  Expr operator()(const Expr& e) {
    if (auto it = memo_.find(e.id()); it != memo_.end()) return it->second;
    Expr d = compute(e);
    memo_.emplace(e.id(), d);
    return d;
  }

 private:
  Expr compute(const Expr& e) {
    switch (e.kind()) {
      case Kind::Constant: return Expr(0.0);
      case Kind::Variable: return Expr(e.index() == var_ ? 1.0 : 0.0);
      case Kind::Neg: return -(*this)(e.child(0));
      case Kind::Sin: return cos(e.child(0)) * (*this)(e.child(0));
      case Kind::Cos: return -(sin(e.child(0)) * (*this)(e.child(0)));
      case Kind::Exp: return e * (*this)(e.child(0));
      case Kind::Sqrt: {
        const Expr da = (*this)(e.child(0));
        if (da.is_constant(0.0)) return Expr(0.0);
        return da / (Expr(2.0) * e);
      }
      case Kind::Add: return (*this)(e.child(0)) + (*this)(e.child(1));
      case Kind::Sub: return (*this)(e.child(0)) - (*this)(e.child(1));
      case Kind::Mul: {
        const Expr a = e.child(0);
        const Expr b = e.child(1);
        return (*this)(a) * b + a * (*this)(b);
      }
      case Kind::Div: {
        const Expr b = e.child(1);
        const Expr da = (*this)(e.child(0));
        const Expr db = (*this)(b);
        if (db.is_constant(0.0)) return da / b;
        return da / b - e * db / b;
      }
      case Kind::Pow: {
        const Expr a = e.child(0);
        const int n = e.exponent();
        const Expr da = (*this)(a);
        if (da.is_constant(0.0)) return Expr(0.0);
        return Expr(static_cast<double>(n)) * pow(a, n - 1) * da;
      }
    }
    return Expr(0.0);
  }

  std::size_t var_;
  std::unordered_map<const Expr::Node*, Expr> memo_;
};

}  // namespace

Expr derivative(const Expr& e, std::size_t var_index) { return Differentiator(var_index)(e); }

Expr substitute(const Expr& e, std::span<const Expr> replacements) {
  std::unordered_map<const Expr::Node*, Expr> memo;
  for (const Expr& n : topological_order(std::span<const Expr>(&e, 1))) {
    Expr r;
    switch (n.kind()) {
      case Kind::Constant: r = n; break;
      case Kind::Variable: r = n.index() < replacements.size() ? replacements[n.index()] : n; break;
      case Kind::Neg: r = -memo.at(n.child(0).id()); break;
      case Kind::Sin: r = sin(memo.at(n.child(0).id())); break;
      case Kind::Cos: r = cos(memo.at(n.child(0).id())); break;
      case Kind::Exp: r = exp(memo.at(n.child(0).id())); break;
      case Kind::Sqrt: r = sqrt(memo.at(n.child(0).id())); break;
      case Kind::Add: r = memo.at(n.child(0).id()) + memo.at(n.child(1).id()); break;
      case Kind::Sub: r = memo.at(n.child(0).id()) - memo.at(n.child(1).id()); break;
      case Kind::Mul: r = memo.at(n.child(0).id()) * memo.at(n.child(1).id()); break;
      case Kind::Div: r = memo.at(n.child(0).id()) / memo.at(n.child(1).id()); break;
      case Kind::Pow: r = pow(memo.at(n.child(0).id()), n.exponent()); break;
    }
    memo.emplace(n.id(), std::move(r));
  }
  return memo.at(e.id());
}

// ---------------------------------------------------------------------------
// Tape

Tape::Tape(std::span<const Expr> outputs) {
  const std::vector<Expr> order = topological_order(outputs);
  std::unordered_map<const Expr::Node*, std::uint32_t> slot;
  slot.reserve(order.size());
  ops_.reserve(order.size());
  for (const Expr& e : order) {
    Op op{e.kind()};
    switch (e.kind()) {
      case Kind::Constant: op.value = e.value(); break;
      case Kind::Variable:
        op.value = static_cast<double>(e.index());
        input_bound_ = std::max(input_bound_, e.index() + 1);
        break;
      case Kind::Pow:
        op.a = slot.at(e.child(0).id());
        op.value = e.exponent();
        break;
      default:
        op.a = slot.at(e.child(0).id());
        if (e.arity() == 2) op.b = slot.at(e.child(1).id());
    }
    slot.emplace(e.id(), static_cast<std::uint32_t>(ops_.size()));
    ops_.push_back(op);
  }
  outputs_.reserve(outputs.size());
  for (const Expr& e : outputs) outputs_.push_back(slot.at(e.id()));
}

bool Tape::eval(std::span<const double> in, std::span<double> out, std::vector<double>& work) const {
  work.resize(ops_.size());
  double* w = work.data();
  bool finite = true;
  for (std::size_t i = 0; i < ops_.size(); ++i) {
    const Op& op = ops_[i];
    double v;
    switch (op.kind) {
      case Kind::Constant: v = op.value; break;
      case Kind::Variable: v = in[static_cast<std::size_t>(op.value)]; break;
      case Kind::Neg: v = -w[op.a]; break;
      case Kind::Sin: v = std::sin(w[op.a]); break;
      case Kind::Cos: v = std::cos(w[op.a]); break;
      case Kind::Exp: v = std::exp(w[op.a]); break;
      case Kind::Sqrt: v = std::sqrt(w[op.a]); break;
      case Kind::Add: v = w[op.a] + w[op.b]; break;
      case Kind::Sub: v = w[op.a] - w[op.b]; break;
      case Kind::Mul: v = w[op.a] * w[op.b]; break;
      case Kind::Div: v = w[op.a] / w[op.b]; break;
      case Kind::Pow: v = ipow(w[op.a], static_cast<int>(op.value)); break;
      default: v = 0.0;
    }
    finite = finite && std::isfinite(v);
    w[i] = v;
  }
  for (std::size_t i = 0; i < outputs_.size(); ++i) out[i] = w[outputs_[i]];
  return finite;
}

// ---------------------------------------------------------------------------
// ExprFunction

ExprFunction::ExprFunction(std::vector<std::string> inputs, std::vector<Expr> outputs)
    : inputs_(std::move(inputs)), outputs_(std::move(outputs)) {
  for (std::size_t i = 0; i < outputs_.size(); ++i) {
    for (const Expr& n : topological_order(std::span<const Expr>(&outputs_[i], 1))) {
      if (n.kind() != Kind::Variable) continue;
      if (n.index() >= inputs_.size())
        throw std::invalid_argument("output " + std::to_string(i) + " references variable index " +
                                    std::to_string(n.index()) + " beyond input arity " +
                                    std::to_string(inputs_.size()));
      if (!n.name().empty() && n.name() != inputs_[n.index()])
        throw std::invalid_argument("variable '" + n.name() + "' does not match input '" +
                                    inputs_[n.index()] + "'");
    }
  }
  tape_ = std::make_shared<const Tape>(outputs_);
}

void ExprFunction::eval(std::span<const double> point, std::span<double> out) const {
  if (point.size() != inputs_.size())
    throw std::invalid_argument("eval: expected " + std::to_string(inputs_.size()) + " inputs, got " +
                                std::to_string(point.size()));
  if (out.size() != outputs_.size()) throw std::invalid_argument("eval: output size mismatch");
  thread_local std::vector<double> work;
  if (tape_->eval(point, out, work)) return;
  // Slow path only to build the diagnostic.
  for (std::size_t i = 0; i < outputs_.size(); ++i) {
    std::string path = "output[" + std::to_string(i) + "]";
    const double v = eval_with_path(outputs_[i], point, path);
    if (!std::isfinite(v)) throw EvalError("non-finite value at " + path);
  }
  throw EvalError("non-finite intermediate in unused subexpression");
}

std::vector<double> ExprFunction::eval(std::span<const double> point) const {
  std::vector<double> out(outputs_.size());
  eval(point, out);
  return out;
}

double ExprFunction::eval_scalar(std::span<const double> point) const {
  if (outputs_.size() != 1) throw std::invalid_argument("eval_scalar on non-scalar function");
  double out = 0.0;
  eval(point, std::span<double>(&out, 1));
  return out;
}

ExprFunction ExprFunction::jacobian(std::span<const std::size_t> wrt) const {
  std::vector<Expr> entries;
  entries.reserve(outputs_.size() * wrt.size());
  // One memo per variable shared across outputs keeps common subterms shared.
  std::vector<Differentiator> diff;
  diff.reserve(wrt.size());
  for (std::size_t v : wrt) {
    if (v >= inputs_.size()) throw std::invalid_argument("jacobian: input index out of range");
    diff.emplace_back(v);
  }
  for (const Expr& out : outputs_)
    for (auto& d : diff) entries.push_back(d(out));
  return ExprFunction(inputs_, std::move(entries));
}

ExprFunction ExprFunction::jacobian() const {
  std::vector<std::size_t> all(inputs_.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return jacobian(all);
}

ExprFunction ExprFunction::concat(const ExprFunction& other) const {
  if (other.inputs_ != inputs_) throw std::invalid_argument("concat: input lists differ");
  std::vector<Expr> outs = outputs_;
  outs.insert(outs.end(), other.outputs_.begin(), other.outputs_.end());
  return ExprFunction(inputs_, std::move(outs));
}

std::vector<Expr> make_variables(std::span<const std::string> names, std::size_t offset) {
  std::vector<Expr> vars;
  vars.reserve(names.size());
  for (std::size_t i = 0; i < names.size(); ++i) vars.push_back(Expr::variable(names[i], offset + i));
  return vars;
}

}  // namespace tfh
