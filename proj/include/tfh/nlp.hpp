#pragma once

// Primal-dual barrier interior-point solver for smooth sparse NLPs
//
//   min phi(v)  s.t.  c_lb <= c(v) <= c_ub,  lb <= v <= ub
//
// Objective and constraints are expressions; first and second derivatives are
// generated symbolically once, when the problem is compiled.

#include <cstddef>
#include <iosfwd>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tfh/expr.hpp"

namespace tfh::nlp {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Bounds with magnitude >= this are treated as absent.
inline constexpr double kBoundInf = 1e19;

struct Nlp {
  std::vector<std::string> var_names;
  std::vector<double> lb, ub;
  Expr objective;
  std::vector<Expr> constraints;
  std::vector<double> c_lb, c_ub;

  std::size_t n() const noexcept { return var_names.size(); }
  std::size_t m() const noexcept { return constraints.size(); }

  /// Adds a variable and returns the symbol bound to it.
  Expr add_variable(std::string name, double lo = -kInf, double hi = kInf);
  void add_constraint(Expr c, double lo, double hi);
  void add_equality(Expr c, double rhs = 0.0) { add_constraint(std::move(c), rhs, rhs); }

  /// Throws std::invalid_argument on size mismatch, crossed bounds or
  /// expressions that reference undeclared variables.
  void validate() const;
};

/// Sparse first and second derivatives of an Nlp compiled onto tapes.
class CompiledNlp {
 public:
  explicit CompiledNlp(const Nlp& problem);

  const Nlp& problem() const noexcept { return *problem_; }
  /// Bounds do not enter the derivatives, so they can change after compiling.
  void set_constraint_bounds(std::size_t row, double lo, double hi);
  std::size_t n() const noexcept { return problem_->n(); }
  std::size_t m() const noexcept { return problem_->m(); }

  // Jacobian triplets; row = constraint, col = variable.
  const std::vector<std::size_t>& jac_rows() const noexcept { return jac_rows_; }
  const std::vector<std::size_t>& jac_cols() const noexcept { return jac_cols_; }
  // Lower-triangular Hessian triplets (row >= col) of the Lagrangian.
  const std::vector<std::size_t>& hess_rows() const noexcept { return hess_rows_; }
  const std::vector<std::size_t>& hess_cols() const noexcept { return hess_cols_; }

  double objective(std::span<const double> v) const;
  void gradient(std::span<const double> v, std::span<double> grad) const;
  void constraints(std::span<const double> v, std::span<double> c) const;
  void jacobian(std::span<const double> v, std::span<double> values) const;
  /// obj_factor * hess(phi) + sum_j lambda_j * hess(c_j), lower triangle.
  void hessian(std::span<const double> v, double obj_factor, std::span<const double> lambda,
               std::span<double> values) const;

 private:
  std::shared_ptr<Nlp> problem_;
  Tape f_tape_, grad_tape_, c_tape_, jac_tape_, hess_tape_;
  std::vector<std::size_t> grad_cols_;
  std::vector<std::size_t> jac_rows_, jac_cols_;
  std::vector<std::size_t> hess_rows_, hess_cols_;
  // Per second-derivative term: owner (m for the objective) and target slot.
  std::vector<std::size_t> hess_term_owner_, hess_term_slot_;
  mutable std::vector<double> work_, term_values_;
};

enum class Status {
  Solved,
  Acceptable,  // residuals stayed below acceptable_tol for acceptable_iter iterations
  MaxIter,
  InfeasibleDetected,
  RegularizationFailure
};

const char* to_string(Status s);

struct Options {
  // Converged when the multiplier-scaled optimality error is below tol and
  // the unscaled residuals are below their caps.
  double tol = 1e-8;
  double dual_inf_tol = 1.0;
  double constr_viol_tol = 1e-4;
  double compl_inf_tol = 1e-4;
  std::size_t max_iter = 3000;
  double mu0 = 0.1;
  double mu_min = 1e-11;
  double mu_target = 0.0;     // complementarity is driven to this value instead of zero
  double mu_factor = 0.2;     // linear part of the mu update
  double mu_power = 1.5;      // superlinear part
  double tau_min = 0.99;      // fraction-to-boundary
  double bound_push = 1e-2;
  double bound_frac = 1e-2;
  double bound_relax = 1e-8;  // relative widening of the bounds seen by the barrier
  double slack_bound_push = 1e-2;  // same, for the slacks of inequality rows
  double slack_bound_frac = 1e-2;
  double warm_mult_push = 1e-3;  // lower bound on warm-started bound multipliers
  double mult_init_max = 1e3;    // cold start: least-squares multipliers are kept below this
  double acceptable_tol = 1e-6;
  std::size_t acceptable_iter = 15;  // 0 disables the acceptable level
  double delta_w0 = 1e-8;     // first inertia-correction shift, doubled until the inertia is right
  double delta_w_max = 1e20;
  std::string log_csv;        // optional iteration log
};

/// Starting multipliers; used when non-empty and of the right length.
struct WarmStart {
  std::vector<double> lambda;
  std::vector<double> z_lb, z_ub;
};

struct Solution {
  Status status = Status::MaxIter;
  std::vector<double> v;
  std::vector<double> lambda;      // constraint multipliers
  std::vector<double> z_lb, z_ub;  // bound multipliers, >= 0
  double objective = 0.0;
  // Unscaled residuals at v:
  //   stationarity  |grad phi + J^T lambda - z_lb + z_ub|_inf
  //   feasibility   max violation of constraints and bounds
  //   complementarity max over active-able pairs of |z * distance to bound|
  double stationarity = 0.0;
  double feasibility = 0.0;
  double complementarity = 0.0;
  std::size_t iterations = 0;
  std::size_t factorizations = 0;
  double mu = 0.0;
  double cpu_seconds = 0.0;
  std::string message;

  bool ok() const noexcept { return status == Status::Solved; }
  bool usable() const noexcept { return status == Status::Solved || status == Status::Acceptable; }
};

Solution solve(const CompiledNlp& nlp, std::span<const double> v0, const Options& opts = {},
               const WarmStart* warm = nullptr);
Solution solve(const Nlp& nlp, std::span<const double> v0, const Options& opts = {});

struct Residuals {
  double stationarity = 0.0;
  double feasibility = 0.0;
  double complementarity = 0.0;
};

/// Recomputes the residuals of a candidate primal-dual point from scratch.
Residuals kkt_residuals(const CompiledNlp& nlp, std::span<const double> v, std::span<const double> lambda,
                        std::span<const double> z_lb, std::span<const double> z_ub);

}  // namespace tfh::nlp
