#pragma once

// Explicit Dormand-Prince 5(4) integration with PI step-size control and a
// fourth-order continuous extension. Shared by the hybrid-automaton oracle and
// the Filippov integrator; both drive the step loop themselves so that they
// can localize events on the dense output of each accepted step.

#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <span>
#include <vector>

namespace tfh::ode {

using Rhs = std::function<void(double t, std::span<const double> y, std::span<double> dy)>;

struct Tolerances {
  double rtol = 1e-8;
  double atol = 1e-10;
};

/// Polynomial interpolant of one accepted step. Valid on [t0, t_end]; t_end is
/// below t0 + h when the step was truncated at an event.
struct DenseStep {
  double t0 = 0.0;
  double h = 0.0;
  double t_end = 0.0;
  std::size_t n = 0;
  std::vector<double> coeffs;  // 5 blocks of n

  void eval(double t, std::span<double> y) const;
  std::vector<double> eval(double t) const;
  double eval_component(double t, std::size_t i) const;
  DenseStep select(std::span<const std::size_t> components) const;
  DenseStep shifted(double dt) const;
};

/// Concatenation of dense steps covering a time interval.
class DenseOutput {
 public:
  void push(DenseStep step);
  void append(const DenseOutput& other);
  bool empty() const noexcept { return steps_.empty(); }
  std::size_t dim() const noexcept { return steps_.empty() ? 0 : steps_.front().n; }
  double t_begin() const { return steps_.front().t0; }
  double t_end() const { return steps_.back().t_end; }
  /// Evaluates at t, clamped to [t_begin, t_end].
  void eval(double t, std::span<double> y) const;
  std::vector<double> eval(double t) const;
  const std::vector<DenseStep>& steps() const noexcept { return steps_; }
  std::vector<DenseStep>& steps() noexcept { return steps_; }

 private:
  std::vector<DenseStep> steps_;
};

struct StepStats {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t rhs_evals = 0;
};

class StepSizeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Dopri5 {
 public:
  Dopri5(Rhs rhs, std::size_t n, Tolerances tol,
         double h_max = std::numeric_limits<double>::infinity());

  /// Restarts integration at (t, y); the next step size is re-estimated.
  void reset(double t, std::span<const double> y);

  /// Takes one accepted step that does not pass `t_limit`.
  const DenseStep& step(double t_limit);

  double t() const noexcept { return t_; }
  std::span<const double> y() const noexcept { return y_; }
  std::span<const double> y_prev() const noexcept { return y_prev_; }
  const DenseStep& last_step() const noexcept { return dense_; }
  const StepStats& stats() const noexcept { return stats_; }

  /// Replaces the current state in place (e.g. after a projection) without
  /// resetting the step-size history.
  void overwrite_state(std::span<const double> y);

 private:
  double initial_step(double t_limit);
  double error_norm(std::span<const double> err) const;

  Rhs rhs_;
  std::size_t n_;
  Tolerances tol_;
  double h_max_;
  double t_ = 0.0;
  double h_ = 0.0;
  double err_old_ = 1e-4;
  bool last_rejected_ = false;
  std::vector<double> y_, y_prev_, k1_, k2_, k3_, k4_, k5_, k6_, k7_, ytmp_, ynew_, err_;
  DenseStep dense_;
  StepStats stats_;
};

/// Bisection for a sign change of `g` on [lo, hi] with g(lo) > 0 >= g(hi)
/// (or the reverse). Stops when |g| <= tol or the bracket collapses; returns
/// the bracket end closest to the root that still satisfies the tolerance,
/// otherwise the end on the far side of the crossing.
struct Root {
  double t = 0.0;
  double t_after = 0.0;  // a point strictly past the crossing
  double g = 0.0;
};
Root bisect(const std::function<double(double)>& g, double lo, double hi, double g_lo, double g_hi,
            double tol);

}  // namespace tfh::ode
