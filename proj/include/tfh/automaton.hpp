#pragma once

// Two-mode hybrid system with a delayed-relay hysteresis on the scalar
// switching function psi(x), and an event-driven reference simulator for it.
// The simulator is kept independent of the time-freezing machinery so it can
// serve as the oracle for equivalence checks.

#include <cstddef>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "tfh/errors.hpp"
#include "tfh/expr.hpp"
#include "tfh/ode.hpp"
#include "tfh/schedule.hpp"

namespace tfh {

struct HysteresisAutomaton {
  std::vector<std::string> state_names;
  std::vector<std::string> control_names;
  ExprFunction f_a;  // inputs: states then controls; n_x outputs
  ExprFunction f_b;
  ExprFunction psi;  // inputs: states; scalar output
  std::vector<double> u_lb, u_ub;
  std::vector<double> x_lb, x_ub;  // empty means unbounded

  std::size_t n_x() const noexcept { return state_names.size(); }
  std::size_t n_u() const noexcept { return control_names.size(); }

  /// Throws std::invalid_argument on any arity or bound inconsistency.
  void validate() const;

  /// Builds the automaton from expression strings over state and control names.
  static HysteresisAutomaton from_strings(std::vector<std::string> states, std::vector<std::string> controls,
                                          std::span<const std::string> f_a, std::span<const std::string> f_b,
                                          const std::string& psi);

  /// Input names of f_a/f_b: states followed by controls.
  std::vector<std::string> field_inputs() const;
};

/// f_A(x,u) on branch w = 0 and f_B(x,u) on branch w = 1.
std::vector<double> hybrid_rhs(const HysteresisAutomaton& sys, std::span<const double> x, int w,
                               std::span<const double> u);

enum class JumpDirection { Rise, Fall };  // 0 -> 1 and 1 -> 0

struct JumpEvent {
  double t = 0.0;
  JumpDirection direction = JumpDirection::Rise;
  std::vector<double> x;
};

struct HybridSegment {
  double t_start = 0.0;
  double t_end = 0.0;
  int w = 0;
  std::vector<double> times;
  std::vector<std::vector<double>> states;
  ode::DenseOutput dense;  // state x only
};

struct HybridTrajectory {
  std::size_t n_x = 0;
  std::vector<HybridSegment> segments;
  std::vector<JumpEvent> jumps;

  bool empty() const noexcept { return segments.empty(); }
  double t_end() const { return segments.empty() ? 0.0 : segments.back().t_end; }
  /// Right-continuous state and branch lookup.
  std::vector<double> state_at(double t) const;
  int branch_at(double t) const;
};

struct OracleOptions {
  ode::Tolerances tol{1e-8, 1e-10};
  double tol_event = 1e-10;
  std::size_t max_events = 10000;
};

/// Integrates the active mode and applies the jump law whenever the guard
/// (psi - 1 on branch 0, psi on branch 1) is reached. A state starting exactly
/// on its guard jumps before integration.
HybridTrajectory simulate_oracle(const HysteresisAutomaton& sys, std::span<const double> x0, int w0,
                                 const ControlSchedule& controls, double horizon,
                                 const OracleOptions& opts = {});

struct EquivalenceReport {
  std::size_t grid_points = 0;      // before exclusion
  double max_error = 0.0;           // max-norm state difference over compared points
  double worst_t = 0.0;
  std::size_t w_mismatches = 0;
  // One entry per compared grid point.
  std::vector<double> t;
  std::vector<std::vector<double>> x_a, x_b;
  std::vector<int> w_a, w_b;
};

/// Samples both trajectories on a uniform grid of `grid_points` times over
/// [0, horizon], skipping points within `exclusion` of a jump of either one.
EquivalenceReport compare_trajectories(const HybridTrajectory& a, const HybridTrajectory& b, double horizon,
                                       std::size_t grid_points, double exclusion);

/// CSV columns: t, state names..., w, event. Jumps appear as two rows at the
/// same time; the post-jump row carries event = 1.
void write_csv(std::ostream& os, const HybridTrajectory& traj, std::span<const std::string> state_names);
void write_events_csv(std::ostream& os, const HybridTrajectory& traj, std::span<const std::string> state_names);

}  // namespace tfh
