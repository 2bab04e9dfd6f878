#pragma once

// Piecewise-smooth systems y' = f_i(y, u) on regions R_i = {argmax_k g_k(y) = i}
// under Filippov's convexification. The integrator handles region interiors
// with Dormand-Prince steps, localizes boundary contacts by bisection on the
// dense output, and follows attracting codimension-one sliding modes with an
// explicit convex multiplier theta.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tfh/errors.hpp"
#include "tfh/expr.hpp"
#include "tfh/ode.hpp"
#include "tfh/schedule.hpp"

namespace tfh {

struct Mode {
  enum class Kind { Interior, Sliding };
  Kind kind = Kind::Interior;
  std::size_t i = 0;
  std::size_t j = 0;  // sliding only, i < j

  static Mode interior(std::size_t r) { return {Kind::Interior, r, r}; }
  static Mode sliding(std::size_t a, std::size_t b) { return {Kind::Sliding, std::min(a, b), std::max(a, b)}; }
  bool is_sliding() const noexcept { return kind == Kind::Sliding; }
  friend bool operator==(const Mode&, const Mode&) = default;
};

struct PssModel {
  std::vector<std::string> state_names;
  std::vector<std::string> control_names;
  std::vector<std::string> region_names;
  ExprFunction discriminants;           // inputs y; one output per region
  std::vector<ExprFunction> fields;     // inputs y then u; n_y outputs each
  double eps_act = 1e-9;
  /// Optional choice of mode where three or more regions meet. Receives the
  /// state and the active set; returning nullopt falls back to the generic rule.
  std::function<std::optional<Mode>(std::span<const double>, std::span<const std::size_t>)> corner_resolver;

  std::size_t n_y() const noexcept { return state_names.size(); }
  std::size_t n_u() const noexcept { return control_names.size(); }
  std::size_t n_regions() const noexcept { return fields.size(); }

  /// Checks arities and compiles the discriminant Jacobian. Must be called
  /// after the public members are filled in.
  void finalize();

  std::vector<double> eval_discriminants(std::span<const double> y) const;
  /// Row-major m x n_y Jacobian of the discriminants.
  std::vector<double> eval_discriminant_jacobian(std::span<const double> y) const;
  void eval_field(std::size_t region, std::span<const double> y, std::span<const double> u, std::span<double> out) const;
  std::vector<double> eval_field(std::size_t region, std::span<const double> y, std::span<const double> u) const;
  std::size_t region_of(std::span<const double> y) const;
  std::string mode_tag(const Mode& m) const;

 private:
  ExprFunction discriminant_jacobian_;
};

/// Indices whose discriminant is within eps_act of the maximum.
std::vector<std::size_t> active_set(const PssModel& model, std::span<const double> y);

enum class SlidingStatus { Attracting, Crossing, Repelling, Degenerate };

struct SlidingResult {
  std::vector<double> ydot;
  double theta_i = 0.5;
  double theta_j = 0.5;
  /// Rates of h = g_i - g_j along f_i and f_j.
  double rate_i = 0.0;
  double rate_j = 0.0;
  SlidingStatus status = SlidingStatus::Degenerate;
};

/// Convex combination of f_i and f_j tangent to {g_i = g_j}. For non-attracting
/// boundaries the status reports the situation and theta is still the
/// (possibly out-of-simplex) tangency solution, clamped to [0, 1].
SlidingResult sliding_dynamics(const PssModel& model, std::span<const double> y, std::span<const double> u,
                               std::size_t i, std::size_t j);

struct PssOptions {
  ode::Tolerances tol{1e-8, 1e-10};
  double tol_event = 1e-10;
  std::size_t max_events = 10000;
  /// Steps are bounded by step_scale * rtol^(1/4) in addition to the error
  /// control, so the step sequence varies smoothly with the tolerance and the
  /// global error of the propagated fifth-order solution scales like
  /// rtol^(5/4). Infinity gives purely adaptive steps.
  double step_scale = 5.0;
  /// Stops as soon as y[stop_component] reaches stop_value from below.
  std::optional<std::size_t> stop_component;
  double stop_value = 0.0;
};

struct SwitchEvent {
  double tau = 0.0;
  Mode from;
  Mode to;
  bool flagged = false;
  std::string note;
};

struct TrajectorySegment {
  Mode mode;
  double tau_start = 0.0;
  double tau_end = 0.0;
  std::vector<double> taus;
  std::vector<std::vector<double>> states;
  std::vector<std::vector<double>> thetas;  // one simplex vector (length m) per sample
  ode::DenseOutput dense;
};

struct Trajectory {
  std::size_t n_y = 0;
  std::size_t n_regions = 0;
  std::vector<TrajectorySegment> segments;
  std::vector<SwitchEvent> events;

  bool empty() const noexcept { return segments.empty(); }
  double tau_end() const { return segments.empty() ? 0.0 : segments.back().tau_end; }
  std::vector<double> state_at(double tau) const;
  std::vector<double> final_state() const;
};

/// Integrates the Filippov system from y0 over [0, tau_f] with a piecewise
/// constant control schedule in the independent variable.
Trajectory integrate_pss(const PssModel& model, std::span<const double> y0, const ControlSchedule& u,
                         double tau_f, const PssOptions& opts = {});

/// Columns: tau, the states listed in `columns` (indices into y), mode, theta_1..theta_m.
void write_csv(std::ostream& os, const PssModel& model, const Trajectory& traj, std::span<const std::size_t> columns);

}  // namespace tfh
