#pragma once

// Time-freezing reformulation of a hysteresis automaton. The augmented state
// is y = (x, w, t); the (psi(x), w)-plane is split into four Voronoi cells.
// Cells 1 and 4 carry the DAE-forming fields, cells 2 and 3 the auxiliary
// fields that move w between the branches while x and t stay frozen.

#include <array>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "tfh/automaton.hpp"
#include "tfh/expr.hpp"
#include "tfh/filippov.hpp"

namespace tfh {

struct VoronoiPartition {
  std::array<std::array<double, 2>, 4> z{{{0.25, -0.25}, {0.25, 0.25}, {0.75, 0.75}, {0.75, 1.25}}};

  /// Throws std::invalid_argument if two points coincide.
  void validate() const;
  std::array<double, 4> discriminants(double psi, double w) const;
  /// Zero-based index of the nearest point (first one on ties).
  std::size_t region_index(double psi, double w) const;
};

/// a * psi^2 / (1 + psi^2); throws for a <= 0.
double gamma(double psi, double a);
Expr gamma(const Expr& psi, double a);

class TimeFreezingPss {
 public:
  TimeFreezingPss(HysteresisAutomaton sys, double a, VoronoiPartition points);

  const HysteresisAutomaton& automaton() const noexcept { return sys_; }
  double a() const noexcept { return a_; }
  const VoronoiPartition& points() const noexcept { return points_; }
  const PssModel& model() const noexcept { return model_; }

  std::size_t n_x() const noexcept { return sys_.n_x(); }
  std::size_t n_y() const noexcept { return sys_.n_x() + 2; }
  std::size_t n_u() const noexcept { return sys_.n_u(); }
  std::size_t w_index() const noexcept { return sys_.n_x(); }
  std::size_t t_index() const noexcept { return sys_.n_x() + 1; }
  std::vector<std::string> y_names() const;

  /// Symbolic pieces over caller-provided expressions for x, w and u, so the
  /// collocation code can instantiate them on its own decision variables.
  Expr psi_expr(std::span<const Expr> x) const;
  std::array<Expr, 4> discriminant_exprs(std::span<const Expr> x, const Expr& w) const;
  /// Affine indicators -2 z_i . (psi, w) + |z_i|^2. They differ from the
  /// negated discriminants by the same term in every region.
  std::array<Expr, 4> indicator_exprs(std::span<const Expr> x, const Expr& w) const;
  std::array<std::vector<Expr>, 4> field_exprs(std::span<const Expr> x, std::span<const Expr> u) const;

  std::vector<double> aux_ode_a(std::span<const double> y) const;
  std::vector<double> aux_ode_b(std::span<const double> y) const;
  std::vector<double> dae_forming_a(std::span<const double> y, std::span<const double> u) const;
  std::vector<double> dae_forming_b(std::span<const double> y, std::span<const double> u) const;

  /// y = (x0, w0, 0).
  std::vector<double> initial_state(std::span<const double> x0, double w0) const;

 private:
  HysteresisAutomaton sys_;
  double a_;
  VoronoiPartition points_;
  PssModel model_;
};

TimeFreezingPss build_time_freezing(const HysteresisAutomaton& sys, double a = 1.0, const VoronoiPartition& points = {});

/// Integrates the PSS from (x0, w0, 0) until the clock reaches `horizon`.
/// Controls are given in physical time; the integration restarts at every
/// breakpoint so that each piece runs with a constant input.
Trajectory simulate_time_freezing(const TimeFreezingPss& tf, std::span<const double> x0, double w0,
                                  const ControlSchedule& controls, double horizon, const PssOptions& opts = {});

struct FrozenPhase {
  double tau_start = 0.0;
  double tau_end = 0.0;
  std::size_t first_segment = 0;
  std::size_t last_segment = 0;
};

/// Maximal tau-intervals over which the clock does not advance. Zero-length
/// segments are absorbed into neighbouring frozen phases but never start one.
std::vector<FrozenPhase> frozen_phases(const TimeFreezingPss& tf, const Trajectory& traj, double tol_clock = 1e-12);

class ProjectionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Drops the frozen segments and maps the rest onto the physical time axis.
/// w is snapped to {0, 1} within tol_w; throws ProjectionError if the clock
/// runs backwards or w leaves its branch outside a frozen phase.
HybridTrajectory project_physical(const TimeFreezingPss& tf, const Trajectory& traj, double tol_w = 1e-6);

/// Columns psi, w, region (1-based) on an n_psi x n_w grid.
void write_region_grid(std::ostream& os, const VoronoiPartition& points, double psi_lo, double psi_hi, double w_lo,
                       double w_hi, std::size_t n_psi, std::size_t n_w);

}  // namespace tfh
