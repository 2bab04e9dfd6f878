#pragma once

// Direct collocation of optimal control problems on the time-freezing PSS.
// Each control interval is split into finite elements integrated with the
// two-stage Radau IIA rule; the Filippov multipliers enter in Stewart form
// (theta, lambda, mu) and the complementarity conditions are relaxed and
// driven to zero by a homotopy over smooth NLPs.

#include <cstddef>
#include <iosfwd>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tfh/nlp.hpp"
#include "tfh/timefreeze.hpp"

namespace tfh::ocp {

class OcpError : public std::runtime_error {
 public:
  OcpError(const std::string& what, int stage = -1) : std::runtime_error(what), stage_(stage) {}
  /// Homotopy stage at which the failure happened, -1 outside the homotopy.
  int stage() const noexcept { return stage_; }

 private:
  int stage_;
};

struct OcpSpec {
  double tau_f = 5.0;
  std::size_t N = 10;     // control intervals
  std::size_t N_fe = 3;   // finite elements per interval
  bool time_transformation = true;  // speed of time s_k as a decision variable
  double s_bar = 10.0;    // s_k in [1/s_bar, s_bar]
  std::vector<double> x0;
  double w0 = 0.0;
  /// Terminal equalities on components of y = (x, w, t).
  std::vector<std::pair<std::size_t, double>> terminal;
  /// Mayer term over y(tau_f), written with the names of TimeFreezingPss::y_names().
  /// Empty means no objective (feasibility problem).
  std::string mayer = "t";
  double control_penalty = 0.0;  // adds rho * sum_k |u_k|^2
  /// Adds rho_h * sum ((h - h_bar) / h_bar)^2 over all elements. Without it,
  /// elements away from switches can shrink to their lower bound and leave
  /// their algebraic variables undetermined.
  double h_penalty = 0.03;
  /// Every stage of an element carries the same clock rate (weight of the two
  /// physical fields). At psi = 1, w = 0 the sliding condition leaves theta
  /// free, and the last Radau stage of the element ending there could
  /// otherwise run the clock at any speed. Ignored with fixed_h.
  bool uniform_clock = true;
  bool fixed_h = false;          // plain relaxed collocation without switch detection
  double h_lower_factor = 1e-6;  // h in [factor * h_bar, h_upper_factor * h_bar]
  double h_upper_factor = 2.0;

  /// Throws std::invalid_argument when these settings are inconsistent with `tf`.
  void validate(const TimeFreezingPss& tf) const;
};

/// Variable and constraint counts of the discretization.
struct LayoutCounts {
  std::size_t variables = 0;
  std::size_t constraints = 0;
  std::size_t complementarity_rows = 0;
};

/// Closed-form counts for a PSS with n_y states, n_u controls and n_f fields.
LayoutCounts layout_formula(const OcpSpec& spec, std::size_t n_y, std::size_t n_u, std::size_t n_f = 4,
                            std::size_t n_stages = 2);

/// Radau IIA, two stages.
struct Radau2 {
  static constexpr std::size_t stages = 2;
  static constexpr double c[2] = {1.0 / 3.0, 1.0};
  static constexpr double A[2][2] = {{5.0 / 12.0, -1.0 / 12.0}, {3.0 / 4.0, 1.0 / 4.0}};
};

/// Index bookkeeping for the decision vector.
struct StageIndex {
  std::size_t y = 0;       // first of n_y state entries
  std::size_t theta = 0;   // first of n_f entries
  std::size_t lambda = 0;
  std::size_t mu = 0;
};

struct ElementIndex {
  std::optional<std::size_t> h;  // absent with fixed element lengths
  std::vector<StageIndex> stages;
};

struct IntervalIndex {
  std::size_t u = 0;  // first of n_u entries
  std::optional<std::size_t> s;
  std::vector<ElementIndex> elements;
};

struct CollocationProblem {
  OcpSpec spec;
  std::shared_ptr<const TimeFreezingPss> tf;
  nlp::Nlp nlp;
  std::vector<IntervalIndex> intervals;
  std::vector<std::size_t> complementarity_rows;  // constraint rows relaxed by sigma
  std::vector<double> initial_guess;
  std::vector<double> lambda0;  // Stewart multipliers at y(0)
  double h_bar = 0.0;

  LayoutCounts counts() const { return {nlp.n(), nlp.m(), complementarity_rows.size()}; }
};

/// Builds the NLP of the collocated problem. The complementarity rows start
/// with upper bound +inf; `relax` sets them.
CollocationProblem discretize(const TimeFreezingPss& tf, const OcpSpec& spec);

/// Copy of the NLP with every complementarity product bounded by sigma.
nlp::Nlp relax(const CollocationProblem& problem, double sigma);

struct HomotopyOptions {
  double sigma0 = 1.0;
  double kappa = 0.1;
  double sigma_min = 1e-9;
  nlp::Options nlp;  // first stage; later stages are warm-started
  /// Each stage stops its barrier at barrier_ratio * sigma (the last one goes
  /// down to nlp.mu_min); the next stage starts there.
  double barrier_ratio = 0.1;
  /// A failed stage is solved again from the same start with these ratios,
  /// in order; a ratio that succeeds is kept for the following stages. If a
  /// stage still fails, the whole path is restarted with each of them as the
  /// initial ratio before the homotopy gives up.
  std::vector<double> retry_ratios{0.5, 0.01};
  double warm_bound_push = 1e-9;
  double warm_mult_push = 1e-8;
  std::string log_dir;  // per-stage iteration logs when non-empty
};

struct HomotopyStage {
  double sigma = 0.0;
  std::size_t iterations = 0;   // of the accepted solve
  std::size_t retries = 0;
  double complementarity = 0.0;  // largest relaxed product
  double objective = 0.0;
  nlp::Status status = nlp::Status::Solved;
};

struct TrajectoryNode {
  double tau = 0.0;  // numerical time of the node
  std::vector<double> y;
  std::vector<double> theta;  // empty at the initial node
  std::size_t interval = 0;
};

struct OcpSolution {
  std::vector<std::vector<double>> u;  // per interval
  std::vector<double> s;
  std::vector<std::vector<double>> h;  // per interval, per element
  std::vector<TrajectoryNode> nodes;
  std::vector<double> v;  // raw decision vector
  double T_f = 0.0;
  double objective = 0.0;
  double E_Tf = 0.0;      // terminal error after re-simulation with the oracle
  std::vector<double> x_sim_Tf;
  std::vector<HomotopyStage> stages;
  std::size_t total_iterations = 0;  // including failed attempts
  std::size_t restarts = 0;          // of the homotopy path
  double cpu_seconds = 0.0;
  double max_complementarity = 0.0;
  double max_simplex_error = 0.0;
};

OcpSolution homotopy_solve(const CollocationProblem& problem, const HomotopyOptions& opts = {});

/// Largest Stewart product theta_i * lambda_i, including the cross terms of
/// adjacent stages, over a decision vector.
double complementarity_residual(const CollocationProblem& problem, std::span<const double> v);

/// Re-simulates the piecewise-constant controls with the hysteresis oracle
/// and returns the automaton state at physical time T_f.
std::vector<double> resimulate_oracle(const CollocationProblem& problem, const OcpSolution& sol);

/// Re-simulates the piecewise-constant controls and speeds on the PSS and
/// returns y at every element boundary (same order as the interval/element grid).
std::vector<std::vector<double>> resimulate_pss(const CollocationProblem& problem, const OcpSolution& sol,
                                                 const PssOptions& opts = {});

/// Columns: interval, one per control, s.
void write_controls_csv(std::ostream& os, const CollocationProblem& problem, const OcpSolution& sol);
/// Columns: tau, t, x..., w, theta_1..theta_4, interval.
void write_trajectory_csv(std::ostream& os, const CollocationProblem& problem, const OcpSolution& sol);

}  // namespace tfh::ocp
