#include "tfh/automaton.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "tfh/csv.hpp"

namespace tfh {

std::vector<std::string> HysteresisAutomaton::field_inputs() const {
  std::vector<std::string> in = state_names;
  in.insert(in.end(), control_names.begin(), control_names.end());
  return in;
}

void HysteresisAutomaton::validate() const {
  const std::size_t nx = n_x();
  const std::size_t nu = n_u();
  if (nx == 0) throw std::invalid_argument("automaton needs at least one state");
  for (const auto* f : {&f_a, &f_b}) {
    if (f->n_out() != nx) throw std::invalid_argument("f_A/f_B output arity must equal the state dimension");
    if (f->n_in() != nx + nu) throw std::invalid_argument("f_A/f_B inputs must be states followed by controls");
  }
  if (psi.n_out() != 1) throw std::invalid_argument("psi must be scalar");
  if (psi.n_in() != nx) throw std::invalid_argument("psi inputs must be the states");
  if (u_lb.size() != nu || u_ub.size() != nu) throw std::invalid_argument("control bounds must match n_u");
  for (std::size_t i = 0; i < nu; ++i)
    if (!(u_lb[i] <= u_ub[i])) throw std::invalid_argument("control bound lb > ub");
  if (!x_lb.empty() && x_lb.size() != nx) throw std::invalid_argument("state lower bounds must match n_x");
  if (!x_ub.empty() && x_ub.size() != nx) throw std::invalid_argument("state upper bounds must match n_x");
  for (std::size_t i = 0; i < nx && !x_lb.empty() && !x_ub.empty(); ++i)
    if (!(x_lb[i] <= x_ub[i])) throw std::invalid_argument("state bound lb > ub");
}

HysteresisAutomaton HysteresisAutomaton::from_strings(std::vector<std::string> states,
                                                      std::vector<std::string> controls,
                                                      std::span<const std::string> f_a,
                                                      std::span<const std::string> f_b, const std::string& psi) {
  HysteresisAutomaton sys;
  sys.state_names = std::move(states);
  sys.control_names = std::move(controls);
  const auto inputs = sys.field_inputs();
  auto parse_all = [&](std::span<const std::string> texts) {
    std::vector<Expr> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(parse_expr(t, inputs));
    return ExprFunction(inputs, std::move(out));
  };
  sys.f_a = parse_all(f_a);
  sys.f_b = parse_all(f_b);
  sys.psi = ExprFunction(sys.state_names, {parse_expr(psi, sys.state_names)});
  sys.u_lb.assign(sys.n_u(), -std::numeric_limits<double>::infinity());
  sys.u_ub.assign(sys.n_u(), std::numeric_limits<double>::infinity());
  sys.validate();
  return sys;
}

std::vector<double> hybrid_rhs(const HysteresisAutomaton& sys, std::span<const double> x, int w,
                               std::span<const double> u) {
  if (w != 0 && w != 1) throw std::invalid_argument("hybrid_rhs: w must be 0 or 1");
  std::vector<double> in(x.begin(), x.end());
  in.insert(in.end(), u.begin(), u.end());
  return (w == 0 ? sys.f_a : sys.f_b).eval(in);
}

// ---------------------------------------------------------------------------

std::vector<double> HybridTrajectory::state_at(double t) const {
  if (segments.empty()) throw std::logic_error("state_at on empty trajectory");
  const HybridSegment* seg = &segments.front();
  for (const auto& s : segments)
    if (s.t_start <= t) seg = &s;
  return seg->dense.eval(t);
}

int HybridTrajectory::branch_at(double t) const {
  if (segments.empty()) throw std::logic_error("branch_at on empty trajectory");
  int w = segments.front().w;
  for (const auto& s : segments)
    if (s.t_start <= t) w = s.w;
  return w;
}

namespace {

double guard_value(const HysteresisAutomaton& sys, std::span<const double> x, int w) {
  const double p = sys.psi.eval_scalar(x);
  return w == 0 ? p - 1.0 : p;
}

// Guard reached: psi >= 1 on branch 0, psi <= 0 on branch 1 (up to tol).
bool guard_reached(double g, int w, double tol) { return w == 0 ? g >= -tol : g <= tol; }

}  // namespace

HybridTrajectory simulate_oracle(const HysteresisAutomaton& sys, std::span<const double> x0, int w0,
                                 const ControlSchedule& controls, double horizon, const OracleOptions& opts) {
  sys.validate();
  const std::size_t nx = sys.n_x();
  if (x0.size() != nx) throw std::invalid_argument("x0 has wrong dimension");
  if (w0 != 0 && w0 != 1) throw InitializationError("w0 must be 0 or 1");
  if (!(horizon >= 0.0)) throw std::invalid_argument("horizon must be non-negative");
  if (sys.n_u() > 0 && controls.dim() != sys.n_u()) throw std::invalid_argument("control schedule dimension mismatch");

  HybridTrajectory traj;
  traj.n_x = nx;
  std::vector<double> x(x0.begin(), x0.end());
  int w = w0;
  double t = 0.0;

  const double psi0 = sys.psi.eval_scalar(x);
  if ((w == 0 && psi0 > 1.0 + opts.tol_event) || (w == 1 && psi0 < -opts.tol_event))
    throw InitializationError("initial state lies on the forbidden side of its hysteresis branch");
  if (horizon == 0.0) return traj;

  auto apply_jump = [&](double ts) {
    traj.jumps.push_back({ts, w == 0 ? JumpDirection::Rise : JumpDirection::Fall, x});
    w = 1 - w;
    if (traj.jumps.size() >= opts.max_events)
      throw ZenoError("event count reached " + std::to_string(opts.max_events) + " before t=" +
                      std::to_string(horizon) + " (suspected Zeno behavior)");
  };

  if (guard_reached(guard_value(sys, x, w), w, opts.tol_event)) apply_jump(0.0);

  std::vector<double> u(sys.n_u());
  std::vector<double> in(nx + sys.n_u());
  ode::Rhs rhs = [&](double, std::span<const double> y, std::span<double> dy) {
    std::copy(y.begin(), y.end(), in.begin());
    std::copy(u.begin(), u.end(), in.begin() + static_cast<std::ptrdiff_t>(nx));
    (w == 0 ? sys.f_a : sys.f_b).eval(in, dy);
  };
  ode::Dopri5 stepper(rhs, nx, opts.tol);

  while (t < horizon) {
    HybridSegment seg;
    seg.t_start = t;
    seg.w = w;
    seg.times.push_back(t);
    seg.states.push_back(x);
    bool jumped = false;
    while (t < horizon && !jumped) {
      const double t_limit = std::min(horizon, controls.dim() ? controls.next_breakpoint(t) : horizon);
      if (sys.n_u() > 0) {
        auto uc = controls.at(t);
        u.assign(uc.begin(), uc.end());
      }
      // Re-seed the stepper so that every control piece starts from a fresh RHS.
      stepper.reset(t, x);
      while (t < t_limit) {
        const ode::DenseStep& step = stepper.step(t_limit);
        const double g_end = guard_value(sys, stepper.y(), w);
        if (guard_reached(g_end, w, opts.tol_event)) {
          const double g_start = guard_value(sys, stepper.y_prev(), w);
          auto g_of_t = [&](double tt) { return guard_value(sys, step.eval(tt), w); };
          ode::Root root = ode::bisect(g_of_t, step.t0, step.t_end, g_start, g_end, opts.tol_event);
          ode::DenseStep truncated = step;
          truncated.t_end = root.t;
          seg.dense.push(truncated);
          t = root.t;
          x = step.eval(root.t);
          seg.times.push_back(t);
          seg.states.push_back(x);
          jumped = true;
          break;
        }
        seg.dense.push(step);
        t = stepper.t();
        x.assign(stepper.y().begin(), stepper.y().end());
        seg.times.push_back(t);
        seg.states.push_back(x);
      }
    }
    seg.t_end = t;
    if (seg.dense.empty()) {
      // Zero-length segment (jump right at a restart); keep a constant interpolant.
      ode::DenseStep s{t, 0.0, t, nx, std::vector<double>(5 * nx, 0.0)};
      std::copy(x.begin(), x.end(), s.coeffs.begin());
      seg.dense.push(s);
    }
    traj.segments.push_back(std::move(seg));
    if (jumped) apply_jump(t);
  }
  return traj;
}

void write_csv(std::ostream& os, const HybridTrajectory& traj, std::span<const std::string> state_names) {
  os << 't';
  for (const auto& n : state_names) os << ',' << n;
  os << ",w,event\n";
  for (std::size_t k = 0; k < traj.segments.size(); ++k) {
    const auto& seg = traj.segments[k];
    for (std::size_t i = 0; i < seg.times.size(); ++i) {
      const bool event_row = i == 0 && k > 0;
      os << csv::num(seg.times[i]) << ',';
      csv::row(os, seg.states[i]);
      os << ',' << seg.w << ',' << (event_row ? 1 : 0) << '\n';
    }
  }
}

void write_events_csv(std::ostream& os, const HybridTrajectory& traj, std::span<const std::string> state_names) {
  os << "t,direction";
  for (const auto& n : state_names) os << ',' << n;
  os << '\n';
  for (const auto& ev : traj.jumps) {
    os << csv::num(ev.t) << ',' << (ev.direction == JumpDirection::Rise ? "0->1" : "1->0") << ',';
    csv::row(os, ev.x);
    os << '\n';
  }
}

EquivalenceReport compare_trajectories(const HybridTrajectory& a, const HybridTrajectory& b, double horizon,
                                       std::size_t grid_points, double exclusion) {
  if (grid_points < 2) throw std::invalid_argument("compare_trajectories: need at least two grid points");
  if (!(horizon >= 0.0)) throw std::invalid_argument("compare_trajectories: negative horizon");
  EquivalenceReport rep;
  rep.grid_points = grid_points;
  if (a.empty() || b.empty()) return rep;
  std::vector<double> jumps;
  for (const auto& j : a.jumps) jumps.push_back(j.t);
  for (const auto& j : b.jumps) jumps.push_back(j.t);
  std::sort(jumps.begin(), jumps.end());
  for (std::size_t k = 0; k < grid_points; ++k) {
    const double t = horizon * static_cast<double>(k) / static_cast<double>(grid_points - 1);
    const auto it = std::lower_bound(jumps.begin(), jumps.end(), t - exclusion);
    if (it != jumps.end() && *it <= t + exclusion) continue;
    auto xa = a.state_at(t);
    auto xb = b.state_at(t);
    double e = 0.0;
    for (std::size_t i = 0; i < xa.size(); ++i) e = std::max(e, std::abs(xa[i] - xb[i]));
    if (rep.t.empty() || e > rep.max_error) {
      rep.max_error = e;
      rep.worst_t = t;
    }
    const int wa = a.branch_at(t), wb = b.branch_at(t);
    rep.w_mismatches += wa != wb;
    rep.t.push_back(t);
    rep.x_a.push_back(std::move(xa));
    rep.x_b.push_back(std::move(xb));
    rep.w_a.push_back(wa);
    rep.w_b.push_back(wb);
  }
  return rep;
}

}  // namespace tfh
