#include "tfh/timefreeze.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "tfh/csv.hpp"

namespace tfh {

void VoronoiPartition::validate() const {
  for (std::size_t i = 0; i < 4; ++i) {
    if (!std::isfinite(z[i][0]) || !std::isfinite(z[i][1]))
      throw std::invalid_argument("Voronoi point z" + std::to_string(i + 1) + " is not finite");
    for (std::size_t j = i + 1; j < 4; ++j) {
      const double d = std::hypot(z[i][0] - z[j][0], z[i][1] - z[j][1]);
      if (d <= 1e-12)
        throw std::invalid_argument("Voronoi points z" + std::to_string(i + 1) + " and z" + std::to_string(j + 1) +
                                    " coincide");
    }
  }
}

std::array<double, 4> VoronoiPartition::discriminants(double psi, double w) const {
  std::array<double, 4> g{};
  for (std::size_t i = 0; i < 4; ++i) {
    const double dp = psi - z[i][0];
    const double dw = w - z[i][1];
    g[i] = -(dp * dp + dw * dw);
  }
  return g;
}

std::size_t VoronoiPartition::region_index(double psi, double w) const {
  const auto g = discriminants(psi, w);
  return static_cast<std::size_t>(std::max_element(g.begin(), g.end()) - g.begin());
}

double gamma(double psi, double a) {
  if (!(a > 0.0)) throw std::invalid_argument("relaxation speed a must be positive");
  const double p2 = psi * psi;
  return a * p2 / (1.0 + p2);
}

Expr gamma(const Expr& psi, double a) {
  if (!(a > 0.0)) throw std::invalid_argument("relaxation speed a must be positive");
  const Expr p2 = pow(psi, 2);
  return a * p2 / (1.0 + p2);
}

namespace {

bool has_name(const std::vector<std::string>& names, const std::string& n) {
  return std::find(names.begin(), names.end(), n) != names.end();
}

}  // namespace

TimeFreezingPss::TimeFreezingPss(HysteresisAutomaton sys, double a, VoronoiPartition points)
    : sys_(std::move(sys)), a_(a), points_(points) {
  sys_.validate();
  if (!(a_ > 0.0) || !std::isfinite(a_)) throw std::invalid_argument("relaxation speed a must be positive");
  points_.validate();
  for (const char* reserved : {"w", "t"})
    if (has_name(sys_.state_names, reserved) || has_name(sys_.control_names, reserved))
      throw std::invalid_argument(std::string("name '") + reserved + "' is reserved for the augmented state");

  const auto yn = y_names();
  std::vector<std::string> in = yn;
  in.insert(in.end(), sys_.control_names.begin(), sys_.control_names.end());
  const auto yv = make_variables(yn);
  const auto uv = make_variables(sys_.control_names, n_y());
  const std::span<const Expr> xv(yv.data(), n_x());

  const auto g = discriminant_exprs(xv, yv[w_index()]);
  model_.state_names = yn;
  model_.control_names = sys_.control_names;
  model_.region_names = {"R1", "R2", "R3", "R4"};
  model_.discriminants = ExprFunction(yn, std::vector<Expr>(g.begin(), g.end()));
  for (auto& f : field_exprs(xv, uv)) model_.fields.emplace_back(in, std::move(f));

  // Fallback for the two corners where three cells meet on the branch ends.
  model_.corner_resolver = [](std::span<const double>, std::span<const std::size_t> act) -> std::optional<Mode> {
    auto has = [&](std::size_t r) { return std::find(act.begin(), act.end(), r) != act.end(); };
    if (act.size() == 3 && has(0) && has(1) && has(2)) return Mode::interior(2);
    if (act.size() == 3 && has(1) && has(2) && has(3)) return Mode::interior(1);
    return std::nullopt;
  };
  model_.finalize();
}

std::vector<std::string> TimeFreezingPss::y_names() const {
  std::vector<std::string> n = sys_.state_names;
  n.emplace_back("w");
  n.emplace_back("t");
  return n;
}

Expr TimeFreezingPss::psi_expr(std::span<const Expr> x) const {
  if (x.size() != n_x()) throw std::invalid_argument("psi_expr: wrong state count");
  return substitute(sys_.psi.output(0), x);
}

std::array<Expr, 4> TimeFreezingPss::discriminant_exprs(std::span<const Expr> x, const Expr& w) const {
  const Expr p = psi_expr(x);
  std::array<Expr, 4> g;
  for (std::size_t i = 0; i < 4; ++i) g[i] = -(pow(p - points_.z[i][0], 2) + pow(w - points_.z[i][1], 2));
  return g;
}

std::array<Expr, 4> TimeFreezingPss::indicator_exprs(std::span<const Expr> x, const Expr& w) const {
  const Expr p = psi_expr(x);
  std::array<Expr, 4> g;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& zi = points_.z[i];
    g[i] = zi[0] * zi[0] + zi[1] * zi[1] - 2.0 * zi[0] * p - 2.0 * zi[1] * w;
  }
  return g;
}

std::array<std::vector<Expr>, 4> TimeFreezingPss::field_exprs(std::span<const Expr> x,
                                                              std::span<const Expr> u) const {
  if (x.size() != n_x() || u.size() != n_u()) throw std::invalid_argument("field_exprs: wrong argument count");
  std::vector<Expr> xu(x.begin(), x.end());
  xu.insert(xu.end(), u.begin(), u.end());
  const Expr p = psi_expr(x);
  const Expr ga = gamma(p - 1.0, a_);
  const Expr gb = gamma(p, a_);
  const std::size_t nx = n_x();

  std::array<std::vector<Expr>, 4> f;
  for (auto& fi : f) fi.assign(n_y(), Expr(0.0));
  for (std::size_t k = 0; k < nx; ++k) {
    f[0][k] = 2.0 * substitute(sys_.f_a.output(k), xu);
    f[3][k] = 2.0 * substitute(sys_.f_b.output(k), xu);
  }
  f[0][nx] = ga;
  f[0][nx + 1] = Expr(2.0);
  f[1][nx] = -ga;
  f[2][nx] = gb;
  f[3][nx] = -gb;
  f[3][nx + 1] = Expr(2.0);
  return f;
}

std::vector<double> TimeFreezingPss::aux_ode_a(std::span<const double> y) const {
  if (y.size() != n_y()) throw std::invalid_argument("aux_ode_a: wrong state dimension");
  std::vector<double> out(n_y(), 0.0);
  out[w_index()] = -gamma(sys_.psi.eval_scalar(y.first(n_x())) - 1.0, a_);
  return out;
}

std::vector<double> TimeFreezingPss::aux_ode_b(std::span<const double> y) const {
  if (y.size() != n_y()) throw std::invalid_argument("aux_ode_b: wrong state dimension");
  std::vector<double> out(n_y(), 0.0);
  out[w_index()] = gamma(sys_.psi.eval_scalar(y.first(n_x())), a_);
  return out;
}

namespace {

std::vector<double> dae_forming(const ExprFunction& f, std::span<const double> y, std::span<const double> u,
                                std::size_t nx, std::vector<double> aux) {
  std::vector<double> in(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(nx));
  in.insert(in.end(), u.begin(), u.end());
  const auto fx = f.eval(in);
  std::vector<double> out(nx + 2, 0.0);
  for (std::size_t k = 0; k < nx; ++k) out[k] = 2.0 * fx[k];
  out[nx + 1] = 2.0;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] -= aux[k];
  return out;
}

}  // namespace

std::vector<double> TimeFreezingPss::dae_forming_a(std::span<const double> y, std::span<const double> u) const {
  if (u.size() != n_u()) throw std::invalid_argument("dae_forming_a: wrong control dimension");
  return dae_forming(sys_.f_a, y, u, n_x(), aux_ode_a(y));
}

std::vector<double> TimeFreezingPss::dae_forming_b(std::span<const double> y, std::span<const double> u) const {
  if (u.size() != n_u()) throw std::invalid_argument("dae_forming_b: wrong control dimension");
  return dae_forming(sys_.f_b, y, u, n_x(), aux_ode_b(y));
}

std::vector<double> TimeFreezingPss::initial_state(std::span<const double> x0, double w0) const {
  if (x0.size() != n_x()) throw std::invalid_argument("x0 has wrong dimension");
  std::vector<double> y(x0.begin(), x0.end());
  y.push_back(w0);
  y.push_back(0.0);
  return y;
}

TimeFreezingPss build_time_freezing(const HysteresisAutomaton& sys, double a, const VoronoiPartition& points) {
  return TimeFreezingPss(sys, a, points);
}

namespace {

double clock_gain(const TimeFreezingPss& tf, const TrajectorySegment& seg) {
  return seg.states.back()[tf.t_index()] - seg.states.front()[tf.t_index()];
}

}  // namespace

Trajectory simulate_time_freezing(const TimeFreezingPss& tf, std::span<const double> x0, double w0,
                                  const ControlSchedule& controls, double horizon, const PssOptions& opts) {
  if (!(horizon >= 0.0) || !std::isfinite(horizon)) throw std::invalid_argument("horizon must be finite and >= 0");
  if (!controls.empty() && controls.dim() != tf.n_u()) throw std::invalid_argument("control schedule has wrong size");
  if (controls.empty() && tf.n_u() != 0) throw std::invalid_argument("control schedule missing");
  Trajectory out;
  out.n_y = tf.n_y();
  out.n_regions = tf.model().n_regions();
  std::vector<double> y = tf.initial_state(x0, w0);
  if (horizon == 0.0) return out;
  PssOptions o = opts;
  o.stop_component = tf.t_index();
  // Unfrozen flow advances the clock at unit speed; every jump adds 2/a.
  const double frozen_budget = 2.0 / tf.a() * static_cast<double>(opts.max_events + 1);
  double t = 0.0;
  double tau = 0.0;
  while (t < horizon) {
    const double t_next = std::min(horizon, controls.empty() ? horizon : controls.next_breakpoint(t));
    const ControlSchedule u =
        controls.empty() ? ControlSchedule{} : ControlSchedule::constant({controls.at(t).begin(), controls.at(t).end()});
    o.stop_value = t_next;
    Trajectory piece = integrate_pss(tf.model(), y, u, (t_next - t) + frozen_budget, o);
    for (auto& seg : piece.segments) {
      seg.tau_start += tau;
      seg.tau_end += tau;
      for (double& s : seg.taus) s += tau;
      for (auto& step : seg.dense.steps()) step = step.shifted(tau);
      out.segments.push_back(std::move(seg));
    }
    for (auto& ev : piece.events) {
      ev.tau += tau;
      out.events.push_back(std::move(ev));
    }
    if (piece.empty()) break;
    tau = out.tau_end();
    y = out.final_state();
    if (y[tf.t_index()] < t_next - 1e-9)
      throw ZenoError("clock stalled at t = " + csv::num(y[tf.t_index()]) + " before " + csv::num(t_next));
    t = t_next;
  }
  return out;
}

std::vector<FrozenPhase> frozen_phases(const TimeFreezingPss& tf, const Trajectory& traj, double tol_clock) {
  std::vector<FrozenPhase> out;
  bool open = false;
  for (std::size_t k = 0; k < traj.segments.size(); ++k) {
    const auto& seg = traj.segments[k];
    const bool zero_length = seg.tau_end == seg.tau_start;
    const bool frozen = std::abs(clock_gain(tf, seg)) <= tol_clock;
    if (frozen && (open || !zero_length)) {
      if (!open) out.push_back({seg.tau_start, seg.tau_end, k, k});
      open = true;
      out.back().tau_end = seg.tau_end;
      out.back().last_segment = k;
    } else if (!zero_length) {
      open = false;
    }
  }
  return out;
}

HybridTrajectory project_physical(const TimeFreezingPss& tf, const Trajectory& traj, double tol_w) {
  const std::size_t nx = tf.n_x();
  const std::size_t iw = tf.w_index();
  const std::size_t it = tf.t_index();
  HybridTrajectory out;
  out.n_x = nx;
  std::vector<std::size_t> xcols(nx);
  for (std::size_t k = 0; k < nx; ++k) xcols[k] = k;
  constexpr double kFrozen = 1e-12;

  for (const auto& seg : traj.segments) {
    for (std::size_t s = 1; s < seg.states.size(); ++s)
      if (seg.states[s][it] < seg.states[s - 1][it] - kFrozen)
        throw ProjectionError("clock decreases at tau=" + std::to_string(seg.taus[s]));
    const double gain = clock_gain(tf, seg);
    if (gain <= kFrozen * std::max(1.0, std::abs(seg.states.front()[it]))) continue;

    const double w_raw = seg.states.front()[iw];
    const int w = static_cast<int>(std::lround(w_raw));
    for (std::size_t s = 0; s < seg.states.size(); ++s)
      if ((w != 0 && w != 1) || std::abs(seg.states[s][iw] - w) > tol_w)
        throw ProjectionError("w=" + std::to_string(seg.states[s][iw]) + " off both branches at tau=" +
                              std::to_string(seg.taus[s]) + " while the clock advances");

    HybridSegment hs;
    hs.w = w;
    for (std::size_t s = 0; s < seg.states.size(); ++s) {
      const double t = seg.states[s][it];
      if (!hs.times.empty() && t <= hs.times.back()) continue;
      hs.times.push_back(t);
      hs.states.emplace_back(seg.states[s].begin(), seg.states[s].begin() + static_cast<std::ptrdiff_t>(nx));
    }
    for (const auto& step : seg.dense.steps()) {
      if (step.t_end <= step.t0) continue;
      const double ta = step.eval_component(step.t0, it);
      const double tb = step.eval_component(step.t_end, it);
      const double rate = (tb - ta) / (step.t_end - step.t0);
      if (!(rate > 0.0)) continue;
      ode::DenseStep ps = step.select(xcols);
      ps.t0 = ta;
      ps.h = step.h * rate;
      ps.t_end = tb;
      hs.dense.push(std::move(ps));
    }
    if (hs.dense.empty()) continue;
    hs.t_start = hs.dense.t_begin();
    hs.t_end = hs.dense.t_end();

    if (!out.segments.empty() && out.segments.back().w == hs.w) {
      auto& prev = out.segments.back();
      prev.dense.append(hs.dense);
      for (std::size_t s = 0; s < hs.times.size(); ++s) {
        if (hs.times[s] <= prev.times.back()) continue;
        prev.times.push_back(hs.times[s]);
        prev.states.push_back(hs.states[s]);
      }
      prev.t_end = hs.t_end;
      continue;
    }
    if (!out.segments.empty()) {
      const auto& prev = out.segments.back();
      out.jumps.push_back({hs.t_start, prev.w == 0 ? JumpDirection::Rise : JumpDirection::Fall, hs.states.front()});
    }
    out.segments.push_back(std::move(hs));
  }
  return out;
}

void write_region_grid(std::ostream& os, const VoronoiPartition& points, double psi_lo, double psi_hi, double w_lo,
                       double w_hi, std::size_t n_psi, std::size_t n_w) {
  if (n_psi < 2 || n_w < 2) throw std::invalid_argument("region grid needs at least two samples per axis");
  os << "psi,w,region\n";
  for (std::size_t i = 0; i < n_psi; ++i) {
    const double p = psi_lo + (psi_hi - psi_lo) * static_cast<double>(i) / static_cast<double>(n_psi - 1);
    for (std::size_t j = 0; j < n_w; ++j) {
      const double w = w_lo + (w_hi - w_lo) * static_cast<double>(j) / static_cast<double>(n_w - 1);
      os << csv::num(p) << ',' << csv::num(w) << ',' << (points.region_index(p, w) + 1) << '\n';
    }
  }
}

}  // namespace tfh
