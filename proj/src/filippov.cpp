#include "tfh/filippov.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "tfh/csv.hpp"
#include "tfh/errors.hpp"

namespace tfh {

void PssModel::finalize() {
  const std::size_t n = n_y();
  const std::size_t m = n_regions();
  if (n == 0) throw std::invalid_argument("PSS model needs at least one state");
  if (m < 2) throw std::invalid_argument("PSS model needs at least two regions");
  if (discriminants.n_out() != m) throw std::invalid_argument("one discriminant per region is required");
  if (discriminants.n_in() != n) throw std::invalid_argument("discriminant inputs must be the states");
  if (!region_names.empty() && region_names.size() != m) throw std::invalid_argument("region name count mismatch");
  for (const auto& f : fields) {
    if (f.n_out() != n) throw std::invalid_argument("region field arity must equal the state dimension");
    if (f.n_in() != n + n_u()) throw std::invalid_argument("region field inputs must be states followed by controls");
  }
  discriminant_jacobian_ = discriminants.jacobian();
}

std::vector<double> PssModel::eval_discriminants(std::span<const double> y) const { return discriminants.eval(y); }

std::vector<double> PssModel::eval_discriminant_jacobian(std::span<const double> y) const {
  if (discriminant_jacobian_.n_out() == 0) throw std::logic_error("PssModel::finalize was not called");
  return discriminant_jacobian_.eval(y);
}

void PssModel::eval_field(std::size_t region, std::span<const double> y, std::span<const double> u,
                          std::span<double> out) const {
  thread_local std::vector<double> in;
  in.assign(y.begin(), y.end());
  in.insert(in.end(), u.begin(), u.end());
  fields.at(region).eval(in, out);
}

std::vector<double> PssModel::eval_field(std::size_t region, std::span<const double> y,
                                         std::span<const double> u) const {
  std::vector<double> out(n_y());
  eval_field(region, y, u, out);
  return out;
}

std::size_t PssModel::region_of(std::span<const double> y) const {
  const auto g = eval_discriminants(y);
  return static_cast<std::size_t>(std::max_element(g.begin(), g.end()) - g.begin());
}

std::string PssModel::mode_tag(const Mode& m) const {
  auto name = [&](std::size_t r) { return region_names.empty() ? "R" + std::to_string(r + 1) : region_names[r]; };
  return m.is_sliding() ? name(m.i) + "|" + name(m.j) : name(m.i);
}

std::vector<std::size_t> active_set(const PssModel& model, std::span<const double> y) {
  const auto g = model.eval_discriminants(y);
  const double gmax = *std::max_element(g.begin(), g.end());
  std::vector<std::size_t> act;
  for (std::size_t k = 0; k < g.size(); ++k)
    if (g[k] >= gmax - model.eps_act) act.push_back(k);
  return act;
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// Gradient of g_i - g_j from the row-major discriminant Jacobian.
std::vector<double> grad_diff(std::span<const double> jac, std::size_t n, std::size_t i, std::size_t j) {
  std::vector<double> d(n);
  for (std::size_t k = 0; k < n; ++k) d[k] = jac[i * n + k] - jac[j * n + k];
  return d;
}

double rate_tiny(std::span<const double> grad, std::span<const double> f) {
  return 1e-13 * norm(grad) * norm(f) + 1e-300;
}

}  // namespace

SlidingResult sliding_dynamics(const PssModel& model, std::span<const double> y, std::span<const double> u,
                               std::size_t i, std::size_t j) {
  const std::size_t n = model.n_y();
  const auto jac = model.eval_discriminant_jacobian(y);
  const auto grad = grad_diff(jac, n, i, j);
  const auto fi = model.eval_field(i, y, u);
  const auto fj = model.eval_field(j, y, u);
  SlidingResult r;
  r.rate_i = dot(grad, fi);
  r.rate_j = dot(grad, fj);
  const double tiny = std::max(rate_tiny(grad, fi), rate_tiny(grad, fj));
  const bool zi = std::abs(r.rate_i) <= tiny;
  const bool zj = std::abs(r.rate_j) <= tiny;
  bool same = true;
  for (std::size_t k = 0; k < n && same; ++k)
    same = std::abs(fi[k] - fj[k]) <= 1e-14 * (1.0 + std::abs(fi[k]));
  if ((zi && zj) || same) {
    r.status = SlidingStatus::Degenerate;
  } else {
    if (r.rate_i <= 0.0 && r.rate_j >= 0.0)
      r.status = SlidingStatus::Attracting;
    else if (r.rate_i > 0.0 && r.rate_j < 0.0)
      r.status = SlidingStatus::Repelling;
    else
      r.status = SlidingStatus::Crossing;
    const double den = r.rate_j - r.rate_i;
    r.theta_i = den != 0.0 ? std::clamp(r.rate_j / den, 0.0, 1.0) : 0.5;
    r.theta_j = 1.0 - r.theta_i;
  }
  r.ydot.resize(n);
  for (std::size_t k = 0; k < n; ++k) r.ydot[k] = r.theta_i * fi[k] + r.theta_j * fj[k];
  return r;
}

std::vector<double> Trajectory::state_at(double tau) const {
  if (segments.empty()) throw std::logic_error("state_at on empty trajectory");
  const TrajectorySegment* seg = &segments.front();
  for (const auto& s : segments)
    if (s.tau_start <= tau) seg = &s;
  return seg->dense.eval(tau);
}

std::vector<double> Trajectory::final_state() const {
  if (segments.empty()) throw std::logic_error("final_state on empty trajectory");
  return segments.back().states.back();
}

namespace {

struct Classification {
  Classification(Mode m, bool deg = false) : mode(m), degenerate(deg) {}  // NOLINT
  Mode mode;
  bool degenerate = false;  // sliding without attraction to check
  bool flagged = false;
  std::string note;
};

class PssIntegrator {
 public:
  PssIntegrator(const PssModel& model, const PssOptions& opts)
      : model_(model), opts_(opts), n_(model.n_y()), m_(model.n_regions()) {}

  Trajectory run(std::span<const double> y0, const ControlSchedule& controls, double tau_f);

 private:
  void rhs(std::span<const double> y, std::span<double> dy) const;
  void monitors(std::span<const double> y, std::vector<double>& out) const;
  void project(std::vector<double>& y) const;
  std::vector<double> theta_at(std::span<const double> y) const;
  Classification classify(std::span<const double> y, const std::vector<double>* probe) const;

  const PssModel& model_;
  const PssOptions& opts_;
  std::size_t n_;
  std::size_t m_;
  std::vector<double> u_;
  Mode mode_;
  bool degenerate_ = false;
};

void PssIntegrator::rhs(std::span<const double> y, std::span<double> dy) const {
  if (!mode_.is_sliding()) {
    model_.eval_field(mode_.i, y, u_, dy);
    return;
  }
  const auto s = sliding_dynamics(model_, y, u_, mode_.i, mode_.j);
  std::copy(s.ydot.begin(), s.ydot.end(), dy.begin());
}

// All monitors are positive while the current mode is valid.
void PssIntegrator::monitors(std::span<const double> y, std::vector<double>& out) const {
  out.clear();
  const auto g = model_.eval_discriminants(y);
  if (!mode_.is_sliding()) {
    for (std::size_t k = 0; k < m_; ++k)
      if (k != mode_.i) out.push_back(g[mode_.i] - g[k]);
    return;
  }
  const double mid = 0.5 * (g[mode_.i] + g[mode_.j]);
  for (std::size_t k = 0; k < m_; ++k)
    if (k != mode_.i && k != mode_.j) out.push_back(mid - g[k]);
  if (!degenerate_) {
    const auto s = sliding_dynamics(model_, y, u_, mode_.i, mode_.j);
    out.push_back(-s.rate_i);
    out.push_back(s.rate_j);
  }
}

// One Newton projection back onto g_i = g_j while sliding.
void PssIntegrator::project(std::vector<double>& y) const {
  if (!mode_.is_sliding()) return;
  const auto g = model_.eval_discriminants(y);
  const auto grad = grad_diff(model_.eval_discriminant_jacobian(y), n_, mode_.i, mode_.j);
  const double nn = dot(grad, grad);
  if (nn == 0.0) return;
  const double c = (g[mode_.i] - g[mode_.j]) / nn;
  for (std::size_t k = 0; k < n_; ++k) y[k] -= c * grad[k];
}

std::vector<double> PssIntegrator::theta_at(std::span<const double> y) const {
  std::vector<double> th(m_, 0.0);
  if (!mode_.is_sliding()) {
    th[mode_.i] = 1.0;
    return th;
  }
  const auto s = sliding_dynamics(model_, y, u_, mode_.i, mode_.j);
  th[mode_.i] = s.theta_i;
  th[mode_.j] = s.theta_j;
  return th;
}

Classification PssIntegrator::classify(std::span<const double> y, const std::vector<double>* probe) const {
  const auto act = active_set(model_, y);
  if (act.size() == 1) return {Mode::interior(act[0])};

  if (act.size() == 2) {
    const std::size_t i = act[0];
    const std::size_t j = act[1];
    auto s = sliding_dynamics(model_, y, u_, i, j);
    const auto jac = model_.eval_discriminant_jacobian(y);
    const auto grad = grad_diff(jac, n_, i, j);
    const double tiny = std::max(rate_tiny(grad, model_.eval_field(i, y, u_)),
                                 rate_tiny(grad, model_.eval_field(j, y, u_)));
    int si = std::abs(s.rate_i) <= tiny ? 0 : (s.rate_i > 0 ? 1 : -1);
    int sj = std::abs(s.rate_j) <= tiny ? 0 : (s.rate_j > 0 ? 1 : -1);
    if ((si == 0 || sj == 0) && probe != nullptr && !(si == 0 && sj == 0)) {
      const auto sp = sliding_dynamics(model_, *probe, u_, i, j);
      if (si == 0) si = sp.rate_i > 0 ? 1 : (sp.rate_i < 0 ? -1 : 0);
      if (sj == 0) sj = sp.rate_j > 0 ? 1 : (sp.rate_j < 0 ? -1 : 0);
    }
    if (si == 0 && sj == 0) return {Mode::sliding(i, j), true};
    if (si < 0 && sj > 0) return {Mode::sliding(i, j)};
    if (si >= 0 && sj >= 0) return {Mode::interior(i)};
    if (si <= 0 && sj <= 0) return {Mode::interior(j)};
    // Repelling: both fields leave the boundary. Follow the stronger one.
    Classification c{Mode::interior(s.rate_i >= -s.rate_j ? i : j)};
    c.flagged = true;
    c.note = "repelling boundary " + model_.mode_tag(Mode::sliding(i, j));
    return c;
  }

  // Three or more regions meet.
  const auto jac = model_.eval_discriminant_jacobian(y);
  std::vector<std::size_t> interior;
  std::size_t best = act[0];
  double best_rate = -std::numeric_limits<double>::infinity();
  for (std::size_t c : act) {
    const auto f = model_.eval_field(c, y, u_);
    double worst = std::numeric_limits<double>::infinity();
    bool enters = true;
    for (std::size_t k : act) {
      if (k == c) continue;
      const auto grad = grad_diff(jac, n_, c, k);
      const double r = dot(grad, f);
      worst = std::min(worst, r);
      if (!(r > rate_tiny(grad, f))) enters = false;
    }
    if (enters) interior.push_back(c);
    if (worst > best_rate) {
      best_rate = worst;
      best = c;
    }
  }
  if (interior.size() == 1) return {Mode::interior(interior[0])};

  if (interior.empty()) {
    std::vector<Mode> slides;
    for (std::size_t a = 0; a < act.size(); ++a)
      for (std::size_t b = a + 1; b < act.size(); ++b) {
        const std::size_t i = act[a];
        const std::size_t j = act[b];
        const auto s = sliding_dynamics(model_, y, u_, i, j);
        if (s.status != SlidingStatus::Attracting) continue;
        bool stays = true;
        for (std::size_t k : act) {
          if (k == i || k == j) continue;
          std::vector<double> grad(n_);
          for (std::size_t q = 0; q < n_; ++q)
            grad[q] = 0.5 * (jac[i * n_ + q] + jac[j * n_ + q]) - jac[k * n_ + q];
          if (!(dot(grad, s.ydot) > rate_tiny(grad, s.ydot))) stays = false;
        }
        if (stays) slides.push_back(Mode::sliding(i, j));
      }
    if (slides.size() == 1) return {slides[0]};
  }

  if (model_.corner_resolver) {
    if (auto m = model_.corner_resolver(y, act)) return {*m};
  }
  Classification c{Mode::interior(best)};
  c.flagged = true;
  c.note = "ambiguous corner resolved to " + model_.mode_tag(c.mode);
  return c;
}

Trajectory PssIntegrator::run(std::span<const double> y0, const ControlSchedule& controls, double tau_f) {
  if (y0.size() != n_) throw std::invalid_argument("initial state has wrong dimension");
  if (!(tau_f >= 0.0) || !std::isfinite(tau_f)) throw std::invalid_argument("tau_f must be finite and non-negative");
  if (model_.n_u() > 0 && controls.dim() != model_.n_u())
    throw std::invalid_argument("control schedule dimension mismatch");
  if (opts_.stop_component && *opts_.stop_component >= n_)
    throw std::invalid_argument("stop component out of range");

  Trajectory traj;
  traj.n_y = n_;
  traj.n_regions = m_;
  std::vector<double> y(y0.begin(), y0.end());
  double tau = 0.0;
  if (tau_f == 0.0) return traj;
  auto stop_gap = [&](std::span<const double> v) { return opts_.stop_value - v[*opts_.stop_component]; };
  if (opts_.stop_component && stop_gap(y) <= 0.0) return traj;

  auto load_control = [&](double t) {
    if (model_.n_u() == 0) return;
    const auto uc = controls.at(t);
    u_.assign(uc.begin(), uc.end());
  };
  load_control(0.0);
  {
    const auto c = classify(y, nullptr);
    mode_ = c.mode;
    degenerate_ = c.degenerate;
    if (c.flagged) traj.events.push_back({0.0, c.mode, c.mode, true, c.note});
  }

  ode::Dopri5 stepper([this](double, std::span<const double> yy, std::span<double> dy) { rhs(yy, dy); }, n_,
                      opts_.tol, opts_.step_scale * std::pow(opts_.tol.rtol, 0.25));
  std::vector<double> mon, mon_end;
  std::size_t n_events = 0;
  std::size_t zero_streak = 0;
  bool stopped = false;

  while (tau < tau_f && !stopped) {
    TrajectorySegment seg;
    seg.mode = mode_;
    seg.tau_start = tau;
    seg.taus.push_back(tau);
    seg.states.push_back(y);
    seg.thetas.push_back(theta_at(y));
    std::optional<Classification> next;
    std::string cause;

    while (tau < tau_f && !next && !stopped) {
      const double t_limit = std::min(tau_f, model_.n_u() > 0 ? controls.next_breakpoint(tau) : tau_f);
      const auto u_old = u_;
      load_control(tau);
      if (tau > seg.tau_start && u_ != u_old) {
        auto c = classify(y, nullptr);
        if (!(c.mode == mode_)) {
          next = std::move(c);
          cause = "control switch";
          break;
        }
      }
      stepper.reset(tau, y);
      while (tau < t_limit) {
        const ode::DenseStep step = stepper.step(t_limit);
        std::vector<double> y_end(stepper.y().begin(), stepper.y().end());
        monitors(y_end, mon_end);
        std::vector<std::size_t> trig;
        for (std::size_t k = 0; k < mon_end.size(); ++k)
          if (mon_end[k] < 0.0) trig.push_back(k);
        const bool stop_hit = opts_.stop_component && stop_gap(y_end) <= 0.0;

        if (trig.empty() && !stop_hit) {
          seg.dense.push(step);
          tau = stepper.t();
          project(y_end);
          if (mode_.is_sliding()) stepper.overwrite_state(y_end);
          y = y_end;
          seg.taus.push_back(tau);
          seg.states.push_back(y);
          seg.thetas.push_back(theta_at(y));
          continue;
        }

        const double t0 = step.t0;
        const double t1 = step.t_end;
        double t_root = t1;
        double t_probe = t1;
        bool is_stop = false;
        if (!trig.empty()) {
          auto mfun = [&](double t) {
            monitors(step.eval(t), mon);
            double v = std::numeric_limits<double>::infinity();
            for (std::size_t k : trig) v = std::min(v, mon[k]);
            return v;
          };
          const double m0 = mfun(t0);
          double lo = t0;
          double m_lo = m0;
          double hi = t1;
          double m_hi = mfun(t1);
          bool immediate = false;
          if (m0 <= 0.0) {
            // Started on the boundary: either it leaves at once, or it first
            // moves inward and the crossing lies later in the step.
            const double dt = 1e-3 * (t1 - t0);
            if (mfun(t0 + dt) <= m0) {
              immediate = true;
            } else {
              constexpr int kSamples = 16;
              bool positive = false;
              double prev_t = t0;
              double prev_v = m0;
              for (int s = 1; s <= kSamples; ++s) {
                const double ts = t0 + (t1 - t0) * s / kSamples;
                const double vs = s == kSamples ? m_hi : mfun(ts);
                if (vs > 0.0) positive = true;
                if (positive && prev_v > 0.0 && vs <= 0.0) {
                  lo = prev_t;
                  m_lo = prev_v;
                  hi = ts;
                  m_hi = vs;
                  break;
                }
                prev_t = ts;
                prev_v = vs;
              }
              if (!positive) immediate = true;
            }
          }
          if (immediate) {
            t_root = t0;
            t_probe = t0 + 1e-3 * (t1 - t0);
          } else {
            const auto r = ode::bisect(mfun, lo, hi, m_lo, m_hi, opts_.tol_event);
            t_root = r.t;
            t_probe = r.t_after;
          }
        }
        if (stop_hit) {
          const double g0 = stop_gap(step.eval(t0));
          auto sfun = [&](double t) { return stop_gap(step.eval(t)); };
          const auto r = ode::bisect(sfun, t0, t1, g0, stop_gap(y_end), 0.0);
          if (trig.empty() || r.t < t_root) {
            t_root = r.t;
            is_stop = true;
          }
        }

        // The dense output only brackets the event. Land on it with genuine
        // steps and polish the location by Newton on the landed state, so the
        // event state carries the integration error rather than the
        // interpolation error.
        auto event_value = [&](std::span<const double> v) {
          if (is_stop) return stop_gap(v);
          monitors(v, mon);
          double r = std::numeric_limits<double>::infinity();
          for (std::size_t k : trig) r = std::min(r, mon[k]);
          return r;
        };
        // Newton converges fast once bracketed, so polish well past tol_event.
        const double land_tol = is_stop ? 1e-13 * std::max(1.0, std::abs(opts_.stop_value)) : 1e-3 * opts_.tol_event;
        std::vector<double> y_land = y;
        if (t_root > t0) {
          ode::DenseOutput landed;
          for (int it = 0; it < 8; ++it) {
            landed = ode::DenseOutput{};
            stepper.reset(t0, y);
            while (stepper.t() < t_root) landed.push(stepper.step(t_root));
            y_land.assign(stepper.y().begin(), stepper.y().end());
            const double v = event_value(y_land);
            if (std::abs(v) <= land_tol) break;
            const auto& last = landed.steps().back();
            const double eps = 1e-6 * (last.t_end - last.t0);
            const double slope = (v - event_value(last.eval(t_root - eps))) / eps;
            if (!(std::abs(slope) > 0.0)) break;
            const double t_new = std::clamp(t_root - v / slope, t0 + 1e-9 * (t1 - t0), t1);
            if (std::abs(t_new - t_root) <= 4.0 * std::numeric_limits<double>::epsilon() * std::abs(t_root)) break;
            t_root = t_new;
          }
          for (const auto& ls : landed.steps()) seg.dense.push(ls);
        }
        tau = t_root;
        y = y_land;
        project(y);
        seg.taus.push_back(tau);
        seg.states.push_back(y);
        seg.thetas.push_back(theta_at(y));
        if (is_stop) {
          stopped = true;
        } else {
          const auto probe = step.eval(t_probe);
          next = classify(y, &probe);
          cause = "boundary contact";
        }
        break;
      }
    }

    seg.tau_end = tau;
    if (seg.dense.empty()) {
      ode::DenseStep s{tau, 0.0, tau, n_, std::vector<double>(5 * n_, 0.0)};
      std::copy(y.begin(), y.end(), s.coeffs.begin());
      seg.dense.push(s);
    }
    const bool zero_length = seg.tau_end == seg.tau_start;
    traj.segments.push_back(std::move(seg));
    if (!next) continue;

    SwitchEvent ev{tau, mode_, next->mode, next->flagged, next->note.empty() ? cause : next->note};
    traj.events.push_back(std::move(ev));
    mode_ = next->mode;
    degenerate_ = next->degenerate;
    if (++n_events >= opts_.max_events)
      throw ZenoError("event count reached " + std::to_string(opts_.max_events) + " at tau=" + std::to_string(tau) +
                      " (suspected Zeno behavior)");
    zero_streak = zero_length ? zero_streak + 1 : 0;
    if (zero_streak > 8)
      throw std::runtime_error("mode selection cycles without progress at tau=" + std::to_string(tau));
  }
  return traj;
}

}  // namespace

Trajectory integrate_pss(const PssModel& model, std::span<const double> y0, const ControlSchedule& u,
                         double tau_f, const PssOptions& opts) {
  PssIntegrator integrator(model, opts);
  return integrator.run(y0, u, tau_f);
}

void write_csv(std::ostream& os, const PssModel& model, const Trajectory& traj,
               std::span<const std::size_t> columns) {
  os << "tau";
  for (std::size_t c : columns) os << ',' << model.state_names.at(c);
  os << ",mode";
  for (std::size_t k = 0; k < model.n_regions(); ++k) os << ",theta_" << (k + 1);
  os << '\n';
  for (const auto& seg : traj.segments) {
    const std::string tag = model.mode_tag(seg.mode);
    for (std::size_t s = 0; s < seg.taus.size(); ++s) {
      os << csv::num(seg.taus[s]);
      for (std::size_t c : columns) os << ',' << csv::num(seg.states[s][c]);
      os << ',' << tag << ',';
      csv::row(os, seg.thetas[s]);
      os << '\n';
    }
  }
}

}  // namespace tfh
