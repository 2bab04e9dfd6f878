#include "tfh/ocp.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <numeric>
#include <ostream>

#include "tfh/csv.hpp"

namespace tfh::ocp {

namespace {

constexpr std::size_t kFields = 4;

bool is_bounded(const std::vector<double>& b) { return !b.empty(); }

}  // namespace

void OcpSpec::validate(const TimeFreezingPss& tf) const {
  if (!(tau_f > 0.0) || !std::isfinite(tau_f)) throw std::invalid_argument("ocp: tau_f must be positive");
  if (N < 1 || N_fe < 1) throw std::invalid_argument("ocp: N and N_fe must be at least 1");
  if (time_transformation && !(s_bar > 1.0)) throw std::invalid_argument("ocp: s_bar must exceed 1");
  if (x0.size() != tf.n_x()) throw std::invalid_argument("ocp: x0 has wrong size");
  if (w0 != 0.0 && w0 != 1.0) throw std::invalid_argument("ocp: w0 must be 0 or 1");
  for (const auto& [idx, value] : terminal) {
    if (idx >= tf.n_y()) throw std::invalid_argument("ocp: terminal constraint on unknown component");
    if (!std::isfinite(value)) throw std::invalid_argument("ocp: terminal value not finite");
  }
  if (!(h_lower_factor > 0.0) || !(h_upper_factor > 1.0))
    throw std::invalid_argument("ocp: element length bounds must bracket h_bar");
  if (control_penalty < 0.0) throw std::invalid_argument("ocp: negative control penalty");
  if (h_penalty < 0.0) throw std::invalid_argument("ocp: negative element-length penalty");
  if (!mayer.empty()) {
    try {
      (void)parse_expr(mayer, tf.y_names());
    } catch (const ParseError& e) {
      throw std::invalid_argument(std::string("ocp: objective: ") + e.what());
    }
  }
}

LayoutCounts layout_formula(const OcpSpec& spec, std::size_t n_y, std::size_t n_u, std::size_t n_f,
                            std::size_t n_stages) {
  const std::size_t elements = spec.N * spec.N_fe;
  const std::size_t stage_vars = n_y + 2 * n_f + 1;
  LayoutCounts c;
  c.variables = spec.N * (n_u + (spec.time_transformation ? 1 : 0)) +
                elements * ((spec.fixed_h ? 0 : 1) + n_stages * stage_vars);
  c.complementarity_rows = spec.fixed_h ? elements * n_stages * n_f : elements * n_f;
  const std::size_t clock_rows = !spec.fixed_h && spec.uniform_clock ? elements * (n_stages - 1) : 0;
  c.constraints = elements * n_stages * (n_y + n_f + 1) + (spec.fixed_h ? 0 : spec.N) + spec.terminal.size() +
                  c.complementarity_rows + clock_rows;
  return c;
}

CollocationProblem discretize(const TimeFreezingPss& tf_in, const OcpSpec& spec) {
  spec.validate(tf_in);
  CollocationProblem P;
  P.spec = spec;
  P.tf = std::make_shared<const TimeFreezingPss>(tf_in);
  const TimeFreezingPss& tf = *P.tf;
  const HysteresisAutomaton& sys = tf.automaton();
  const std::size_t n_x = tf.n_x();
  const std::size_t n_y = tf.n_y();
  const std::size_t n_u = tf.n_u();
  const auto y_names = tf.y_names();
  constexpr std::size_t ns = Radau2::stages;
  P.h_bar = spec.tau_f / static_cast<double>(spec.N * spec.N_fe);
  const double h_bar = P.h_bar;
  nlp::Nlp& p = P.nlp;

  const std::vector<double> y0 = tf.initial_state(spec.x0, spec.w0);
  {
    std::vector<Expr> xc(y0.begin(), y0.begin() + static_cast<long>(n_x));
    const auto ind = tf.indicator_exprs(xc, Expr(y0[tf.w_index()]));
    std::vector<double> g(kFields);
    for (std::size_t i = 0; i < kFields; ++i) g[i] = evaluate(ind[i], std::span<const double>{});
    const double gmin = *std::min_element(g.begin(), g.end());
    for (double gi : g) P.lambda0.push_back(gi - gmin);
  }

  // Initial guess: straight line from y(0) towards the terminal values, with
  // the clock running at unit speed.
  std::vector<double> y_target = y0;
  y_target[tf.t_index()] = spec.tau_f;
  for (const auto& [idx, value] : spec.terminal) y_target[idx] = value;
  auto guess_y = [&](double tau) {
    std::vector<double> y(n_y);
    const double r = tau / spec.tau_f;
    for (std::size_t c = 0; c < n_y; ++c) y[c] = (1.0 - r) * y0[c] + r * y_target[c];
    return y;
  };
  std::vector<double>& guess = P.initial_guess;
  auto var = [&](const std::string& name, double lo, double hi, double init) {
    guess.push_back(init);
    return p.add_variable(name, lo, hi);
  };

  std::vector<Expr> y_start(y0.begin(), y0.end());
  std::vector<Expr> lam_prev(P.lambda0.begin(), P.lambda0.end());
  double tau = 0.0;

  for (std::size_t k = 0; k < spec.N; ++k) {
    IntervalIndex iv;
    const std::string ks = std::to_string(k);
    iv.u = p.n();
    std::vector<Expr> u;
    for (std::size_t c = 0; c < n_u; ++c) {
      const double lo = is_bounded(sys.u_lb) ? sys.u_lb[c] : -nlp::kInf;
      const double hi = is_bounded(sys.u_ub) ? sys.u_ub[c] : nlp::kInf;
      u.push_back(var(sys.control_names[c] + "_" + ks, lo, hi, std::clamp(0.0, lo, hi)));
    }
    Expr s = 1.0;
    if (spec.time_transformation) {
      iv.s = p.n();
      s = var("s_" + ks, 1.0 / spec.s_bar, spec.s_bar, 1.0);
    }
    Expr h_sum = 0.0;
    for (std::size_t n = 0; n < spec.N_fe; ++n) {
      ElementIndex el;
      const std::string es = ks + "_" + std::to_string(n);
      Expr h = h_bar;
      if (!spec.fixed_h) {
        el.h = p.n();
        h = var("h_" + es, spec.h_lower_factor * h_bar, spec.h_upper_factor * h_bar, h_bar);
        h_sum += h;
      }
      std::vector<std::vector<Expr>> Y(ns), TH(ns), LA(ns);
      std::vector<Expr> MU(ns);
      for (std::size_t j = 0; j < ns; ++j) {
        StageIndex st;
        const std::string js = es + "_" + std::to_string(j);
        const auto yg = guess_y(tau + Radau2::c[j] * h_bar);
        st.y = p.n();
        for (std::size_t c = 0; c < n_y; ++c) {
          double lo = -nlp::kInf, hi = nlp::kInf;
          if (c < n_x && is_bounded(sys.x_lb)) lo = sys.x_lb[c] <= -nlp::kBoundInf ? -nlp::kInf : sys.x_lb[c];
          if (c < n_x && is_bounded(sys.x_ub)) hi = sys.x_ub[c] >= nlp::kBoundInf ? nlp::kInf : sys.x_ub[c];
          Y[j].push_back(var(y_names[c] + "_" + js, lo, hi, std::clamp(yg[c], lo, hi)));
        }
        st.theta = p.n();
        for (std::size_t i = 0; i < kFields; ++i)
          TH[j].push_back(var("theta" + std::to_string(i + 1) + "_" + js, 0.0, nlp::kInf, 0.25));
        st.lambda = p.n();
        for (std::size_t i = 0; i < kFields; ++i)
          LA[j].push_back(var("lambda" + std::to_string(i + 1) + "_" + js, 0.0, nlp::kInf, 0.0));
        st.mu = p.n();
        {
          std::vector<double> yv = yg;
          std::vector<Expr> xc(yv.begin(), yv.begin() + static_cast<long>(n_x));
          const auto ind = tf.indicator_exprs(xc, Expr(yv[tf.w_index()]));
          double mean = 0.0;
          for (const auto& e : ind) mean += evaluate(e, std::span<const double>{}) / kFields;
          MU[j] = var("mu_" + js, -nlp::kInf, nlp::kInf, mean);
        }
        el.stages.push_back(st);
      }

      // Collocation equations.
      std::vector<std::vector<Expr>> F(ns);
      for (std::size_t j = 0; j < ns; ++j) {
        std::vector<Expr> xj(Y[j].begin(), Y[j].begin() + static_cast<long>(n_x));
        const auto fields = tf.field_exprs(xj, u);
        F[j].assign(n_y, Expr(0.0));
        for (std::size_t i = 0; i < kFields; ++i)
          for (std::size_t c = 0; c < n_y; ++c)
            if (!fields[i][c].is_constant(0.0)) F[j][c] += TH[j][i] * fields[i][c];
      }
      const Expr hs = h * s;
      for (std::size_t j = 0; j < ns; ++j)
        for (std::size_t c = 0; c < n_y; ++c) {
          Expr acc = 0.0;
          for (std::size_t l = 0; l < ns; ++l) acc += Radau2::A[j][l] * F[l][c];
          p.add_equality(Y[j][c] - y_start[c] - hs * acc);
        }
      // Stewart algebra.
      for (std::size_t j = 0; j < ns; ++j) {
        std::vector<Expr> xj(Y[j].begin(), Y[j].begin() + static_cast<long>(n_x));
        const auto ind = tf.indicator_exprs(xj, Y[j][tf.w_index()]);
        for (std::size_t i = 0; i < kFields; ++i) p.add_equality(ind[i] - LA[j][i] - MU[j]);
        Expr sum = 0.0;
        for (std::size_t i = 0; i < kFields; ++i) sum += TH[j][i];
        p.add_equality(sum, 1.0);
      }
      if (spec.uniform_clock && !spec.fixed_h)
        for (std::size_t j = 1; j < ns; ++j) p.add_equality(TH[j][0] + TH[j][3] - TH[0][0] - TH[0][3]);
      // Complementarity, relaxed later.
      if (spec.fixed_h) {
        for (std::size_t j = 0; j < ns; ++j)
          for (std::size_t i = 0; i < kFields; ++i) {
            P.complementarity_rows.push_back(p.m());
            p.add_constraint(TH[j][i] * LA[j][i], -nlp::kInf, nlp::kInf);
          }
      } else {
        for (std::size_t i = 0; i < kFields; ++i) {
          Expr th = 0.0;
          Expr la = lam_prev[i];
          for (std::size_t j = 0; j < ns; ++j) {
            th += TH[j][i];
            la += LA[j][i];
          }
          P.complementarity_rows.push_back(p.m());
          p.add_constraint(th * la, -nlp::kInf, nlp::kInf);
        }
      }
      y_start = Y[ns - 1];
      lam_prev = LA[ns - 1];
      tau += h_bar;
      iv.elements.push_back(std::move(el));
    }
    if (!spec.fixed_h) p.add_equality(h_sum, spec.tau_f / static_cast<double>(spec.N));
    P.intervals.push_back(std::move(iv));
  }

  for (const auto& [idx, value] : spec.terminal) p.add_equality(y_start[idx], value);

  Expr obj = 0.0;
  if (!spec.mayer.empty()) obj = substitute(parse_expr(spec.mayer, y_names), y_start);
  if (spec.control_penalty > 0.0)
    for (const auto& iv : P.intervals)
      for (std::size_t c = 0; c < n_u; ++c) obj += spec.control_penalty * pow(Expr::variable(
                                                       p.var_names[iv.u + c], iv.u + c), 2);
  if (spec.h_penalty > 0.0 && !spec.fixed_h)
    for (const auto& iv : P.intervals)
      for (const auto& el : iv.elements)
        obj += spec.h_penalty * pow((Expr::variable(p.var_names[*el.h], *el.h) - h_bar) / h_bar, 2);
  p.objective = obj;
  p.validate();
  return P;
}

nlp::Nlp relax(const CollocationProblem& problem, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("relax: sigma must be positive");
  nlp::Nlp out = problem.nlp;
  for (std::size_t r : problem.complementarity_rows) out.c_ub[r] = sigma;
  return out;
}

double complementarity_residual(const CollocationProblem& P, std::span<const double> v) {
  double worst = 0.0;
  std::vector<double> lam_prev = P.lambda0;
  for (const auto& iv : P.intervals)
    for (const auto& el : iv.elements) {
      for (std::size_t i = 0; i < kFields; ++i)
        for (std::size_t j = 0; j < el.stages.size(); ++j) {
          const double th = v[el.stages[j].theta + i];
          if (P.spec.fixed_h) {
            worst = std::max(worst, th * v[el.stages[j].lambda + i]);
            continue;
          }
          worst = std::max(worst, th * lam_prev[i]);
          for (const auto& other : el.stages) worst = std::max(worst, th * v[other.lambda + i]);
        }
      for (std::size_t i = 0; i < kFields; ++i) lam_prev[i] = v[el.stages.back().lambda + i];
    }
  return worst;
}

namespace {

OcpSolution extract(const CollocationProblem& P, std::span<const double> v) {
  const TimeFreezingPss& tf = *P.tf;
  const std::size_t n_y = tf.n_y();
  const std::size_t n_u = tf.n_u();
  OcpSolution sol;
  sol.v.assign(v.begin(), v.end());
  TrajectoryNode first;
  first.y = tf.initial_state(P.spec.x0, P.spec.w0);
  sol.nodes.push_back(first);
  double tau = 0.0;
  for (std::size_t k = 0; k < P.intervals.size(); ++k) {
    const auto& iv = P.intervals[k];
    sol.u.emplace_back(v.begin() + static_cast<long>(iv.u), v.begin() + static_cast<long>(iv.u + n_u));
    sol.s.push_back(iv.s ? v[*iv.s] : 1.0);
    std::vector<double> hs;
    for (const auto& el : iv.elements) {
      const double h = el.h ? v[*el.h] : P.h_bar;
      hs.push_back(h);
      for (std::size_t j = 0; j < el.stages.size(); ++j) {
        TrajectoryNode node;
        node.tau = tau + Radau2::c[j] * h;
        node.interval = k;
        node.y.assign(v.begin() + static_cast<long>(el.stages[j].y),
                      v.begin() + static_cast<long>(el.stages[j].y + n_y));
        node.theta.assign(v.begin() + static_cast<long>(el.stages[j].theta),
                          v.begin() + static_cast<long>(el.stages[j].theta + kFields));
        double sum = std::accumulate(node.theta.begin(), node.theta.end(), 0.0);
        sol.max_simplex_error = std::max(sol.max_simplex_error, std::abs(sum - 1.0));
        sol.nodes.push_back(std::move(node));
      }
      tau += h;
    }
    sol.h.push_back(std::move(hs));
  }
  sol.T_f = sol.nodes.back().y[tf.t_index()];
  sol.max_complementarity = complementarity_residual(P, v);
  return sol;
}

}  // namespace

std::vector<double> resimulate_oracle(const CollocationProblem& P, const OcpSolution& sol) {
  const TimeFreezingPss& tf = *P.tf;
  // Physical start time of every control interval.
  std::vector<double> times;
  std::vector<std::vector<double>> values;
  double t_start = 0.0;
  std::size_t node = 1;
  for (std::size_t k = 0; k < P.intervals.size(); ++k) {
    if (times.empty() || t_start > times.back() + 1e-12) {
      times.push_back(t_start);
      values.push_back(sol.u[k]);
    } else {
      values.back() = sol.u[k];
    }
    node += P.intervals[k].elements.size() * Radau2::stages;
    t_start = std::max(t_start, sol.nodes[node - 1].y[tf.t_index()]);
  }
  times.front() = 0.0;
  const ControlSchedule controls = tf.n_u() == 0 ? ControlSchedule{} : ControlSchedule(times, values);
  OracleOptions opts;
  opts.tol = {1e-10, 1e-12};
  const auto traj = simulate_oracle(tf.automaton(), P.spec.x0, static_cast<int>(P.spec.w0), controls, sol.T_f, opts);
  if (traj.empty()) return P.spec.x0;
  return traj.state_at(sol.T_f);
}

std::vector<std::vector<double>> resimulate_pss(const CollocationProblem& P, const OcpSolution& sol,
                                                 const PssOptions& opts) {
  const TimeFreezingPss& tf = *P.tf;
  std::vector<double> y = tf.initial_state(P.spec.x0, P.spec.w0);
  std::vector<std::vector<double>> out;
  for (std::size_t k = 0; k < P.intervals.size(); ++k) {
    const ControlSchedule u = tf.n_u() == 0 ? ControlSchedule{} : ControlSchedule::constant(sol.u[k]);
    for (std::size_t n = 0; n < sol.h[k].size(); ++n) {
      const double len = sol.s[k] * sol.h[k][n];
      if (len > 0.0) {
        const auto traj = integrate_pss(tf.model(), y, u, len, opts);
        y = traj.final_state();
      }
      out.push_back(y);
    }
  }
  return out;
}

namespace {

// One pass over the sigma sequence starting with barrier ratio ratio0.
OcpSolution follow_path(const CollocationProblem& P, const HomotopyOptions& opts, nlp::CompiledNlp& compiled,
                        double ratio0, const std::string& log_prefix, std::size_t& total) {
  std::vector<double> v = P.initial_guess;
  nlp::WarmStart warm;
  std::vector<HomotopyStage> stages;
  double sigma = opts.sigma0;
  double ratio = ratio0;
  for (int stage = 0;; ++stage) {
    for (std::size_t r : P.complementarity_rows) compiled.set_constraint_bounds(r, -nlp::kInf, sigma);
    const bool last = sigma <= opts.sigma_min * (1.0 + 1e-9);
    auto run = [&](double rho, const std::string& log_suffix) {
      nlp::Options o = opts.nlp;
      if (!last) {
        // Stop the barrier at a fraction of sigma so the next stage starts
        // from a well-centred point.
        o.mu_target = rho * sigma;
        o.tol = std::max(o.tol, o.mu_target);
      }
      if (stage > 0) {
        o.mu0 = rho * sigma / opts.kappa;
        o.bound_push = o.bound_frac = opts.warm_bound_push;
        o.slack_bound_push = 0.1 * sigma;
        o.slack_bound_frac = 0.1;
        o.warm_mult_push = opts.warm_mult_push;
      }
      if (!opts.log_dir.empty())
        o.log_csv = (std::filesystem::path(opts.log_dir) /
                     (log_prefix + "stage_" + std::to_string(stage) + log_suffix + ".csv"))
                        .string();
      return nlp::solve(compiled, v, o, stage > 0 ? &warm : nullptr);
    };
    auto res = run(ratio, "");
    std::size_t retries = 0;
    if (stage > 0) {
      std::vector<double> others{opts.barrier_ratio};
      others.insert(others.end(), opts.retry_ratios.begin(), opts.retry_ratios.end());
      const double tried = ratio;
      for (double alt : others) {
        if (res.usable()) break;
        if (alt == tried) continue;
        total += res.iterations;
        res = run(alt, "_retry" + std::to_string(++retries));
        // Later stages continue from a point centred for this ratio.
        ratio = alt;
      }
    }
    total += res.iterations;
    HomotopyStage hs;
    hs.sigma = sigma;
    hs.retries = retries;
    hs.iterations = res.iterations;
    hs.status = res.status;
    hs.objective = res.objective;
    hs.complementarity = complementarity_residual(P, res.v);
    stages.push_back(hs);
    if (!res.usable())
      throw OcpError("homotopy stage " + std::to_string(stage) + " (sigma = " + csv::num(sigma) +
                         "): NLP " + nlp::to_string(res.status) + ", " + res.message,
                     stage);
    v = res.v;
    warm.lambda = res.lambda;
    warm.z_lb = res.z_lb;
    warm.z_ub = res.z_ub;
    if (last) break;
    sigma = std::max(opts.sigma_min, sigma * opts.kappa);
  }
  OcpSolution sol = extract(P, v);
  sol.stages = std::move(stages);
  sol.objective = compiled.objective(v);
  return sol;
}

}  // namespace

OcpSolution homotopy_solve(const CollocationProblem& P, const HomotopyOptions& opts) {
  if (!(opts.sigma0 > 0.0) || !(opts.kappa > 0.0 && opts.kappa < 1.0) || !(opts.sigma_min > 0.0))
    throw std::invalid_argument("homotopy: need sigma0 > 0, 0 < kappa < 1, sigma_min > 0");
  const std::clock_t start = std::clock();
  nlp::CompiledNlp compiled(P.nlp);
  std::vector<double> ratios{opts.barrier_ratio};
  for (double r : opts.retry_ratios)
    if (std::find(ratios.begin(), ratios.end(), r) == ratios.end()) ratios.push_back(r);
  std::size_t total = 0;
  std::optional<OcpError> first_error;
  OcpSolution sol;
  bool solved = false;
  for (std::size_t k = 0; k < ratios.size() && !solved; ++k) {
    try {
      const std::string prefix = k == 0 ? "nlp_" : "nlp_path" + std::to_string(k) + "_";
      sol = follow_path(P, opts, compiled, ratios[k], prefix, total);
      sol.restarts = k;
      solved = true;
    } catch (const OcpError& e) {
      if (!first_error) first_error = e;
    }
  }
  if (!solved) throw *first_error;
  sol.total_iterations = total;
  sol.x_sim_Tf = resimulate_oracle(P, sol);
  double e2 = 0.0;
  for (const auto& [idx, value] : P.spec.terminal)
    if (idx < P.tf->n_x()) e2 += std::pow(sol.x_sim_Tf[idx] - value, 2);
  sol.E_Tf = std::sqrt(e2);
  sol.cpu_seconds = static_cast<double>(std::clock() - start) / CLOCKS_PER_SEC;
  return sol;
}

void write_controls_csv(std::ostream& os, const CollocationProblem& P, const OcpSolution& sol) {
  std::vector<std::string> header{"interval"};
  for (const auto& name : P.tf->automaton().control_names) header.push_back(name);
  header.push_back("s");
  csv::header(os, header);
  for (std::size_t k = 0; k < sol.u.size(); ++k) {
    os << k;
    for (double u : sol.u[k]) os << ',' << csv::num(u);
    os << ',' << csv::num(sol.s[k]) << '\n';
  }
}

void write_trajectory_csv(std::ostream& os, const CollocationProblem& P, const OcpSolution& sol) {
  const TimeFreezingPss& tf = *P.tf;
  std::vector<std::string> header{"tau", "t"};
  for (const auto& name : tf.automaton().state_names) header.push_back(name);
  header.push_back("w");
  for (std::size_t i = 0; i < kFields; ++i) header.push_back("theta_" + std::to_string(i + 1));
  header.push_back("interval");
  csv::header(os, header);
  for (const auto& node : sol.nodes) {
    os << csv::num(node.tau) << ',' << csv::num(node.y[tf.t_index()]);
    for (std::size_t c = 0; c < tf.n_x(); ++c) os << ',' << csv::num(node.y[c]);
    os << ',' << csv::num(node.y[tf.w_index()]);
    for (std::size_t i = 0; i < kFields; ++i) os << ',' << (node.theta.empty() ? std::string() : csv::num(node.theta[i]));
    os << ',' << node.interval << '\n';
  }
}

}  // namespace tfh::ocp
