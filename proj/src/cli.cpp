#include "tfh/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <future>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "tfh/csv.hpp"
#include "tfh/errors.hpp"

namespace tfh::cli {

namespace {

using json = nlohmann::ordered_json;
constexpr double kInf = std::numeric_limits<double>::infinity();

// Typed access to one JSON object; keys that were never asked for are
// reported by finish().
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ScenarioError(path_.empty() ? "/" : path_, "expected an object");
  }

  bool has(const std::string& key) {
    used_.insert(key);
    return j_.contains(key);
  }
  std::string at(const std::string& key) const { return path_ + "/" + key; }

  const json& required(const std::string& key) {
    if (!has(key)) throw ScenarioError(at(key), "missing required key");
    return j_.at(key);
  }

  double number(const std::string& key, std::optional<double> fallback = {}) {
    if (!has(key)) {
      if (fallback) return *fallback;
      throw ScenarioError(at(key), "missing required key");
    }
    return as_number(j_.at(key), at(key));
  }

  long long integer(const std::string& key, std::optional<long long> fallback = {}) {
    if (!has(key)) {
      if (fallback) return *fallback;
      throw ScenarioError(at(key), "missing required key");
    }
    const json& v = j_.at(key);
    if (!v.is_number_integer()) throw ScenarioError(at(key), "expected an integer");
    return v.get<long long>();
  }

  std::size_t count(const std::string& key, std::optional<std::size_t> fallback = {}) {
    const long long v = integer(key, fallback ? std::optional<long long>(static_cast<long long>(*fallback))
                                              : std::optional<long long>());
    if (v < 0) throw ScenarioError(at(key), "must be non-negative");
    return static_cast<std::size_t>(v);
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_boolean()) throw ScenarioError(at(key), "expected true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& key, std::optional<std::string> fallback = {}) {
    if (!has(key)) {
      if (fallback) return *fallback;
      throw ScenarioError(at(key), "missing required key");
    }
    const json& v = j_.at(key);
    if (!v.is_string()) throw ScenarioError(at(key), "expected a string");
    return v.get<std::string>();
  }

  std::vector<std::string> strings(const std::string& key, std::optional<std::size_t> size,
                                   bool optional_if_empty = false) {
    if (!has(key)) {
      if (optional_if_empty && size.value_or(0) == 0) return {};
      throw ScenarioError(at(key), "missing required key");
    }
    const json& v = j_.at(key);
    if (!v.is_array()) throw ScenarioError(at(key), "expected an array of strings");
    std::vector<std::string> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_string()) throw ScenarioError(at(key) + "/" + std::to_string(i), "expected a string");
      out.push_back(v[i].get<std::string>());
    }
    if (size && out.size() != *size)
      throw ScenarioError(at(key), "expected " + std::to_string(*size) + " entries, got " + std::to_string(out.size()));
    return out;
  }

  // null entries stand for -inf / +inf according to `unbounded`.
  std::vector<double> numbers(const std::string& key, std::optional<std::size_t> size, double unbounded = kInf,
                              bool allow_null = false) {
    const json& v = required(key);
    return as_numbers(v, at(key), size, unbounded, allow_null);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw ScenarioError(at(it.key()), "unknown key");
  }

  static double as_number(const json& v, const std::string& path) {
    if (!v.is_number()) throw ScenarioError(path, "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ScenarioError(path, "not finite");
    return d;
  }

  static std::vector<double> as_numbers(const json& v, const std::string& path, std::optional<std::size_t> size,
                                        double unbounded = kInf, bool allow_null = false) {
    if (!v.is_array()) throw ScenarioError(path, "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (allow_null && v[i].is_null())
        out.push_back(unbounded);
      else
        out.push_back(as_number(v[i], path + "/" + std::to_string(i)));
    }
    if (size && out.size() != *size)
      throw ScenarioError(path, "expected " + std::to_string(*size) + " entries, got " + std::to_string(out.size()));
    return out;
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

// Re-throws library validation errors as schema errors located at `path`.
template <class F>
auto located(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const ScenarioError&) {
    throw;
  } catch (const ParseError& e) {
    throw ScenarioError(path, e.what());
  } catch (const std::invalid_argument& e) {
    throw ScenarioError(path, e.what());
  }
}

HysteresisAutomaton parse_model(const json& j) {
  Obj m(j, "/model");
  const std::size_t n_x = m.count("n_x");
  const std::size_t n_u = m.count("n_u");
  auto states = m.strings("states", n_x);
  auto controls = m.strings("controls", n_u, true);
  const auto f_a = m.strings("f_A", n_x);
  const auto f_b = m.strings("f_B", n_x);
  const auto psi = m.string("psi");
  auto sys = located("/model", [&] {
    return HysteresisAutomaton::from_strings(states, controls, f_a, f_b, psi);
  });
  if (m.has("u_lb")) sys.u_lb = m.numbers("u_lb", n_u, -kInf, true);
  if (m.has("u_ub")) sys.u_ub = m.numbers("u_ub", n_u, kInf, true);
  if (m.has("x_lb")) sys.x_lb = m.numbers("x_lb", n_x, -kInf, true);
  if (m.has("x_ub")) sys.x_ub = m.numbers("x_ub", n_x, kInf, true);
  m.finish();
  located("/model", [&] {
    sys.validate();
    return 0;
  });
  return sys;
}

ControlSchedule parse_controls(const json& j, const std::string& path, std::size_t n_u) {
  Obj c(j, path);
  ControlSchedule out;
  if (c.has("constant")) {
    if (c.has("times") || c.has("values")) throw ScenarioError(path, "give either constant or times/values");
    out = ControlSchedule::constant(c.numbers("constant", n_u));
  } else {
    const auto times = c.numbers("times", {});
    const json& vals = c.required("values");
    if (!vals.is_array()) throw ScenarioError(c.at("values"), "expected an array of arrays");
    std::vector<std::vector<double>> values;
    for (std::size_t i = 0; i < vals.size(); ++i)
      values.push_back(Obj::as_numbers(vals[i], c.at("values") + "/" + std::to_string(i), n_u));
    out = located(path, [&] { return ControlSchedule(times, values); });
  }
  c.finish();
  return out;
}

SimulationSection parse_simulation(const json& j, const HysteresisAutomaton& sys) {
  Obj s(j, "/simulation");
  SimulationSection sim;
  sim.x0 = s.numbers("x0", sys.n_x());
  sim.w0 = s.number("w0", 0.0);
  sim.horizon = s.number("horizon");
  if (sim.horizon < 0.0) throw ScenarioError(s.at("horizon"), "must be non-negative");
  sim.rtol = s.number("rtol", sim.rtol);
  sim.atol = s.number("atol", sim.atol);
  sim.tol_event = s.number("tol_event", sim.tol_event);
  if (!(sim.rtol > 0.0) || !(sim.atol > 0.0) || !(sim.tol_event > 0.0))
    throw ScenarioError("/simulation", "tolerances must be positive");
  sim.max_events = s.count("max_events", sim.max_events);
  if (s.has("controls")) {
    sim.controls = parse_controls(s.required("controls"), "/simulation/controls", sys.n_u());
  } else if (sys.n_u() > 0) {
    throw ScenarioError(s.at("controls"), "required when the model has controls");
  }
  if (s.has("verify")) {
    Obj v(s.required("verify"), "/simulation/verify");
    sim.verify.grid_points = v.count("grid_points", sim.verify.grid_points);
    sim.verify.jump_exclusion = v.number("jump_exclusion", sim.verify.jump_exclusion);
    sim.verify.threshold = v.number("threshold", sim.verify.threshold);
    if (sim.verify.grid_points < 2) throw ScenarioError(v.at("grid_points"), "need at least 2");
    if (sim.verify.jump_exclusion < 0.0 || !(sim.verify.threshold > 0.0))
      throw ScenarioError("/simulation/verify", "exclusion must be >= 0 and threshold > 0");
    v.finish();
  }
  s.finish();
  return sim;
}

OcpSection parse_ocp(const json& j, const HysteresisAutomaton& sys) {
  Obj o(j, "/ocp");
  OcpSection sec;
  ocp::OcpSpec& spec = sec.spec;
  spec.tau_f = o.number("tau_f", spec.tau_f);
  spec.N = o.count("N", spec.N);
  spec.N_fe = o.count("N_fe", spec.N_fe);
  spec.time_transformation = o.boolean("time_transformation", spec.time_transformation);
  spec.s_bar = o.number("s_bar", spec.s_bar);
  spec.x0 = o.numbers("x0", sys.n_x());
  spec.w0 = o.number("w0", 0.0);
  std::vector<std::string> y_names = sys.state_names;
  y_names.push_back("w");
  y_names.push_back("t");
  if (o.has("terminal")) {
    const json& t = o.required("terminal");
    if (!t.is_object()) throw ScenarioError(o.at("terminal"), "expected an object of name: value");
    for (auto it = t.begin(); it != t.end(); ++it) {
      const auto pos = std::find(y_names.begin(), y_names.end(), it.key());
      if (pos == y_names.end()) throw ScenarioError(o.at("terminal") + "/" + it.key(), "unknown state");
      spec.terminal.emplace_back(static_cast<std::size_t>(pos - y_names.begin()),
                                 Obj::as_number(it.value(), o.at("terminal") + "/" + it.key()));
    }
  }
  spec.mayer = o.string("objective", spec.mayer);
  spec.control_penalty = o.number("control_penalty", spec.control_penalty);
  spec.h_penalty = o.number("h_penalty", spec.h_penalty);
  spec.uniform_clock = o.boolean("uniform_clock", spec.uniform_clock);
  spec.fixed_h = o.boolean("fixed_h", spec.fixed_h);
  if (o.has("homotopy")) {
    Obj h(o.required("homotopy"), "/ocp/homotopy");
    ocp::HomotopyOptions& ho = sec.homotopy;
    ho.sigma0 = h.number("sigma0", ho.sigma0);
    ho.kappa = h.number("kappa", ho.kappa);
    ho.sigma_min = h.number("sigma_min", ho.sigma_min);
    ho.barrier_ratio = h.number("barrier_ratio", ho.barrier_ratio);
    if (h.has("retry_ratios")) ho.retry_ratios = h.numbers("retry_ratios", {});
    ho.nlp.max_iter = h.count("max_iter", ho.nlp.max_iter);
    h.finish();
    if (!(ho.sigma0 > 0.0) || !(ho.kappa > 0.0 && ho.kappa < 1.0) || !(ho.sigma_min > 0.0) ||
        !(ho.barrier_ratio > 0.0))
      throw ScenarioError("/ocp/homotopy", "need sigma0 > 0, 0 < kappa < 1, sigma_min > 0, barrier_ratio > 0");
  }
  o.finish();
  return sec;
}

}  // namespace

Scenario parse_scenario(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ScenarioError("/", std::string("invalid JSON: ") + e.what());
  }
  Obj root(doc, "");
  Scenario sc;
  sc.name = root.string("name", std::string("scenario"));
  if (root.has("seed")) sc.seed = root.integer("seed");
  sc.model = parse_model(root.required("model"));
  if (root.has("timefreezing")) {
    Obj t(root.required("timefreezing"), "/timefreezing");
    sc.a = t.number("a", sc.a);
    if (!(sc.a > 0.0)) throw ScenarioError(t.at("a"), "must be positive");
    if (t.has("voronoi_points")) {
      const json& pts = t.required("voronoi_points");
      if (!pts.is_array() || pts.size() != 4) throw ScenarioError(t.at("voronoi_points"), "expected four points");
      for (std::size_t i = 0; i < 4; ++i) {
        const auto p = Obj::as_numbers(pts[i], t.at("voronoi_points") + "/" + std::to_string(i), 2);
        sc.points.z[i] = {p[0], p[1]};
      }
      located(t.at("voronoi_points"), [&] {
        sc.points.validate();
        return 0;
      });
    }
    t.finish();
  }
  if (root.has("simulation")) sc.simulation = parse_simulation(root.required("simulation"), sc.model);
  if (root.has("ocp")) sc.ocp = parse_ocp(root.required("ocp"), sc.model);
  root.finish();
  if (sc.ocp) {
    located("/ocp", [&] {
      sc.ocp->spec.validate(build_time_freezing(sc.model, sc.a, sc.points));
      return 0;
    });
  }
  return sc;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("/", "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str());
}

int verbosity_from_env() {
  const char* v = std::getenv("TFH_LOG_LEVEL");
  if (!v) return 1;
  const std::string s(v);
  if (s == "quiet" || s == "0") return 0;
  if (s == "debug" || s == "2") return 2;
  return 1;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::ofstream open_out(const std::filesystem::path& dir, const std::string& file) {
  std::ofstream os(dir / file);
  if (!os) throw InputError("cannot write " + (dir / file).string());
  return os;
}

void write_json(const std::filesystem::path& dir, const std::string& file, const json& j) {
  auto os = open_out(dir, file);
  os << j.dump(2) << '\n';
}

json vec(std::span<const double> v) { return json(std::vector<double>(v.begin(), v.end())); }

const SimulationSection& need_simulation(const Scenario& sc) {
  if (!sc.simulation) throw ScenarioError("/simulation", "missing; this command needs a simulation section");
  return *sc.simulation;
}

void check_w0(double w0) {
  if (w0 != 0.0 && w0 != 1.0) throw ScenarioError("/simulation/w0", "must be 0 or 1");
}

OracleOptions oracle_options(const SimulationSection& sim, const RunOptions& opts) {
  OracleOptions o;
  o.tol = {opts.tol.value_or(sim.rtol), opts.tol ? *opts.tol / 100.0 : sim.atol};
  o.tol_event = sim.tol_event;
  o.max_events = sim.max_events;
  return o;
}

PssOptions pss_options(const SimulationSection& sim, const RunOptions& opts) {
  PssOptions o;
  o.tol = {opts.tol.value_or(sim.rtol), opts.tol ? *opts.tol / 100.0 : sim.atol};
  o.tol_event = sim.tol_event;
  o.max_events = sim.max_events;
  return o;
}

HybridTrajectory run_oracle(const Scenario& sc, const RunOptions& opts) {
  const auto& sim = need_simulation(sc);
  check_w0(sim.w0);
  return simulate_oracle(sc.model, sim.x0, static_cast<int>(sim.w0), sim.controls, sim.horizon,
                         oracle_options(sim, opts));
}

json events_json(const HybridTrajectory& traj) {
  json ev = json::array();
  for (const auto& j : traj.jumps)
    ev.push_back({{"t", j.t}, {"direction", j.direction == JumpDirection::Rise ? "rise" : "fall"}, {"x", vec(j.x)}});
  return ev;
}

int cmd_simulate_oracle(const Scenario& sc, const RunOptions& opts, std::ostream& out) {
  const auto t0 = Clock::now();
  const auto traj = run_oracle(sc, opts);
  const double wall = seconds_since(t0);
  {
    auto os = open_out(opts.out_dir, "oracle_trajectory.csv");
    write_csv(os, traj, sc.model.state_names);
  }
  {
    auto os = open_out(opts.out_dir, "oracle_events.csv");
    write_events_csv(os, traj, sc.model.state_names);
  }
  std::size_t samples = 0;
  for (const auto& s : traj.segments) samples += s.times.size();
  write_json(opts.out_dir, "stats.json",
             {{"command", "simulate-oracle"},
              {"scenario", sc.name},
              {"t_end", traj.t_end()},
              {"jumps", traj.jumps.size()},
              {"samples", samples},
              {"events", events_json(traj)},
              {"wall_seconds", wall}});
  out << "simulate-oracle: " << traj.jumps.size() << " jumps up to t = " << csv::num(traj.t_end()) << '\n';
  return kSuccess;
}

struct TfRun {
  TimeFreezingPss tf;
  Trajectory traj;
  HybridTrajectory phys;
};

TfRun run_tf(const Scenario& sc, const RunOptions& opts) {
  const auto& sim = need_simulation(sc);
  check_w0(sim.w0);
  TfRun r{build_time_freezing(sc.model, sc.a, sc.points), {}, {}};
  r.traj = simulate_time_freezing(r.tf, sim.x0, sim.w0, sim.controls, sim.horizon, pss_options(sim, opts));
  r.phys = project_physical(r.tf, r.traj);
  return r;
}

int cmd_simulate_tf(const Scenario& sc, const RunOptions& opts, std::ostream& out) {
  const auto t0 = Clock::now();
  const auto r = run_tf(sc, opts);
  const double wall = seconds_since(t0);
  // tau, t, x..., w
  std::vector<std::size_t> columns{r.tf.t_index()};
  for (std::size_t i = 0; i < r.tf.n_x(); ++i) columns.push_back(i);
  columns.push_back(r.tf.w_index());
  {
    auto os = open_out(opts.out_dir, "tf_numerical.csv");
    write_csv(os, r.tf.model(), r.traj, columns);
  }
  {
    auto os = open_out(opts.out_dir, "tf_physical.csv");
    write_csv(os, r.phys, sc.model.state_names);
  }
  const auto phases = frozen_phases(r.tf, r.traj);
  {
    auto os = open_out(opts.out_dir, "frozen_phases.csv");
    os << "tau_start,tau_end,t\n";
    for (const auto& p : phases)
      os << csv::num(p.tau_start) << ',' << csv::num(p.tau_end) << ','
         << csv::num(r.traj.state_at(p.tau_start)[r.tf.t_index()]) << '\n';
  }
  {
    auto os = open_out(opts.out_dir, "region_grid.csv");
    write_region_grid(os, sc.points, -1.0, 2.0, -0.5, 1.5, 61, 41);
  }
  json ph = json::array();
  for (const auto& p : phases) ph.push_back({{"tau_start", p.tau_start}, {"tau_end", p.tau_end}});
  std::size_t flagged = 0;
  for (const auto& e : r.traj.events) flagged += e.flagged;
  write_json(opts.out_dir, "stats.json",
             {{"command", "simulate-tf"},
              {"scenario", sc.name},
              {"a", sc.a},
              {"tau_end", r.traj.tau_end()},
              {"t_end", r.traj.empty() ? 0.0 : r.traj.final_state()[r.tf.t_index()]},
              {"frozen_phases", ph},
              {"switch_events", r.traj.events.size()},
              {"flagged_events", flagged},
              {"jumps", r.phys.jumps.size()},
              {"wall_seconds", wall}});
  out << "simulate-tf: tau_end = " << csv::num(r.traj.tau_end()) << ", " << phases.size() << " frozen phases, "
      << r.phys.jumps.size() << " jumps\n";
  return kSuccess;
}

int cmd_verify(const Scenario& sc, const RunOptions& opts, std::ostream& out) {
  const auto t0 = Clock::now();
  const auto& sim = need_simulation(sc);
  const auto oracle = run_oracle(sc, opts);
  const auto r = run_tf(sc, opts);
  const auto rep = compare_trajectories(r.phys, oracle, sim.horizon, sim.verify.grid_points, sim.verify.jump_exclusion);
  const double wall = seconds_since(t0);
  const bool pass = rep.max_error <= sim.verify.threshold && rep.w_mismatches == 0;
  {
    auto os = open_out(opts.out_dir, "verify_grid.csv");
    std::vector<std::string> header{"t"};
    for (const auto& n : sc.model.state_names) header.push_back(n + "_tf");
    for (const auto& n : sc.model.state_names) header.push_back(n + "_oracle");
    header.insert(header.end(), {"error", "w_tf", "w_oracle"});
    csv::header(os, header);
    for (std::size_t k = 0; k < rep.t.size(); ++k) {
      double e = 0.0;
      for (std::size_t i = 0; i < rep.x_a[k].size(); ++i) e = std::max(e, std::abs(rep.x_a[k][i] - rep.x_b[k][i]));
      os << csv::num(rep.t[k]) << ',';
      csv::row(os, rep.x_a[k]);
      os << ',';
      csv::row(os, rep.x_b[k]);
      os << ',' << csv::num(e) << ',' << rep.w_a[k] << ',' << rep.w_b[k] << '\n';
    }
  }
  write_json(opts.out_dir, "report.json",
             {{"command", "verify-equivalence"},
              {"scenario", sc.name},
              {"pass", pass},
              {"max_error", rep.max_error},
              {"worst_t", rep.worst_t},
              {"threshold", sim.verify.threshold},
              {"w_mismatches", rep.w_mismatches},
              {"grid_points", rep.grid_points},
              {"compared_points", rep.t.size()},
              {"jump_exclusion", sim.verify.jump_exclusion},
              {"oracle_jumps", oracle.jumps.size()},
              {"tf_jumps", r.phys.jumps.size()},
              {"wall_seconds", wall}});
  out << "verify-equivalence: " << (pass ? "PASS" : "FAIL") << " max_error = " << csv::num(rep.max_error)
      << " (threshold " << csv::num(sim.verify.threshold) << "), w mismatches = " << rep.w_mismatches << ", "
      << rep.t.size() << "/" << rep.grid_points << " points, " << wall << " s\n";
  if (!pass) {
    // The worst points, largest first.
    std::vector<std::size_t> idx(rep.t.size());
    for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
    auto err_at = [&](std::size_t k) {
      double e = 0.0;
      for (std::size_t i = 0; i < rep.x_a[k].size(); ++i) e = std::max(e, std::abs(rep.x_a[k][i] - rep.x_b[k][i]));
      return e;
    };
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return err_at(a) > err_at(b); });
    for (std::size_t k = 0; k < std::min<std::size_t>(10, idx.size()); ++k) {
      const std::size_t i = idx[k];
      out << "  t = " << csv::num(rep.t[i]) << " error = " << csv::num(err_at(i)) << " w_tf = " << rep.w_a[i]
          << " w_oracle = " << rep.w_b[i] << '\n';
    }
    return kCheckFailure;
  }
  return kSuccess;
}

int cmd_solve_ocp(const Scenario& sc, const RunOptions& opts, std::ostream& out, std::ostream& err) {
  if (!sc.ocp) throw ScenarioError("/ocp", "missing; solve-ocp needs an ocp section");
  const auto t0 = Clock::now();
  ocp::OcpSpec spec = sc.ocp->spec;
  if (opts.fixed_h) spec.fixed_h = true;
  ocp::HomotopyOptions ho = sc.ocp->homotopy;
  if (opts.tol) ho.nlp.tol = *opts.tol;
  if (opts.verbosity >= 2) {
    ho.log_dir = (opts.out_dir / "nlp_logs").string();
    std::filesystem::create_directories(ho.log_dir);
  }
  const auto tf = build_time_freezing(sc.model, sc.a, sc.points);
  const auto P = ocp::discretize(tf, spec);
  const auto sol = ocp::homotopy_solve(P, ho);
  const double wall = seconds_since(t0);
  {
    auto os = open_out(opts.out_dir, "controls.csv");
    ocp::write_controls_csv(os, P, sol);
  }
  {
    auto os = open_out(opts.out_dir, "trajectory.csv");
    ocp::write_trajectory_csv(os, P, sol);
  }
  {
    auto os = open_out(opts.out_dir, "homotopy.csv");
    os << "stage,sigma,iterations,retries,status,complementarity,objective\n";
    for (std::size_t k = 0; k < sol.stages.size(); ++k) {
      const auto& s = sol.stages[k];
      os << k << ',' << csv::num(s.sigma) << ',' << s.iterations << ',' << s.retries << ','
         << nlp::to_string(s.status) << ',' << csv::num(s.complementarity) << ',' << csv::num(s.objective) << '\n';
    }
  }
  const auto c = P.counts();
  write_json(opts.out_dir, "stats.json",
             {{"command", "solve-ocp"},
              {"scenario", sc.name},
              {"fixed_h", spec.fixed_h},
              {"T_f", sol.T_f},
              {"E_Tf", sol.E_Tf},
              {"x_sim_Tf", vec(sol.x_sim_Tf)},
              {"objective", sol.objective},
              {"homotopy_stages", sol.stages.size()},
              {"homotopy_iterations", sol.total_iterations},
              {"restarts", sol.restarts},
              {"max_complementarity", sol.max_complementarity},
              {"max_simplex_error", sol.max_simplex_error},
              {"variables", c.variables},
              {"constraints", c.constraints},
              {"complementarity_rows", c.complementarity_rows},
              {"cpu_seconds", sol.cpu_seconds},
              {"wall_seconds", wall}});
  if (opts.verbosity >= 1)
    for (std::size_t k = 0; k < sol.stages.size(); ++k)
      err << "  stage " << k << " sigma = " << csv::num(sol.stages[k].sigma) << " iterations "
          << sol.stages[k].iterations << " " << nlp::to_string(sol.stages[k].status) << '\n';
  out << "solve-ocp: T_f = " << csv::num(sol.T_f) << ", E(T_f) = " << csv::num(sol.E_Tf) << ", "
      << sol.total_iterations << " iterations, " << wall << " s\n";
  return kSuccess;
}

// Maps exceptions onto exit codes; diagnostics go to err.
template <class F>
int guarded(const std::string& command, std::ostream& err, F&& f) {
  try {
    return f();
  } catch (const ScenarioError& e) {
    err << command << ": input error: " << e.what() << '\n';
    return kInputError;
  } catch (const InputError& e) {
    err << command << ": input error: " << e.what() << '\n';
    return kInputError;
  } catch (const InitializationError& e) {
    err << command << ": input error: " << e.what() << '\n';
    return kInputError;
  } catch (const ParseError& e) {
    err << command << ": input error: " << e.what() << '\n';
    return kInputError;
  } catch (const ocp::OcpError& e) {
    err << command << ": numerical failure: " << e.what() << '\n';
    return kNumericalFailure;
  } catch (const std::invalid_argument& e) {
    err << command << ": input error: " << e.what() << '\n';
    return kInputError;
  } catch (const std::exception& e) {
    err << command << ": numerical failure: " << e.what() << '\n';
    return kNumericalFailure;
  }
}

int run_single(const std::string& command, const std::filesystem::path& file, const RunOptions& opts,
               std::ostream& out, std::ostream& err) {
  return guarded(command, err, [&] {
    const Scenario sc = load_scenario(file);
    std::error_code ec;
    std::filesystem::create_directories(opts.out_dir, ec);
    if (ec) throw InputError("cannot create " + opts.out_dir.string() + ": " + ec.message());
    if (command == "simulate-oracle") return cmd_simulate_oracle(sc, opts, out);
    if (command == "simulate-tf") return cmd_simulate_tf(sc, opts, out);
    if (command == "verify-equivalence") return cmd_verify(sc, opts, out);
    return cmd_solve_ocp(sc, opts, out, err);
  });
}

int cmd_bench(const std::vector<std::filesystem::path>& files, const RunOptions& opts, std::ostream& out,
              std::ostream& err) {
  struct Job {
    std::string scenario, command;
    RunOptions opts;
    std::filesystem::path file;
    std::future<int> result;
    std::ostringstream out, err;
    double wall = 0.0;
  };
  std::vector<std::unique_ptr<Job>> jobs;
  for (const auto& file : files) {
    Scenario sc;
    try {
      sc = load_scenario(file);
    } catch (const ScenarioError& e) {
      err << "bench: input error in " << file.string() << ": " << e.what() << '\n';
      return kInputError;
    }
    std::vector<std::string> cmds;
    if (sc.simulation) cmds = {"simulate-oracle", "simulate-tf", "verify-equivalence"};
    if (sc.ocp) cmds.push_back("solve-ocp");
    for (const auto& c : cmds) {
      auto job = std::make_unique<Job>();
      job->scenario = sc.name;
      job->command = c;
      job->file = file;
      job->opts = opts;
      job->opts.out_dir = opts.out_dir / sc.name / c;
      jobs.push_back(std::move(job));
    }
  }
  // Each run has its own output directory and streams.
  for (auto& job : jobs) {
    Job* j = job.get();
    j->result = std::async(std::launch::async, [j] {
      const auto t0 = Clock::now();
      const int code = run_single(j->command, j->file, j->opts, j->out, j->err);
      j->wall = seconds_since(t0);
      return code;
    });
  }
  int worst = kSuccess;
  json runs = json::array();
  for (auto& job : jobs) {
    const int code = job->result.get();
    worst = std::max(worst, code);
    out << job->out.str();
    err << job->err.str();
    runs.push_back({{"scenario", job->scenario},
                    {"command", job->command},
                    {"exit_code", code},
                    {"out_dir", job->opts.out_dir.string()},
                    {"wall_seconds", job->wall}});
  }
  std::filesystem::create_directories(opts.out_dir);
  write_json(opts.out_dir, "bench.json", {{"command", "bench"}, {"runs", runs}});
  out << "bench: " << jobs.size() << " runs, worst exit code " << worst << '\n';
  return worst;
}

}  // namespace

int run(const std::string& command, const std::vector<std::filesystem::path>& scenarios, const RunOptions& opts,
        std::ostream& out, std::ostream& err) {
  const auto& known = commands();
  if (std::find(known.begin(), known.end(), command) == known.end()) {
    err << "unknown command '" << command << "'\n";
    return kInputError;
  }
  if (scenarios.empty()) {
    err << command << ": no scenario file given\n";
    return kInputError;
  }
  if (opts.tol && !(*opts.tol > 0.0)) {
    err << command << ": --tol must be positive\n";
    return kInputError;
  }
  if (command == "bench") return guarded(command, err, [&] { return cmd_bench(scenarios, opts, out, err); });
  if (scenarios.size() != 1) {
    err << command << ": expects exactly one scenario file\n";
    return kInputError;
  }
  return run_single(command, scenarios.front(), opts, out, err);
}

}  // namespace tfh::cli
