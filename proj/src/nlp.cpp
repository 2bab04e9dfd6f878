#include "tfh/nlp.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>
#include <algorithm>
#include <array>
#include <cmath>
#include <ctime>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

#include "tfh/csv.hpp"

namespace tfh::nlp {

// ---------------------------------------------------------------------------
// Nlp

Expr Nlp::add_variable(std::string name, double lo, double hi) {
  const std::size_t idx = var_names.size();
  Expr v = Expr::variable(name, idx);
  var_names.push_back(std::move(name));
  lb.push_back(lo);
  ub.push_back(hi);
  return v;
}

void Nlp::add_constraint(Expr c, double lo, double hi) {
  constraints.push_back(std::move(c));
  c_lb.push_back(lo);
  c_ub.push_back(hi);
}

void Nlp::validate() const {
  const std::size_t nv = n();
  if (lb.size() != nv || ub.size() != nv) throw std::invalid_argument("nlp: variable bound size mismatch");
  if (c_lb.size() != m() || c_ub.size() != m()) throw std::invalid_argument("nlp: constraint bound size mismatch");
  for (std::size_t i = 0; i < nv; ++i)
    if (!(lb[i] <= ub[i])) throw std::invalid_argument("nlp: crossed bounds on '" + var_names[i] + "'");
  for (std::size_t j = 0; j < m(); ++j)
    if (!(c_lb[j] <= c_ub[j])) throw std::invalid_argument("nlp: crossed bounds on constraint " + std::to_string(j));
  if (variable_bound(objective) > nv) throw std::invalid_argument("nlp: objective references undeclared variable");
  for (std::size_t j = 0; j < m(); ++j)
    if (variable_bound(constraints[j]) > nv)
      throw std::invalid_argument("nlp: constraint " + std::to_string(j) + " references undeclared variable");
}

const char* to_string(Status s) {
  switch (s) {
    case Status::Solved: return "solved";
    case Status::Acceptable: return "acceptable";
    case Status::MaxIter: return "max-iter";
    case Status::InfeasibleDetected: return "infeasible-detected";
    case Status::RegularizationFailure: return "regularization-failure";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// CompiledNlp

CompiledNlp::CompiledNlp(const Nlp& problem) : problem_(std::make_shared<Nlp>(problem)) {
  problem_->validate();
  const Nlp& p = *problem_;
  const std::size_t nv = p.n();
  const std::size_t mc = p.m();

  f_tape_ = Tape(std::span<const Expr>(&p.objective, 1));
  c_tape_ = Tape(p.constraints);

  std::unordered_map<std::size_t, std::size_t> hess_slot;
  std::vector<Expr> hess_terms;
  auto add_second_derivatives = [&](std::size_t owner, std::size_t k, const Expr& dk) {
    for (std::size_t l : free_variables(dk)) {
      if (l > k) continue;
      Expr d2 = derivative(dk, l);
      if (d2.is_constant(0.0)) continue;
      const std::size_t key = k * nv + l;
      auto [it, fresh] = hess_slot.emplace(key, hess_rows_.size());
      if (fresh) {
        hess_rows_.push_back(k);
        hess_cols_.push_back(l);
      }
      hess_term_owner_.push_back(owner);
      hess_term_slot_.push_back(it->second);
      hess_terms.push_back(std::move(d2));
    }
  };

  std::vector<Expr> grad;
  for (std::size_t k : free_variables(p.objective)) {
    Expr d = derivative(p.objective, k);
    if (d.is_constant(0.0)) continue;
    add_second_derivatives(mc, k, d);
    grad_cols_.push_back(k);
    grad.push_back(std::move(d));
  }
  grad_tape_ = Tape(grad);

  std::vector<Expr> jac;
  for (std::size_t j = 0; j < mc; ++j) {
    for (std::size_t k : free_variables(p.constraints[j])) {
      Expr d = derivative(p.constraints[j], k);
      if (d.is_constant(0.0)) continue;
      add_second_derivatives(j, k, d);
      jac_rows_.push_back(j);
      jac_cols_.push_back(k);
      jac.push_back(std::move(d));
    }
  }
  jac_tape_ = Tape(jac);
  hess_tape_ = Tape(hess_terms);
  term_values_.resize(hess_terms.size());
}

void CompiledNlp::set_constraint_bounds(std::size_t row, double lo, double hi) {
  if (row >= m()) throw std::out_of_range("nlp: constraint row out of range");
  if (!(lo <= hi)) throw std::invalid_argument("nlp: crossed constraint bounds");
  if ((lo == hi) != (problem_->c_lb[row] == problem_->c_ub[row]))
    throw std::invalid_argument("nlp: cannot turn an equality into an inequality or back");
  problem_->c_lb[row] = lo;
  problem_->c_ub[row] = hi;
}

namespace {

void run_tape(const Tape& tape, std::span<const double> v, std::span<double> out, std::vector<double>& work,
              const char* what) {
  if (!tape.eval(v, out, work)) throw EvalError(std::string("nlp: non-finite value in ") + what);
}

}  // namespace

double CompiledNlp::objective(std::span<const double> v) const {
  double f = 0.0;
  run_tape(f_tape_, v, std::span<double>(&f, 1), work_, "objective");
  return f;
}

void CompiledNlp::gradient(std::span<const double> v, std::span<double> grad) const {
  std::fill(grad.begin(), grad.end(), 0.0);
  term_values_.resize(std::max(term_values_.size(), grad_cols_.size()));
  std::span<double> vals(term_values_.data(), grad_cols_.size());
  run_tape(grad_tape_, v, vals, work_, "gradient");
  for (std::size_t e = 0; e < grad_cols_.size(); ++e) grad[grad_cols_[e]] = vals[e];
}

void CompiledNlp::constraints(std::span<const double> v, std::span<double> c) const {
  run_tape(c_tape_, v, c, work_, "constraints");
}

void CompiledNlp::jacobian(std::span<const double> v, std::span<double> values) const {
  run_tape(jac_tape_, v, values, work_, "jacobian");
}

void CompiledNlp::hessian(std::span<const double> v, double obj_factor, std::span<const double> lambda,
                          std::span<double> values) const {
  std::fill(values.begin(), values.end(), 0.0);
  const std::size_t nt = hess_term_slot_.size();
  term_values_.resize(std::max(term_values_.size(), nt));
  std::span<double> terms(term_values_.data(), nt);
  run_tape(hess_tape_, v, terms, work_, "hessian");
  const std::size_t mc = m();
  for (std::size_t e = 0; e < nt; ++e) {
    const std::size_t owner = hess_term_owner_[e];
    const double w = owner == mc ? obj_factor : lambda[owner];
    values[hess_term_slot_[e]] += w * terms[e];
  }
}

// ---------------------------------------------------------------------------
// Residuals

Residuals kkt_residuals(const CompiledNlp& nlp, std::span<const double> v, std::span<const double> lambda,
                        std::span<const double> z_lb, std::span<const double> z_ub) {
  const Nlp& p = nlp.problem();
  const std::size_t n = p.n();
  const std::size_t m = p.m();
  std::vector<double> g(n), c(m), jv(nlp.jac_rows().size());
  nlp.gradient(v, g);
  nlp.constraints(v, c);
  nlp.jacobian(v, jv);
  for (std::size_t e = 0; e < jv.size(); ++e) g[nlp.jac_cols()[e]] += jv[e] * lambda[nlp.jac_rows()[e]];
  Residuals r;
  for (std::size_t i = 0; i < n; ++i) {
    r.stationarity = std::max(r.stationarity, std::abs(g[i] - z_lb[i] + z_ub[i]));
    if (p.lb[i] > -kBoundInf) {
      r.feasibility = std::max(r.feasibility, p.lb[i] - v[i]);
      r.complementarity = std::max(r.complementarity, std::abs(z_lb[i] * (v[i] - p.lb[i])));
    }
    if (p.ub[i] < kBoundInf) {
      r.feasibility = std::max(r.feasibility, v[i] - p.ub[i]);
      r.complementarity = std::max(r.complementarity, std::abs(z_ub[i] * (p.ub[i] - v[i])));
    }
    r.complementarity = std::max({r.complementarity, -z_lb[i], -z_ub[i]});
  }
  for (std::size_t j = 0; j < m; ++j) {
    if (p.c_lb[j] > -kBoundInf) r.feasibility = std::max(r.feasibility, p.c_lb[j] - c[j]);
    if (p.c_ub[j] < kBoundInf) r.feasibility = std::max(r.feasibility, c[j] - p.c_ub[j]);
    if (p.c_lb[j] == p.c_ub[j]) continue;
    // lambda < 0 pushes against the lower bound, lambda > 0 against the upper.
    const double lo = std::max(-lambda[j], 0.0);
    const double hi = std::max(lambda[j], 0.0);
    if (lo > 0.0) {
      r.complementarity = p.c_lb[j] > -kBoundInf ? std::max(r.complementarity, lo * std::abs(c[j] - p.c_lb[j]))
                                                 : std::max(r.complementarity, lo);
    }
    if (hi > 0.0) {
      r.complementarity = p.c_ub[j] < kBoundInf ? std::max(r.complementarity, hi * std::abs(p.c_ub[j] - c[j]))
                                                : std::max(r.complementarity, hi);
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Solver

namespace {

using Vec = Eigen::VectorXd;
using SpMat = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;

constexpr double kappa_eps = 10.0;   // barrier subproblem tolerance factor
constexpr double kappa_sigma = 1e10; // bound-multiplier safeguard
constexpr double kappa_d = 1e-5;     // damping for one-sided bounds
constexpr double eta_armijo = 1e-8;
constexpr double gamma_theta = 1e-5;
constexpr double gamma_phi = 1e-8;
constexpr double gamma_alpha = 0.05;
constexpr double delta_sw = 1.0;
constexpr double s_theta = 1.1;
constexpr double s_phi = 2.3;
constexpr double s_max = 100.0;

class InteriorPoint {
 public:
  InteriorPoint(const CompiledNlp& nlp, const Options& opts) : nlp_(nlp), o_(opts), P_(nlp.problem()) {
    n_ = P_.n();
    m_ = P_.m();
    for (std::size_t j = 0; j < m_; ++j)
      if (P_.c_lb[j] != P_.c_ub[j]) {
        slack_of_row_.push_back(static_cast<long>(ineq_rows_.size()));
        ineq_rows_.push_back(j);
      } else {
        slack_of_row_.push_back(-1);
      }
    ns_ = ineq_rows_.size();
    N_ = n_ + ns_;
    lo_.resize(N_);
    hi_.resize(N_);
    for (std::size_t i = 0; i < n_; ++i) {
      lo_[i] = P_.lb[i];
      hi_[i] = P_.ub[i];
    }
    for (std::size_t k = 0; k < ns_; ++k) {
      lo_[n_ + k] = P_.c_lb[ineq_rows_[k]];
      hi_[n_ + k] = P_.c_ub[ineq_rows_[k]];
    }
    fixed_.assign(N_, 0);
    has_lo_.assign(N_, 0);
    has_hi_.assign(N_, 0);
    for (std::size_t i = 0; i < N_; ++i) {
      if (lo_[i] == hi_[i]) {
        fixed_[i] = 1;
        continue;
      }
      has_lo_[i] = lo_[i] > -kBoundInf;
      has_hi_[i] = hi_[i] < kBoundInf;
      // Slightly relaxed variable bounds keep the iterates off the true bounds
      // when rounding would otherwise land them there. Reported points are
      // clamped back.
      if (i >= n_) continue;
      if (has_lo_[i]) lo_[i] -= o_.bound_relax * std::max(1.0, std::abs(lo_[i]));
      if (has_hi_[i]) hi_[i] += o_.bound_relax * std::max(1.0, std::abs(hi_[i]));
    }
    build_pattern();
  }

  Solution run(std::span<const double> v0, const WarmStart* warm);

 private:
  struct Eval {
    double f = 0.0;
    Vec c;  // raw constraint values
    bool ok = false;
  };

  void build_pattern();
  int slot(std::size_t r, std::size_t c) const;
  bool evaluate(const Vec& p, Eval& e) const;
  Vec residual(const Vec& p, const Eval& e) const;
  double barrier(const Vec& p, double f) const;
  Vec barrier_gradient(const Vec& p, const Vec& grad_f) const;
  void assemble(const Vec& p, const Vec& zl, const Vec& zu, double dw, double dc);
  bool factorize_with_inertia(const Vec& p, const Vec& zl, const Vec& zu);
  Vec solve_kkt(const Vec& rhs);
  void write_log_row(std::size_t it, double f, double inf_pr, double inf_du, double compl_, double ap, double ad,
                     int ls);

  const CompiledNlp& nlp_;
  Options o_;
  const Nlp& P_;
  std::size_t n_ = 0, m_ = 0, ns_ = 0, N_ = 0;
  std::vector<std::size_t> ineq_rows_;
  std::vector<long> slack_of_row_;
  Vec lo_, hi_;
  std::vector<char> fixed_, has_lo_, has_hi_;

  SpMat K_;
  std::vector<int> hess_slot_, jac_slot_, diag_slot_, slack_slot_;
  // The LDL^T factor (no pivoting) is only used to read the inertia; solves
  // go through a partially pivoted LU of the full symmetric matrix.
  Eigen::SimplicialLDLT<SpMat, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt_;
  Eigen::SparseLU<SpMat, Eigen::COLAMDOrdering<int>> lu_;
  SpMat K_full_;
  bool lu_analyzed_ = false;
  bool factor_lu();
  std::vector<double> hvals_, jvals_;
  double mu_ = 0.1;
  double delta_w_last_ = 0.0;
  double delta_w_ = 0.0;
  double delta_w_forced_ = 0.0;  // lower bound for the next factorization only
  double delta_c_ = 0.0;
  std::size_t factorizations_ = 0;
  std::ofstream log_;
};

void InteriorPoint::build_pattern() {
  const std::size_t dim = N_ + m_;
  std::vector<Eigen::Triplet<double, int>> trip;
  const auto& hr = nlp_.hess_rows();
  const auto& hc = nlp_.hess_cols();
  const auto& jr = nlp_.jac_rows();
  const auto& jc = nlp_.jac_cols();
  trip.reserve(hr.size() + jr.size() + dim + ns_);
  for (std::size_t i = 0; i < dim; ++i) trip.emplace_back(static_cast<int>(i), static_cast<int>(i), 0.0);
  for (std::size_t e = 0; e < hr.size(); ++e) trip.emplace_back(static_cast<int>(hr[e]), static_cast<int>(hc[e]), 0.0);
  for (std::size_t e = 0; e < jr.size(); ++e)
    trip.emplace_back(static_cast<int>(N_ + jr[e]), static_cast<int>(jc[e]), 0.0);
  for (std::size_t k = 0; k < ns_; ++k)
    trip.emplace_back(static_cast<int>(N_ + ineq_rows_[k]), static_cast<int>(n_ + k), 0.0);
  K_.resize(static_cast<int>(dim), static_cast<int>(dim));
  K_.setFromTriplets(trip.begin(), trip.end());
  K_.makeCompressed();
  diag_slot_.resize(dim);
  for (std::size_t i = 0; i < dim; ++i) diag_slot_[i] = slot(i, i);
  hess_slot_.resize(hr.size());
  for (std::size_t e = 0; e < hr.size(); ++e) hess_slot_[e] = slot(hr[e], hc[e]);
  jac_slot_.resize(jr.size());
  for (std::size_t e = 0; e < jr.size(); ++e) jac_slot_[e] = slot(N_ + jr[e], jc[e]);
  slack_slot_.resize(ns_);
  for (std::size_t k = 0; k < ns_; ++k) slack_slot_[k] = slot(N_ + ineq_rows_[k], n_ + k);
  hvals_.resize(hr.size());
  jvals_.resize(jr.size());
  ldlt_.analyzePattern(K_);
}

int InteriorPoint::slot(std::size_t r, std::size_t c) const {
  const int* outer = K_.outerIndexPtr();
  const int* inner = K_.innerIndexPtr();
  const int* first = inner + outer[c];
  const int* last = inner + outer[c + 1];
  const int* it = std::lower_bound(first, last, static_cast<int>(r));
  if (it == last || *it != static_cast<int>(r)) throw std::logic_error("nlp: missing KKT pattern entry");
  return static_cast<int>(it - inner);
}

bool InteriorPoint::evaluate(const Vec& p, Eval& e) const {
  e.c.resize(static_cast<Eigen::Index>(m_));
  try {
    std::span<const double> v(p.data(), n_);
    e.f = nlp_.objective(v);
    nlp_.constraints(v, std::span<double>(e.c.data(), m_));
    e.ok = true;
  } catch (const EvalError&) {
    e.ok = false;
  }
  return e.ok;
}

Vec InteriorPoint::residual(const Vec& p, const Eval& e) const {
  Vec r(static_cast<Eigen::Index>(m_));
  for (std::size_t j = 0; j < m_; ++j) {
    const long k = slack_of_row_[j];
    r[j] = e.c[j] - (k < 0 ? P_.c_lb[j] : p[n_ + k]);
  }
  return r;
}

double InteriorPoint::barrier(const Vec& p, double f) const {
  double b = f;
  for (std::size_t i = 0; i < N_; ++i) {
    if (has_lo_[i]) {
      b -= mu_ * std::log(p[i] - lo_[i]);
      if (!has_hi_[i]) b += kappa_d * mu_ * (p[i] - lo_[i]);
    }
    if (has_hi_[i]) {
      b -= mu_ * std::log(hi_[i] - p[i]);
      if (!has_lo_[i]) b += kappa_d * mu_ * (hi_[i] - p[i]);
    }
  }
  return b;
}

Vec InteriorPoint::barrier_gradient(const Vec& p, const Vec& grad_f) const {
  Vec g = grad_f;
  for (std::size_t i = 0; i < N_; ++i) {
    if (fixed_[i]) continue;
    if (has_lo_[i]) {
      g[i] -= mu_ / (p[i] - lo_[i]);
      if (!has_hi_[i]) g[i] += kappa_d * mu_;
    }
    if (has_hi_[i]) {
      g[i] += mu_ / (hi_[i] - p[i]);
      if (!has_lo_[i]) g[i] -= kappa_d * mu_;
    }
  }
  return g;
}

void InteriorPoint::assemble(const Vec& p, const Vec& zl, const Vec& zu, double dw, double dc) {
  double* val = K_.valuePtr();
  std::fill(val, val + K_.nonZeros(), 0.0);
  const auto& hr = nlp_.hess_rows();
  const auto& hc = nlp_.hess_cols();
  for (std::size_t e = 0; e < hvals_.size(); ++e)
    if (!fixed_[hr[e]] && !fixed_[hc[e]]) val[hess_slot_[e]] += hvals_[e];
  const auto& jc = nlp_.jac_cols();
  for (std::size_t e = 0; e < jvals_.size(); ++e)
    if (!fixed_[jc[e]]) val[jac_slot_[e]] += jvals_[e];
  for (std::size_t k = 0; k < ns_; ++k)
    if (!fixed_[n_ + k]) val[slack_slot_[k]] = -1.0;
  for (std::size_t i = 0; i < N_; ++i) {
    if (fixed_[i]) {
      val[diag_slot_[i]] = 1.0;
      continue;
    }
    double sigma = 0.0;
    if (has_lo_[i]) sigma += zl[i] / (p[i] - lo_[i]);
    if (has_hi_[i]) sigma += zu[i] / (hi_[i] - p[i]);
    val[diag_slot_[i]] += sigma + dw;
  }
  for (std::size_t j = 0; j < m_; ++j) val[diag_slot_[N_ + j]] = -dc;
}

bool InteriorPoint::factorize_with_inertia(const Vec& p, const Vec& zl, const Vec& zu) {
  auto attempt = [&](double dw) {
    assemble(p, zl, zu, dw, delta_c_);
    ldlt_.factorize(K_);
    ++factorizations_;
    if (ldlt_.info() != Eigen::Success) return -1;  // zero pivot
    const Vec& d = ldlt_.vectorD();
    std::size_t pos = 0, neg = 0;
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      if (d[i] > 0.0)
        ++pos;
      else if (d[i] < 0.0)
        ++neg;
    }
    if (pos + neg < static_cast<std::size_t>(d.size())) return -1;
    return (pos == N_ && neg == m_) ? 1 : 0;
  };

  delta_c_ = 0.0;
  const double forced = std::exchange(delta_w_forced_, 0.0);
  int r = forced > 0.0 ? 0 : attempt(0.0);
  if (r == -1) {
    delta_c_ = 1e-8 * std::pow(mu_, 0.25);
    r = attempt(0.0);
  }
  if (r == 1) {
    delta_w_ = 0.0;
    return factor_lu();
  }
  double dw = delta_w_last_ == 0.0 ? o_.delta_w0 : std::max(o_.delta_w0, delta_w_last_ / 4.0);
  dw = std::max(dw, forced);
  while (dw <= o_.delta_w_max) {
    r = attempt(dw);
    if (r == -1 && delta_c_ == 0.0) {
      delta_c_ = 1e-8 * std::pow(mu_, 0.25);
      r = attempt(dw);
    }
    if (r == 1) {
      delta_w_ = dw;
      delta_w_last_ = dw;
      return factor_lu();
    }
    dw *= 2.0;
  }
  return false;
}

bool InteriorPoint::factor_lu() {
  K_full_ = K_.selfadjointView<Eigen::Lower>();
  if (!lu_analyzed_) {
    lu_.analyzePattern(K_full_);
    lu_analyzed_ = true;
  }
  lu_.factorize(K_full_);
  ++factorizations_;
  return lu_.info() == Eigen::Success;
}

Vec InteriorPoint::solve_kkt(const Vec& rhs) {
  Vec x = lu_.solve(rhs);
  const double scale = 1.0 + rhs.lpNorm<Eigen::Infinity>();
  for (int it = 0; it < 3; ++it) {
    const Vec res = rhs - K_full_ * x;
    if (res.lpNorm<Eigen::Infinity>() <= 1e-14 * scale) break;
    x += lu_.solve(res);
  }
  return x;
}

void InteriorPoint::write_log_row(std::size_t it, double f, double inf_pr, double inf_du, double compl_, double ap,
                                  double ad, int ls) {
  if (!log_.is_open()) return;
  log_ << it << ',' << csv::num(mu_) << ',' << csv::num(f) << ',' << csv::num(inf_pr) << ',' << csv::num(inf_du)
       << ',' << csv::num(compl_) << ',' << csv::num(ap) << ',' << csv::num(ad) << ',' << csv::num(delta_w_) << ','
       << ls << '\n';
}

Solution InteriorPoint::run(std::span<const double> v0, const WarmStart* warm) {
  const std::clock_t start = std::clock();
  if (v0.size() != n_) throw std::invalid_argument("nlp: initial point has wrong size");
  for (double x : v0)
    if (!std::isfinite(x)) throw std::invalid_argument("nlp: initial point is not finite");
  if (!o_.log_csv.empty()) {
    log_.open(o_.log_csv);
    log_ << "iter,mu,objective,inf_pr,inf_du,compl,alpha_pr,alpha_du,delta_w,ls\n";
  }

  Solution sol;
  mu_ = std::max(o_.mu0, o_.mu_target);

  auto push_inside = [&](std::size_t i, double x) {
    if (fixed_[i]) return lo_[i];
    const double push = i < n_ ? o_.bound_push : o_.slack_bound_push;
    const double frac = i < n_ ? o_.bound_frac : o_.slack_bound_frac;
    const double lo = lo_[i];
    const double hi = hi_[i];
    if (has_lo_[i] && has_hi_[i]) {
      const double pl = std::min(push * std::max(1.0, std::abs(lo)), frac * (hi - lo));
      const double pu = std::min(push * std::max(1.0, std::abs(hi)), frac * (hi - lo));
      return std::clamp(x, lo + pl, hi - pu);
    }
    if (has_lo_[i]) return std::max(x, lo + push * std::max(1.0, std::abs(lo)));
    if (has_hi_[i]) return std::min(x, hi - push * std::max(1.0, std::abs(hi)));
    return x;
  };

  Vec p(static_cast<Eigen::Index>(N_));
  for (std::size_t i = 0; i < n_; ++i) p[i] = push_inside(i, v0[i]);
  Eval ev;
  if (!evaluate(p, ev)) throw EvalError("nlp: model not finite at the initial point");
  for (std::size_t k = 0; k < ns_; ++k) p[n_ + k] = push_inside(n_ + k, ev.c[ineq_rows_[k]]);

  const bool use_warm = warm != nullptr && warm->lambda.size() == m_ && warm->z_lb.size() == n_ &&
                        warm->z_ub.size() == n_;
  Vec y = Vec::Zero(static_cast<Eigen::Index>(m_));
  Vec zl = Vec::Zero(static_cast<Eigen::Index>(N_));
  Vec zu = Vec::Zero(static_cast<Eigen::Index>(N_));
  for (std::size_t i = 0; i < N_; ++i) {
    if (has_lo_[i]) zl[i] = 1.0;
    if (has_hi_[i]) zu[i] = 1.0;
  }
  if (use_warm) {
    const double floor = o_.warm_mult_push;
    for (std::size_t j = 0; j < m_; ++j) y[j] = warm->lambda[j];
    for (std::size_t i = 0; i < n_; ++i) {
      if (has_lo_[i]) zl[i] = std::max(warm->z_lb[i], floor);
      if (has_hi_[i]) zu[i] = std::max(warm->z_ub[i], floor);
    }
    for (std::size_t k = 0; k < ns_; ++k) {
      const std::size_t i = n_ + k;
      const double lam = y[ineq_rows_[k]];
      if (has_lo_[i]) zl[i] = std::max(-lam, floor);
      if (has_hi_[i]) zu[i] = std::max(lam, floor);
    }
  }

  std::vector<double> grad_v(n_);
  if (!use_warm && m_ > 0) {
    // Least-squares constraint multipliers; dropped when they come out large.
    nlp_.gradient(std::span<const double>(p.data(), n_), grad_v);
    nlp_.jacobian(std::span<const double>(p.data(), n_), jvals_);
    std::fill(hvals_.begin(), hvals_.end(), 0.0);
    const Vec zero = Vec::Zero(static_cast<Eigen::Index>(N_));
    assemble(p, zero, zero, 1.0, 0.0);
    if (factor_lu()) {
      Vec rhs = Vec::Zero(static_cast<Eigen::Index>(N_ + m_));
      for (std::size_t i = 0; i < n_; ++i)
        if (!fixed_[i]) rhs[i] = -(grad_v[i] - zl[i] + zu[i]);
      for (std::size_t k = 0; k < ns_; ++k) rhs[n_ + k] = zl[n_ + k] - zu[n_ + k];
      const Vec y_ls = solve_kkt(rhs).tail(static_cast<Eigen::Index>(m_));
      if (y_ls.allFinite() && y_ls.lpNorm<Eigen::Infinity>() <= o_.mult_init_max) y = y_ls;
    }
  }
  std::vector<std::array<double, 2>> filter;
  std::size_t ls_fail_streak = 0;
  std::size_t restorations = 0;
  std::size_t acceptable_count = 0;
  const double theta0 = residual(p, ev).lpNorm<1>();
  const double theta_max = 1e4 * std::max(1.0, theta0);
  const double theta_min = 1e-4 * std::max(1.0, theta0);
  const std::size_t nnz_j = nlp_.jac_rows().size();

  auto pack_solution = [&](Status st, const std::string& msg) {
    sol.status = st;
    sol.message = msg;
    sol.v.assign(p.data(), p.data() + n_);
    for (std::size_t i = 0; i < n_; ++i) sol.v[i] = std::clamp(sol.v[i], P_.lb[i], P_.ub[i]);
    sol.lambda.assign(y.data(), y.data() + m_);
    sol.z_lb.assign(n_, 0.0);
    sol.z_ub.assign(n_, 0.0);
    std::vector<double> g(n_);
    nlp_.gradient(sol.v, g);
    nlp_.jacobian(sol.v, jvals_);
    for (std::size_t e = 0; e < nnz_j; ++e) g[nlp_.jac_cols()[e]] += jvals_[e] * sol.lambda[nlp_.jac_rows()[e]];
    for (std::size_t i = 0; i < n_; ++i) {
      if (fixed_[i]) {
        sol.z_lb[i] = std::max(g[i], 0.0);
        sol.z_ub[i] = std::max(-g[i], 0.0);
      } else {
        sol.z_lb[i] = zl[i];
        sol.z_ub[i] = zu[i];
      }
    }
    const Residuals r = kkt_residuals(nlp_, sol.v, sol.lambda, sol.z_lb, sol.z_ub);
    sol.stationarity = r.stationarity;
    sol.feasibility = r.feasibility;
    sol.complementarity = r.complementarity;
    sol.objective = nlp_.objective(sol.v);
    sol.factorizations = factorizations_;
    sol.mu = mu_;
    sol.cpu_seconds = static_cast<double>(std::clock() - start) / CLOCKS_PER_SEC;
    return sol;
  };

  for (std::size_t iter = 0;; ++iter) {
    sol.iterations = iter;
    // Derivatives at the current point.
    std::span<const double> v(p.data(), n_);
    nlp_.gradient(v, grad_v);
    nlp_.jacobian(v, jvals_);
    Vec grad_f = Vec::Zero(static_cast<Eigen::Index>(N_));
    for (std::size_t i = 0; i < n_; ++i) grad_f[i] = fixed_[i] ? 0.0 : grad_v[i];
    const Vec r = residual(p, ev);

    // A^T y over the primal variables (fixed columns dropped).
    Vec aty = Vec::Zero(static_cast<Eigen::Index>(N_));
    for (std::size_t e = 0; e < nnz_j; ++e) {
      const std::size_t col = nlp_.jac_cols()[e];
      if (!fixed_[col]) aty[col] += jvals_[e] * y[nlp_.jac_rows()[e]];
    }
    for (std::size_t k = 0; k < ns_; ++k) aty[n_ + k] -= y[ineq_rows_[k]];

    auto errors = [&](double mu) {
      double inf_du = 0.0, compl_ = 0.0;
      const Vec gl = grad_f + aty - zl + zu;
      for (std::size_t i = 0; i < N_; ++i) {
        if (fixed_[i]) continue;
        inf_du = std::max(inf_du, std::abs(gl[i]));
        if (has_lo_[i]) compl_ = std::max(compl_, std::abs(zl[i] * (p[i] - lo_[i]) - mu));
        if (has_hi_[i]) compl_ = std::max(compl_, std::abs(zu[i] * (hi_[i] - p[i]) - mu));
      }
      return std::array<double, 3>{r.size() ? r.lpNorm<Eigen::Infinity>() : 0.0, inf_du, compl_};
    };

    double zsum = y.lpNorm<1>() + zl.lpNorm<1>() + zu.lpNorm<1>();
    const double sd = std::max(s_max, zsum / std::max<double>(1.0, static_cast<double>(m_ + 2 * N_))) / s_max;
    const double sc = std::max(s_max, (zl.lpNorm<1>() + zu.lpNorm<1>()) / std::max<double>(1.0, 2.0 * N_)) / s_max;

    const auto e0 = errors(o_.mu_target);
    // Convergence is judged on multiplier-scaled errors, with caps on the
    // unscaled residuals.
    const double e_scaled = std::max({e0[0], e0[1] / sd, e0[2] / sc});
    if (e_scaled <= o_.tol && e0[1] <= o_.dual_inf_tol && e0[0] <= o_.constr_viol_tol && e0[2] <= o_.compl_inf_tol) {
      write_log_row(iter, ev.f, e0[0], e0[1], e0[2], 0.0, 0.0, 0);
      pack_solution(Status::Solved, "optimal");
      if (sol.stationarity <= o_.dual_inf_tol && sol.feasibility <= std::max(o_.tol, o_.constr_viol_tol) &&
          sol.complementarity <= o_.compl_inf_tol + kappa_eps * o_.mu_target)
        return sol;
    }
    acceptable_count = (e_scaled <= o_.acceptable_tol && e0[0] <= 1e-2 && e0[2] <= 1e-2) ? acceptable_count + 1 : 0;
    if (o_.acceptable_iter > 0 && acceptable_count >= o_.acceptable_iter)
      return pack_solution(Status::Acceptable, "acceptable level reached");
    if (iter >= o_.max_iter) return pack_solution(Status::MaxIter, "iteration limit reached");

    // Barrier parameter update.
    for (;;) {
      const auto em = errors(mu_);
      const double emu = std::max({em[0], em[1] / sd, em[2] / sc});
      const double mu_floor = std::max(o_.mu_min, o_.mu_target);
      if (mu_ <= mu_floor || emu > kappa_eps * mu_) break;
      mu_ = std::max(mu_floor, std::min(o_.mu_factor * mu_, std::pow(mu_, o_.mu_power)));
      filter.clear();
    }
    const double tau = std::max(o_.tau_min, 1.0 - mu_);

    // Newton step.
    {
      std::vector<double> lam(y.data(), y.data() + m_);
      nlp_.hessian(v, 1.0, lam, hvals_);
    }
    if (!factorize_with_inertia(p, zl, zu))
      return pack_solution(Status::RegularizationFailure, "KKT matrix could not be regularized");

    const Vec gphi = barrier_gradient(p, grad_f);
    Vec rhs(static_cast<Eigen::Index>(N_ + m_));
    rhs.head(static_cast<Eigen::Index>(N_)) = -(gphi + aty);
    rhs.tail(static_cast<Eigen::Index>(m_)) = -r;
    for (std::size_t i = 0; i < N_; ++i)
      if (fixed_[i]) rhs[i] = 0.0;
    Vec sol_kkt = solve_kkt(rhs);
    Vec dp = sol_kkt.head(static_cast<Eigen::Index>(N_));
    Vec dy = sol_kkt.tail(static_cast<Eigen::Index>(m_));

    auto dz_from = [&](const Vec& step, Vec& dzl, Vec& dzu) {
      dzl = Vec::Zero(static_cast<Eigen::Index>(N_));
      dzu = Vec::Zero(static_cast<Eigen::Index>(N_));
      for (std::size_t i = 0; i < N_; ++i) {
        if (has_lo_[i]) {
          const double d = p[i] - lo_[i];
          dzl[i] = mu_ / d - zl[i] - zl[i] / d * step[i];
        }
        if (has_hi_[i]) {
          const double d = hi_[i] - p[i];
          dzu[i] = mu_ / d - zu[i] + zu[i] / d * step[i];
        }
      }
    };
    auto max_step = [&](const Vec& x, const Vec& dx, bool primal) {
      double a = 1.0;
      for (std::size_t i = 0; i < N_; ++i) {
        if (primal) {
          if (has_lo_[i] && dx[i] < 0.0) a = std::min(a, -tau * (x[i] - lo_[i]) / dx[i]);
          if (has_hi_[i] && dx[i] > 0.0) a = std::min(a, tau * (hi_[i] - x[i]) / dx[i]);
        } else if (dx[i] < 0.0) {
          a = std::min(a, -tau * x[i] / dx[i]);
        }
      }
      return a;
    };

    Vec dzl, dzu;
    dz_from(dp, dzl, dzu);
    const double alpha_max = max_step(p, dp, true);
    double alpha_z = 1.0;
    for (std::size_t i = 0; i < N_; ++i) {
      if (has_lo_[i] && dzl[i] < 0.0) alpha_z = std::min(alpha_z, -tau * zl[i] / dzl[i]);
      if (has_hi_[i] && dzu[i] < 0.0) alpha_z = std::min(alpha_z, -tau * zu[i] / dzu[i]);
    }

    // Filter line search on (theta, barrier objective).
    const double theta = r.lpNorm<1>();
    const double phi0 = barrier(p, ev.f);
    const double gdp = gphi.dot(dp);
    const double tiny = std::numeric_limits<double>::epsilon();
    const double slack_phi = 10.0 * tiny * std::abs(phi0);
    double alpha_min = gamma_alpha * gamma_theta;
    if (gdp < 0.0) {
      alpha_min = std::min(gamma_theta, gamma_phi * theta / -gdp);
      if (theta <= theta_min) alpha_min = std::min(alpha_min, delta_sw * std::pow(theta, s_theta) / std::pow(-gdp, s_phi));
      alpha_min *= gamma_alpha;
    }
    auto acceptable_to_filter = [&](double th, double ph) {
      if (th > theta_max) return false;
      for (const auto& f : filter)
        if (th >= f[0] && ph >= f[1]) return false;
      return true;
    };
    // Returns 1 for an f-type step, 2 for an h-type step, 0 for rejection.
    auto test_trial = [&](double a, double th, double ph) {
      if (!std::isfinite(ph) || !acceptable_to_filter(th, ph)) return 0;
      const bool switching = gdp < 0.0 && a * std::pow(-gdp, s_phi) > delta_sw * std::pow(theta, s_theta);
      if (switching && theta <= theta_min) return ph <= phi0 + eta_armijo * a * gdp + slack_phi ? 1 : 0;
      return (th <= (1.0 - gamma_theta) * theta || ph <= phi0 - gamma_phi * theta + slack_phi) ? 2 : 0;
    };

    double alpha = alpha_max;
    int trials = 0;
    int kind = 0;
    Vec p_new;
    Eval ev_new;
    double dp_rel = 0.0;
    for (std::size_t i = 0; i < N_; ++i) dp_rel = std::max(dp_rel, std::abs(dp[i]) / (1.0 + std::abs(p[i])));
    if (dp_rel <= 10.0 * tiny) {
      p_new = p + alpha * dp;
      if (evaluate(p_new, ev_new)) kind = 1;
    }
    while (kind == 0 && alpha >= alpha_min) {
      ++trials;
      p_new = p + alpha * dp;
      if (evaluate(p_new, ev_new)) {
        const double th = residual(p_new, ev_new).lpNorm<1>();
        kind = test_trial(alpha, th, barrier(p_new, ev_new.f));
        if (kind == 0 && trials == 1 && th >= theta && theta > 0.0) {
          // Second-order correction on the constraint linearisation.
          Vec rhs_soc = rhs;
          rhs_soc.tail(static_cast<Eigen::Index>(m_)) = -(alpha * r + residual(p_new, ev_new));
          const Vec s = solve_kkt(rhs_soc);
          const Vec dp_soc = s.head(static_cast<Eigen::Index>(N_));
          const double a_soc = max_step(p, dp_soc, true);
          Vec p_soc = p + a_soc * dp_soc;
          Eval ev_soc;
          if (evaluate(p_soc, ev_soc)) {
            const int k2 =
                test_trial(alpha, residual(p_soc, ev_soc).lpNorm<1>(), barrier(p_soc, ev_soc.f));
            if (k2 != 0) {
              kind = k2;
              p_new = p_soc;
              ev_new = ev_soc;
              dp = dp_soc;
              dy = s.tail(static_cast<Eigen::Index>(m_));
              dz_from(dp, dzl, dzu);
              alpha_z = 1.0;
              for (std::size_t i = 0; i < N_; ++i) {
                if (has_lo_[i] && dzl[i] < 0.0) alpha_z = std::min(alpha_z, -tau * zl[i] / dzl[i]);
                if (has_hi_[i] && dzu[i] < 0.0) alpha_z = std::min(alpha_z, -tau * zu[i] / dzu[i]);
              }
              alpha = a_soc;
              break;
            }
          }
        }
      }
      if (kind == 0) alpha *= 0.5;
    }

    if (kind == 2) filter.push_back({(1.0 - gamma_theta) * theta, phi0 - gamma_phi * theta});
    if (kind == 0) {
      // Feasibility restoration: Levenberg-Marquardt steps on the constraints
      // in the metric Sigma + I until the filter accepts the point.
      filter.push_back({(1.0 - gamma_theta) * theta, phi0 - gamma_phi * theta});
      if (theta <= o_.tol) {
        // Already feasible; the barrier objective cannot be decreased along
        // dp. Take a short step and let mu / regularization move on.
        ++ls_fail_streak;
        if (ls_fail_streak >= 10) return pack_solution(Status::MaxIter, "line search failed repeatedly");
        delta_w_forced_ = std::max(1e-4, 100.0 * std::max(delta_w_, o_.delta_w0));
        alpha = alpha_max * 1e-2;
        p_new = p + alpha * dp;
        if (!evaluate(p_new, ev_new)) return pack_solution(Status::MaxIter, "model not finite along the step");
      } else {
        ++restorations;
        std::fill(hvals_.begin(), hvals_.end(), 0.0);
        p_new = p;
        ev_new = ev;
        Vec r_new = r;
        double th_new = theta;
        bool restored = false;
        double lm = 1e-6;
        for (int rit = 0; rit < 500 && !restored; ++rit) {
          nlp_.jacobian(std::span<const double>(p_new.data(), n_), jvals_);
          assemble(p_new, zl, zu, 1.0, lm);
          if (!factor_lu()) {
            lm *= 100.0;
            if (lm > 1e10) return pack_solution(Status::RegularizationFailure, "restoration system is singular");
            continue;
          }
          Vec rr = Vec::Zero(static_cast<Eigen::Index>(N_ + m_));
          rr.head(static_cast<Eigen::Index>(N_)) = -barrier_gradient(p_new, Vec::Zero(static_cast<Eigen::Index>(N_)));
          for (std::size_t i = 0; i < N_; ++i)
            if (fixed_[i]) rr[i] = 0.0;
          rr.tail(static_cast<Eigen::Index>(m_)) = -r_new;
          const Vec d = solve_kkt(rr).head(static_cast<Eigen::Index>(N_));
          double a_max = 1.0;
          for (std::size_t i = 0; i < N_; ++i) {
            if (has_lo_[i] && d[i] < 0.0) a_max = std::min(a_max, -tau * (p_new[i] - lo_[i]) / d[i]);
            if (has_hi_[i] && d[i] > 0.0) a_max = std::min(a_max, tau * (hi_[i] - p_new[i]) / d[i]);
          }
          const double r2 = r_new.squaredNorm();
          bool moved = false;
          double a = a_max;
          for (int bt = 0; bt < 20 && d.allFinite(); ++bt, a *= 0.5) {
            Vec pt = p_new + a * d;
            Eval et;
            if (!evaluate(pt, et)) continue;
            const Vec rt = residual(pt, et);
            if (rt.squaredNorm() <= (1.0 - 1e-4 * a) * r2) {
              p_new = pt;
              ev_new = et;
              r_new = rt;
              th_new = rt.lpNorm<1>();
              moved = true;
              break;
            }
          }
          if (!moved || a < 0.1) {
            lm *= 10.0;
            if (lm > 1e10) break;
          } else if (a == 1.0) {
            lm = std::max(1e-12, 0.1 * lm);
          }
          if (moved) restored = th_new <= 0.9 * theta && acceptable_to_filter(th_new, barrier(p_new, ev_new.f));
        }
        if (!restored) {
          if (th_new > o_.tol) {
            p = p_new;
            ev = ev_new;
            return pack_solution(Status::InfeasibleDetected, "restoration phase failed to reduce infeasibility");
          }
          return pack_solution(Status::MaxIter, "restoration phase failed");
        }
        dy.setZero();
        alpha = 1.0;
        alpha_z = 0.0;
        for (std::size_t i = 0; i < N_; ++i) {
          if (has_lo_[i]) zl[i] = std::min(zl[i], kappa_sigma * mu_ / (p_new[i] - lo_[i]));
          if (has_hi_[i]) zu[i] = std::min(zu[i], kappa_sigma * mu_ / (hi_[i] - p_new[i]));
        }
      }
    } else {
      ls_fail_streak = 0;
    }

    p = p_new;
    ev = ev_new;
    y += alpha * dy;
    zl += alpha_z * dzl;
    zu += alpha_z * dzu;
    for (std::size_t i = 0; i < N_; ++i) {
      if (has_lo_[i]) {
        const double d = p[i] - lo_[i];
        zl[i] = std::clamp(zl[i], mu_ / (kappa_sigma * d), kappa_sigma * mu_ / d);
      }
      if (has_hi_[i]) {
        const double d = hi_[i] - p[i];
        zu[i] = std::clamp(zu[i], mu_ / (kappa_sigma * d), kappa_sigma * mu_ / d);
      }
    }
    const auto e = errors(mu_);
    write_log_row(iter, ev.f, e[0], e[1], e[2], alpha, alpha_z, trials);
  }
}

}  // namespace

Solution solve(const CompiledNlp& nlp, std::span<const double> v0, const Options& opts, const WarmStart* warm) {
  InteriorPoint ip(nlp, opts);
  return ip.run(v0, warm);
}

Solution solve(const Nlp& nlp, std::span<const double> v0, const Options& opts) {
  const CompiledNlp compiled(nlp);
  return solve(compiled, v0, opts);
}

}  // namespace tfh::nlp
