#include "tfh/ode.hpp"

#include <algorithm>
#include <cmath>

namespace tfh::ode {

namespace {

constexpr double c2 = 0.2, c3 = 0.3, c4 = 0.8, c5 = 8.0 / 9.0;
constexpr double a21 = 0.2;
constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0, a53 = 64448.0 / 6561.0,
                 a54 = -212.0 / 729.0;
constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0, a64 = 49.0 / 176.0,
                 a65 = -5103.0 / 18656.0;
constexpr double a71 = 35.0 / 384.0, a73 = 500.0 / 1113.0, a74 = 125.0 / 192.0, a75 = -2187.0 / 6784.0,
                 a76 = 11.0 / 84.0;
constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0, e5 = -17253.0 / 339200.0,
                 e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;
constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                 d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                 d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

constexpr double kSafety = 0.9;
constexpr double kBeta = 0.04;
constexpr double kExpo = 0.2 - kBeta * 0.75;
constexpr double kFacMin = 0.2;  // h shrinks by at most 5x per step
constexpr double kFacMax = 10.0;  // and grows by at most 10x

}  // namespace

void DenseStep::eval(double t, std::span<double> y) const {
  const double s = h > 0.0 ? (t - t0) / h : 0.0;
  const double s1 = 1.0 - s;
  const double* r1 = coeffs.data();
  const double* r2 = r1 + n;
  const double* r3 = r2 + n;
  const double* r4 = r3 + n;
  const double* r5 = r4 + n;
  for (std::size_t i = 0; i < n; ++i) y[i] = r1[i] + s * (r2[i] + s1 * (r3[i] + s * (r4[i] + s1 * r5[i])));
}

std::vector<double> DenseStep::eval(double t) const {
  std::vector<double> y(n);
  eval(t, y);
  return y;
}

double DenseStep::eval_component(double t, std::size_t i) const {
  const double s = h > 0.0 ? (t - t0) / h : 0.0;
  const double s1 = 1.0 - s;
  return coeffs[i] +
         s * (coeffs[n + i] + s1 * (coeffs[2 * n + i] + s * (coeffs[3 * n + i] + s1 * coeffs[4 * n + i])));
}

DenseStep DenseStep::select(std::span<const std::size_t> components) const {
  DenseStep out{t0, h, t_end, components.size(), {}};
  out.coeffs.resize(5 * components.size());
  for (std::size_t b = 0; b < 5; ++b)
    for (std::size_t k = 0; k < components.size(); ++k)
      out.coeffs[b * components.size() + k] = coeffs[b * n + components[k]];
  return out;
}

DenseStep DenseStep::shifted(double dt) const {
  DenseStep out = *this;
  out.t0 += dt;
  out.t_end += dt;
  return out;
}

void DenseOutput::push(DenseStep step) { steps_.push_back(std::move(step)); }

void DenseOutput::append(const DenseOutput& other) {
  steps_.insert(steps_.end(), other.steps_.begin(), other.steps_.end());
}

void DenseOutput::eval(double t, std::span<double> y) const {
  if (steps_.empty()) throw std::logic_error("DenseOutput::eval on empty output");
  t = std::clamp(t, t_begin(), t_end());
  auto it = std::upper_bound(steps_.begin(), steps_.end(), t,
                             [](double v, const DenseStep& s) { return v < s.t_end; });
  if (it == steps_.end()) --it;
  it->eval(std::min(t, it->t_end), y);
}

std::vector<double> DenseOutput::eval(double t) const {
  std::vector<double> y(dim());
  eval(t, y);
  return y;
}

Dopri5::Dopri5(Rhs rhs, std::size_t n, Tolerances tol, double h_max)
    : rhs_(std::move(rhs)), n_(n), tol_(tol), h_max_(h_max) {
  for (auto* v : {&y_, &y_prev_, &k1_, &k2_, &k3_, &k4_, &k5_, &k6_, &k7_, &ytmp_, &ynew_, &err_})
    v->assign(n_, 0.0);
}

void Dopri5::reset(double t, std::span<const double> y) {
  t_ = t;
  std::copy(y.begin(), y.end(), y_.begin());
  y_prev_ = y_;
  rhs_(t_, y_, k1_);
  ++stats_.rhs_evals;
  h_ = 0.0;
  err_old_ = 1e-4;
  last_rejected_ = false;
}

void Dopri5::overwrite_state(std::span<const double> y) {
  std::copy(y.begin(), y.end(), y_.begin());
  rhs_(t_, y_, k1_);
  ++stats_.rhs_evals;
}

double Dopri5::error_norm(std::span<const double> err) const {
  if (n_ == 0) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < n_; ++i) {
    const double sc = tol_.atol + tol_.rtol * std::max(std::abs(y_[i]), std::abs(ynew_[i]));
    const double r = err[i] / sc;
    acc += r * r;
  }
  return std::sqrt(acc / static_cast<double>(n_));
}

// Starting step heuristic from Hairer, Norsett & Wanner.
double Dopri5::initial_step(double t_limit) {
  const double span = t_limit - t_;
  double d0 = 0.0, d1n = 0.0;
  for (std::size_t i = 0; i < n_; ++i) {
    const double sc = tol_.atol + tol_.rtol * std::abs(y_[i]);
    d0 += (y_[i] / sc) * (y_[i] / sc);
    d1n += (k1_[i] / sc) * (k1_[i] / sc);
  }
  double h = (d0 <= 1e-10 || d1n <= 1e-10) ? 1e-6 : 0.01 * std::sqrt(d0 / d1n);
  h = std::min({h, h_max_, span});
  for (std::size_t i = 0; i < n_; ++i) ytmp_[i] = y_[i] + h * k1_[i];
  rhs_(t_ + h, ytmp_, k2_);
  ++stats_.rhs_evals;
  double d2 = 0.0;
  for (std::size_t i = 0; i < n_; ++i) {
    const double sc = tol_.atol + tol_.rtol * std::abs(y_[i]);
    d2 += ((k2_[i] - k1_[i]) / sc) * ((k2_[i] - k1_[i]) / sc);
  }
  d2 = n_ > 0 ? std::sqrt(d2 / static_cast<double>(n_)) / h : 0.0;
  const double dmax = std::max(std::sqrt(d1n / std::max<double>(1.0, static_cast<double>(n_))), d2);
  const double h1 = dmax <= 1e-15 ? std::max(1e-6, h * 1e-3) : std::pow(0.01 / dmax, 0.2);
  return std::min({100.0 * h, h1, h_max_, span});
}

const DenseStep& Dopri5::step(double t_limit) {
  if (!(t_limit > t_)) throw std::invalid_argument("Dopri5::step: t_limit must exceed current time");
  if (h_ <= 0.0) h_ = initial_step(t_limit);
  const double eps_t = 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(t_));

  for (;;) {
    double h = std::min(h_, h_max_);
    bool hits_limit = false;
    if (t_ + h >= t_limit - eps_t) {
      h = t_limit - t_;
      hits_limit = true;
    }
    if (h < eps_t) throw StepSizeError("step size underflow at t=" + std::to_string(t_));

    const auto n = n_;
    for (std::size_t i = 0; i < n; ++i) ytmp_[i] = y_[i] + h * a21 * k1_[i];
    rhs_(t_ + c2 * h, ytmp_, k2_);
    for (std::size_t i = 0; i < n; ++i) ytmp_[i] = y_[i] + h * (a31 * k1_[i] + a32 * k2_[i]);
    rhs_(t_ + c3 * h, ytmp_, k3_);
    for (std::size_t i = 0; i < n; ++i) ytmp_[i] = y_[i] + h * (a41 * k1_[i] + a42 * k2_[i] + a43 * k3_[i]);
    rhs_(t_ + c4 * h, ytmp_, k4_);
    for (std::size_t i = 0; i < n; ++i)
      ytmp_[i] = y_[i] + h * (a51 * k1_[i] + a52 * k2_[i] + a53 * k3_[i] + a54 * k4_[i]);
    rhs_(t_ + c5 * h, ytmp_, k5_);
    for (std::size_t i = 0; i < n; ++i)
      ytmp_[i] = y_[i] + h * (a61 * k1_[i] + a62 * k2_[i] + a63 * k3_[i] + a64 * k4_[i] + a65 * k5_[i]);
    const double t_new = hits_limit ? t_limit : t_ + h;
    rhs_(t_new, ytmp_, k6_);
    for (std::size_t i = 0; i < n; ++i)
      ynew_[i] = y_[i] + h * (a71 * k1_[i] + a73 * k3_[i] + a74 * k4_[i] + a75 * k5_[i] + a76 * k6_[i]);
    rhs_(t_new, ynew_, k7_);
    stats_.rhs_evals += 6;
    for (std::size_t i = 0; i < n; ++i)
      err_[i] = h * (e1 * k1_[i] + e3 * k3_[i] + e4 * k4_[i] + e5 * k5_[i] + e6 * k6_[i] + e7 * k7_[i]);
    const double err = error_norm(err_);

    const double fac11 = std::pow(std::max(err, 1e-300), kExpo);
    if (err <= 1.0) {
      double fac = fac11 / std::pow(err_old_, kBeta) / kSafety;
      fac = std::clamp(fac, 1.0 / kFacMax, 1.0 / kFacMin);
      double h_next = h / fac;
      if (last_rejected_) h_next = std::min(h_next, h);
      err_old_ = std::max(err, 1e-4);
      last_rejected_ = false;

      dense_.t0 = t_;
      dense_.h = h;
      dense_.t_end = t_new;
      dense_.n = n;
      dense_.coeffs.resize(5 * n);
      double* r1 = dense_.coeffs.data();
      double* r2 = r1 + n;
      double* r3 = r2 + n;
      double* r4 = r3 + n;
      double* r5 = r4 + n;
      for (std::size_t i = 0; i < n; ++i) {
        const double ydiff = ynew_[i] - y_[i];
        const double bspl = h * k1_[i] - ydiff;
        r1[i] = y_[i];
        r2[i] = ydiff;
        r3[i] = bspl;
        r4[i] = ydiff - h * k7_[i] - bspl;
        r5[i] = h * (d1 * k1_[i] + d3 * k3_[i] + d4 * k4_[i] + d5 * k5_[i] + d6 * k6_[i] + d7 * k7_[i]);
      }
      y_prev_ = y_;
      y_.swap(ynew_);
      k1_.swap(k7_);
      t_ = t_new;
      // A step clipped by t_limit should not shrink the next proposal.
      h_ = hits_limit ? std::max(h_next, h_) : h_next;
      ++stats_.accepted;
      return dense_;
    }
    h_ = h / std::min(1.0 / kFacMin, fac11 / kSafety);
    last_rejected_ = true;
    ++stats_.rejected;
  }
}

Root bisect(const std::function<double(double)>& g, double lo, double hi, double g_lo, double g_hi,
            double tol) {
  const bool lo_positive = g_lo > 0.0;
  Root best{hi, hi, g_hi};
  if (std::abs(g_hi) <= tol) return best;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const double gm = g(mid);
    if (std::abs(gm) <= tol) {
      // Keep shrinking toward the crossing while staying within tolerance on
      // the far side, so t_after is a genuine post-crossing point.
      return Root{mid, ((gm > 0.0) == lo_positive) ? hi : mid, gm};
    }
    if ((gm > 0.0) == lo_positive) {
      lo = mid;
      g_lo = gm;
    } else {
      hi = mid;
      g_hi = gm;
    }
  }
  return Root{hi, hi, g_hi};
}

}  // namespace tfh::ode
