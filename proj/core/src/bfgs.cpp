#include "nfid/bfgs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "nfid/error.hpp"

namespace nfid::bfgs {

std::string to_string(Stop s) {
  switch (s) {
    case Stop::GradientTolerance: return "gradient_tolerance";
    case Stop::LossTolerance: return "loss_tolerance";
    case Stop::MaxIterations: return "max_iterations";
    case Stop::LineSearchFailed: return "line_search_failed";
    case Stop::Callback: return "callback";
  }
  return "unknown";
}

namespace {

struct Point {
  double alpha = 0.0;
  double f = 0.0;
  double d = 0.0;  // directional derivative
  Eigen::VectorXd x;
  Eigen::VectorXd g;
};

// Minimizer of the cubic through (a, fa, da), (b, fb, db); falls back to
// bisection when the interpolant is unusable.
double cubic_min(const Point& a, const Point& b) {
  const double d1 = a.d + b.d - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
  const double disc = d1 * d1 - a.d * b.d;
  const double mid = 0.5 * (a.alpha + b.alpha);
  if (!(disc >= 0.0) || !std::isfinite(a.f) || !std::isfinite(b.f)) return mid;
  const double sgn = b.alpha > a.alpha ? 1.0 : -1.0;
  const double d2 = sgn * std::sqrt(disc);
  const double denom = b.d - a.d + 2.0 * d2;
  if (denom == 0.0) return mid;
  const double t = b.alpha - (b.alpha - a.alpha) * (b.d + d2 - d1) / denom;
  const double lo = std::min(a.alpha, b.alpha);
  const double hi = std::max(a.alpha, b.alpha);
  const double margin = 0.1 * (hi - lo);
  if (!std::isfinite(t) || t < lo + margin || t > hi - margin) return mid;
  return t;
}

class LineSearch {
 public:
  LineSearch(const Objective& f, const Eigen::VectorXd& x, const Eigen::VectorXd& p, double f0,
             double d0, const Options& o)
      : f_(f), x_(x), p_(p), f0_(f0), d0_(d0), o_(o) {}

  // Returns true on success with the accepted point in xa/fa/ga.
  bool run(double alpha1, Eigen::VectorXd& xa, double& fa, Eigen::VectorXd& ga) {
    Point prev{0.0, f0_, d0_, {}, {}};
    double alpha = alpha1;
    for (int i = 0; evals_ < o_.max_line_search_evals; ++i) {
      const Point cur = eval(alpha);
      if (!std::isfinite(cur.f)) {
        // Shrink toward the last finite point.
        alpha = prev.alpha + 0.25 * (alpha - prev.alpha);
        continue;
      }
      if (cur.f > f0_ + o_.c1 * alpha * d0_ || (i > 0 && cur.f >= prev.f)) {
        return zoom(prev, cur, xa, fa, ga);
      }
      if (std::abs(cur.d) <= -o_.c2 * d0_) return accept(cur, xa, fa, ga);
      if (cur.d >= 0.0) return zoom(cur, prev, xa, fa, ga);
      prev = cur;
      alpha *= 2.0;
    }
    return false;
  }

  [[nodiscard]] int evaluations() const { return evals_; }

 private:
  Point eval(double alpha) {
    Point pt;
    pt.alpha = alpha;
    pt.x = x_ + alpha * p_;
    pt.g.resize(pt.x.size());
    ++evals_;
    pt.f = f_(pt.x, pt.g);
    if (!std::isfinite(pt.f) || !pt.g.allFinite()) pt.f = std::numeric_limits<double>::infinity();
    pt.d = std::isfinite(pt.f) ? pt.g.dot(p_) : 0.0;
    return pt;
  }

  static bool accept(const Point& pt, Eigen::VectorXd& xa, double& fa, Eigen::VectorXd& ga) {
    xa = pt.x;
    ga = pt.g;
    fa = pt.f;
    return true;
  }

  bool zoom(Point lo, Point hi, Eigen::VectorXd& xa, double& fa, Eigen::VectorXd& ga) {
    while (evals_ < o_.max_line_search_evals) {
      const double alpha = cubic_min(lo, hi);
      if (std::abs(hi.alpha - lo.alpha) < 1e-16 * std::max(1.0, std::abs(lo.alpha))) break;
      const Point cur = eval(alpha);
      if (!std::isfinite(cur.f) || cur.f > f0_ + o_.c1 * alpha * d0_ || cur.f >= lo.f) {
        hi = cur;
        if (!std::isfinite(hi.f)) hi.d = 0.0;
      } else {
        if (std::abs(cur.d) <= -o_.c2 * d0_) return accept(cur, xa, fa, ga);
        if (cur.d * (hi.alpha - lo.alpha) >= 0.0) hi = lo;
        lo = cur;
      }
    }
    // Sufficient decrease without curvature is still progress.
    if (lo.alpha > 0.0 && lo.f < f0_) return accept(lo, xa, fa, ga);
    return false;
  }

  const Objective& f_;
  const Eigen::VectorXd& x_;
  const Eigen::VectorXd& p_;
  double f0_;
  double d0_;
  const Options& o_;
  int evals_ = 0;
};

}  // namespace

Result minimize(const Objective& f, Eigen::VectorXd x0, const Options& opts,
                const Callback& callback) {
  const auto n = x0.size();
  Result res;
  res.x = std::move(x0);
  Eigen::VectorXd g(n);
  res.f = f(res.x, g);
  res.evaluations = 1;
  if (!std::isfinite(res.f) || !g.allFinite()) {
    throw NumericalError("bfgs: objective is not finite at the starting point");
  }
  IterationInfo info{0, res.f, n > 0 ? g.lpNorm<Eigen::Infinity>() : 0.0, 0.0, 1};
  if (callback && !callback(res.x, info)) {
    res.reason = Stop::Callback;
    return res;
  }
  if (n == 0 || info.grad_norm < opts.gradient_tolerance) {
    res.reason = Stop::GradientTolerance;
    return res;
  }

  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);
  bool scaled = false;
  std::vector<double> history{res.f};
  Eigen::VectorXd x_new(n), g_new(n);

  for (int it = 1; it <= opts.max_iters; ++it) {
    Eigen::VectorXd p = -H * g;
    double d0 = g.dot(p);
    if (!(d0 < 0.0)) {
      H.setIdentity();
      scaled = false;
      p = -g;
      d0 = -g.squaredNorm();
    }
    // First step of an unscaled search: unit-length move.
    const double alpha1 = scaled ? 1.0 : std::min(1.0, 1.0 / p.norm());
    LineSearch ls(f, res.x, p, res.f, d0, opts);
    double f_new = 0.0;
    const bool ok = ls.run(alpha1, x_new, f_new, g_new);
    res.evaluations += ls.evaluations();
    if (!ok) {
      res.reason = Stop::LineSearchFailed;
      return res;
    }

    const Eigen::VectorXd s = x_new - res.x;
    const Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (!scaled) {
        H *= sy / y.squaredNorm();
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Eigen::VectorXd Hy = H * y;
      const double yHy = y.dot(Hy);
      H += (rho * rho * yHy + rho) * (s * s.transpose()) - rho * (Hy * s.transpose() + s * Hy.transpose());
    }
    res.x = x_new;
    g = g_new;
    res.f = f_new;
    res.iterations = it;
    history.push_back(res.f);

    info = {it, res.f, g.lpNorm<Eigen::Infinity>(), s.norm(), res.evaluations};
    if (callback && !callback(res.x, info)) {
      res.reason = Stop::Callback;
      return res;
    }
    if (info.grad_norm < opts.gradient_tolerance) {
      res.reason = Stop::GradientTolerance;
      return res;
    }
    const auto w = static_cast<std::size_t>(opts.loss_window);
    if (history.size() > w) {
      const double past = history[history.size() - 1 - w];
      const double rel = (past - res.f) / std::max(std::abs(past), 1e-300);
      if (rel < opts.loss_tolerance) {
        res.reason = Stop::LossTolerance;
        return res;
      }
    }
  }
  res.reason = Stop::MaxIterations;
  return res;
}

}  // namespace nfid::bfgs
