#pragma once

// Dense BFGS with a strong-Wolfe line search (bracketing + zoom with cubic
// interpolation). Objective values may be +inf (e.g. a diverging
// simulation); the line search backs off from such points.

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

namespace nfid::bfgs {

/// Returns f(x) and writes the gradient into `grad`.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

struct Options {
  int max_iters = 2000;
  double gradient_tolerance = 1e-8;  // infinity norm
  double loss_tolerance = 1e-12;     // relative decrease over `loss_window` iterations
  int loss_window = 5;
  double c1 = 1e-4;
  double c2 = 0.9;
  int max_line_search_evals = 40;
};

struct IterationInfo {
  int iteration = 0;
  double f = 0.0;
  double grad_norm = 0.0;  // infinity norm
  double step = 0.0;
  int evaluations = 0;  // cumulative objective evaluations
};

enum class Stop { GradientTolerance, LossTolerance, MaxIterations, LineSearchFailed, Callback };
std::string to_string(Stop s);

struct Result {
  Eigen::VectorXd x;
  double f = 0.0;
  int iterations = 0;
  int evaluations = 0;
  Stop reason = Stop::MaxIterations;
};

/// Called after every accepted step (and once for the starting point with
/// iteration 0). Return false to stop.
using Callback = std::function<bool(const Eigen::VectorXd& x, const IterationInfo& info)>;

/// Throws NumericalError when f(x0) is not finite.
Result minimize(const Objective& f, Eigen::VectorXd x0, const Options& opts = {},
                const Callback& callback = {});

}  // namespace nfid::bfgs
