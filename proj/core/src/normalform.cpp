#include "nfid/normalform.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unsupported/Eigen/MatrixFunctions>

#include "nfid/error.hpp"

namespace nfid::normalform {
namespace {

bool all_finite(const RowVectorXc& m) {
  return m.real().allFinite() && m.imag().allFinite();
}

}  // namespace

void HwNormalForm::validate() const {
  const auto n = A.rows();
  if (A.cols() != n || B.rows() != n || B.cols() != 3 || C.cols() != n) {
    throw InputError("HwNormalForm: inconsistent matrix dimensions");
  }
  if (!A.allFinite() || !B.allFinite() || !all_finite(C) ||
      !D.real().allFinite() || !D.imag().allFinite()) {
    throw InputError("HwNormalForm: non-finite parameter");
  }
  if (!(sp.v > 0.0)) throw InputError("HwNormalForm: setpoint voltage must be positive");
}

HwNormalForm HwNormalForm::zeros(int n, Setpoints sp) {
  HwNormalForm m;
  m.A = Eigen::MatrixXd::Zero(n, n);
  m.B = Eigen::MatrixXd::Zero(n, 3);
  m.C = RowVectorXc::Zero(n);
  m.D = RowVector3c::Zero();
  m.sp = sp;
  return m;
}

void HwDiscrete::validate() const {
  const auto n = Ad.rows();
  if (Ad.cols() != n || Bd.rows() != n || Bd.cols() != 3 || C.cols() != n) {
    throw InputError("HwDiscrete: inconsistent matrix dimensions");
  }
  if (!(dt > 0.0)) throw InputError("HwDiscrete: dt must be positive");
}

Vector3 error_coordinates(cplx v, cplx i, const Setpoints& sp) {
  const cplx s = v * std::conj(i);
  return {s.real() - sp.P, s.imag() - sp.Q, std::norm(v) - sp.nu()};
}

ErrorSeries error_series(const DqSeries& series, const Setpoints& sp) {
  ErrorSeries out;
  out.dt = series.dt();
  out.e.reserve(series.size());
  for (const auto& s : series.samples()) out.e.push_back(error_coordinates(s.v, s.i, sp));
  return out;
}

HwDiscrete discretize(const HwNormalForm& model, double dt) {
  model.validate();
  if (!(dt > 0.0)) throw InputError("discretize: dt must be positive");
  const auto n = model.A.rows();
  HwDiscrete d;
  d.C = model.C;
  d.D = model.D;
  d.sp = model.sp;
  d.dt = dt;
  if (n == 0) {
    d.Ad = Eigen::MatrixXd::Zero(0, 0);
    d.Bd = Eigen::MatrixXd::Zero(0, 3);
    return d;
  }
  // exp([A B; 0 0] dt) = [A_d B_d; 0 I]
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n + 3, n + 3);
  M.topLeftCorner(n, n) = model.A * dt;
  M.topRightCorner(n, 3) = model.B * dt;
  const Eigen::MatrixXd phi = M.exp();
  d.Ad = phi.topLeftCorner(n, n);
  d.Bd = phi.topRightCorner(n, 3);
  return d;
}

HwNormalForm to_continuous(const HwDiscrete& model, Conversion* used) {
  model.validate();
  const auto n = model.Ad.rows();
  HwNormalForm c;
  c.C = model.C;
  c.D = model.D;
  c.sp = model.sp;
  if (n == 0) {
    c.A = Eigen::MatrixXd::Zero(0, 0);
    c.B = Eigen::MatrixXd::Zero(0, 3);
    if (used) *used = Conversion::Logarithm;
    return c;
  }
  const Eigen::VectorXcd eig = model.Ad.eigenvalues();
  bool log_ok = true;
  for (const cplx& l : eig) {
    const double mag = std::abs(l);
    if (mag < 1e-12 || (l.real() <= 0.0 && std::abs(l.imag()) < 1e-6 * mag)) log_ok = false;
  }
  if (log_ok) {
    Eigen::MatrixXd M = Eigen::MatrixXd::Identity(n + 3, n + 3);
    M.topLeftCorner(n, n) = model.Ad;
    M.topRightCorner(n, 3) = model.Bd;
    const Eigen::MatrixXd L = M.log();
    if (L.allFinite()) {
      c.A = L.topLeftCorner(n, n) / model.dt;
      c.B = L.topRightCorner(n, 3) / model.dt;
      if (used) *used = Conversion::Logarithm;
      return c;
    }
  }
  // Bilinear: A_d = (I - A dt/2)^{-1} (I + A dt/2), B_d = (I - A dt/2)^{-1} B dt.
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd sum = model.Ad + I;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(sum.transpose());
  if (!lu.isInvertible()) throw NumericalError("to_continuous: A_d has an eigenvalue at -1");
  c.A = (2.0 / model.dt) * lu.solve((model.Ad - I).transpose()).transpose();
  c.B = (I - 0.5 * model.dt * c.A) * model.Bd / model.dt;
  if (used) *used = Conversion::Bilinear;
  return c;
}

OpenLoopResult simulate_open_loop(const HwDiscrete& model, const ErrorSeries& e, cplx theta0,
                                  const Eigen::VectorXd& xc0, PhaseRule rule) {
  model.validate();
  const auto n = model.Ad.rows();
  if (xc0.size() != n) throw InputError("simulate_open_loop: xc0 has wrong dimension");
  if (std::abs(e.dt - model.dt) > 1e-9 * model.dt) {
    std::ostringstream os;
    os << "simulate_open_loop: input dt " << e.dt << " does not match model dt " << model.dt;
    throw InputError(os.str());
  }
  const std::size_t N = e.size();
  OpenLoopResult out;
  out.phase.dt = model.dt;
  out.phase.theta.resize(N);
  out.v.resize(N);
  out.eta.resize(N);
  if (N == 0) return out;

  const double h = model.dt;
  Eigen::VectorXd x = xc0;
  Eigen::VectorXd x_next(n);
  cplx theta = theta0;
  for (std::size_t k = 0; k < N; ++k) {
    out.phase.theta[k] = theta;
    out.v[k] = std::exp(theta);
    const cplx de = (model.D * e.e[k]).value();
    const cplx eta = (n > 0 ? cplx((model.C * x).value()) : cplx{}) + de;
    out.eta[k] = eta;
    if (k + 1 == N) break;
    x_next.noalias() = model.Ad * x + model.Bd * e.e[k];
    if (rule == PhaseRule::Trapezoidal) {
      const cplx eta_next = (n > 0 ? cplx((model.C * x_next).value()) : cplx{}) + de;
      theta += 0.5 * h * (eta + eta_next);
    } else {
      theta += h * eta;
    }
    x.swap(x_next);
  }
  return out;
}

ClosedLoopResult simulate_closed_loop(const HwDiscrete& model, const plants::NetworkConfig& net,
                                      plants::GridState grid,
                                      std::span<const plants::GridEvent> events, double t_end,
                                      cplx theta0, const Eigen::VectorXd& xc0,
                                      const ClosedLoopOptions& opts) {
  model.validate();
  if (net.topology != plants::Topology::SingleBus) {
    throw InputError("simulate_closed_loop: network must be single-bus (algebraic)");
  }
  net.validate(1);
  const auto n = model.Ad.rows();
  if (xc0.size() != n) throw InputError("simulate_closed_loop: xc0 has wrong dimension");
  for (std::size_t k = 1; k < events.size(); ++k) {
    if (events[k].t < events[k - 1].t) {
      throw InputError("simulate_closed_loop: events must be sorted by time");
    }
  }
  const double h = model.dt;
  const auto steps = static_cast<std::size_t>(std::floor(t_end / h + 1e-9)) + 1;
  const double eps_t = 1e-9 * h;

  ClosedLoopResult res;
  std::vector<DqSample> samples;
  samples.reserve(steps);
  std::size_t next_event = 0;
  Eigen::VectorXd x = xc0;
  Eigen::VectorXd x_next(n);
  cplx theta = theta0;
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) * h;
    while (next_event < events.size() && events[next_event].t <= t + eps_t) {
      plants::apply_event(grid, events[next_event++]);
    }
    const cplx v = std::exp(theta);
    const cplx vs[1] = {v};
    const cplx i = plants::solve_network(net, grid, t, vs).currents[0];
    const bool finite = std::isfinite(v.real()) && std::isfinite(v.imag()) &&
                        std::isfinite(i.real()) && std::isfinite(i.imag()) && x.allFinite();
    if (!finite) {
      if (opts.throw_on_nonfinite) {
        std::ostringstream os;
        os << "simulate_closed_loop: non-finite state at t = " << t << " s";
        throw NumericalError(os.str());
      }
      res.truncated_at = t;
      break;
    }
    const double mag = std::abs(v);
    if (!res.first_out_of_band && (mag < opts.band_low || mag > opts.band_high)) {
      res.first_out_of_band = t;
    }
    samples.push_back({t, v, i});
    if (k + 1 == steps) break;

    const Vector3 e = error_coordinates(v, i, model.sp);
    const cplx de = (model.D * e).value();
    const cplx eta = (n > 0 ? cplx((model.C * x).value()) : cplx{}) + de;
    x_next.noalias() = model.Ad * x + model.Bd * e;
    if (opts.rule == PhaseRule::Trapezoidal) {
      const cplx eta_next = (n > 0 ? cplx((model.C * x_next).value()) : cplx{}) + de;
      theta += 0.5 * h * (eta + eta_next);
    } else {
      theta += h * eta;
    }
    x.swap(x_next);
  }
  if (samples.empty()) throw NumericalError("simulate_closed_loop: non-finite initial state");
  res.series = DqSeries(std::move(samples), h);
  return res;
}

std::optional<Equilibrium> equilibrium(const HwNormalForm& model,
                                       const plants::NetworkConfig& net,
                                       const plants::GridState& grid, std::string* diagnostic) {
  model.validate();
  auto fail = [&](const std::string& why) -> std::optional<Equilibrium> {
    if (diagnostic) *diagnostic = why;
    return std::nullopt;
  };
  if (net.topology != plants::Topology::SingleBus) {
    return fail("equilibrium: network must be single-bus (algebraic)");
  }
  const auto n = model.A.rows();
  const Eigen::Index dim = n + 2;

  // unknowns z = [Re Theta, Im Theta, x]; residual r = [Re eta, Im eta, A x + B e].
  // Without the slack nothing fixes the angle: the steady state rotates at
  // Im eta, and the second residual becomes a gauge on Im Theta.
  const bool rotating = !grid.breaker_closed;
  const cplx v0 = grid.breaker_closed ? grid.slack_voltage(0.0) : cplx{model.sp.v, 0.0};
  auto residual = [&](const Eigen::VectorXd& z, Vector3* e_out) {
    const cplx theta{z[0], z[1]};
    const Eigen::VectorXd x = z.tail(n);
    const cplx v = std::exp(theta);
    const cplx vs[1] = {v};
    const cplx i = plants::solve_network(net, grid, 0.0, vs).currents[0];
    const Vector3 e = error_coordinates(v, i, model.sp);
    if (e_out) *e_out = e;
    const cplx eta = (n > 0 ? cplx((model.C * x).value()) : cplx{}) + cplx((model.D * e).value());
    Eigen::VectorXd r(dim);
    r[0] = eta.real();
    r[1] = rotating ? z[1] - std::arg(v0) : eta.imag();
    if (n > 0) r.tail(n) = model.A * x + model.B * e;
    return r;
  };

  Eigen::VectorXd z = Eigen::VectorXd::Zero(dim);
  z[0] = std::log(std::abs(v0));
  z[1] = std::arg(v0);

  Eigen::VectorXd r = residual(z, nullptr);
  Eigen::MatrixXd J(dim, dim);
  Eigen::Index rank = dim;
  for (int iter = 0; iter < 100; ++iter) {
    if (!r.allFinite()) return fail("equilibrium: non-finite residual");
    if (r.lpNorm<Eigen::Infinity>() < 1e-13) break;
    for (Eigen::Index c = 0; c < dim; ++c) {
      const double step = 1e-7 * std::max(1.0, std::abs(z[c]));
      Eigen::VectorXd zp = z;
      zp[c] += step;
      Eigen::VectorXd zm = z;
      zm[c] -= step;
      J.col(c) = (residual(zp, nullptr) - residual(zm, nullptr)) / (2.0 * step);
    }
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(J);
    cod.setThreshold(1e-10);
    rank = cod.rank();
    const Eigen::VectorXd dz = cod.solve(-r);
    double alpha = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls) {
      const Eigen::VectorXd trial = z + alpha * dz;
      const Eigen::VectorXd rt = residual(trial, nullptr);
      if (rt.allFinite() && rt.norm() < r.norm()) {
        z = trial;
        r = rt;
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;
  }
  Equilibrium eq;
  r = residual(z, &eq.e);
  eq.theta = {z[0], z[1]};
  eq.xc = z.tail(n);
  eq.residual = r.lpNorm<Eigen::Infinity>();
  if (rotating) {
    eq.omega = ((n > 0 ? cplx((model.C * eq.xc).value()) : cplx{}) + cplx((model.D * eq.e).value()))
                   .imag();
  }
  if (!(eq.residual < 1e-10)) {
    std::ostringstream os;
    os << "equilibrium: Newton did not converge (residual " << eq.residual << ", Jacobian rank "
       << rank << " of " << dim << ")";
    return fail(os.str());
  }
  if (diagnostic) diagnostic->clear();
  return eq;
}

std::vector<RowVector3c> markov_parameters(const HwDiscrete& model, int count) {
  model.validate();
  std::vector<RowVector3c> h;
  if (count <= 0) return h;
  h.reserve(static_cast<std::size_t>(count));
  h.push_back(model.D);
  Eigen::MatrixXd AkB = model.Bd;  // A^{k-1} B
  for (int k = 1; k < count; ++k) {
    if (model.n_ivars() == 0) {
      h.push_back(RowVector3c::Zero());
      continue;
    }
    h.push_back(model.C * AkB.cast<cplx>());
    AkB = model.Ad * AkB;
  }
  return h;
}

HwNormalForm similarity_transform(const HwNormalForm& model, const Eigen::MatrixXd& T) {
  model.validate();
  Eigen::FullPivLU<Eigen::MatrixXd> lu(T);
  if (T.rows() != model.A.rows() || !lu.isInvertible()) {
    throw InputError("similarity_transform: T must be square, invertible, and match n_ivars");
  }
  const Eigen::MatrixXd Tinv = lu.inverse();
  HwNormalForm out = model;
  out.A = T * model.A * Tinv;
  out.B = T * model.B;
  out.C = model.C * Tinv.cast<cplx>();
  return out;
}

}  // namespace nfid::normalform
