#include "nfid/plants.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "nfid/error.hpp"

namespace nfid::plants {
namespace {

constexpr cplx kJ{0.0, 1.0};

cplx lag_voltage(const Eigen::Ref<const Eigen::VectorXd>& x, std::size_t offset) {
  return {x[static_cast<Eigen::Index>(offset)], x[static_cast<Eigen::Index>(offset + 1)]};
}

void check_positive(double value, const char* name) {
  if (!(value > 0.0) || !std::isfinite(value)) {
    throw InputError(std::string(name) + " must be positive and finite");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Parameters

void DroopParams::validate() const {
  check_positive(tau_P, "droop.tau_P");
  check_positive(tau_Q, "droop.tau_Q");
  if (!(tau_act >= 0.0)) throw InputError("droop.tau_act must be >= 0");
  check_positive(sp.v, "droop.v_s");
  if (!std::isfinite(K_P) || !std::isfinite(K_Q)) throw InputError("droop gains must be finite");
}

void DvocParams::validate() const {
  check_positive(eta_gain, "dvoc.eta_gain");
  check_positive(alpha_gain, "dvoc.alpha_gain");
  if (!(tau_act >= 0.0)) throw InputError("dvoc.tau_act must be >= 0");
  check_positive(sp.v, "dvoc.v_s");
  if (!std::isfinite(kappa)) throw InputError("dvoc.kappa must be finite");
}

// ---------------------------------------------------------------------------
// Droop

cplx droop_voltage_reference(const Eigen::Ref<const Eigen::VectorXd>& x, const DroopParams& p) {
  const double magnitude = p.sp.v + p.K_Q * (p.sp.Q - x[2]);
  return std::polar(magnitude, x[0]);
}

cplx droop_terminal_voltage(const Eigen::Ref<const Eigen::VectorXd>& x, const DroopParams& p) {
  return p.tau_act > 0.0 ? lag_voltage(x, 3) : droop_voltage_reference(x, p);
}

Eigen::VectorXd droop_rhs(const Eigen::Ref<const Eigen::VectorXd>& x, cplx i,
                          const DroopParams& p) {
  Eigen::VectorXd dx(kDroopStateSize);
  const cplx v = droop_terminal_voltage(x, p);
  const PowerSample s = complex_power(v, i);
  dx[0] = p.omega_s + p.K_P * (p.sp.P - x[1]);
  dx[1] = (s.P - x[1]) / p.tau_P;
  dx[2] = (s.Q - x[2]) / p.tau_Q;
  if (p.tau_act > 0.0) {
    const cplx du = (droop_voltage_reference(x, p) - v) / p.tau_act;
    dx[3] = du.real();
    dx[4] = du.imag();
  } else {
    dx[3] = 0.0;
    dx[4] = 0.0;
  }
  return dx;
}

DroopInverter::DroopInverter(DroopParams p) : p_(p) { p_.validate(); }

cplx DroopInverter::terminal_voltage(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  return droop_terminal_voltage(x, p_);
}

void DroopInverter::rhs(const Eigen::Ref<const Eigen::VectorXd>& x, cplx i,
                        Eigen::Ref<Eigen::VectorXd> dx) const {
  dx = droop_rhs(x, i, p_);
}

Eigen::VectorXd DroopInverter::initial_guess(cplx v0) const {
  Eigen::VectorXd x(kDroopStateSize);
  x << std::arg(v0), p_.sp.P, p_.sp.Q, v0.real(), v0.imag();
  return x;
}

Eigen::VectorXd DroopInverter::rotation_generator(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(kDroopStateSize);
  g[0] = 1.0;
  if (p_.tau_act > 0.0) {
    g[3] = -x[4];
    g[4] = x[3];
  }
  return g;
}

double DroopInverter::slowest_time_constant() const {
  return std::max({p_.tau_P, p_.tau_Q, p_.tau_act});
}

// ---------------------------------------------------------------------------
// dVOC

cplx dvoc_terminal_voltage(const Eigen::Ref<const Eigen::VectorXd>& x, const DvocParams& p) {
  return p.tau_act > 0.0 ? lag_voltage(x, 2) : lag_voltage(x, 0);
}

Eigen::VectorXd dvoc_rhs(const Eigen::Ref<const Eigen::VectorXd>& x, cplx i,
                         const DvocParams& p) {
  const cplx z = lag_voltage(x, 0);
  if (!(std::abs(z) > kDefaultEpsilonV)) {
    throw NumericalError("dvoc_rhs: oscillator amplitude underflow");
  }
  const double nu_s = p.sp.nu();
  const cplx s_conj{p.sp.P, -p.sp.Q};
  const cplx dz = kJ * p.omega_s * z +
                  p.eta_gain * std::polar(1.0, p.kappa) * (s_conj * z / nu_s - i) +
                  p.alpha_gain * (nu_s - std::norm(z)) / nu_s * z;
  Eigen::VectorXd dx(kDvocStateSize);
  dx[0] = dz.real();
  dx[1] = dz.imag();
  if (p.tau_act > 0.0) {
    const cplx du = (z - lag_voltage(x, 2)) / p.tau_act;
    dx[2] = du.real();
    dx[3] = du.imag();
  } else {
    dx[2] = 0.0;
    dx[3] = 0.0;
  }
  return dx;
}

DvocInverter::DvocInverter(DvocParams p) : p_(p) { p_.validate(); }

cplx DvocInverter::terminal_voltage(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  return dvoc_terminal_voltage(x, p_);
}

void DvocInverter::rhs(const Eigen::Ref<const Eigen::VectorXd>& x, cplx i,
                       Eigen::Ref<Eigen::VectorXd> dx) const {
  dx = dvoc_rhs(x, i, p_);
}

Eigen::VectorXd DvocInverter::initial_guess(cplx v0) const {
  Eigen::VectorXd x(kDvocStateSize);
  x << v0.real(), v0.imag(), v0.real(), v0.imag();
  return x;
}

Eigen::VectorXd DvocInverter::rotation_generator(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(kDvocStateSize);
  g[0] = -x[1];
  g[1] = x[0];
  if (p_.tau_act > 0.0) {
    g[2] = -x[3];
    g[3] = x[2];
  }
  return g;
}

double DvocInverter::slowest_time_constant() const {
  return std::max({1.0 / p_.eta_gain, 1.0 / p_.alpha_gain, p_.tau_act});
}

// ---------------------------------------------------------------------------
// Network

cplx couple(cplx v, const NetworkElement& element) {
  return std::visit(
      [v](const auto& e) -> cplx {
        using T = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<T, StiffBus>) {
          return (v - e.v_slack) * e.admittance;
        } else if constexpr (std::is_same_v<T, ResistiveLoad>) {
          return v * e.conductance;
        } else {
          return (v - e.v_remote) * e.admittance;
        }
      },
      element);
}

cplx couple(cplx v, std::span<const NetworkElement> elements) {
  cplx i{0.0, 0.0};
  for (const auto& e : elements) i += couple(v, e);
  return i;
}

void NetworkConfig::validate(std::size_t n_devices) const {
  if (!(std::abs(grid_admittance) > 0.0)) throw InputError("network: grid admittance must be nonzero");
  if (topology == Topology::SingleBus) {
    if (n_devices != 1) throw InputError("network: single-bus topology takes exactly one device");
  } else {
    if (device_admittances.size() != n_devices || n_devices == 0) {
      throw InputError("network: micro-grid needs one line admittance per device");
    }
    for (cplx y : device_admittances) {
      if (!(std::abs(y) > 0.0)) throw InputError("network: line admittance must be nonzero");
    }
  }
}

cplx GridState::slack_voltage(double t) const {
  const double angle =
      slack_angle + 2.0 * std::numbers::pi * slack_freq_offset_hz * (t - angle_time);
  return std::polar(slack_magnitude, angle);
}

std::string to_string(EventKind kind) {
  switch (kind) {
    case EventKind::SlackMagnitude: return "slack_magnitude";
    case EventKind::SlackFrequency: return "slack_frequency";
    case EventKind::LoadConductance: return "load_conductance";
    case EventKind::Breaker: return "breaker";
  }
  return "unknown";
}

EventKind event_kind_from_string(const std::string& name) {
  if (name == "slack_magnitude") return EventKind::SlackMagnitude;
  if (name == "slack_frequency") return EventKind::SlackFrequency;
  if (name == "load_conductance") return EventKind::LoadConductance;
  if (name == "breaker") return EventKind::Breaker;
  throw InputError("unknown event kind '" + name + "'");
}

void apply_event(GridState& grid, const GridEvent& ev) {
  switch (ev.kind) {
    case EventKind::SlackMagnitude:
      grid.slack_magnitude = ev.value;
      break;
    case EventKind::SlackFrequency:
      grid.slack_angle +=
          2.0 * std::numbers::pi * grid.slack_freq_offset_hz * (ev.t - grid.angle_time);
      grid.angle_time = ev.t;
      grid.slack_freq_offset_hz = ev.value;
      break;
    case EventKind::LoadConductance:
      grid.load_conductance = ev.value;
      break;
    case EventKind::Breaker:
      grid.breaker_closed = ev.value != 0.0;
      break;
  }
}

NetworkSolution solve_network(const NetworkConfig& net, const GridState& grid, double t,
                              std::span<const cplx> device_voltages) {
  NetworkSolution sol;
  sol.currents.resize(device_voltages.size());
  const cplx vs = grid.slack_voltage(t);
  const cplx yg = grid.breaker_closed ? net.grid_admittance : cplx{0.0, 0.0};
  if (net.topology == Topology::SingleBus) {
    const cplx v = device_voltages[0];
    const cplx i_grid = (v - vs) * yg;
    sol.currents[0] = i_grid + v * grid.load_conductance;
    sol.bus_voltage = v;
    sol.import_power = vs * std::conj(-i_grid);
    return sol;
  }
  cplx num = yg * vs;
  cplx den = yg + grid.load_conductance;
  for (std::size_t k = 0; k < device_voltages.size(); ++k) {
    num += net.device_admittances[k] * device_voltages[k];
    den += net.device_admittances[k];
  }
  const cplx vb = num / den;
  for (std::size_t k = 0; k < device_voltages.size(); ++k) {
    sol.currents[k] = net.device_admittances[k] * (device_voltages[k] - vb);
  }
  sol.bus_voltage = vb;
  sol.import_power = vb * std::conj(yg * (vs - vb));
  return sol;
}

std::vector<NetworkElement> single_bus_elements(const NetworkConfig& net, const GridState& grid,
                                                double t) {
  if (net.topology != Topology::SingleBus) {
    throw InputError("network: only single-bus networks reduce to algebraic element lists");
  }
  std::vector<NetworkElement> out;
  if (grid.breaker_closed) out.emplace_back(StiffBus{grid.slack_voltage(t), net.grid_admittance});
  if (grid.load_conductance != 0.0) out.emplace_back(ResistiveLoad{grid.load_conductance});
  return out;
}

// ---------------------------------------------------------------------------
// Simulation

std::size_t PlantSystem::state_size() const {
  std::size_t n = 0;
  for (const auto& d : devices) n += d->state_size();
  return n;
}

namespace {

class SystemEvaluator {
 public:
  explicit SystemEvaluator(const PlantSystem& sys) : sys_(sys) {
    std::size_t off = 0;
    for (const auto& d : sys.devices) {
      offsets_.push_back(off);
      off += d->state_size();
    }
    n_ = off;
    voltages_.resize(sys.devices.size());
  }

  [[nodiscard]] std::size_t size() const { return n_; }

  NetworkSolution network(const Eigen::VectorXd& x, const GridState& grid, double t) {
    for (std::size_t k = 0; k < sys_.devices.size(); ++k) {
      voltages_[k] = sys_.devices[k]->terminal_voltage(segment(x, k));
    }
    return solve_network(sys_.network, grid, t, voltages_);
  }

  void rhs(const Eigen::VectorXd& x, const GridState& grid, double t, Eigen::VectorXd& dx) {
    const NetworkSolution sol = network(x, grid, t);
    for (std::size_t k = 0; k < sys_.devices.size(); ++k) {
      const auto& d = *sys_.devices[k];
      d.rhs(segment(x, k), sol.currents[k],
            dx.segment(static_cast<Eigen::Index>(offsets_[k]),
                       static_cast<Eigen::Index>(d.state_size())));
    }
  }

  [[nodiscard]] Eigen::Ref<const Eigen::VectorXd> segment(const Eigen::VectorXd& x,
                                                          std::size_t k) const {
    return x.segment(static_cast<Eigen::Index>(offsets_[k]),
                     static_cast<Eigen::Index>(sys_.devices[k]->state_size()));
  }

 private:
  const PlantSystem& sys_;
  std::vector<std::size_t> offsets_;
  std::vector<cplx> voltages_;
  std::size_t n_ = 0;
};

void rk4_step(SystemEvaluator& ev, const GridState& grid, double t, double h, Eigen::VectorXd& x,
              std::array<Eigen::VectorXd, 5>& work) {
  auto& [k1, k2, k3, k4, tmp] = work;
  ev.rhs(x, grid, t, k1);
  tmp = x + 0.5 * h * k1;
  ev.rhs(tmp, grid, t + 0.5 * h, k2);
  tmp = x + 0.5 * h * k2;
  ev.rhs(tmp, grid, t + 0.5 * h, k3);
  tmp = x + h * k3;
  ev.rhs(tmp, grid, t + h, k4);
  x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace

SimulationResult integrate(const PlantSystem& system, GridState grid,
                           std::span<const GridEvent> events, double t_end,
                           const Eigen::VectorXd& x0, const SimulationOptions& opts) {
  if (system.devices.empty()) throw InputError("integrate: no devices");
  system.network.validate(system.devices.size());
  if (!(opts.dt_sim > 0.0) || !(opts.dt_record > 0.0)) {
    throw InputError("integrate: time steps must be positive");
  }
  if (opts.dt_sim > opts.dt_record * (1.0 + 1e-12)) {
    throw InputError("integrate: dt_sim must not exceed dt_record");
  }
  if (!(t_end >= 0.0)) throw InputError("integrate: t_end must be >= 0");
  for (std::size_t k = 1; k < events.size(); ++k) {
    if (events[k].t < events[k - 1].t) throw InputError("integrate: events must be sorted by time");
  }

  SystemEvaluator ev(system);
  if (static_cast<std::size_t>(x0.size()) != ev.size()) {
    throw InputError("integrate: initial state has wrong dimension");
  }

  const double eps_t = 1e-9 * std::max(opts.dt_sim, 1e-12);
  const auto n_records =
      static_cast<std::size_t>(std::floor(t_end / opts.dt_record + 1e-9)) + 1;

  std::vector<std::vector<DqSample>> samples(system.devices.size());
  for (auto& s : samples) s.reserve(n_records);
  std::vector<cplx> imports;
  imports.reserve(n_records);

  std::size_t next_event = 0;
  auto apply_due = [&](double t) {
    while (next_event < events.size() && events[next_event].t <= t + eps_t) {
      apply_event(grid, events[next_event]);
      ++next_event;
    }
  };

  Eigen::VectorXd x = x0;
  auto record = [&](double t) {
    const NetworkSolution sol = ev.network(x, grid, t);
    for (std::size_t k = 0; k < system.devices.size(); ++k) {
      samples[k].push_back({t, system.devices[k]->terminal_voltage(ev.segment(x, k)),
                            sol.currents[k]});
    }
    imports.push_back(sol.import_power);
  };

  std::array<Eigen::VectorXd, 5> work;
  for (auto& w : work) w.resize(static_cast<Eigen::Index>(ev.size()));

  double t = 0.0;
  apply_due(t);
  record(t);
  for (std::size_t r = 1; r < n_records; ++r) {
    const double t_rec = static_cast<double>(r) * opts.dt_record;
    while (t < t_rec - eps_t) {
      double h = std::min(opts.dt_sim, t_rec - t);
      if (next_event < events.size() && events[next_event].t > t + eps_t) {
        h = std::min(h, events[next_event].t - t);
      }
      rk4_step(ev, grid, t, h, x, work);
      t += h;
      if (std::abs(t - t_rec) <= eps_t) t = t_rec;
      if (!x.allFinite()) {
        std::ostringstream os;
        os << "integrate: non-finite state at t = " << t << " s";
        throw NumericalError(os.str());
      }
      apply_due(t);
    }
    record(t_rec);
  }

  SimulationResult out;
  for (auto& s : samples) out.terminals.emplace_back(std::move(s), opts.dt_record);
  out.import_power = std::move(imports);
  out.final_state = x;
  return out;
}

Eigen::VectorXd find_equilibrium(const PlantSystem& system, const GridState& grid,
                                 double tolerance, double* omega) {
  system.network.validate(system.devices.size());
  SystemEvaluator ev(system);
  const cplx v0 = grid.breaker_closed ? grid.slack_voltage(0.0)
                                      : cplx{system.devices.front()->setpoints().v, 0.0};
  const auto n = static_cast<Eigen::Index>(ev.size());
  Eigen::VectorXd x(n);
  {
    Eigen::Index off = 0;
    for (const auto& d : system.devices) {
      const auto m = static_cast<Eigen::Index>(d->state_size());
      x.segment(off, m) = d->initial_guess(v0);
      off += m;
    }
  }

  // Pre-settle with a coarse step to land in the basin of the operating point.
  double t_settle = 0.0;
  for (const auto& d : system.devices) t_settle = std::max(t_settle, d->slowest_time_constant());
  t_settle = std::max(2.0, 40.0 * t_settle);
  const GridState frozen = [&] {
    GridState g = grid;
    g.slack_freq_offset_hz = 0.0;
    return g;
  }();
  std::array<Eigen::VectorXd, 5> work;
  for (auto& w : work) w.resize(n);
  const double h = 2.5e-4;
  for (double t = 0.0; t < t_settle; t += h) rk4_step(ev, frozen, 0.0, h, x, work);
  if (!x.allFinite()) throw NumericalError("find_equilibrium: pre-settling diverged");

  // Islanded: unknowns (x, w) with f(x) = w g(x), plus a gauge pinning the
  // terminal angle of the first device.
  const bool rotating = !grid.breaker_closed;
  auto generator = [&](const Eigen::VectorXd& xs) {
    Eigen::VectorXd g(n);
    Eigen::Index off = 0;
    for (std::size_t k = 0; k < system.devices.size(); ++k) {
      const auto m = static_cast<Eigen::Index>(system.devices[k]->state_size());
      g.segment(off, m) = system.devices[k]->rotation_generator(ev.segment(xs, k));
      off += m;
    }
    return g;
  };
  const double angle0 = std::arg(system.devices.front()->terminal_voltage(ev.segment(x, 0)));
  const Eigen::Index dim = rotating ? n + 1 : n;
  Eigen::VectorXd z(dim);
  z.head(n) = x;
  Eigen::VectorXd f(n);
  if (rotating) {
    ev.rhs(x, frozen, 0.0, f);
    const Eigen::VectorXd g = generator(x);
    z[n] = g.squaredNorm() > 0.0 ? g.dot(f) / g.squaredNorm() : 0.0;
  }
  auto residual = [&](const Eigen::VectorXd& zz) {
    Eigen::VectorXd r(dim);
    const Eigen::VectorXd xs = zz.head(n);
    ev.rhs(xs, frozen, 0.0, f);
    r.head(n) = f;
    if (rotating) {
      r.head(n) -= zz[n] * generator(xs);
      const double angle = std::arg(system.devices.front()->terminal_voltage(ev.segment(xs, 0)));
      r[n] = std::remainder(angle - angle0, 2.0 * std::numbers::pi);
    }
    return r;
  };

  Eigen::MatrixXd jac(dim, dim);
  Eigen::VectorXd r = residual(z);
  for (int iter = 0; iter < 50; ++iter) {
    if (r.lpNorm<Eigen::Infinity>() < tolerance) break;
    for (Eigen::Index c = 0; c < dim; ++c) {
      const double step = 1e-7 * std::max(1.0, std::abs(z[c]));
      Eigen::VectorXd zp = z;
      zp[c] += step;
      Eigen::VectorXd zm = z;
      zm[c] -= step;
      jac.col(c) = (residual(zp) - residual(zm)) / (2.0 * step);
    }
    const Eigen::VectorXd dz = jac.completeOrthogonalDecomposition().solve(-r);
    double alpha = 1.0;
    const double r0 = r.norm();
    for (int ls = 0; ls < 30; ++ls) {
      const Eigen::VectorXd trial = z + alpha * dz;
      const Eigen::VectorXd rt = residual(trial);
      if (rt.allFinite() && rt.norm() < r0) {
        z = trial;
        r = rt;
        break;
      }
      alpha *= 0.5;
      if (ls == 29) {
        throw NumericalError("find_equilibrium: Newton line search failed");
      }
    }
  }
  if (omega) *omega = rotating ? z[n] : 0.0;
  if (r.lpNorm<Eigen::Infinity>() < 1e3 * tolerance) return z.head(n);
  std::ostringstream os;
  os << "find_equilibrium: no convergence (residual " << r.lpNorm<Eigen::Infinity>() << ")";
  throw NumericalError(os.str());
}

Eigen::VectorXd rk4(const OdeRhs& f, Eigen::VectorXd x, double t0, double t1, double dt) {
  if (!(dt > 0.0)) throw InputError("rk4: dt must be positive");
  double t = t0;
  const double eps = 1e-12 * std::max(1.0, std::abs(t1));
  while (t < t1 - eps) {
    const double h = std::min(dt, t1 - t);
    const Eigen::VectorXd k1 = f(t, x);
    const Eigen::VectorXd k2 = f(t + 0.5 * h, x + 0.5 * h * k1);
    const Eigen::VectorXd k3 = f(t + 0.5 * h, x + 0.5 * h * k2);
    const Eigen::VectorXd k4 = f(t + h, x + h * k3);
    x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    t += h;
  }
  return x;
}

double consistent_reactive_setpoint(double P, double v, double v_slack, cplx y) {
  auto power = [&](double delta) {
    const cplx vd = std::polar(v, delta);
    return vd * std::conj((vd - cplx{v_slack, 0.0}) * y);
  };
  double delta = 0.0;
  for (int iter = 0; iter < 100; ++iter) {
    const double r = power(delta).real() - P;
    if (std::abs(r) < 1e-15) break;
    const double h = 1e-7;
    const double d = (power(delta + h).real() - power(delta - h).real()) / (2.0 * h);
    if (d == 0.0) throw NumericalError("consistent_reactive_setpoint: flat power curve");
    delta -= r / d;
  }
  if (std::abs(power(delta).real() - P) > 1e-10) {
    throw NumericalError("consistent_reactive_setpoint: P^s not transferable over the line");
  }
  return power(delta).imag();
}

}  // namespace nfid::plants
