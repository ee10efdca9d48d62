#include "nfid/plants.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "nfid/error.hpp"
#include "nfid/scenarios.hpp"
#include "test_util.hpp"

namespace nfid::plants {
namespace {

PlantSystem single_bus(std::shared_ptr<const Device> device, cplx y = {0.0, -10.0}) {
  PlantSystem s;
  s.devices.push_back(std::move(device));
  s.network.grid_admittance = y;
  return s;
}

// Closed-system right-hand side of one device on a constant single-bus network.
Eigen::VectorXd closed_rhs(const PlantSystem& sys, const GridState& grid, const Eigen::VectorXd& x) {
  const cplx v = sys.devices[0]->terminal_voltage(x);
  const auto sol = solve_network(sys.network, grid, 0.0, std::span<const cplx>(&v, 1));
  Eigen::VectorXd dx(x.size());
  sys.devices[0]->rhs(x, sol.currents[0], dx);
  return dx;
}

Eigen::MatrixXd fd_jacobian(const PlantSystem& sys, const GridState& grid, const Eigen::VectorXd& x) {
  const auto n = x.size();
  Eigen::MatrixXd J(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double h = 1e-6 * std::max(1.0, std::abs(x[k]));
    Eigen::VectorXd xp = x, xm = x;
    xp[k] += h;
    xm[k] -= h;
    J.col(k) = (closed_rhs(sys, grid, xp) - closed_rhs(sys, grid, xm)) / (2.0 * h);
  }
  return J;
}

TEST(DroopRhs, SetpointEquilibrium) {
  DroopParams p;
  p.sp = {0.5, 0.1, 1.0};
  p.tau_act = 0.0;
  Eigen::VectorXd x(kDroopStateSize);
  x << 0.3, p.sp.P, p.sp.Q, 0.0, 0.0;
  EXPECT_NEAR(std::abs(droop_voltage_reference(x, p)), p.sp.v, 1e-15);
  const cplx v = droop_terminal_voltage(x, p);
  const cplx i = std::conj(cplx(p.sp.P, p.sp.Q) / v);
  const auto dx = droop_rhs(x, i, p);
  EXPECT_NEAR(dx[0], 0.0, 1e-15);
  EXPECT_NEAR(dx[1], 0.0, 1e-14);
  EXPECT_NEAR(dx[2], 0.0, 1e-14);
}

TEST(DroopRhs, FrequencyLawArithmetic) {
  DroopParams p;
  p.K_P = 0.1;
  p.sp.P = 1.0;
  Eigen::VectorXd x(kDroopStateSize);
  x << 0.0, 0.9, 0.0, 1.0, 0.0;
  EXPECT_NEAR(droop_rhs(x, 0.0, p)[0], 0.01, 1e-15);
}

TEST(DroopRhs, FilteredPowerStepResponse) {
  // P^m held at P^s + 0.1: P_bar(tau_P) = P^s + 0.1 (1 - e^-1).
  DroopParams p;
  p.K_P = 0.0;
  p.tau_act = 0.0;
  p.sp = {0.5, 0.0, 1.0};
  Eigen::VectorXd x0(kDroopStateSize);
  x0 << 0.0, p.sp.P, p.sp.Q, 0.0, 0.0;
  const cplx i = std::conj(cplx(p.sp.P + 0.1, p.sp.Q) / cplx(p.sp.v, 0.0));
  const auto x = rk4([&](double, const Eigen::VectorXd& s) { return droop_rhs(s, i, p); }, x0, 0.0,
                     p.tau_P, 1e-4);
  EXPECT_NEAR(x[1], p.sp.P + 0.1 * (1.0 - std::exp(-1.0)), 1e-10);
}

TEST(DvocRhs, AmplitudeRegulationSign) {
  DvocParams p;
  Eigen::VectorXd x(kDvocStateSize);
  x << 0.9, 0.0, 0.9, 0.0;
  const auto dx = dvoc_rhs(x, 0.0, p);
  const double dmag = (x[0] * dx[0] + x[1] * dx[1]) / std::hypot(x[0], x[1]);
  EXPECT_GT(dmag, 0.0);
}

TEST(DvocRhs, AmplitudeUnderflowThrows) {
  DvocParams p;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(kDvocStateSize);
  EXPECT_THROW(dvoc_rhs(x, 0.0, p), NumericalError);
}

TEST(DvocRhs, EquilibriumIsStationaryAndStable) {
  DvocParams p;
  p.sp.Q = consistent_reactive_setpoint(p.sp.P, p.sp.v, 1.0, {0.0, -10.0});
  const auto sys = single_bus(std::make_shared<DvocInverter>(p));
  const GridState grid;
  const auto x = find_equilibrium(sys, grid);
  const auto dx = closed_rhs(sys, grid, x);
  EXPECT_LT(dx.lpNorm<Eigen::Infinity>(), 1e-9);
  EXPECT_NEAR(std::abs(dvoc_terminal_voltage(x, p)), p.sp.v, 1e-8);
  const Eigen::VectorXcd eig = fd_jacobian(sys, grid, x).eigenvalues();
  for (const auto& l : eig) EXPECT_LT(l.real(), 0.0) << l;
}

TEST(DroopRhs, LinearizationAtEquilibriumIsStable) {
  DroopParams p;
  const auto sys = single_bus(std::make_shared<DroopInverter>(p));
  const GridState grid;
  const auto x = find_equilibrium(sys, grid);
  const Eigen::VectorXcd eig = fd_jacobian(sys, grid, x).eigenvalues();
  for (const auto& l : eig) EXPECT_LT(l.real(), 0.0) << l;
}

TEST(Couple, Examples) {
  EXPECT_EQ(couple(cplx(0.95, 0.1), StiffBus{{0.95, 0.1}, {0.0, -10.0}}), cplx(0.0, 0.0));
  EXPECT_EQ(couple(1.0, ResistiveLoad{0.5}), cplx(0.5, 0.0));
  const cplx i = couple(1.0, StiffBus{0.95, 1.0 / cplx(0.0, 0.1)});
  EXPECT_NEAR(i.real(), 0.0, 1e-15);
  EXPECT_NEAR(i.imag(), -0.5, 1e-12);
  const std::vector<NetworkElement> both{StiffBus{1.0, {0.0, -10.0}}, ResistiveLoad{0.25}};
  EXPECT_NEAR(std::abs(couple(cplx(1.0, 0.0), both) - cplx(0.25, 0.0)), 0.0, 1e-15);
}

TEST(Rk4, ExponentialDecay) {
  const OdeRhs f = [](double, const Eigen::VectorXd& x) -> Eigen::VectorXd { return -x; };
  const auto x = rk4(f, Eigen::VectorXd::Ones(1), 0.0, 1.0, 1e-3);
  EXPECT_NEAR(x[0], std::exp(-1.0), 1e-10);
}

TEST(Rk4, ObservedOrderIsFour) {
  const OdeRhs f = [](double, const Eigen::VectorXd& x) -> Eigen::VectorXd { return -x; };
  auto err = [&](double h) { return std::abs(rk4(f, Eigen::VectorXd::Ones(1), 0.0, 1.0, h)[0] - std::exp(-1.0)); };
  for (double h : {0.2, 0.1, 0.05}) {
    const double order = std::log2(err(h) / err(h / 2.0));
    EXPECT_GE(order, 3.8) << "h=" << h;
    EXPECT_LE(order, 4.2) << "h=" << h;
  }
}

class ZeroDynamics final : public Device {
 public:
  [[nodiscard]] std::size_t state_size() const override { return 2; }
  [[nodiscard]] cplx terminal_voltage(const Eigen::Ref<const Eigen::VectorXd>& x) const override {
    return {x[0], x[1]};
  }
  void rhs(const Eigen::Ref<const Eigen::VectorXd>&, cplx, Eigen::Ref<Eigen::VectorXd> dx) const override {
    dx.setZero();
  }
  [[nodiscard]] Eigen::VectorXd initial_guess(cplx v0) const override {
    return Eigen::Vector2d(v0.real(), v0.imag());
  }
  [[nodiscard]] Eigen::VectorXd rotation_generator(const Eigen::Ref<const Eigen::VectorXd>& x) const override {
    return Eigen::Vector2d(-x[1], x[0]);
  }
  [[nodiscard]] Setpoints setpoints() const override { return {}; }
  [[nodiscard]] double slowest_time_constant() const override { return 0.0; }
};

TEST(Integrate, ZeroDynamicsGiveConstantOutput) {
  const auto sys = single_bus(std::make_shared<ZeroDynamics>());
  const std::vector<GridEvent> events{{0.05, EventKind::SlackMagnitude, 1.05}};
  const auto res = integrate(sys, GridState{}, events, 0.1, Eigen::Vector2d(0.98, 0.02),
                             {50e-6, 1e-3});
  ASSERT_EQ(res.terminals.size(), 1u);
  for (const auto& s : res.terminals[0].samples()) EXPECT_EQ(s.v, cplx(0.98, 0.02));
}

TEST(Integrate, ValidatesArguments) {
  const auto sys = single_bus(std::make_shared<ZeroDynamics>());
  const Eigen::Vector2d x0(1.0, 0.0);
  EXPECT_THROW(integrate(sys, GridState{}, {}, 0.1, x0, {1e-3, 1e-4}), InputError);
  const std::vector<GridEvent> unsorted{{0.05, EventKind::SlackMagnitude, 1.0},
                                        {0.01, EventKind::SlackMagnitude, 1.0}};
  EXPECT_THROW(integrate(sys, GridState{}, unsorted, 0.1, x0), InputError);
  EXPECT_THROW(integrate(sys, GridState{}, {}, 0.1, Eigen::VectorXd::Zero(3)), InputError);
}

TEST(Integrate, DivergenceReportsTime) {
  DvocParams p;
  const auto sys = single_bus(std::make_shared<DvocInverter>(p));
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(kDvocStateSize);
  EXPECT_THROW(integrate(sys, GridState{}, {}, 0.01, x0), NumericalError);
}

template <typename Params, typename DeviceT>
void expect_equilibrium_hold(Params p) {
  p.sp.Q = consistent_reactive_setpoint(p.sp.P, p.sp.v, 1.0, {0.0, -10.0});
  const auto sys = single_bus(std::make_shared<DeviceT>(p));
  const GridState grid;
  const auto x0 = find_equilibrium(sys, grid);
  const auto res = integrate(sys, grid, {}, 10.0, x0, {50e-6, 1e-3});
  const cplx v0 = res.terminals[0][0].v;
  double worst = 0.0;
  for (const auto& s : res.terminals[0].samples()) worst = std::max(worst, std::abs(s.v - v0));
  EXPECT_LT(worst, 1e-8);
}

TEST(EquilibriumHold, Droop) { expect_equilibrium_hold<DroopParams, DroopInverter>(DroopParams{}); }
TEST(EquilibriumHold, Dvoc) { expect_equilibrium_hold<DvocParams, DvocInverter>(DvocParams{}); }

TEST(DroopSteadyState, FrequencyDeviationVanishesOnNominalBus) {
  DroopParams p;
  const auto sys = single_bus(std::make_shared<DroopInverter>(p));
  Eigen::VectorXd x0(kDroopStateSize);
  x0 << 0.2, 0.1, -0.1, 0.95, 0.1;
  const auto res = integrate(sys, GridState{}, {}, 3.0, x0, {50e-6, 1e-3});
  EXPECT_LT(std::abs(p.K_P * (p.sp.P - res.final_state[1])), 1e-6);
}

TEST(PowerBalance, RecordedSamplesMatchControllerPower) {
  DroopParams p;
  const auto dev = std::make_shared<DroopInverter>(p);
  const auto sys = single_bus(dev);
  GridState grid;
  const auto x0 = find_equilibrium(sys, grid);
  const std::vector<GridEvent> events{{0.02, EventKind::SlackMagnitude, 1.05}};
  const auto res = integrate(sys, grid, events, 0.05, x0, {50e-6, 50e-6});
  for (const auto& ev : events) apply_event(grid, ev);
  const cplx v = dev->terminal_voltage(res.final_state);
  const auto sol = solve_network(sys.network, grid, 0.05, std::span<const cplx>(&v, 1));
  const auto internal = dev->measured_power(res.final_state, sol.currents[0]);
  const auto& last = res.terminals[0].samples().back();
  const auto recorded = complex_power(last.v, last.i);
  EXPECT_NEAR(last.t, 0.05, 1e-12);
  EXPECT_NEAR(recorded.P, internal.P, 1e-9);
  EXPECT_NEAR(recorded.Q, internal.Q, 1e-9);
  EXPECT_NEAR(recorded.nu, internal.nu, 1e-9);
}

TEST(FindEquilibrium, OpenBreakerRotatesUniformly) {
  // Device alone on a heavier load than its setpoint: droop law gives
  // omega = K_P (P^s - P_load) in steady state.
  DroopParams p;
  const auto dev = std::make_shared<DroopInverter>(p);
  const auto sys = single_bus(dev);
  GridState grid;
  grid.breaker_closed = false;
  grid.load_conductance = 0.6;
  double omega = 0.0;
  const auto x = find_equilibrium(sys, grid, 1e-12, &omega);
  const double P_load = grid.load_conductance * std::norm(dev->terminal_voltage(x));
  EXPECT_LT(omega, 0.0);
  EXPECT_NEAR(omega, p.K_P * (p.sp.P - P_load), 1e-8);
  // f(x) = omega * g(x) holds.
  const auto f = closed_rhs(sys, grid, x);
  EXPECT_LT((f - omega * dev->rotation_generator(x)).lpNorm<Eigen::Infinity>(), 1e-9);
}

TEST(Islanding, FrequencyFollowsPowerSharing) {
  DroopParams p;
  scenarios::IslandingOptions opts;
  PlantSystem sys;
  for (double P : opts.layout.device_P) {
    auto q = p;
    q.sp.P = P;
    sys.devices.push_back(std::make_shared<DroopInverter>(q));
  }
  sys.network.topology = Topology::MicroGrid;
  sys.network.grid_admittance = opts.layout.grid_admittance;
  sys.network.device_admittances = opts.layout.line_admittances;

  GridState grid;
  grid.load_conductance = opts.load_conductance;
  const auto x0 = find_equilibrium(sys, grid);
  const std::vector<GridEvent> events{{opts.t_open, EventKind::Breaker, 0.0}};
  const auto res = integrate(sys, grid, events, opts.duration, x0, {50e-6, 1e-3});

  const std::size_t k_open = static_cast<std::size_t>(std::llround(opts.t_open / 1e-3));
  EXPECT_GT(res.import_power[k_open / 2].real(), 0.0);
  EXPECT_EQ(res.import_power.back(), cplx(0.0, 0.0));

  // Oracle: equal droop gains and lossless lines split the load so that
  // omega = -K_P * (P_load - sum P^s) / 2.
  GridState islanded = grid;
  islanded.breaker_closed = false;
  std::vector<cplx> v;
  for (std::size_t d = 0; d < 2; ++d) {
    v.push_back(sys.devices[d]->terminal_voltage(res.final_state.segment(static_cast<Eigen::Index>(d * kDroopStateSize), kDroopStateSize)));
  }
  const auto sol = solve_network(sys.network, islanded, opts.duration, v);
  const double P_load = opts.load_conductance * std::norm(sol.bus_voltage);
  const double share = (P_load - (opts.layout.device_P[0] + opts.layout.device_P[1])) / 2.0;
  const double expected = -p.K_P * share;

  const auto& s = res.terminals[0];
  const std::size_t n = s.size();
  const double dt = s.dt();
  const double measured = std::arg(s[n - 1].v / s[n - 101].v) / (100.0 * dt);
  EXPECT_LT(expected, 0.0);
  EXPECT_NEAR(measured, expected, 1e-4 * std::abs(expected) + 1e-7);
}

TEST(ConsistentReactiveSetpoint, GivesZeroErrorOperatingPoint) {
  const cplx y{0.0, -10.0};
  const double P = 0.5, v = 1.0;
  const double Q = consistent_reactive_setpoint(P, v, 1.0, y);
  // Find the angle that transfers P and check Q.
  const double delta = std::asin(P * 0.1 / v);
  const cplx vt = std::polar(v, delta);
  const cplx s = vt * std::conj((vt - 1.0) * y);
  EXPECT_NEAR(s.real(), P, 1e-12);
  EXPECT_NEAR(s.imag(), Q, 1e-10);
}

}  // namespace
}  // namespace nfid::plants
