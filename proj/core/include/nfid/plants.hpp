#pragma once

// Reference grid-forming inverter simulators. The inner current/voltage
// loops and the LCL filter are represented by a first-order actuation lag
// between the outer-loop voltage reference and the terminal voltage.
//
// Angles and frequencies are relative to the global dq frame: omega_s = 0
// means the device's own setpoint frequency equals the frame frequency.

#include <Eigen/Dense>
#include <complex>
#include <functional>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "nfid/signal.hpp"
#include "nfid/types.hpp"

namespace nfid::plants {

// ---------------------------------------------------------------------------
// Device parameters

struct DroopParams {
  double K_P = 0.02 * kNominalOmega;  // rad/s per pu active power
  double K_Q = 0.05;                  // pu voltage per pu reactive power
  double tau_P = 0.05;                // s
  double tau_Q = 0.05;                // s
  double tau_act = 0.002;             // s, 0 = ideal source
  Setpoints sp{0.5, 0.0, 1.0};
  double omega_s = 0.0;  // rad/s relative to the frame

  void validate() const;
};

struct DvocParams {
  double eta_gain = 20.0;    // 1/s
  double alpha_gain = 10.0;  // 1/s
  double kappa = std::numbers::pi / 2.0;
  double tau_act = 0.002;
  Setpoints sp{0.5, 0.0, 1.0};
  double omega_s = 0.0;

  void validate() const;
};

// Droop state layout: [delta, P_bar, Q_bar, u_d, u_q].
// dVOC state layout:  [z_d, z_q, u_d, u_q] (z = oscillator voltage).
// u is the lagged terminal voltage; unused (zero derivative) when tau_act = 0.
inline constexpr std::size_t kDroopStateSize = 5;
inline constexpr std::size_t kDvocStateSize = 4;

cplx droop_voltage_reference(const Eigen::Ref<const Eigen::VectorXd>& x, const DroopParams& p);
cplx droop_terminal_voltage(const Eigen::Ref<const Eigen::VectorXd>& x, const DroopParams& p);
cplx dvoc_terminal_voltage(const Eigen::Ref<const Eigen::VectorXd>& x, const DvocParams& p);

/// Right-hand side of the droop-controlled inverter for a given terminal current.
Eigen::VectorXd droop_rhs(const Eigen::Ref<const Eigen::VectorXd>& x, cplx terminal_current,
                          const DroopParams& p);

/// Right-hand side of the dispatchable virtual oscillator:
///   dz/dt = j omega_s z + eta e^{j kappa} ((P^s - j Q^s) z / v_s^2 - i)
///           + alpha (v_s^2 - |z|^2) / v_s^2 z
/// Throws NumericalError when |z| underflows epsilon_v.
Eigen::VectorXd dvoc_rhs(const Eigen::Ref<const Eigen::VectorXd>& x, cplx terminal_current,
                         const DvocParams& p);

/// Polymorphic view of one device for the integrator.
class Device {
 public:
  virtual ~Device() = default;
  [[nodiscard]] virtual std::size_t state_size() const = 0;
  [[nodiscard]] virtual cplx terminal_voltage(const Eigen::Ref<const Eigen::VectorXd>& x) const = 0;
  virtual void rhs(const Eigen::Ref<const Eigen::VectorXd>& x, cplx terminal_current,
                   Eigen::Ref<Eigen::VectorXd> dx) const = 0;
  /// Starting point for equilibrium search with the terminal near v0.
  [[nodiscard]] virtual Eigen::VectorXd initial_guess(cplx v0) const = 0;
  /// d x / d alpha when the whole state is rotated by the angle alpha. The
  /// dynamics are rotation covariant, which makes uniformly rotating steady
  /// states possible once the slack is disconnected.
  [[nodiscard]] virtual Eigen::VectorXd rotation_generator(
      const Eigen::Ref<const Eigen::VectorXd>& x) const = 0;
  /// Power the controller measures (P^m, Q^m) and |v|^2 at the terminal.
  [[nodiscard]] PowerSample measured_power(const Eigen::Ref<const Eigen::VectorXd>& x,
                                           cplx terminal_current) const {
    return complex_power(terminal_voltage(x), terminal_current);
  }
  [[nodiscard]] virtual Setpoints setpoints() const = 0;
  /// Slowest time constant in seconds (used for dwell-time sanity checks).
  [[nodiscard]] virtual double slowest_time_constant() const = 0;
};

class DroopInverter final : public Device {
 public:
  explicit DroopInverter(DroopParams p);
  [[nodiscard]] std::size_t state_size() const override { return kDroopStateSize; }
  [[nodiscard]] cplx terminal_voltage(const Eigen::Ref<const Eigen::VectorXd>& x) const override;
  void rhs(const Eigen::Ref<const Eigen::VectorXd>& x, cplx i,
           Eigen::Ref<Eigen::VectorXd> dx) const override;
  [[nodiscard]] Eigen::VectorXd initial_guess(cplx v0) const override;
  [[nodiscard]] Eigen::VectorXd rotation_generator(
      const Eigen::Ref<const Eigen::VectorXd>& x) const override;
  [[nodiscard]] Setpoints setpoints() const override { return p_.sp; }
  [[nodiscard]] double slowest_time_constant() const override;
  [[nodiscard]] const DroopParams& params() const { return p_; }

 private:
  DroopParams p_;
};

class DvocInverter final : public Device {
 public:
  explicit DvocInverter(DvocParams p);
  [[nodiscard]] std::size_t state_size() const override { return kDvocStateSize; }
  [[nodiscard]] cplx terminal_voltage(const Eigen::Ref<const Eigen::VectorXd>& x) const override;
  void rhs(const Eigen::Ref<const Eigen::VectorXd>& x, cplx i,
           Eigen::Ref<Eigen::VectorXd> dx) const override;
  [[nodiscard]] Eigen::VectorXd initial_guess(cplx v0) const override;
  [[nodiscard]] Eigen::VectorXd rotation_generator(
      const Eigen::Ref<const Eigen::VectorXd>& x) const override;
  [[nodiscard]] Setpoints setpoints() const override { return p_.sp; }
  [[nodiscard]] double slowest_time_constant() const override;
  [[nodiscard]] const DvocParams& params() const { return p_; }

 private:
  DvocParams p_;
};

// ---------------------------------------------------------------------------
// Network

struct StiffBus {
  cplx v_slack{1.0, 0.0};
  cplx admittance{0.0, -10.0};  // line between device and slack
};
struct ResistiveLoad {
  double conductance = 0.0;
};
struct Line {
  cplx admittance{0.0, -10.0};
  cplx v_remote{0.0, 0.0};
};
using NetworkElement = std::variant<StiffBus, ResistiveLoad, Line>;

/// Current injected by the device into the element (i flows out of the device).
cplx couple(cplx v, const NetworkElement& element);
cplx couple(cplx v, std::span<const NetworkElement> elements);

enum class Topology {
  SingleBus,  // one device; line to slack (breaker) and a load at its terminal
  MicroGrid,  // N devices on lines to a common bus with load; bus tied to slack
};

struct NetworkConfig {
  Topology topology = Topology::SingleBus;
  cplx grid_admittance{0.0, -10.0};  // device (SingleBus) or common bus (MicroGrid) to slack
  std::vector<cplx> device_admittances;  // MicroGrid only, one per device

  void validate(std::size_t n_devices) const;
};

/// Piecewise-constant network conditions. The slack angle advances at the
/// slack frequency offset; slack_angle is its value at angle_time.
struct GridState {
  double slack_magnitude = 1.0;
  double slack_freq_offset_hz = 0.0;
  double slack_angle = 0.0;
  double angle_time = 0.0;
  double load_conductance = 0.0;
  bool breaker_closed = true;

  [[nodiscard]] cplx slack_voltage(double t) const;
};

enum class EventKind { SlackMagnitude, SlackFrequency, LoadConductance, Breaker };

struct GridEvent {
  double t = 0.0;
  EventKind kind = EventKind::SlackMagnitude;
  double value = 0.0;  // breaker: nonzero = closed
};

std::string to_string(EventKind kind);
EventKind event_kind_from_string(const std::string& name);

/// Applies one event at its time (re-anchors the slack angle for frequency steps).
void apply_event(GridState& grid, const GridEvent& ev);

/// Algebraic network solution: device currents from device terminal voltages.
struct NetworkSolution {
  std::vector<cplx> currents;
  cplx bus_voltage;    // device terminal (SingleBus) or common bus voltage
  cplx import_power;   // complex power delivered by the slack into the network
};
NetworkSolution solve_network(const NetworkConfig& net, const GridState& grid, double t,
                              std::span<const cplx> device_voltages);

/// Equivalent element list seen by a single device (SingleBus only).
std::vector<NetworkElement> single_bus_elements(const NetworkConfig& net, const GridState& grid,
                                                double t);

// ---------------------------------------------------------------------------
// Simulation

struct PlantSystem {
  std::vector<std::shared_ptr<const Device>> devices;
  NetworkConfig network;

  [[nodiscard]] std::size_t state_size() const;
};

struct SimulationOptions {
  double dt_sim = 50e-6;
  double dt_record = 50e-6;
};

struct SimulationResult {
  std::vector<DqSeries> terminals;   // one per device
  std::vector<cplx> import_power;    // slack import at each record time
  Eigen::VectorXd final_state;
};

/// Fixed-step RK4 over [0, t_end]. Events are applied exactly at their times
/// (steps are shortened to land on them); samples are right-continuous, i.e.
/// a sample at an event time reflects the post-event network.
SimulationResult integrate(const PlantSystem& system, GridState grid,
                           std::span<const GridEvent> events, double t_end,
                           const Eigen::VectorXd& x0, const SimulationOptions& opts = {});

/// Fixed point of the system for a constant network (slack at the frame
/// frequency). Pre-settles by simulation, then polishes with Newton. With the
/// breaker open nothing anchors the angle: the result is then a uniformly
/// rotating steady state (state constant up to rotation), with the rotation
/// speed in rad/s returned through `omega`.
Eigen::VectorXd find_equilibrium(const PlantSystem& system, const GridState& grid,
                                 double tolerance = 1e-12, double* omega = nullptr);

/// Generic fixed-step RK4 for dx/dt = f(t, x); the last step is shortened to hit t1.
using OdeRhs = std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)>;
Eigen::VectorXd rk4(const OdeRhs& f, Eigen::VectorXd x0, double t0, double t1, double dt);

/// Reactive setpoint that makes (P^s, v^s) a zero-error operating point
/// against a slack of magnitude v_slack behind the admittance y.
double consistent_reactive_setpoint(double P, double v, double v_slack, cplx y);

}  // namespace nfid::plants
