#pragma once

// Excitation protocols and dataset partitioning.
//
// Three in-distribution classes drive a device against a stiff bus (slack
// magnitude steps, slack frequency steps, rapid small random changes of
// both). Two out-of-distribution scenarios exercise grid-forming operation
// on a resistive load and the islanding of a two-inverter micro-grid.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nfid/normalform.hpp"
#include "nfid/plants.hpp"
#include "nfid/signal.hpp"

namespace nfid::scenarios {

enum class ScenarioClass { MagnitudeStep, FrequencyStep, RapidSmallChanges, OodLoadStep, OodIslanding };

std::string to_string(ScenarioClass c);
ScenarioClass scenario_class_from_string(const std::string& s);
[[nodiscard]] bool is_ood(ScenarioClass c);

/// Micro-grid layout used by the islanding scenario.
struct MicroGridLayout {
  std::vector<double> device_P;        // active power setpoint per device
  std::vector<cplx> line_admittances;  // device to common bus
  cplx grid_admittance{0.0, -10.0};    // common bus to slack
};

struct Scenario {
  std::string name;
  ScenarioClass cls = ScenarioClass::MagnitudeStep;
  plants::Topology topology = plants::Topology::SingleBus;
  plants::GridState initial;
  std::vector<plants::GridEvent> events;  // sorted by time
  double duration = 0.0;
  std::uint64_t seed = 0;
  std::optional<MicroGridLayout> microgrid;

  /// Events within [0, duration], sorted, magnitudes positive.
  void validate() const;
};

struct LevelGuard {
  double low = 0.8;
  double high = 1.2;
};

/// Slack magnitude steps through `levels` (first level is the initial state),
/// `dwell` seconds each. Warns when dwell < 10x slowest_time_constant.
Scenario magnitude_step_scenario(std::span<const double> levels, double dwell, std::uint64_t seed,
                                 double slowest_time_constant = 0.0, LevelGuard guard = {});

/// Slack frequency offsets (Hz) stepping through `deviations_hz`.
Scenario frequency_step_scenario(std::span<const double> deviations_hz, double dwell,
                                 std::uint64_t seed, double slowest_time_constant = 0.0);

/// Piecewise-constant random slack magnitude 1 +- mag_range and frequency
/// offset +- freq_range_hz, redrawn every step_period; starts at nominal.
Scenario rapid_small_changes_scenario(double duration, double step_period, double mag_range,
                                      double freq_range_hz, std::uint64_t seed);

struct ProtocolDefaults {
  double magnitude_step = 0.05;  // pu
  double frequency_step_hz = 0.2;
  double dwell = 2.0;
  int cycles = 5;
  double rapid_duration = 60.0;
  double rapid_period = 1.0;
  double rapid_mag_range = 0.01;
  double rapid_freq_range_hz = 0.1;
  // Seeded jitter of step amplitudes: amplitude * U(jitter_low, 1).
  double jitter_low = 0.6;
};

/// Default protocols: alternating +/- excursions returning to nominal, `cycles`
/// excursions, amplitudes jittered from the seed.
Scenario default_magnitude_protocol(std::uint64_t seed, const ProtocolDefaults& d = {});
Scenario default_frequency_protocol(std::uint64_t seed, const ProtocolDefaults& d = {});
Scenario default_rapid_protocol(std::uint64_t seed, const ProtocolDefaults& d = {});

struct LoadStepOptions {
  double base_conductance = 0.5;                     // sized so P = P^s at v^s
  std::array<double, 3> multipliers{1.1, 1.2, 1.3};  // successive load increases
  double dwell = 2.0;

  static LoadStepOptions for_setpoints(const Setpoints& sp);
};

/// Device alone on a resistive load (breaker to the slack open); the load
/// conductance increases in three steps, so the frequency drops.
Scenario ood_load_step_scenario(const LoadStepOptions& opts = {});

struct IslandingOptions {
  MicroGridLayout layout{{0.4, 0.4}, {cplx{0.0, -10.0}, cplx{0.0, -10.0}}, cplx{0.0, -10.0}};
  double load_conductance = 1.0;
  double t_open = 2.0;
  double duration = 6.0;
};

/// Two droop devices and a load import power from the slack until the
/// breaker opens at t_open.
Scenario ood_islanding_scenario(const IslandingOptions& opts = {});

// ---------------------------------------------------------------------------
// Plant description used to turn scenarios into recordings.

enum class PlantKind { Droop, Dvoc, NormalForm };
std::string to_string(PlantKind k);
PlantKind plant_kind_from_string(const std::string& s);

struct PlantSpec {
  PlantKind kind = PlantKind::Droop;
  plants::DroopParams droop;
  plants::DvocParams dvoc;
  normalform::HwNormalForm normal_form;  // generator for PlantKind::NormalForm
  cplx line_admittance{0.0, -10.0};      // device to slack
  double dt_sim = 50e-6;
  double dt_record = 50e-6;
  double target_dt = 1e-3;  // pipeline sampling interval

  [[nodiscard]] Setpoints setpoints() const;
  [[nodiscard]] double slowest_time_constant() const;
  void validate() const;
};

/// Simulates the scenario from the equilibrium of its initial network and
/// returns the recording of the (first) device after downsampling to target_dt.
DqSeries simulate_scenario(const Scenario& scenario, const PlantSpec& plant);

// ---------------------------------------------------------------------------
// Dataset

enum class Partition { Train, Validation, Test, Ood };
std::string to_string(Partition p);
Partition partition_from_string(const std::string& s);

struct SplitFractions {
  double train = 0.7;
  double validation = 0.2;
  double test = 0.1;

  void validate() const;
};

struct Record {
  std::string name;
  ScenarioClass cls = ScenarioClass::MagnitudeStep;
  std::uint64_t seed = 0;
  Partition partition = Partition::Train;
  DqSeries series;
};

struct Dataset {
  std::vector<Record> records;  // train, validation and test records
  std::vector<Record> ood;
  Setpoints setpoints;
  double dt = 0.0;
  std::uint64_t seed = 0;
  cplx line_admittance{0.0, -10.0};  // stiff-bus line of the generating plant

  [[nodiscard]] std::vector<const Record*> partition(Partition p) const;
  /// Partition integrity: every non-OOD record in exactly one partition,
  /// OOD names disjoint from the rest.
  void validate() const;
};

/// Largest-remainder apportionment of `total` items (ties by partition order).
std::array<std::size_t, 3> apportion(std::size_t total, const SplitFractions& f);

/// Whole-record, class-stratified partition assignment. Within each class,
/// counts follow largest-remainder rounding, then every partition with a
/// positive fraction is topped up to at least one record of the class (taken
/// from the largest). Throws InputError when a class has fewer records than
/// there are positive-fraction partitions.
std::vector<Partition> assign_partitions(std::span<const std::string> names,
                                         std::span<const ScenarioClass> classes,
                                         const SplitFractions& fractions, std::uint64_t seed);

struct DatasetOptions {
  SplitFractions fractions;
  std::size_t threads = 1;
  double excitation_floor = 1e-8;  // minimum per-channel variance of e on train records
};

/// Simulates every scenario, downsamples, assigns partitions from the seed.
Dataset build_dataset(std::span<const Scenario> scenarios, std::span<const Scenario> ood,
                      const PlantSpec& plant, std::uint64_t seed,
                      const DatasetOptions& opts = {});

/// Three instances per class of the default protocols, seeds derived from root.
std::vector<Scenario> default_scenarios(std::uint64_t root_seed, std::size_t per_class = 3,
                                        const ProtocolDefaults& d = {});

}  // namespace nfid::scenarios
