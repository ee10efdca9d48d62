#include "nfid/scenarios.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <map>
#include <numeric>
#include <sstream>

#include "nfid/error.hpp"
#include "nfid/rng.hpp"

namespace nfid::scenarios {
namespace {

using plants::EventKind;
using plants::GridEvent;

void check_dwell(double dwell, double slowest, const char* what) {
  if (!(dwell > 0.0)) throw InputError(std::string(what) + ": dwell must be positive");
  if (slowest > 0.0 && dwell < 10.0 * slowest) {
    std::ostringstream os;
    os << what << ": dwell " << dwell << " s is shorter than 10x the slowest plant time constant ("
       << slowest << " s); segments may not reach steady state";
    warn(os.str());
  }
}

std::string indexed(const std::string& prefix, std::size_t k) {
  std::ostringstream os;
  os << prefix << '_';
  if (k < 10) os << '0';
  os << k;
  return os.str();
}

}  // namespace

std::string to_string(ScenarioClass c) {
  switch (c) {
    case ScenarioClass::MagnitudeStep: return "magnitude_step";
    case ScenarioClass::FrequencyStep: return "frequency_step";
    case ScenarioClass::RapidSmallChanges: return "rapid_small_changes";
    case ScenarioClass::OodLoadStep: return "ood_load_step";
    case ScenarioClass::OodIslanding: return "ood_islanding";
  }
  return "unknown";
}

ScenarioClass scenario_class_from_string(const std::string& s) {
  for (auto c : {ScenarioClass::MagnitudeStep, ScenarioClass::FrequencyStep,
                 ScenarioClass::RapidSmallChanges, ScenarioClass::OodLoadStep,
                 ScenarioClass::OodIslanding}) {
    if (to_string(c) == s) return c;
  }
  throw InputError("unknown scenario class '" + s + "'");
}

bool is_ood(ScenarioClass c) {
  return c == ScenarioClass::OodLoadStep || c == ScenarioClass::OodIslanding;
}

void Scenario::validate() const {
  if (!(duration > 0.0)) throw InputError("scenario " + name + ": duration must be positive");
  if (!(initial.slack_magnitude > 0.0)) {
    throw InputError("scenario " + name + ": slack magnitude must be positive");
  }
  for (std::size_t k = 0; k < events.size(); ++k) {
    const auto& ev = events[k];
    if (ev.t < 0.0 || ev.t > duration) {
      throw InputError("scenario " + name + ": event outside [0, duration]");
    }
    if (k > 0 && ev.t < events[k - 1].t) {
      throw InputError("scenario " + name + ": events not sorted by time");
    }
    if (ev.kind == EventKind::SlackMagnitude && !(ev.value > 0.0)) {
      throw InputError("scenario " + name + ": slack magnitude must be positive");
    }
    if (ev.kind == EventKind::LoadConductance && ev.value < 0.0) {
      throw InputError("scenario " + name + ": load conductance must be >= 0");
    }
  }
  if (topology == plants::Topology::MicroGrid) {
    if (!microgrid || microgrid->device_P.size() != microgrid->line_admittances.size() ||
        microgrid->device_P.empty()) {
      throw InputError("scenario " + name + ": micro-grid layout missing or inconsistent");
    }
  }
}

Scenario magnitude_step_scenario(std::span<const double> levels, double dwell, std::uint64_t seed,
                                 double slowest_time_constant, LevelGuard guard) {
  if (levels.empty()) throw InputError("magnitude_step_scenario: no levels");
  for (double l : levels) {
    if (!(l >= guard.low && l <= guard.high)) {
      std::ostringstream os;
      os << "magnitude_step_scenario: level " << l << " outside [" << guard.low << ", "
         << guard.high << "] pu";
      throw InputError(os.str());
    }
  }
  check_dwell(dwell, slowest_time_constant, "magnitude_step_scenario");
  Scenario s;
  s.name = "magnitude_step";
  s.cls = ScenarioClass::MagnitudeStep;
  s.seed = seed;
  s.initial.slack_magnitude = levels[0];
  s.duration = dwell * static_cast<double>(levels.size());
  for (std::size_t k = 1; k < levels.size(); ++k) {
    s.events.push_back({dwell * static_cast<double>(k), EventKind::SlackMagnitude, levels[k]});
  }
  return s;
}

Scenario frequency_step_scenario(std::span<const double> deviations_hz, double dwell,
                                 std::uint64_t seed, double slowest_time_constant) {
  check_dwell(dwell, slowest_time_constant, "frequency_step_scenario");
  Scenario s;
  s.name = "frequency_step";
  s.cls = ScenarioClass::FrequencyStep;
  s.seed = seed;
  if (deviations_hz.empty()) {
    s.duration = dwell;
    return s;
  }
  s.initial.slack_freq_offset_hz = deviations_hz[0];
  s.duration = dwell * static_cast<double>(deviations_hz.size());
  for (std::size_t k = 1; k < deviations_hz.size(); ++k) {
    s.events.push_back(
        {dwell * static_cast<double>(k), EventKind::SlackFrequency, deviations_hz[k]});
  }
  return s;
}

Scenario rapid_small_changes_scenario(double duration, double step_period, double mag_range,
                                      double freq_range_hz, std::uint64_t seed) {
  if (!(duration > 0.0) || !(step_period > 0.0)) {
    throw InputError("rapid_small_changes_scenario: duration and step_period must be positive");
  }
  if (mag_range < 0.0 || freq_range_hz < 0.0 || mag_range >= 1.0) {
    throw InputError("rapid_small_changes_scenario: ranges must lie in [0, 1)");
  }
  Scenario s;
  s.name = "rapid_small_changes";
  s.cls = ScenarioClass::RapidSmallChanges;
  s.seed = seed;
  s.duration = duration;
  if (mag_range == 0.0 && freq_range_hz == 0.0) return s;
  Rng rng(seed);
  const auto steps = static_cast<std::size_t>(std::floor(duration / step_period - 1e-9));
  for (std::size_t k = 1; k <= steps; ++k) {
    const double t = step_period * static_cast<double>(k);
    const double mag = 1.0 + rng.uniform(-mag_range, mag_range);
    const double freq = rng.uniform(-freq_range_hz, freq_range_hz);
    if (mag_range > 0.0) s.events.push_back({t, EventKind::SlackMagnitude, mag});
    if (freq_range_hz > 0.0) s.events.push_back({t, EventKind::SlackFrequency, freq});
  }
  return s;
}

namespace {

std::vector<double> excursions(double base, double amplitude, int cycles, double jitter_low,
                               std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> levels{base};
  for (int c = 0; c < cycles; ++c) {
    const double sign = (c % 2 == 0) ? 1.0 : -1.0;
    levels.push_back(base + sign * amplitude * rng.uniform(jitter_low, 1.0));
    levels.push_back(base);
  }
  return levels;
}

}  // namespace

Scenario default_magnitude_protocol(std::uint64_t seed, const ProtocolDefaults& d) {
  const auto levels = excursions(1.0, d.magnitude_step, d.cycles, d.jitter_low, seed);
  return magnitude_step_scenario(levels, d.dwell, seed);
}

Scenario default_frequency_protocol(std::uint64_t seed, const ProtocolDefaults& d) {
  const auto devs = excursions(0.0, d.frequency_step_hz, d.cycles, d.jitter_low, seed);
  return frequency_step_scenario(devs, d.dwell, seed);
}

Scenario default_rapid_protocol(std::uint64_t seed, const ProtocolDefaults& d) {
  return rapid_small_changes_scenario(d.rapid_duration, d.rapid_period, d.rapid_mag_range,
                                      d.rapid_freq_range_hz, seed);
}

LoadStepOptions LoadStepOptions::for_setpoints(const Setpoints& sp) {
  LoadStepOptions o;
  o.base_conductance = sp.P / sp.nu();
  return o;
}

Scenario ood_load_step_scenario(const LoadStepOptions& opts) {
  if (!(opts.base_conductance > 0.0)) {
    throw InputError("ood_load_step_scenario: base conductance must be positive");
  }
  Scenario s;
  s.name = "ood_load_step";
  s.cls = ScenarioClass::OodLoadStep;
  s.initial.breaker_closed = false;
  s.initial.load_conductance = opts.base_conductance;
  for (std::size_t k = 0; k < opts.multipliers.size(); ++k) {
    s.events.push_back({opts.dwell * static_cast<double>(k + 1), EventKind::LoadConductance,
                        opts.base_conductance * opts.multipliers[k]});
  }
  s.duration = opts.dwell * static_cast<double>(opts.multipliers.size() + 1);
  return s;
}

Scenario ood_islanding_scenario(const IslandingOptions& opts) {
  Scenario s;
  s.name = "ood_islanding";
  s.cls = ScenarioClass::OodIslanding;
  s.topology = plants::Topology::MicroGrid;
  s.microgrid = opts.layout;
  s.initial.load_conductance = opts.load_conductance;
  s.initial.breaker_closed = true;
  s.events.push_back({opts.t_open, EventKind::Breaker, 0.0});
  s.duration = opts.duration;
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------

std::string to_string(PlantKind k) {
  switch (k) {
    case PlantKind::Droop: return "droop";
    case PlantKind::Dvoc: return "dvoc";
    case PlantKind::NormalForm: return "normal_form";
  }
  return "unknown";
}

PlantKind plant_kind_from_string(const std::string& s) {
  if (s == "droop") return PlantKind::Droop;
  if (s == "dvoc") return PlantKind::Dvoc;
  if (s == "normal_form") return PlantKind::NormalForm;
  throw InputError("unknown plant kind '" + s + "'");
}

Setpoints PlantSpec::setpoints() const {
  switch (kind) {
    case PlantKind::Droop: return droop.sp;
    case PlantKind::Dvoc: return dvoc.sp;
    case PlantKind::NormalForm: return normal_form.sp;
  }
  return {};
}

double PlantSpec::slowest_time_constant() const {
  switch (kind) {
    case PlantKind::Droop: return plants::DroopInverter(droop).slowest_time_constant();
    case PlantKind::Dvoc: return plants::DvocInverter(dvoc).slowest_time_constant();
    case PlantKind::NormalForm: {
      if (normal_form.n_ivars() == 0) return 0.0;
      const Eigen::VectorXcd eig = normal_form.A.eigenvalues();
      double slowest = 0.0;
      for (const cplx& l : eig) {
        if (l.real() < 0.0) slowest = std::max(slowest, -1.0 / l.real());
      }
      return slowest;
    }
  }
  return 0.0;
}

void PlantSpec::validate() const {
  switch (kind) {
    case PlantKind::Droop: droop.validate(); break;
    case PlantKind::Dvoc: dvoc.validate(); break;
    case PlantKind::NormalForm: normal_form.validate(); break;
  }
  if (!(std::abs(line_admittance) > 0.0)) throw InputError("plant: line admittance must be nonzero");
  if (!(dt_sim > 0.0) || !(dt_record >= dt_sim) || !(target_dt >= dt_record)) {
    throw InputError("plant: need 0 < dt_sim <= dt_record <= target_dt");
  }
}

namespace {

std::shared_ptr<const plants::Device> make_device(const PlantSpec& plant,
                                                  std::optional<double> P_override) {
  if (plant.kind == PlantKind::Droop) {
    auto p = plant.droop;
    if (P_override) p.sp.P = *P_override;
    return std::make_shared<plants::DroopInverter>(p);
  }
  if (plant.kind == PlantKind::Dvoc) {
    auto p = plant.dvoc;
    if (P_override) p.sp.P = *P_override;
    return std::make_shared<plants::DvocInverter>(p);
  }
  throw InputError("plant: the normal-form generator is not a continuous-time device");
}

}  // namespace

DqSeries simulate_scenario(const Scenario& scenario, const PlantSpec& plant) {
  scenario.validate();
  plant.validate();
  if (plant.kind == PlantKind::NormalForm) {
    if (scenario.topology != plants::Topology::SingleBus) {
      throw InputError("scenario " + scenario.name +
                       ": the normal-form generator supports single-bus networks only");
    }
    plants::NetworkConfig net;
    net.grid_admittance = plant.line_admittance;
    std::string diag;
    const auto eq = normalform::equilibrium(plant.normal_form, net, scenario.initial, &diag);
    if (!eq) throw NumericalError("scenario " + scenario.name + ": " + diag);
    const auto disc = normalform::discretize(plant.normal_form, plant.target_dt);
    auto res = normalform::simulate_closed_loop(disc, net, scenario.initial, scenario.events,
                                                scenario.duration, eq->theta, eq->xc);
    return std::move(res.series);
  }

  plants::PlantSystem system;
  if (scenario.topology == plants::Topology::SingleBus) {
    system.devices.push_back(make_device(plant, std::nullopt));
    system.network.grid_admittance = plant.line_admittance;
  } else {
    const auto& mg = *scenario.microgrid;
    for (double P : mg.device_P) system.devices.push_back(make_device(plant, P));
    system.network.topology = plants::Topology::MicroGrid;
    system.network.grid_admittance = mg.grid_admittance;
    system.network.device_admittances = mg.line_admittances;
  }
  const Eigen::VectorXd x0 = plants::find_equilibrium(system, scenario.initial);
  plants::SimulationOptions opts{plant.dt_sim, plant.dt_record};
  auto res = plants::integrate(system, scenario.initial, scenario.events, scenario.duration, x0, opts);
  return downsample(res.terminals.front(), plant.target_dt);
}

// ---------------------------------------------------------------------------

std::string to_string(Partition p) {
  switch (p) {
    case Partition::Train: return "train";
    case Partition::Validation: return "validation";
    case Partition::Test: return "test";
    case Partition::Ood: return "ood";
  }
  return "unknown";
}

Partition partition_from_string(const std::string& s) {
  if (s == "train") return Partition::Train;
  if (s == "validation") return Partition::Validation;
  if (s == "test") return Partition::Test;
  if (s == "ood") return Partition::Ood;
  throw InputError("unknown partition '" + s + "'");
}

void SplitFractions::validate() const {
  if (train < 0.0 || validation < 0.0 || test < 0.0) {
    throw InputError("split fractions must be non-negative");
  }
  if (std::abs(train + validation + test - 1.0) > 1e-9) {
    throw InputError("split fractions must sum to 1");
  }
}

std::vector<const Record*> Dataset::partition(Partition p) const {
  std::vector<const Record*> out;
  const auto& src = p == Partition::Ood ? ood : records;
  for (const auto& r : src) {
    if (r.partition == p) out.push_back(&r);
  }
  return out;
}

void Dataset::validate() const {
  std::map<std::string, int> seen;
  for (const auto& r : records) {
    if (r.partition == Partition::Ood) throw InputError("dataset: OOD record in main partitions");
    if (++seen[r.name] > 1) throw InputError("dataset: duplicate record name " + r.name);
  }
  for (const auto& r : ood) {
    if (r.partition != Partition::Ood) throw InputError("dataset: OOD list holds non-OOD record");
    if (++seen[r.name] > 1) throw InputError("dataset: duplicate record name " + r.name);
  }
}

std::array<std::size_t, 3> apportion(std::size_t total, const SplitFractions& f) {
  f.validate();
  const std::array<double, 3> frac{f.train, f.validation, f.test};
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (int p = 0; p < 3; ++p) {
    const double quota = frac[p] * static_cast<double>(total);
    counts[p] = static_cast<std::size_t>(std::floor(quota + 1e-9));
    rem[p] = quota - static_cast<double>(counts[p]);
    assigned += counts[p];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b] + 1e-12; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) counts[order[k % 3]] += 1;
  return counts;
}

std::vector<Partition> assign_partitions(std::span<const std::string> names,
                                         std::span<const ScenarioClass> classes,
                                         const SplitFractions& fractions, std::uint64_t seed) {
  fractions.validate();
  if (names.size() != classes.size()) throw InputError("assign_partitions: size mismatch");
  const std::array<double, 3> frac{fractions.train, fractions.validation, fractions.test};
  const std::array<Partition, 3> parts{Partition::Train, Partition::Validation, Partition::Test};
  const auto positive = static_cast<std::size_t>(std::count_if(frac.begin(), frac.end(),
                                                               [](double f) { return f > 0.0; }));

  std::map<ScenarioClass, std::vector<std::size_t>> by_class;
  for (std::size_t k = 0; k < names.size(); ++k) by_class[classes[k]].push_back(k);

  std::vector<Partition> out(names.size(), Partition::Train);
  for (auto& [cls, idx] : by_class) {
    if (idx.size() < positive) {
      std::ostringstream os;
      os << "infeasible stratification: class " << to_string(cls) << " has " << idx.size()
         << " record(s) but " << positive << " partitions need one each";
      throw InputError(os.str());
    }
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return names[a] < names[b]; });
    Rng rng(derive_seed(seed, "split/" + to_string(cls)));
    rng.shuffle(idx);

    auto counts = apportion(idx.size(), fractions);
    for (int p = 0; p < 3; ++p) {
      if (frac[p] > 0.0 && counts[p] == 0) {
        const auto donor = static_cast<int>(
            std::max_element(counts.begin(), counts.end()) - counts.begin());
        counts[donor] -= 1;
        counts[p] = 1;
      }
    }
    std::size_t pos = 0;
    for (int p = 0; p < 3; ++p) {
      for (std::size_t c = 0; c < counts[p]; ++c) out[idx[pos++]] = parts[p];
    }
  }
  return out;
}

namespace {

Record simulate_record(const Scenario& sc, const PlantSpec& plant) {
  Record r;
  r.name = sc.name;
  r.cls = sc.cls;
  r.seed = sc.seed;
  r.partition = is_ood(sc.cls) ? Partition::Ood : Partition::Train;
  r.series = simulate_scenario(sc, plant);
  return r;
}

std::vector<Record> simulate_all(std::span<const Scenario> scenarios, const PlantSpec& plant,
                                 std::size_t threads) {
  std::vector<Record> out(scenarios.size());
  if (threads <= 1 || scenarios.size() <= 1) {
    for (std::size_t k = 0; k < scenarios.size(); ++k) out[k] = simulate_record(scenarios[k], plant);
    return out;
  }
  for (std::size_t start = 0; start < scenarios.size(); start += threads) {
    std::vector<std::future<Record>> batch;
    const std::size_t stop = std::min(scenarios.size(), start + threads);
    for (std::size_t k = start; k < stop; ++k) {
      batch.push_back(std::async(std::launch::async,
                                 [&, k] { return simulate_record(scenarios[k], plant); }));
    }
    for (std::size_t k = start; k < stop; ++k) out[k] = batch[k - start].get();
  }
  return out;
}

}  // namespace

Dataset build_dataset(std::span<const Scenario> scenarios, std::span<const Scenario> ood,
                      const PlantSpec& plant, std::uint64_t seed, const DatasetOptions& opts) {
  plant.validate();
  opts.fractions.validate();
  std::vector<std::string> names;
  std::vector<ScenarioClass> classes;
  for (const auto& s : scenarios) {
    if (is_ood(s.cls)) throw InputError("build_dataset: OOD scenario " + s.name + " in main list");
    names.push_back(s.name);
    classes.push_back(s.cls);
  }
  for (const auto& s : ood) {
    if (!is_ood(s.cls)) throw InputError("build_dataset: scenario " + s.name + " is not OOD");
  }
  const auto parts = assign_partitions(names, classes, opts.fractions, seed);

  Dataset ds;
  ds.seed = seed;
  ds.setpoints = plant.setpoints();
  ds.dt = plant.target_dt;
  ds.line_admittance = plant.line_admittance;
  ds.records = simulate_all(scenarios, plant, opts.threads);
  for (std::size_t k = 0; k < ds.records.size(); ++k) ds.records[k].partition = parts[k];
  ds.ood = simulate_all(ood, plant, opts.threads);
  ds.validate();

  for (const auto& r : ds.records) {
    if (r.partition != Partition::Train) continue;
    const auto e = normalform::error_series(r.series, ds.setpoints);
    for (int ch = 0; ch < 3; ++ch) {
      double mean = 0.0;
      for (const auto& x : e.e) mean += x[ch];
      mean /= static_cast<double>(e.size());
      double var = 0.0;
      for (const auto& x : e.e) var += (x[ch] - mean) * (x[ch] - mean);
      var /= static_cast<double>(e.size());
      if (!(var > opts.excitation_floor)) {
        std::ostringstream os;
        os << "build_dataset: training record " << r.name << " under-excites channel " << ch
           << " (variance " << var << ")";
        throw InputError(os.str());
      }
    }
  }
  return ds;
}

std::vector<Scenario> default_scenarios(std::uint64_t root_seed, std::size_t per_class,
                                        const ProtocolDefaults& d) {
  std::vector<Scenario> out;
  for (std::size_t k = 0; k < per_class; ++k) {
    auto s = default_magnitude_protocol(derive_seed(root_seed, indexed("scenario/magnitude", k)), d);
    s.name = indexed("magnitude_step", k);
    out.push_back(std::move(s));
  }
  for (std::size_t k = 0; k < per_class; ++k) {
    auto s = default_frequency_protocol(derive_seed(root_seed, indexed("scenario/frequency", k)), d);
    s.name = indexed("frequency_step", k);
    out.push_back(std::move(s));
  }
  for (std::size_t k = 0; k < per_class; ++k) {
    auto s = default_rapid_protocol(derive_seed(root_seed, indexed("scenario/rapid", k)), d);
    s.name = indexed("rapid_small_changes", k);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace nfid::scenarios
