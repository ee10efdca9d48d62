#pragma once

// Plants and small datasets shared by the test suites.

#include "nfid/plants.hpp"
#include "nfid/scenarios.hpp"

namespace nfid::test {

inline Setpoints stiff_bus_setpoints(cplx line = {0.0, -10.0}) {
  Setpoints sp{0.5, 0.0, 1.0};
  sp.Q = plants::consistent_reactive_setpoint(sp.P, sp.v, 1.0, line);
  return sp;
}

/// Two-state generator with a stable closed loop on the default stiff bus.
inline normalform::HwNormalForm generator_n2(const Setpoints& sp = stiff_bus_setpoints()) {
  auto m = normalform::HwNormalForm::zeros(2, sp);
  m.A << -20.0, 0.0, 10.0, -40.0;
  m.B << -125.6, 0.0, 0.0, 0.0, -20.0, 0.0;
  m.C << cplx(0.0, 1.0), cplx(0.5, 0.2);
  m.D << cplx(0.0, 0.0), cplx(-1.0, 0.0), cplx(-10.0, 0.0);
  return m;
}

inline scenarios::PlantSpec droop_plant() {
  scenarios::PlantSpec p;
  p.kind = scenarios::PlantKind::Droop;
  p.droop.sp = stiff_bus_setpoints(p.line_admittance);
  return p;
}

inline scenarios::PlantSpec normal_form_plant() {
  scenarios::PlantSpec p;
  p.kind = scenarios::PlantKind::NormalForm;
  p.normal_form = generator_n2(stiff_bus_setpoints(p.line_admittance));
  return p;
}

inline scenarios::ProtocolDefaults short_protocol() {
  scenarios::ProtocolDefaults d;
  d.dwell = 0.6;
  d.cycles = 2;
  d.rapid_duration = 4.0;
  d.rapid_period = 0.5;
  return d;
}

inline scenarios::Dataset small_dataset(const scenarios::PlantSpec& plant, std::uint64_t seed) {
  const auto sc = scenarios::default_scenarios(seed, 3, short_protocol());
  return scenarios::build_dataset(sc, {}, plant, seed);
}

}  // namespace nfid::test
