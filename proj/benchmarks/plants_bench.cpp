#include <benchmark/benchmark.h>

#include "nfid/plants.hpp"
#include "nfid/scenarios.hpp"

namespace {

using namespace nfid;

// One second of a magnitude-step recording at the default 50 us step.
void BM_SimulateScenario(benchmark::State& state) {
  scenarios::PlantSpec plant;
  plant.kind = state.range(0) == 0 ? scenarios::PlantKind::Droop : scenarios::PlantKind::Dvoc;
  Setpoints sp{0.5, 0.0, 1.0};
  sp.Q = plants::consistent_reactive_setpoint(sp.P, sp.v, 1.0, plant.line_admittance);
  plant.droop.sp = sp;
  plant.dvoc.sp = sp;
  const std::vector<double> levels{1.0, 1.03};
  const auto sc = scenarios::magnitude_step_scenario(levels, 0.5, 1);
  for (auto _ : state) benchmark::DoNotOptimize(scenarios::simulate_scenario(sc, plant));
  state.SetLabel(state.range(0) == 0 ? "droop" : "dvoc");
}
BENCHMARK(BM_SimulateScenario)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
