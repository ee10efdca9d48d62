#include "nfid/scenarios.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include "nfid/csv.hpp"
#include "nfid/error.hpp"
#include "fixtures.hpp"
#include "test_util.hpp"

namespace nfid::scenarios {
namespace {

constexpr double kPi = std::numbers::pi;

using test::droop_plant;
using test::short_protocol;

// Least-squares slope of Im(Theta) over samples [k0, k1).
double phase_slope(const DqSeries& s, std::size_t k0, std::size_t k1) {
  const auto ph = to_phase(s);
  double st = 0, sy = 0, stt = 0, sty = 0;
  const double n = static_cast<double>(k1 - k0);
  for (std::size_t k = k0; k < k1; ++k) {
    const double t = s[k].t, y = ph.theta[k].imag();
    st += t;
    sy += y;
    stt += t * t;
    sty += t * y;
  }
  return (n * sty - st * sy) / (n * stt - st * st);
}

TEST(MagnitudeStep, Construction) {
  const std::vector<double> levels{1.0, 1.05, 1.0};
  const auto s = magnitude_step_scenario(levels, 2.0, 7);
  EXPECT_DOUBLE_EQ(s.duration, 6.0);
  ASSERT_EQ(s.events.size(), 2u);
  EXPECT_DOUBLE_EQ(s.events[0].t, 2.0);
  EXPECT_DOUBLE_EQ(s.events[1].t, 4.0);
  EXPECT_EQ(s.events[0].kind, plants::EventKind::SlackMagnitude);
  EXPECT_DOUBLE_EQ(s.events[0].value, 1.05);
  const std::vector<double> single{1.0};
  EXPECT_TRUE(magnitude_step_scenario(single, 2.0, 7).events.empty());
}

TEST(MagnitudeStep, GuardAndDwellWarning) {
  const std::vector<double> bad{1.0, 1.3};
  EXPECT_THROW(magnitude_step_scenario(bad, 2.0, 1), InputError);
  std::string seen;
  auto old = set_warning_handler([&](const std::string& m) { seen = m; });
  const std::vector<double> ok{1.0, 1.05};
  magnitude_step_scenario(ok, 0.1, 1, 0.05);
  set_warning_handler(old);
  EXPECT_FALSE(seen.empty());
}

TEST(MagnitudeStep, DefaultProtocolReachesSteadyState) {
  const auto plant = droop_plant();
  const auto sc = default_magnitude_protocol(3);
  EXPECT_EQ(sc.events.size(), 10u);  // 5 excursions and returns
  const auto s = simulate_scenario(sc, plant);
  const auto eta = complex_frequency(to_phase(s));
  // 50 ms ahead of each event: the zero-phase decimation filter spreads a
  // step over a few samples on both sides.
  for (const auto& ev : sc.events) {
    const auto k = static_cast<std::size_t>(std::llround((ev.t - 0.05) / s.dt()));
    EXPECT_LT(std::abs(eta[k]), 1e-4) << "before event at " << ev.t;
  }
}

TEST(FrequencyStep, Construction) {
  const std::vector<double> devs{0.0, 0.2, 0.0};
  const auto s = frequency_step_scenario(devs, 2.0, 1);
  ASSERT_EQ(s.events.size(), 2u);
  plants::GridState g = s.initial;
  plants::apply_event(g, s.events[0]);
  // Frame-relative slack angle grows linearly during the offset segment.
  const double a1 = std::arg(g.slack_voltage(2.5)), a2 = std::arg(g.slack_voltage(3.0));
  EXPECT_NEAR(a2 - a1, 2.0 * kPi * 0.2 * 0.5, 1e-12);
  EXPECT_NEAR(std::arg(g.slack_voltage(2.0)), 0.0, 1e-12);
  EXPECT_TRUE(frequency_step_scenario({}, 2.0, 1).events.empty());
}

TEST(FrequencyStep, InverterEntrainsToSlack) {
  const std::vector<double> devs{0.0, 0.2, 0.0};
  const auto sc = frequency_step_scenario(devs, 2.0, 1);
  const auto s = simulate_scenario(sc, droop_plant());
  const auto k0 = static_cast<std::size_t>(3.6 / s.dt()), k1 = static_cast<std::size_t>(3.999 / s.dt());
  EXPECT_NEAR(phase_slope(s, k0, k1), 2.0 * kPi * 0.2, 1e-3 * 2.0 * kPi * 0.2);
}

TEST(RapidChanges, DeterministicAndDegenerate) {
  const auto a = rapid_small_changes_scenario(10.0, 1.0, 0.01, 0.1, 42);
  const auto b = rapid_small_changes_scenario(10.0, 1.0, 0.01, 0.1, 42);
  ASSERT_EQ(a.events.size(), b.events.size());
  for (std::size_t k = 0; k < a.events.size(); ++k) {
    EXPECT_EQ(a.events[k].t, b.events[k].t);
    EXPECT_EQ(a.events[k].value, b.events[k].value);
  }
  const auto c = rapid_small_changes_scenario(10.0, 1.0, 0.01, 0.1, 43);
  EXPECT_NE(a.events[0].value, c.events[0].value);
  EXPECT_TRUE(rapid_small_changes_scenario(10.0, 1.0, 0.0, 0.0, 42).events.empty());
  for (const auto& e : a.events) {
    if (e.kind == plants::EventKind::SlackMagnitude) {
      EXPECT_LE(std::abs(e.value - 1.0), 0.01);
    } else {
      EXPECT_LE(std::abs(e.value), 0.1);
    }
  }
}

TEST(RapidChanges, DefaultsKeepErrorExcited) {
  const auto plant = droop_plant();
  const auto sc = default_rapid_protocol(5);
  EXPECT_DOUBLE_EQ(sc.duration, 60.0);
  const auto s = simulate_scenario(sc, plant);
  const auto e = normalform::error_series(s, plant.setpoints());
  std::size_t excited = 0;
  for (const auto& x : e.e) excited += x.norm() > 1e-5 ? 1 : 0;
  EXPECT_GE(static_cast<double>(excited), 0.95 * static_cast<double>(e.size()));
}

TEST(Apportion, LargestRemainder) {
  EXPECT_EQ(apportion(10, {}), (std::array<std::size_t, 3>{7, 2, 1}));
  EXPECT_EQ(apportion(3, {}), (std::array<std::size_t, 3>{2, 1, 0}));
  EXPECT_EQ(apportion(5, {1.0, 0.0, 0.0}), (std::array<std::size_t, 3>{5, 0, 0}));
  EXPECT_THROW(SplitFractions({0.5, 0.2, 0.2}).validate(), InputError);
}

TEST(AssignPartitions, SingleClassOfTen) {
  std::vector<std::string> names;
  for (int k = 0; k < 10; ++k) names.push_back("r" + std::to_string(k));
  const std::vector<ScenarioClass> classes(10, ScenarioClass::RapidSmallChanges);
  const auto parts = assign_partitions(names, classes, {}, 9);
  std::map<Partition, int> counts;
  for (auto p : parts) counts[p]++;
  EXPECT_EQ(counts[Partition::Train], 7);
  EXPECT_EQ(counts[Partition::Validation], 2);
  EXPECT_EQ(counts[Partition::Test], 1);
}

TEST(AssignPartitionsProperty, StratifiedDisjointAndCovering) {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> names;
    std::vector<ScenarioClass> classes;
    for (int c = 0; c < 3; ++c) {
      const auto n = 3 + rng.below(8);
      for (std::uint64_t k = 0; k < n; ++k) {
        names.push_back("c" + std::to_string(c) + "_" + std::to_string(k));
        classes.push_back(static_cast<ScenarioClass>(c));
      }
    }
    const auto seed = rng.below(1000);
    const auto parts = assign_partitions(names, classes, {}, seed);
    ASSERT_EQ(parts.size(), names.size());
    EXPECT_EQ(parts, assign_partitions(names, classes, {}, seed));
    std::map<std::pair<ScenarioClass, Partition>, int> seen;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      EXPECT_NE(parts[k], Partition::Ood);
      seen[{classes[k], parts[k]}]++;
    }
    for (int c = 0; c < 3; ++c) {
      for (auto p : {Partition::Train, Partition::Validation, Partition::Test}) {
        EXPECT_GE((seen[{static_cast<ScenarioClass>(c), p}]), 1);
      }
    }
  }
}

TEST(AssignPartitions, InfeasibleStratificationThrows) {
  const std::vector<std::string> names{"a", "b"};
  const std::vector<ScenarioClass> classes(2, ScenarioClass::MagnitudeStep);
  EXPECT_THROW(assign_partitions(names, classes, {}, 1), InputError);
}

TEST(BuildDataset, StratifiedAndDeterministic) {
  const auto plant = droop_plant();
  const auto sc = default_scenarios(4, 3, short_protocol());
  const auto a = build_dataset(sc, {}, plant, 4);
  const auto b = build_dataset(sc, {}, plant, 4);
  ASSERT_EQ(a.records.size(), 9u);
  std::set<std::pair<ScenarioClass, Partition>> cells;
  for (std::size_t k = 0; k < a.records.size(); ++k) {
    cells.insert({a.records[k].cls, a.records[k].partition});
    std::ostringstream sa, sb;
    csv::write_dq(sa, a.records[k].series);
    csv::write_dq(sb, b.records[k].series);
    EXPECT_EQ(sa.str(), sb.str()) << a.records[k].name;
    EXPECT_EQ(a.records[k].partition, b.records[k].partition);
  }
  EXPECT_EQ(cells.size(), 9u);
  EXPECT_EQ(a.partition(Partition::Train).size() + a.partition(Partition::Validation).size() +
                a.partition(Partition::Test).size(),
            9u);
}

TEST(BuildDataset, AllTrainFractions) {
  const auto sc = default_scenarios(4, 1, short_protocol());
  const auto ds = build_dataset(sc, {}, droop_plant(), 4, {{1.0, 0.0, 0.0}});
  for (const auto& r : ds.records) EXPECT_EQ(r.partition, Partition::Train);
}

TEST(BuildDataset, UnderExcitedTrainingRecordThrows) {
  const std::vector<double> flat{1.0};
  const std::vector<Scenario> sc{magnitude_step_scenario(flat, 1.0, 1)};
  EXPECT_THROW(build_dataset(sc, {}, droop_plant(), 1, {{1.0, 0.0, 0.0}}), InputError);
}

TEST(BuildDataset, OodKeptSeparate) {
  const auto plant = droop_plant();
  const auto sc = default_scenarios(4, 1, short_protocol());
  const std::vector<Scenario> ood{ood_load_step_scenario(LoadStepOptions::for_setpoints(plant.setpoints()))};
  const auto ds = build_dataset(sc, ood, plant, 4, {{1.0, 0.0, 0.0}});
  ASSERT_EQ(ds.ood.size(), 1u);
  EXPECT_EQ(ds.ood[0].partition, Partition::Ood);
  for (const auto& r : ds.records) EXPECT_NE(r.name, ds.ood[0].name);
  EXPECT_THROW(build_dataset(ood, {}, plant, 4), InputError);
}

TEST(OodLoadStep, FrequencyDrops) {
  const auto plant = droop_plant();
  const auto sc = ood_load_step_scenario(LoadStepOptions::for_setpoints(plant.setpoints()));
  ASSERT_EQ(sc.events.size(), 3u);
  EXPECT_FALSE(sc.initial.breaker_closed);
  const auto s = simulate_scenario(sc, plant);
  const auto n = static_cast<std::size_t>(std::llround(1.0 / s.dt()));
  const double before = phase_slope(s, 1 * n, 2 * n - 5);
  const double after = phase_slope(s, s.size() - n, s.size());
  EXPECT_LT(after, before);
  EXPECT_LT(after, -1e-3);
}

TEST(OodIslanding, BreakerScript) {
  const auto sc = ood_islanding_scenario();
  EXPECT_TRUE(sc.initial.breaker_closed);
  ASSERT_EQ(sc.events.size(), 1u);
  EXPECT_EQ(sc.events[0].kind, plants::EventKind::Breaker);
  EXPECT_EQ(sc.events[0].value, 0.0);
  ASSERT_TRUE(sc.microgrid.has_value());
  EXPECT_EQ(sc.microgrid->device_P.size(), 2u);
}

}  // namespace
}  // namespace nfid::scenarios
