#include "nfid/signal.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "nfid/error.hpp"
#include "test_util.hpp"

namespace nfid {
namespace {

constexpr double kPi = std::numbers::pi;

std::array<double, 3> balanced(double amplitude, double phi, double angle) {
  return {amplitude * std::cos(angle + phi), amplitude * std::cos(angle + phi - 2.0 * kPi / 3.0),
          amplitude * std::cos(angle + phi + 2.0 * kPi / 3.0)};
}

DqSeries voltage_series(const std::vector<cplx>& v, double dt) {
  std::vector<DqSample> s;
  for (std::size_t k = 0; k < v.size(); ++k) s.push_back({static_cast<double>(k) * dt, v[k], {}});
  return DqSeries(std::move(s), dt);
}

TEST(Park, AlignedUnitSetMapsToOne) {
  const cplx v = park_transform({std::cos(0.0), std::cos(-2.0 * kPi / 3.0), std::cos(2.0 * kPi / 3.0)}, 0.0);
  EXPECT_NEAR(v.real(), 1.0, 1e-15);
  EXPECT_NEAR(v.imag(), 0.0, 1e-15);
}

TEST(Park, ZeroSignal) {
  for (double a : {0.0, 0.7, -2.0}) EXPECT_EQ(park_transform({0.0, 0.0, 0.0}, a), cplx(0.0, 0.0));
}

TEST(Park, ShiftedSetByHand) {
  // Amplitude-invariant matrix applied to the sampled cosines.
  const auto abc = balanced(0.95, 0.1, 0.0);
  const double d = 2.0 / 3.0 * (abc[0] + std::cos(-2.0 * kPi / 3.0) * abc[1] + std::cos(2.0 * kPi / 3.0) * abc[2]);
  const double q = 2.0 / 3.0 * (std::sin(2.0 * kPi / 3.0) * abc[1] - std::sin(2.0 * kPi / 3.0) * abc[2]);
  const cplx v = park_transform(abc, 0.0);
  EXPECT_NEAR(v.real(), d, 1e-14);
  EXPECT_NEAR(v.imag(), q, 1e-14);
  EXPECT_NEAR(std::abs(v - std::polar(0.95, 0.1)), 0.0, 1e-14);
}

TEST(Park, NonFiniteInputThrows) {
  EXPECT_THROW(park_transform({std::nan(""), 0.0, 0.0}, 0.0), InputError);
  EXPECT_THROW(inverse_park({1.0, std::numeric_limits<double>::infinity()}, 0.0), InputError);
}

TEST(Park, UnbalancedInputWarns) {
  std::string seen;
  auto old = set_warning_handler([&](const std::string& m) { seen = m; });
  park_transform({1.0, 0.0, 0.0}, 0.0);
  set_warning_handler(old);
  EXPECT_NE(seen.find("unbalanced"), std::string::npos);
}

TEST(InversePark, Examples) {
  const auto abc = inverse_park({1.0, 0.0}, 0.0);
  EXPECT_NEAR(abc[0], 1.0, 1e-15);
  EXPECT_NEAR(abc[1], -0.5, 1e-15);
  EXPECT_NEAR(abc[2], -0.5, 1e-15);
  for (double x : inverse_park({0.0, 0.0}, 1.3)) EXPECT_EQ(x, 0.0);
  const cplx v = std::polar(0.8, 0.3);
  EXPECT_LT(std::abs(park_transform(inverse_park(v, 0.0), 0.0) - v), 1e-12);
}

TEST(ParkProperty, RoundTripAndRotationCovariance) {
  Rng rng(11);
  for (int trial = 0; trial < 2000; ++trial) {
    const cplx v = test::random_complex(rng, 2.0);
    const double a = rng.uniform(-50.0, 50.0);
    const double delta = rng.uniform(-kPi, kPi);
    const auto abc = inverse_park(v, a);
    EXPECT_LT(std::abs(park_transform(abc, a) - v), 1e-12) << "v=" << v << " a=" << a;
    const cplx rotated = park_transform(abc, a + delta);
    EXPECT_LT(std::abs(rotated - std::exp(cplx(0.0, -delta)) * v), 1e-12);
  }
}

TEST(ComplexPower, Examples) {
  auto s = complex_power(1.0, 1.0);
  EXPECT_DOUBLE_EQ(s.P, 1.0);
  EXPECT_DOUBLE_EQ(s.Q, 0.0);
  EXPECT_DOUBLE_EQ(s.nu, 1.0);
  s = complex_power(1.0, {0.5, -0.5});
  EXPECT_DOUBLE_EQ(s.P, 0.5);
  EXPECT_DOUBLE_EQ(s.Q, 0.5);
  EXPECT_DOUBLE_EQ(s.nu, 1.0);
  const cplx r = std::polar(1.0, 0.77);
  s = complex_power(r, r);
  EXPECT_NEAR(s.P, 1.0, 1e-15);
  EXPECT_NEAR(s.Q, 0.0, 1e-15);
}

TEST(ComplexPowerProperty, RotationInvariance) {
  Rng rng(12);
  for (int trial = 0; trial < 1000; ++trial) {
    const cplx v = test::random_complex(rng, 1.5);
    const cplx i = test::random_complex(rng, 1.5);
    const cplx rot = std::polar(1.0, rng.uniform(-kPi, kPi));
    const auto a = complex_power(v, i);
    const auto b = complex_power(v * rot, i * rot);
    EXPECT_NEAR(a.P, b.P, 1e-12);
    EXPECT_NEAR(a.Q, b.Q, 1e-12);
    EXPECT_NEAR(a.nu, b.nu, 1e-12);
  }
}

TEST(ToPhase, ConstantSeries) {
  for (double mag : {1.0, 0.5}) {
    const auto ph = to_phase(voltage_series(std::vector<cplx>(50, mag), 1e-3));
    for (const auto& th : ph.theta) {
      EXPECT_NEAR(th.real(), std::log(mag), 1e-15);
      EXPECT_EQ(th.imag(), 0.0);
    }
  }
  EXPECT_NEAR(std::log(0.5), -0.6931, 1e-4);
}

TEST(ToPhase, RotatingVoltageUnwrapsExactly) {
  const double dt = 1e-3, w = 2.0 * kPi * 130.0;  // w dt ~ 0.82 < pi
  std::vector<cplx> v;
  for (int k = 0; k < 3000; ++k) v.push_back(std::exp(cplx(0.0, w * k * dt)));
  const auto ph = to_phase(voltage_series(v, dt));
  for (std::size_t k = 0; k < v.size(); ++k) {
    EXPECT_NEAR(ph.theta[k].imag(), w * static_cast<double>(k) * dt, 1e-9);
    if (k) EXPECT_GT(ph.theta[k].imag(), ph.theta[k - 1].imag());
  }
}

TEST(ToPhase, CollapsedVoltageThrows) {
  std::vector<cplx> v(10, 1.0);
  v[4] = 1e-7;
  try {
    to_phase(voltage_series(v, 1e-3));
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("voltage magnitude too small for complex phase"), std::string::npos);
  }
}

// Random walks in log-magnitude and angle with per-step angle change below pi.
std::vector<cplx> random_trajectory(Rng& rng, std::size_t n) {
  std::vector<cplx> v;
  double logmag = rng.uniform(-1.0, 0.5), angle = rng.uniform(-kPi, kPi);
  for (std::size_t k = 0; k < n; ++k) {
    logmag = std::clamp(logmag + 0.05 * rng.normal(), -5.0, 2.0);
    angle += rng.uniform(-0.99, 0.99) * kPi;
    v.push_back(std::exp(cplx(logmag, angle)));
  }
  return v;
}

TEST(ToPhaseProperty, ExpRoundTripAndContinuity) {
  Rng rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    const auto v = random_trajectory(rng, 200);
    const auto ph = to_phase(voltage_series(v, 1e-3));
    const auto back = exp_phase(ph);
    for (std::size_t k = 0; k < v.size(); ++k) {
      EXPECT_LT(std::abs(back[k] - v[k]) / std::abs(v[k]), 1e-12);
      if (k) EXPECT_LT(std::abs(ph.theta[k].imag() - ph.theta[k - 1].imag()), kPi);
    }
  }
}

TEST(ComplexFrequency, AffinePhases) {
  const double dt = 1e-3;
  for (cplx slope : {cplx(0.0, 2.0 * kPi * 0.2), cplx(-3.0, 0.0), cplx(0.0, 0.0), cplx(1.5, -7.0)}) {
    PhaseSeries ph;
    ph.dt = dt;
    for (int k = 0; k < 40; ++k) ph.theta.push_back(cplx(0.1, -0.4) + slope * (k * dt));
    for (const auto& eta : complex_frequency(ph)) EXPECT_LT(std::abs(eta - slope), 1e-9);
  }
}

TEST(ComplexFrequency, TooShortThrows) {
  PhaseSeries ph{{0.0, 0.0}, 1e-3};
  EXPECT_THROW(complex_frequency(ph), InputError);
}

TEST(Downsample, CountsAndIdentity) {
  const double dt = 50e-6;
  std::vector<cplx> v(20000, cplx(1.0, 0.0));
  const auto s = voltage_series(v, dt);
  const auto d = downsample(s, 1e-3);
  EXPECT_EQ(d.size(), 1000u);
  EXPECT_NEAR(d.dt(), 1e-3, 1e-15);
  const auto same = downsample(s, dt);
  ASSERT_EQ(same.size(), s.size());
  for (std::size_t k = 0; k < s.size(); ++k) EXPECT_EQ(same[k].v, s[k].v);
}

TEST(Downsample, NonIntegerRatioThrows) {
  const auto s = voltage_series(std::vector<cplx>(100, 1.0), 1e-3);
  EXPECT_THROW(downsample(s, 1.5e-3), InputError);
}

TEST(Downsample, SlowSinusoidPassesThrough) {
  const double dt = 50e-6, f = 10.0;
  std::vector<cplx> v;
  for (int k = 0; k < 40000; ++k) {
    const double t = k * dt;
    v.push_back({1.0 + 0.1 * std::sin(2.0 * kPi * f * t), 0.05 * std::cos(2.0 * kPi * f * t)});
  }
  const auto d = downsample(voltage_series(v, dt), 1e-3);
  for (std::size_t k = 0; k < d.size(); ++k) {
    const double t = d[k].t;
    EXPECT_NEAR(d[k].v.real(), 1.0 + 0.1 * std::sin(2.0 * kPi * f * t), 1e-3) << "t=" << t;
    EXPECT_NEAR(d[k].v.imag(), 0.05 * std::cos(2.0 * kPi * f * t), 1e-3);
  }
}

TEST(DqSeries, RejectsNonUniformSteps) {
  std::vector<DqSample> s{{0.0, 1.0, 0.0}, {1e-3, 1.0, 0.0}, {2.5e-3, 1.0, 0.0}};
  EXPECT_THROW(DqSeries(s, 1e-3), InputError);
  EXPECT_THROW(DqSeries({}, 1e-3), InputError);
}

}  // namespace
}  // namespace nfid
