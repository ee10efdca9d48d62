#include "nfid/normalform.hpp"

#include <gtest/gtest.h>

#include <unsupported/Eigen/MatrixFunctions>
#include <cmath>
#include <type_traits>

#include "nfid/error.hpp"
#include "nfid/plants.hpp"
#include "fixtures.hpp"
#include "test_util.hpp"

namespace nfid::normalform {
namespace {

HwNormalForm generator() { return test::generator_n2(); }

Eigen::MatrixXd random_stable(Rng& rng, int n) {
  Eigen::MatrixXd M(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) M(r, c) = rng.uniform(-5.0, 5.0);
  // Shift so every eigenvalue has real part <= -1.
  const Eigen::VectorXcd eig = M.eigenvalues();
  double top = -1e300;
  for (const auto& l : eig) top = std::max(top, l.real());
  return M - (top + 1.0 + rng.uniform(0.0, 5.0)) * Eigen::MatrixXd::Identity(n, n);
}

HwNormalForm random_model(Rng& rng, int n) {
  auto m = HwNormalForm::zeros(n, {rng.uniform(0.0, 1.0), rng.uniform(-0.2, 0.2), rng.uniform(0.9, 1.1)});
  if (n > 0) m.A = random_stable(rng, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < 3; ++c) m.B(r, c) = rng.uniform(-3.0, 3.0);
  for (int k = 0; k < n; ++k) m.C[k] = test::random_complex(rng);
  for (int k = 0; k < 3; ++k) m.D[k] = test::random_complex(rng, 0.5);
  return m;
}

ErrorSeries random_inputs(Rng& rng, std::size_t n, double dt, double scale = 0.05) {
  ErrorSeries e;
  e.dt = dt;
  for (std::size_t k = 0; k < n; ++k) {
    e.e.push_back(scale * Vector3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)));
  }
  return e;
}

static_assert(std::is_same_v<decltype(HwNormalForm::A), Eigen::MatrixXd>);
static_assert(std::is_same_v<decltype(HwNormalForm::B), Eigen::MatrixXd>);
static_assert(std::is_same_v<decltype(HwDiscrete::Ad), Eigen::MatrixXd>);
static_assert(std::is_same_v<decltype(HwDiscrete::Bd), Eigen::MatrixXd>);

TEST(ErrorCoordinates, Examples) {
  EXPECT_EQ(error_coordinates(1.0, 1.0, {1.0, 0.0, 1.0}), Vector3(0.0, 0.0, 0.0));
  const auto e = error_coordinates(1.0, {0.5, -0.5}, {0.0, 0.0, 1.0});
  EXPECT_DOUBLE_EQ(e[0], 0.5);
  EXPECT_DOUBLE_EQ(e[1], 0.5);
  EXPECT_DOUBLE_EQ(e[2], 0.0);
  const auto f = error_coordinates(0.9, 0.0, {0.0, 0.0, 1.0});
  EXPECT_DOUBLE_EQ(f[0], 0.0);
  EXPECT_DOUBLE_EQ(f[1], 0.0);
  EXPECT_NEAR(f[2], -0.19, 1e-15);
}

TEST(Discretize, LimitCases) {
  auto m = HwNormalForm::zeros(2, {});
  m.B << 1.0, 2.0, 3.0, -1.0, 0.5, 4.0;
  const auto d = discretize(m, 0.01);
  EXPECT_LT((d.Ad - Eigen::MatrixXd::Identity(2, 2)).norm(), 1e-15);
  EXPECT_LT((d.Bd - 0.01 * m.B).norm(), 1e-15);

  auto s = HwNormalForm::zeros(1, {});
  s.A << -1.0;
  s.B << 2.0, -1.0, 0.5;
  const auto ds = discretize(s, 1.0);
  EXPECT_NEAR(ds.Ad(0, 0), std::exp(-1.0), 1e-15);
  EXPECT_LT((ds.Bd - (1.0 - std::exp(-1.0)) * s.B).norm(), 1e-14);
}

TEST(Discretize, MatchesFineRk4) {
  Rng rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    const auto m = random_model(rng, 3);
    const double dt = 1e-3;
    const auto d = discretize(m, dt);
    const auto e = random_inputs(rng, 1000, dt, 1.0);
    Eigen::VectorXd xd = Eigen::VectorXd::Zero(3), xc = xd;
    double worst = 0.0;
    for (std::size_t k = 0; k < e.size(); ++k) {
      xd = d.Ad * xd + d.Bd * e.e[k];
      const Eigen::VectorXd u = e.e[k];
      xc = plants::rk4([&](double, const Eigen::VectorXd& x) -> Eigen::VectorXd { return m.A * x + m.B * u; },
                       xc, 0.0, dt, dt / 100.0);
      worst = std::max(worst, (xd - xc).lpNorm<Eigen::Infinity>());
    }
    EXPECT_LT(worst, 1e-8);
  }
}

TEST(ToContinuous, RoundTrip) {
  Rng rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = random_model(rng, 1 + static_cast<int>(rng.below(4)));
    Conversion used{};
    const auto back = to_continuous(discretize(m, 1e-3), &used);
    EXPECT_EQ(used, Conversion::Logarithm);
    EXPECT_LT((back.A - m.A).norm(), 1e-8 * (1.0 + m.A.norm()));
    EXPECT_LT((back.B - m.B).norm(), 1e-8 * (1.0 + m.B.norm()));
  }
}

TEST(ToContinuous, NegativeRealEigenvalueFallsBack) {
  HwDiscrete d;
  d.Ad = Eigen::MatrixXd::Constant(1, 1, -0.5);
  d.Bd = Eigen::MatrixXd::Ones(1, 3);
  d.C = RowVectorXc::Ones(1);
  d.dt = 1e-3;
  Conversion used{};
  const auto m = to_continuous(d, &used);
  EXPECT_EQ(used, Conversion::Bilinear);
  EXPECT_TRUE(m.A.allFinite());
}

TEST(Validate, RejectsInconsistentDimensions) {
  auto m = HwNormalForm::zeros(2, {});
  m.B = Eigen::MatrixXd::Zero(3, 3);
  EXPECT_THROW(m.validate(), InputError);
  auto n = HwNormalForm::zeros(1, {});
  n.A(0, 0) = std::nan("");
  EXPECT_THROW(n.validate(), InputError);
}

TEST(OpenLoop, ZeroInputIsFixedPoint) {
  Rng rng(23);
  const auto d = discretize(random_model(rng, 3), 1e-3);
  ErrorSeries e{std::vector<Vector3>(200, Vector3::Zero()), 1e-3};
  const cplx theta0{0.01, 0.4};
  const auto r = simulate_open_loop(d, e, theta0, Eigen::VectorXd::Zero(3));
  for (std::size_t k = 0; k < e.size(); ++k) {
    EXPECT_EQ(r.phase.theta[k], theta0);
    EXPECT_EQ(r.v[k], std::exp(theta0));
  }
}

TEST(OpenLoop, FeedthroughRamp) {
  auto m = HwNormalForm::zeros(0, {});
  m.D << 0.0, 0.0, cplx(-2.0, 0.5);
  const double c = 0.03, dt = 1e-3;
  ErrorSeries e{std::vector<Vector3>(500, Vector3(0.0, 0.0, c)), dt};
  const cplx theta0{0.0, 0.2};
  for (auto rule : {PhaseRule::Trapezoidal, PhaseRule::ForwardEuler}) {
    const auto r = simulate_open_loop(discretize(m, dt), e, theta0, Eigen::VectorXd(), rule);
    for (std::size_t k = 0; k < e.size(); ++k) {
      EXPECT_LT(std::abs(r.phase.theta[k] - (theta0 + m.D[2] * c * (static_cast<double>(k) * dt))), 1e-12);
    }
  }
}

TEST(OpenLoop, DtMismatchThrows) {
  const auto d = discretize(HwNormalForm::zeros(1, {}), 1e-3);
  ErrorSeries e{std::vector<Vector3>(5, Vector3::Zero()), 2e-3};
  EXPECT_THROW(simulate_open_loop(d, e, 0.0, Eigen::VectorXd::Zero(1)), InputError);
}

TEST(OpenLoopProperty, LinearInInput) {
  Rng rng(24);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = static_cast<int>(rng.below(5));
    const auto d = discretize(random_model(rng, n), 1e-3);
    const auto e1 = random_inputs(rng, 300, 1e-3), e2 = random_inputs(rng, 300, 1e-3);
    const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
    ErrorSeries mix{{}, 1e-3};
    for (std::size_t k = 0; k < 300; ++k) mix.e.push_back(a * e1.e[k] + b * e2.e[k]);
    const cplx th0{rng.uniform(-0.1, 0.1), rng.uniform(-3, 3)};
    const Eigen::VectorXd x0 = Eigen::VectorXd::Zero(n);
    const auto r1 = simulate_open_loop(d, e1, th0, x0);
    const auto r2 = simulate_open_loop(d, e2, th0, x0);
    const auto rm = simulate_open_loop(d, mix, th0, x0);
    for (std::size_t k = 0; k < 300; ++k) {
      const cplx expect = a * (r1.phase.theta[k] - th0) + b * (r2.phase.theta[k] - th0);
      EXPECT_LT(std::abs(rm.phase.theta[k] - th0 - expect), 1e-10);
    }
    ErrorSeries twice{{}, 1e-3};
    for (const auto& x : e1.e) twice.e.push_back(2.0 * x);
    const auto r2x = simulate_open_loop(d, twice, th0, x0);
    for (std::size_t k = 0; k < 300; ++k) {
      EXPECT_LT(std::abs((r2x.phase.theta[k] - th0) - 2.0 * (r1.phase.theta[k] - th0)), 1e-12);
    }
  }
}

// Exact Theta(T) for constant input from x(0) = 0:
// int_0^T x = A^-1 (A^-1 (e^{AT} - I) - T I) B e.
cplx exact_phase(const HwNormalForm& m, const Vector3& e, double T, cplx theta0) {
  const auto n = m.A.rows();
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd Ainv = m.A.inverse();
  const Eigen::MatrixXd E = (m.A * T).exp();
  const Eigen::VectorXd integral = Ainv * (Ainv * (E - I) - T * I) * m.B * e;
  cplx out = theta0 + (m.D * e.cast<cplx>())(0, 0) * T;
  for (Eigen::Index k = 0; k < n; ++k) out += m.C[k] * integral[k];
  return out;
}

TEST(OpenLoopProperty, TrapezoidalRuleIsSecondOrder) {
  Rng rng(25);
  for (int trial = 0; trial < 5; ++trial) {
    auto m = random_model(rng, 2);
    m.A = -Eigen::MatrixXd::Identity(2, 2) * 3.0 + 0.5 * m.A / (1.0 + m.A.norm());
    const Vector3 e(0.02, -0.01, 0.03);
    const double T = 1.0;
    auto err = [&](double dt, PhaseRule rule) {
      const auto n = static_cast<std::size_t>(std::llround(T / dt)) + 1;
      ErrorSeries es{std::vector<Vector3>(n, e), dt};
      const auto r = simulate_open_loop(discretize(m, dt), es, 0.0, Eigen::VectorXd::Zero(2), rule);
      return std::abs(r.phase.theta.back() - exact_phase(m, e, T, 0.0));
    };
    const double trap = std::log2(err(1e-2, PhaseRule::Trapezoidal) / err(5e-3, PhaseRule::Trapezoidal));
    EXPECT_GE(trap, 1.9);
    const double euler = std::log2(err(1e-2, PhaseRule::ForwardEuler) / err(5e-3, PhaseRule::ForwardEuler));
    EXPECT_GT(euler, 0.9);
    EXPECT_LT(euler, 1.1);
  }
}

TEST(Markov, LeadingParameters) {
  Rng rng(26);
  const auto d = discretize(random_model(rng, 2), 1e-3);
  const auto h = markov_parameters(d, 3);
  ASSERT_EQ(h.size(), 3u);
  EXPECT_LT((h[0] - d.D).norm(), 1e-15);
  EXPECT_LT((h[1] - d.C * d.Bd.cast<cplx>()).norm(), 1e-14);
  EXPECT_LT((h[2] - d.C * (d.Ad * d.Bd).cast<cplx>()).norm(), 1e-14);
}

TEST(Markov, SimilarityInvariant) {
  Rng rng(27);
  for (int trial = 0; trial < 10; ++trial) {
    const auto m = random_model(rng, 3);
    Eigen::MatrixXd T = Eigen::MatrixXd::Identity(3, 3);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) T(r, c) += 0.4 * rng.uniform(-1, 1);
    const auto h1 = markov_parameters(discretize(m, 1e-3), 20);
    const auto h2 = markov_parameters(discretize(similarity_transform(m, T), 1e-3), 20);
    for (int k = 0; k < 20; ++k) EXPECT_LT((h1[k] - h2[k]).norm(), 1e-9 * (1.0 + h1[k].norm()));
  }
}

plants::NetworkConfig stiff_bus_net() {
  plants::NetworkConfig net;
  net.grid_admittance = {0.0, -10.0};
  return net;
}

TEST(Equilibrium, ZeroErrorOnMatchingStiffBus) {
  const auto m = generator();
  const auto eq = equilibrium(m, stiff_bus_net(), plants::GridState{});
  ASSERT_TRUE(eq);
  EXPECT_LT(eq->e.norm(), 1e-10);
  EXPECT_LT(eq->xc.norm(), 1e-10);
  EXPECT_NEAR(std::exp(eq->theta.real()), m.sp.v, 1e-10);
  // Angle that transfers P^s over X = 0.1 from a unit slack.
  EXPECT_NEAR(eq->theta.imag(), std::asin(m.sp.P * 0.1 / m.sp.v), 1e-9);
}

TEST(Equilibrium, MatchedResistiveLoad) {
  auto m = generator();
  m.sp = {0.5, 0.0, 1.0};
  plants::GridState g;
  g.breaker_closed = false;
  g.load_conductance = m.sp.P / m.sp.nu();
  const auto eq = equilibrium(m, stiff_bus_net(), g);
  ASSERT_TRUE(eq);
  EXPECT_LT(eq->e.norm(), 1e-10);
  EXPECT_NEAR(eq->omega, 0.0, 1e-10);
}

TEST(Equilibrium, DetunedStiffBusSatisfiesFullSystem) {
  const auto m = generator();
  plants::GridState g;
  g.slack_magnitude = 1.04;
  const auto eq = equilibrium(m, stiff_bus_net(), g);
  ASSERT_TRUE(eq);
  EXPECT_GT(eq->e.norm(), 1e-3);
  // Independent residual: recompute e from the network and check eta, dx/dt.
  const cplx v = std::exp(eq->theta);
  const cplx i = plants::couple(v, plants::StiffBus{g.slack_voltage(0.0), {0.0, -10.0}});
  const Vector3 e = error_coordinates(v, i, m.sp);
  const cplx eta = (m.C * eq->xc.cast<cplx>())(0, 0) + (m.D * e.cast<cplx>())(0, 0);
  EXPECT_LT(std::abs(eta), 1e-10);
  EXPECT_LT((m.A * eq->xc + m.B * e).norm(), 1e-10);
  EXPECT_LT(eq->residual, 1e-10);
}

TEST(ClosedLoop, StiffBusEquilibriumIsConstant) {
  const auto m = generator();
  const auto eq = equilibrium(m, stiff_bus_net(), plants::GridState{});
  ASSERT_TRUE(eq);
  const auto r = simulate_closed_loop(discretize(m, 1e-3), stiff_bus_net(), plants::GridState{}, {}, 2.0,
                                      eq->theta, eq->xc);
  for (const auto& s : r.series.samples()) EXPECT_LT(std::abs(s.v - std::exp(eq->theta)), 1e-10);
  EXPECT_FALSE(r.first_out_of_band);
}

TEST(ClosedLoop, LoadStepSettlesAtNewEquilibrium) {
  auto m = generator();
  m.sp = {0.5, 0.0, 1.0};
  plants::GridState g;
  g.breaker_closed = false;
  g.load_conductance = 0.5;
  const auto eq0 = equilibrium(m, stiff_bus_net(), g);
  ASSERT_TRUE(eq0);
  const std::vector<plants::GridEvent> ev{{0.5, plants::EventKind::LoadConductance, 0.6}};
  const auto r = simulate_closed_loop(discretize(m, 1e-3), stiff_bus_net(), g, ev, 3.0, eq0->theta, eq0->xc);
  auto g1 = g;
  g1.load_conductance = 0.6;
  const auto eq1 = equilibrium(m, stiff_bus_net(), g1);
  ASSERT_TRUE(eq1);
  const auto& s = r.series;
  const std::size_t n = s.size();
  EXPECT_NEAR(std::abs(s[n - 1].v), std::exp(eq1->theta.real()), 1e-6);
  const double omega = std::arg(s[n - 1].v / s[n - 101].v) / (100.0 * s.dt());
  EXPECT_NEAR(omega, eq1->omega, 1e-5 * (1.0 + std::abs(eq1->omega)));
}

TEST(ClosedLoopProperty, FrameCovariance) {
  Rng rng(28);
  const auto m = generator();
  const auto d = discretize(m, 1e-3);
  const auto eq = equilibrium(m, stiff_bus_net(), plants::GridState{});
  ASSERT_TRUE(eq);
  const std::vector<plants::GridEvent> ev{{0.3, plants::EventKind::SlackMagnitude, 1.03},
                                          {0.6, plants::EventKind::SlackFrequency, 0.1}};
  for (int trial = 0; trial < 5; ++trial) {
    const double alpha = rng.uniform(-3.0, 3.0);
    plants::GridState g;
    const auto a = simulate_closed_loop(d, stiff_bus_net(), g, ev, 1.0, eq->theta, eq->xc);
    g.slack_angle = alpha;
    const auto b = simulate_closed_loop(d, stiff_bus_net(), g, ev, 1.0, eq->theta + cplx(0.0, alpha), eq->xc);
    ASSERT_EQ(a.series.size(), b.series.size());
    const cplx rot = std::polar(1.0, alpha);
    for (std::size_t k = 0; k < a.series.size(); ++k) {
      EXPECT_LT(std::abs(b.series[k].v - rot * a.series[k].v), 1e-10);
      EXPECT_NEAR(std::abs(b.series[k].v), std::abs(a.series[k].v), 1e-10);
      const auto ea = error_coordinates(a.series[k].v, a.series[k].i, m.sp);
      const auto eb = error_coordinates(b.series[k].v, b.series[k].i, m.sp);
      EXPECT_LT((ea - eb).norm(), 1e-10);
    }
  }
}

TEST(ClosedLoop, UnstableModelReportsBandExit) {
  auto m = generator();
  m.A(0, 0) = 15.0;
  const auto d = discretize(m, 1e-3);
  ClosedLoopOptions opts;
  opts.throw_on_nonfinite = false;
  const auto r = simulate_closed_loop(d, stiff_bus_net(), plants::GridState{}, {}, 5.0, 0.05, Eigen::Vector2d(1e-3, 0.0), opts);
  ASSERT_TRUE(r.first_out_of_band);
  EXPECT_GT(*r.first_out_of_band, 0.0);
}

}  // namespace
}  // namespace nfid::normalform
