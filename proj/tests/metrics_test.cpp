#include "nfid/metrics.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "nfid/error.hpp"
#include "fixtures.hpp"
#include "nfid/rng.hpp"

namespace nfid::metrics {
namespace {

constexpr double kPi = std::numbers::pi;

TEST(R2, Examples) {
  const std::vector<double> y{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(r2(y, y), 1.0);
  const std::vector<double> mean(4, 2.5);
  EXPECT_DOUBLE_EQ(r2(y, mean), 0.0);
  // ss_res = 2.5, ss_tot = 5.
  const std::vector<double> half{1.0 + std::sqrt(0.625), 2.0 - std::sqrt(0.625), 3.0 + std::sqrt(0.625),
                                 4.0 - std::sqrt(0.625)};
  EXPECT_NEAR(r2(y, half), 0.5, 1e-14);
}

TEST(R2, ZeroVarianceThrows) {
  const std::vector<double> c(5, 1.0);
  try {
    r2(c, c);
    FAIL() << "expected an error";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("undefined R² (zero variance)"), std::string::npos);
  }
  const std::vector<double> a{1.0, 2.0}, b{1.0};
  EXPECT_THROW(r2(a, b), InputError);
}

TEST(R2Property, AffineInvariance) {
  Rng rng(21);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> y(50), f(50), ys(50), fs(50);
    const double scale = rng.uniform(0.1, 10.0) * (rng.uniform(0, 1) < 0.5 ? -1.0 : 1.0);
    const double shift = rng.uniform(-5, 5);
    for (int k = 0; k < 50; ++k) {
      y[k] = rng.normal();
      f[k] = y[k] + 0.3 * rng.normal();
      ys[k] = scale * y[k] + shift;
      fs[k] = scale * f[k] + shift;
    }
    EXPECT_NEAR(r2(y, f), r2(ys, fs), 1e-12);
    EXPECT_LE(r2(y, f), 1.0);
  }
}

TEST(Spectrum, PeakAtSinusoidFrequency) {
  const double dt = 1e-3;
  std::vector<double> x(4096);
  for (std::size_t k = 0; k < x.size(); ++k) x[k] = std::sin(2.0 * kPi * 50.0 * static_cast<double>(k) * dt);
  const auto s = spectrum(x, dt);
  const auto peak = static_cast<std::size_t>(std::max_element(s.power.begin(), s.power.end()) - s.power.begin());
  EXPECT_EQ(peak, nearest_bin(s, 50.0));
  auto sorted = s.power;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<long>(sorted.size() / 2), sorted.end());
  EXPECT_GE(to_db(s.power[peak]) - to_db(sorted[sorted.size() / 2]), 40.0);
  EXPECT_NEAR(s.frequency.back(), 500.0, 1e-9);
}

TEST(Spectrum, ConstantSignalIsAllDc) {
  const std::vector<double> x(512, 1.7);
  const auto s = spectrum(x, 1e-3);
  EXPECT_NEAR(s.power[0] * s.df, 1.7 * 1.7, 1e-12);
  // Only the rounding residue of the mean removal remains outside DC.
  for (std::size_t k = 1; k < s.power.size(); ++k) EXPECT_LT(s.power[k] * s.df, 1e-25);
}

TEST(Spectrum, ParsevalForBinAlignedTone) {
  const double dt = 1e-3;
  const std::size_t N = 2048;
  const double f = 40.0 / (static_cast<double>(N) * dt);
  std::vector<double> x(N);
  for (std::size_t k = 0; k < N; ++k) x[k] = 0.3 + std::sin(2.0 * kPi * f * static_cast<double>(k) * dt);
  const auto s = spectrum(x, dt);
  double total = 0.0;
  for (double p : s.power) total += p * s.df;
  EXPECT_NEAR(total, 0.09 + 0.5, 0.01 * 0.59);
}

TEST(Spectrum, ShortInputThrows) {
  const std::vector<double> x(255, 0.0);
  EXPECT_THROW(spectrum(x, 1e-3), InputError);
}

TEST(ToDb, Examples) {
  EXPECT_DOUBLE_EQ(to_db(1.0), 0.0);
  EXPECT_DOUBLE_EQ(to_db(100.0), 20.0);
  EXPECT_TRUE(std::isfinite(to_db(0.0)));
}

class Evaluation : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { data_ = new scenarios::Dataset(test::small_dataset(test::normal_form_plant(), 9)); }
  static void TearDownTestSuite() {
    delete data_;
    data_ = nullptr;
  }
  static std::vector<const scenarios::Record*> all() {
    std::vector<const scenarios::Record*> out;
    for (const auto& r : data_->records) out.push_back(&r);
    return out;
  }
  static scenarios::Dataset* data_;
};
scenarios::Dataset* Evaluation::data_ = nullptr;

TEST_F(Evaluation, GeneratorFitsItsOwnData) {
  const auto recs = all();
  const auto rep = evaluate(test::generator_n2(data_->setpoints), recs, data_->dt);
  ASSERT_EQ(rep.records.size(), recs.size());
  for (std::size_t k = 0; k < recs.size(); ++k) {
    EXPECT_EQ(rep.records[k].name, recs[k]->name);
    EXPECT_GE(rep.records[k].r2_d, 0.9999) << recs[k]->name;
    EXPECT_GE(rep.records[k].r2_q, 0.9999) << recs[k]->name;
  }
  std::size_t counted = 0;
  for (const auto& p : rep.partitions) counted += p.records;
  EXPECT_EQ(counted, recs.size());
  EXPECT_FALSE(rep.harmonic_flag());
}

TEST_F(Evaluation, StaticModelExplainsLittle) {
  auto m = normalform::HwNormalForm::zeros(0, data_->setpoints);
  const auto rep = evaluate(m, all(), data_->dt);
  // A constant prediction can never beat the sample mean.
  for (const auto& r : rep.records) {
    EXPECT_LE(r.r2_d, 1e-12) << r.name;
    EXPECT_LE(r.r2_q, 1e-12) << r.name;
  }
}

TEST_F(Evaluation, PartitionMeansArePerRecord) {
  const auto rep = evaluate(test::generator_n2(data_->setpoints), all(), data_->dt);
  for (const auto& p : rep.partitions) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : rep.records) {
      if (r.partition == p.partition) {
        sum += r.r2_d;
        ++n;
      }
    }
    EXPECT_EQ(n, p.records);
    EXPECT_NEAR(p.mean_r2_d, sum / static_cast<double>(n), 1e-15);
  }
}

TEST(EvaluateRecord, FlagsUnpredictedHarmonic) {
  const double dt = 1e-3;
  Rng rng(22);
  std::vector<DqSample> s;
  for (int k = 0; k < 4000; ++k) {
    const double t = k * dt;
    // Measurement noise sets the spectral floor.
    const double mag = 1.0 + 0.05 * std::sin(2.0 * kPi * 2.0 * t) + 0.01 * std::sin(2.0 * kPi * 150.0 * t) +
                       1e-5 * rng.normal();
    s.push_back({t, std::polar(mag, 0.1 * std::sin(2.0 * kPi * t)), {}});
  }
  const DqSeries series(std::move(s), dt);
  const auto model = normalform::discretize(normalform::HwNormalForm::zeros(0, {0.5, 0.0, 1.0}), dt);
  const auto r = evaluate_record(model, series);
  ASSERT_EQ(r.harmonics.size(), 3u);
  EXPECT_EQ(r.harmonics[0].frequency_hz, 150.0);
  EXPECT_TRUE(r.harmonics[0].flagged);
  EXPECT_GE(r.harmonics[0].deficit_db, 10.0);
  EXPECT_FALSE(r.harmonics[1].flagged);
  EXPECT_FALSE(r.harmonics[2].flagged);
}

TEST(EvaluateRecord, SamplingMismatchThrows) {
  std::vector<DqSample> s;
  for (int k = 0; k < 10; ++k) s.push_back({k * 1e-3, cplx(1.0, 0.01 * k), {}});
  const auto model = normalform::discretize(normalform::HwNormalForm::zeros(0, {0.5, 0.0, 1.0}), 2e-3);
  EXPECT_THROW(evaluate_record(model, DqSeries(std::move(s), 1e-3)), InputError);
}

}  // namespace
}  // namespace nfid::metrics
