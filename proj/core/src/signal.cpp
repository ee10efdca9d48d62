#include "nfid/signal.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "nfid/error.hpp"

namespace nfid {
namespace {

constexpr double kTwoPiThirds = 2.0 * std::numbers::pi / 3.0;

bool finite(cplx z) { return std::isfinite(z.real()) && std::isfinite(z.imag()); }

struct Biquad {
  double b0, b1, b2, a1, a2;
};

Biquad butterworth2(double dt, double cutoff_hz) {
  const double k = std::tan(std::numbers::pi * cutoff_hz * dt);
  const double k2 = k * k;
  const double norm = 1.0 / (1.0 + std::numbers::sqrt2 * k + k2);
  Biquad f{};
  f.b0 = k2 * norm;
  f.b1 = 2.0 * f.b0;
  f.b2 = f.b0;
  f.a1 = 2.0 * (k2 - 1.0) * norm;
  f.a2 = (1.0 - std::numbers::sqrt2 * k + k2) * norm;
  return f;
}

// Transposed direct form II, started in the steady state of x[0].
void filter_inplace(const Biquad& f, std::vector<double>& x) {
  if (x.empty()) return;
  double z2 = (f.b2 - f.a2) * x.front();
  double z1 = (f.b1 - f.a1) * x.front() + z2;
  for (double& s : x) {
    const double in = s;
    const double y = f.b0 * in + z1;
    z1 = f.b1 * in - f.a1 * y + z2;
    z2 = f.b2 * in - f.a2 * y;
    s = y;
  }
}

}  // namespace

DqSeries::DqSeries(std::vector<DqSample> samples, double dt)
    : samples_(std::move(samples)), dt_(dt) {
  if (samples_.empty()) throw InputError("DqSeries: empty series");
  if (!(dt_ > 0.0) || !std::isfinite(dt_)) throw InputError("DqSeries: dt must be positive");
  for (std::size_t k = 0; k < samples_.size(); ++k) {
    const auto& s = samples_[k];
    if (!std::isfinite(s.t) || !finite(s.v) || !finite(s.i)) {
      std::ostringstream os;
      os << "DqSeries: non-finite sample at index " << k;
      throw InputError(os.str());
    }
    if (k > 0) {
      const double step = s.t - samples_[k - 1].t;
      if (std::abs(step - dt_) > 1e-9 * std::max(dt_, std::abs(s.t))) {
        std::ostringstream os;
        os << "DqSeries: non-uniform time step at index " << k << " (step " << step
           << ", expected " << dt_ << ")";
        throw InputError(os.str());
      }
    }
  }
}

std::vector<cplx> DqSeries::voltages() const {
  std::vector<cplx> out(samples_.size());
  std::transform(samples_.begin(), samples_.end(), out.begin(),
                 [](const DqSample& s) { return s.v; });
  return out;
}

std::vector<cplx> DqSeries::currents() const {
  std::vector<cplx> out(samples_.size());
  std::transform(samples_.begin(), samples_.end(), out.begin(),
                 [](const DqSample& s) { return s.i; });
  return out;
}

cplx park_transform(const std::array<double, 3>& abc, double angle,
                    double balance_tolerance) {
  const auto [a, b, c] = abc;
  if (!std::isfinite(a) || !std::isfinite(b) || !std::isfinite(c) || !std::isfinite(angle)) {
    throw InputError("park_transform: non-finite input");
  }
  const double peak = std::max({std::abs(a), std::abs(b), std::abs(c)});
  if (peak > 0.0 && std::abs(a + b + c) > balance_tolerance * peak) {
    warn("park_transform: unbalanced abc input (zero-sequence component ignored)");
  }
  const double d = (2.0 / 3.0) * (a * std::cos(angle) + b * std::cos(angle - kTwoPiThirds) +
                                  c * std::cos(angle + kTwoPiThirds));
  const double q = -(2.0 / 3.0) * (a * std::sin(angle) + b * std::sin(angle - kTwoPiThirds) +
                                   c * std::sin(angle + kTwoPiThirds));
  return {d, q};
}

std::array<double, 3> inverse_park(cplx v, double angle) {
  if (!finite(v) || !std::isfinite(angle)) throw InputError("inverse_park: non-finite input");
  auto phase = [&](double shift) {
    return v.real() * std::cos(angle + shift) - v.imag() * std::sin(angle + shift);
  };
  return {phase(0.0), phase(-kTwoPiThirds), phase(kTwoPiThirds)};
}

PowerSample complex_power(cplx v, cplx i) {
  const cplx s = v * std::conj(i);
  return {s.real(), s.imag(), std::norm(v)};
}

PhaseSeries to_phase(std::span<const cplx> v, double dt, double epsilon_v) {
  PhaseSeries out;
  out.dt = dt;
  out.theta.resize(v.size());
  double prev_arg = 0.0;
  double unwrapped = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) {
    const double mag = std::abs(v[k]);
    if (!(mag > epsilon_v)) {
      std::ostringstream os;
      os << "voltage magnitude too small for complex phase (|v| = " << mag << " at index " << k
         << ")";
      throw NumericalError(os.str());
    }
    const double arg = std::arg(v[k]);
    if (k == 0) {
      unwrapped = arg;
    } else {
      double jump = arg - prev_arg;
      jump -= 2.0 * std::numbers::pi * std::round(jump / (2.0 * std::numbers::pi));
      unwrapped += jump;
    }
    prev_arg = arg;
    out.theta[k] = {std::log(mag), unwrapped};
  }
  return out;
}

PhaseSeries to_phase(const DqSeries& series, double epsilon_v) {
  const auto v = series.voltages();
  return to_phase(v, series.dt(), epsilon_v);
}

std::vector<cplx> exp_phase(const PhaseSeries& phase) {
  std::vector<cplx> v(phase.size());
  std::transform(phase.theta.begin(), phase.theta.end(), v.begin(),
                 [](cplx th) { return std::exp(th); });
  return v;
}

std::vector<cplx> complex_frequency(const PhaseSeries& phase) {
  const auto& th = phase.theta;
  const std::size_t n = th.size();
  if (n < 3) throw InputError("complex_frequency: need at least 3 samples");
  if (!(phase.dt > 0.0)) throw InputError("complex_frequency: dt must be positive");
  const double h = phase.dt;
  std::vector<cplx> eta(n);
  eta[0] = (-3.0 * th[0] + 4.0 * th[1] - th[2]) / (2.0 * h);
  for (std::size_t k = 1; k + 1 < n; ++k) eta[k] = (th[k + 1] - th[k - 1]) / (2.0 * h);
  eta[n - 1] = (3.0 * th[n - 1] - 4.0 * th[n - 2] + th[n - 3]) / (2.0 * h);
  return eta;
}

std::vector<double> lowpass_zero_phase(std::span<const double> x, double dt, double cutoff_hz) {
  const std::size_t n = x.size();
  if (n < 2) return {x.begin(), x.end()};
  if (!(cutoff_hz > 0.0) || cutoff_hz * dt >= 0.5) {
    throw InputError("lowpass_zero_phase: cutoff must lie in (0, Nyquist)");
  }
  const Biquad f = butterworth2(dt, cutoff_hz);

  // Odd extension at both ends, about 8 filter time constants long.
  const double tau_samples = 1.0 / (2.0 * std::numbers::pi * cutoff_hz * dt);
  const std::size_t pad =
      std::min<std::size_t>(n - 1, static_cast<std::size_t>(std::ceil(8.0 * tau_samples)) + 6);
  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t k = pad; k >= 1; --k) ext.push_back(2.0 * x[0] - x[k]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t k = 1; k <= pad; ++k) ext.push_back(2.0 * x[n - 1] - x[n - 1 - k]);

  filter_inplace(f, ext);
  std::reverse(ext.begin(), ext.end());
  filter_inplace(f, ext);
  std::reverse(ext.begin(), ext.end());
  return {ext.begin() + static_cast<std::ptrdiff_t>(pad),
          ext.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

DqSeries downsample(const DqSeries& series, double target_dt) {
  const double dt = series.dt();
  const double ratio = target_dt / dt;
  const double n_real = std::round(ratio);
  if (!(n_real >= 1.0) || std::abs(ratio - n_real) > 1e-9 * ratio) {
    std::ostringstream os;
    os << "downsample: target_dt " << target_dt << " is not an integer multiple of dt " << dt;
    throw InputError(os.str());
  }
  const auto factor = static_cast<std::size_t>(n_real);
  if (factor == 1) return series;

  const std::size_t n = series.size();
  const double cutoff = 0.4 * (0.5 / target_dt);
  std::array<std::vector<double>, 4> channels;
  for (auto& c : channels) c.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto& s = series[k];
    channels[0][k] = s.v.real();
    channels[1][k] = s.v.imag();
    channels[2][k] = s.i.real();
    channels[3][k] = s.i.imag();
  }
  for (auto& c : channels) c = lowpass_zero_phase(c, dt, cutoff);

  std::vector<DqSample> out;
  out.reserve((n + factor - 1) / factor);
  const double t0 = series[0].t;
  for (std::size_t k = 0, m = 0; k < n; k += factor, ++m) {
    out.push_back({t0 + static_cast<double>(m) * target_dt, {channels[0][k], channels[1][k]},
                   {channels[2][k], channels[3][k]}});
  }
  return DqSeries(std::move(out), target_dt);
}

}  // namespace nfid
