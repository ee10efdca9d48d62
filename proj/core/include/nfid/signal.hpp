#pragma once

// Coordinate transforms and complex-phase calculus for balanced three-phase
// signals. All quantities are per-unit; the global dq frame rotates at the
// nominal synchronous frequency.
//
// Park convention: amplitude invariant, so the balanced set
//   a = A cos(wt + phi), b = A cos(wt + phi - 2pi/3), c = A cos(wt + phi + 2pi/3)
// evaluated at frame angle wt maps to v = A e^{j phi}.

#include <array>
#include <complex>
#include <numbers>
#include <span>
#include <vector>

namespace nfid {

using cplx = std::complex<double>;

inline constexpr double kNominalFrequencyHz = 50.0;
inline constexpr double kNominalOmega = 2.0 * std::numbers::pi * kNominalFrequencyHz;
inline constexpr double kDefaultEpsilonV = 1e-6;

struct DqSample {
  double t = 0.0;
  cplx v;
  cplx i;
};

/// Uniformly sampled voltage/current trajectory in the global dq frame.
class DqSeries {
 public:
  DqSeries() = default;
  /// Validates non-emptiness, finiteness and the uniform step (1e-9 relative).
  DqSeries(std::vector<DqSample> samples, double dt);

  [[nodiscard]] const std::vector<DqSample>& samples() const { return samples_; }
  [[nodiscard]] double dt() const { return dt_; }
  [[nodiscard]] std::size_t size() const { return samples_.size(); }
  [[nodiscard]] bool empty() const { return samples_.empty(); }
  [[nodiscard]] const DqSample& operator[](std::size_t k) const { return samples_[k]; }

  [[nodiscard]] std::vector<cplx> voltages() const;
  [[nodiscard]] std::vector<cplx> currents() const;

 private:
  std::vector<DqSample> samples_;
  double dt_ = 0.0;
};

/// Unwrapped complex phase Theta = ln|v| + j phi.
struct PhaseSeries {
  std::vector<cplx> theta;
  double dt = 0.0;

  [[nodiscard]] std::size_t size() const { return theta.size(); }
};

struct PowerSample {
  double P = 0.0;
  double Q = 0.0;
  double nu = 0.0;  // |v|^2
};

/// abc -> dq at the given frame angle. A warning is emitted when
/// |a+b+c| exceeds balance_tolerance times the peak phase value.
cplx park_transform(const std::array<double, 3>& abc, double angle,
                    double balance_tolerance = 1e-3);

std::array<double, 3> inverse_park(cplx v, double angle);

/// S = v i*; nu = |v|^2.
PowerSample complex_power(cplx v, cplx i);

PhaseSeries to_phase(std::span<const cplx> v, double dt,
                     double epsilon_v = kDefaultEpsilonV);
PhaseSeries to_phase(const DqSeries& series, double epsilon_v = kDefaultEpsilonV);

std::vector<cplx> exp_phase(const PhaseSeries& phase);

/// d Theta / dt by central differences, second-order one-sided at the ends.
/// Noise is amplified by ~1/dt; use for diagnostics and initialization only.
std::vector<cplx> complex_frequency(const PhaseSeries& phase);

/// Zero-phase second-order Butterworth low-pass (forward-backward),
/// cutoff in Hz, applied to a uniformly sampled real signal.
std::vector<double> lowpass_zero_phase(std::span<const double> x, double dt,
                                       double cutoff_hz);

/// Anti-alias filter (cutoff 40 % of the target Nyquist frequency) then
/// decimation keeping samples 0, n, 2n, ...; target_dt must be n * dt.
DqSeries downsample(const DqSeries& series, double target_dt);

}  // namespace nfid
