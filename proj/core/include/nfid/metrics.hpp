#pragma once

// Fit-quality metrics: R^2 per voltage component, voltage error norms and a
// power-spectrum comparison of |v| used to flag unmodelled harmonics.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nfid/normalform.hpp"
#include "nfid/scenarios.hpp"

namespace nfid::metrics {

/// 1 - sum (y - f)^2 / sum (y - mean y)^2. Throws InputError on a length
/// mismatch, fewer than two samples, or a constant observed series.
double r2(std::span<const double> observed, std::span<const double> predicted);

struct Spectrum {
  std::vector<double> frequency;  // Hz, one-sided, 0 .. fs/2
  std::vector<double> power;      // power spectral density, unit^2 / Hz
  double df = 0.0;
};

/// Hann-windowed one-sided periodogram. The mean is removed before
/// windowing and reported alone in the DC bin, so sum(power) * df equals the
/// mean square of the signal up to windowing loss. Needs >= 256 samples.
Spectrum spectrum(std::span<const double> x, double dt);

double to_db(double power);

/// Index of the bin nearest to `frequency_hz`.
std::size_t nearest_bin(const Spectrum& s, double frequency_hz);

struct HarmonicCheck {
  double frequency_hz = 0.0;
  double measured_db = 0.0;   // peak within +-1 bin
  double predicted_db = 0.0;
  double floor_db = 0.0;      // median of the measured spectrum
  double deficit_db = 0.0;    // measured - predicted
  bool flagged = false;       // prominent in the measurement and under-predicted
};

struct RecordEval {
  std::string name;
  std::string partition;
  double r2_d = 0.0;
  double r2_q = 0.0;
  double max_err = 0.0;   // max |v_pred - v_meas|, pu
  double mean_err = 0.0;  // mean |v_pred - v_meas|, pu
  std::vector<HarmonicCheck> harmonics;
  std::optional<Spectrum> measured_spectrum;
  std::optional<Spectrum> predicted_spectrum;
  std::vector<cplx> measured;   // kept when EvalOptions::keep_traces
  std::vector<cplx> predicted;
};

struct PartitionSummary {
  std::string partition;
  std::size_t records = 0;
  double mean_r2_d = 0.0;
  double mean_r2_q = 0.0;
  double max_err = 0.0;
};

struct EvalReport {
  std::vector<RecordEval> records;          // one entry per record, never pooled
  std::vector<PartitionSummary> partitions;  // explicit means of per-record values
  double dt = 0.0;
  [[nodiscard]] bool harmonic_flag() const;
};

struct EvalOptions {
  normalform::PhaseRule rule = normalform::PhaseRule::Trapezoidal;
  std::vector<double> harmonic_frequencies{150.0, 250.0, 350.0};
  double deficit_threshold_db = 10.0;
  double prominence_db = 10.0;  // measured peak above the median floor
  bool keep_traces = false;
  bool keep_spectra = false;
};

/// Open-loop prediction of each record from its own inputs and first phase.
RecordEval evaluate_record(const normalform::HwDiscrete& model, const DqSeries& series,
                           const EvalOptions& opts = {});

/// Per-record evaluation; partitions are summarized in order of appearance.
EvalReport evaluate(const normalform::HwNormalForm& model,
                    std::span<const scenarios::Record* const> records, double dt,
                    const EvalOptions& opts = {});

}  // namespace nfid::metrics
