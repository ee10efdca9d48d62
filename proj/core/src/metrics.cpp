#include "nfid/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <unsupported/Eigen/FFT>

#include "nfid/error.hpp"

namespace nfid::metrics {

double r2(std::span<const double> observed, std::span<const double> predicted) {
  if (observed.size() != predicted.size()) throw InputError("r2: length mismatch");
  if (observed.size() < 2) throw InputError("r2: need at least two samples");
  double mean = 0.0;
  for (double y : observed) mean += y;
  mean /= static_cast<double>(observed.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t k = 0; k < observed.size(); ++k) {
    ss_res += (observed[k] - predicted[k]) * (observed[k] - predicted[k]);
    ss_tot += (observed[k] - mean) * (observed[k] - mean);
  }
  if (!(ss_tot > 0.0)) throw InputError("undefined R² (zero variance)");
  return 1.0 - ss_res / ss_tot;
}

Spectrum spectrum(std::span<const double> x, double dt) {
  const std::size_t N = x.size();
  if (N < 256) throw InputError("spectrum: need at least 256 samples");
  if (!(dt > 0.0)) throw InputError("spectrum: dt must be positive");
  const double fs = 1.0 / dt;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(N);

  std::vector<double> y(N);
  double wsum2 = 0.0;
  for (std::size_t k = 0; k < N; ++k) {
    const double w = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(k) /
                                           static_cast<double>(N)));
    y[k] = (x[k] - mean) * w;
    wsum2 += w * w;
  }
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> X;
  fft.fwd(X, y);

  Spectrum s;
  s.df = fs / static_cast<double>(N);
  const std::size_t bins = N / 2 + 1;
  s.frequency.resize(bins);
  s.power.resize(bins);
  const double scale = 1.0 / (fs * wsum2);
  for (std::size_t k = 0; k < bins; ++k) {
    s.frequency[k] = static_cast<double>(k) * s.df;
    double p = std::norm(X[k]) * scale;
    const bool nyquist = (N % 2 == 0) && k == N / 2;
    if (k != 0 && !nyquist) p *= 2.0;
    s.power[k] = p;
  }
  s.power[0] += mean * mean / s.df;
  return s;
}

double to_db(double power) { return 10.0 * std::log10(std::max(power, 1e-300)); }

std::size_t nearest_bin(const Spectrum& s, double frequency_hz) {
  const auto k = static_cast<long>(std::lround(frequency_hz / s.df));
  return static_cast<std::size_t>(std::clamp<long>(k, 0, static_cast<long>(s.power.size()) - 1));
}

bool EvalReport::harmonic_flag() const {
  for (const auto& r : records) {
    for (const auto& h : r.harmonics) {
      if (h.flagged) return true;
    }
  }
  return false;
}

namespace {

double peak_near(const Spectrum& s, std::size_t k) {
  double p = s.power[k];
  if (k > 0) p = std::max(p, s.power[k - 1]);
  if (k + 1 < s.power.size()) p = std::max(p, s.power[k + 1]);
  return p;
}

double median(std::vector<double> v) {
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

}  // namespace

RecordEval evaluate_record(const normalform::HwDiscrete& model, const DqSeries& series,
                           const EvalOptions& opts) {
  if (std::abs(series.dt() - model.dt) > 1e-9 * model.dt) {
    throw InputError("evaluate: record sampling interval differs from the model's");
  }
  const auto e = normalform::error_series(series, model.sp);
  const auto phase = to_phase(series);
  const auto sim = normalform::simulate_open_loop(
      model, e, phase.theta[0], Eigen::VectorXd::Zero(model.n_ivars()), opts.rule);

  RecordEval out;
  const std::size_t N = series.size();
  std::vector<double> od(N), oq(N), pd(N), pq(N), om(N), pm(N);
  double sum_err = 0.0;
  for (std::size_t k = 0; k < N; ++k) {
    const cplx vm = series[k].v;
    const cplx vp = sim.v[k];
    od[k] = vm.real();
    oq[k] = vm.imag();
    pd[k] = vp.real();
    pq[k] = vp.imag();
    om[k] = std::abs(vm);
    pm[k] = std::abs(vp);
    const double err = std::abs(vp - vm);
    out.max_err = std::isfinite(err) ? std::max(out.max_err, err) : err;
    sum_err += err;
  }
  out.mean_err = sum_err / static_cast<double>(N);
  out.r2_d = r2(od, pd);
  out.r2_q = r2(oq, pq);

  if (N >= 256) {
    const auto sm = spectrum(om, series.dt());
    const auto sp = spectrum(pm, series.dt());
    const double floor = median(sm.power);
    const double nyquist = 0.5 / series.dt();
    for (double f : opts.harmonic_frequencies) {
      if (!(f > 0.0) || f >= nyquist) continue;
      const std::size_t k = nearest_bin(sm, f);
      HarmonicCheck h;
      h.frequency_hz = f;
      h.measured_db = to_db(peak_near(sm, k));
      h.predicted_db = to_db(peak_near(sp, k));
      h.floor_db = to_db(floor);
      h.deficit_db = h.measured_db - h.predicted_db;
      h.flagged = h.measured_db - h.floor_db >= opts.prominence_db &&
                  h.deficit_db >= opts.deficit_threshold_db;
      out.harmonics.push_back(h);
    }
    if (opts.keep_spectra) {
      out.measured_spectrum = sm;
      out.predicted_spectrum = sp;
    }
  }
  if (opts.keep_traces) {
    out.measured = series.voltages();
    out.predicted = sim.v;
  }
  return out;
}

EvalReport evaluate(const normalform::HwNormalForm& model,
                    std::span<const scenarios::Record* const> records, double dt,
                    const EvalOptions& opts) {
  const auto disc = normalform::discretize(model, dt);
  EvalReport report;
  report.dt = dt;
  std::vector<std::string> order;
  std::map<std::string, PartitionSummary> sums;
  for (const auto* rec : records) {
    RecordEval r = evaluate_record(disc, rec->series, opts);
    r.name = rec->name;
    r.partition = scenarios::to_string(rec->partition);
    auto [it, inserted] = sums.try_emplace(r.partition);
    if (inserted) {
      order.push_back(r.partition);
      it->second.partition = r.partition;
    }
    auto& s = it->second;
    s.records += 1;
    s.mean_r2_d += r.r2_d;
    s.mean_r2_q += r.r2_q;
    s.max_err = std::max(s.max_err, r.max_err);
    report.records.push_back(std::move(r));
  }
  for (const auto& name : order) {
    auto s = sums[name];
    s.mean_r2_d /= static_cast<double>(s.records);
    s.mean_r2_q /= static_cast<double>(s.records);
    report.partitions.push_back(s);
  }
  return report;
}

}  // namespace nfid::metrics
