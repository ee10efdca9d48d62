#include "nfid/sysid.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <sstream>
#include <unsupported/Eigen/MatrixFunctions>

#include "nfid/error.hpp"
#include "nfid/metrics.hpp"
#include "nfid/rng.hpp"
#include "nfid/subspace.hpp"

namespace nfid::sysid {

using normalform::ErrorSeries;
using normalform::RowVector3c;
using normalform::RowVectorXc;

void IdentConfig::validate() const {
  if (n_ivars < 0) throw InputError("identify: n_ivars must be >= 0");
  if (max_iters < 0) throw InputError("identify: max_iters must be >= 0");
  if (!(gradient_tolerance > 0.0) || !(loss_tolerance > 0.0)) {
    throw InputError("identify: tolerances must be positive");
  }
  if (restarts < 0) throw InputError("identify: restarts must be >= 0");
  if (!(perturbation_scale >= 0.0)) throw InputError("identify: perturbation_scale must be >= 0");
  if (hankel_rows < 1) throw InputError("identify: hankel_rows must be >= 1");
  if (!(regularization >= 0.0)) throw InputError("identify: regularization must be >= 0");
  if (init && init->n_ivars() != n_ivars) {
    throw InputError("identify: initial model order does not match n_ivars");
  }
}

PhaseRecord prepare_record(const std::string& name, const DqSeries& series, const Setpoints& sp) {
  PhaseRecord r;
  r.name = name;
  r.e = normalform::error_series(series, sp);
  r.phase = to_phase(series);
  r.v = series.voltages();
  return r;
}

std::vector<PhaseRecord> prepare_records(std::span<const scenarios::Record* const> records,
                                         const Setpoints& sp) {
  std::vector<PhaseRecord> out;
  out.reserve(records.size());
  for (const auto* r : records) out.push_back(prepare_record(r->name, r->series, sp));
  return out;
}

std::vector<std::vector<cplx>> estimate_eta(std::span<const DqSeries> records) {
  std::vector<std::vector<cplx>> out;
  out.reserve(records.size());
  for (const auto& s : records) out.push_back(complex_frequency(to_phase(s)));
  return out;
}

// ---------------------------------------------------------------------------
// Initialization

namespace {

constexpr const char* kChannelNames[3] = {"e_P (active power)", "e_Q (reactive power)",
                                          "e_nu (squared voltage magnitude)"};

void check_excitation(std::span<const ErrorSeries> e) {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  std::size_t count = 0;
  for (const auto& rec : e) {
    for (const auto& x : rec.e) mean += x;
    count += rec.size();
  }
  mean /= static_cast<double>(count);
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& rec : e) {
    for (const auto& x : rec.e) cov += (x - mean) * (x - mean).transpose();
  }
  cov /= static_cast<double>(count);
  for (int c = 0; c < 3; ++c) {
    if (!(cov(c, c) > 1e-20)) {
      throw InputError(std::string("rank-deficient excitation: channel ") + kChannelNames[c] +
                       " does not vary");
    }
  }
  // Scale-free collinearity test on the correlation matrix.
  const Eigen::Vector3d s = cov.diagonal().cwiseSqrt().cwiseInverse();
  const Eigen::Matrix3d corr = s.asDiagonal() * cov * s.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(corr);
  if (es.eigenvalues()[0] < 1e-10) {
    Eigen::Index c = 0;
    es.eigenvectors().col(0).cwiseAbs().maxCoeff(&c);
    throw InputError(std::string("rank-deficient excitation: channel ") + kChannelNames[c] +
                     " is a linear combination of the others");
  }
}

// Moves eigenvalues with positive real part to the left half plane.
int reflect_unstable(Eigen::MatrixXd& A) {
  if (A.rows() == 0) return 0;
  Eigen::EigenSolver<Eigen::MatrixXd> es(A);
  Eigen::VectorXcd lam = es.eigenvalues();
  int count = 0;
  for (auto& l : lam) {
    if (l.real() > 0.0) {
      l = cplx(-l.real(), l.imag());
      ++count;
    }
  }
  if (count == 0) return 0;
  const Eigen::MatrixXcd V = es.eigenvectors();
  A = (V * lam.asDiagonal() * V.inverse()).real();
  return count;
}

}  // namespace

std::vector<std::vector<cplx>> phase_increments(std::span<const PhaseSeries> phases) {
  std::vector<std::vector<cplx>> out;
  for (const auto& p : phases) {
    std::vector<cplx> d;
    for (std::size_t k = 0; k + 1 < p.size(); ++k) d.push_back((p.theta[k + 1] - p.theta[k]) / p.dt);
    out.push_back(std::move(d));
  }
  return out;
}

HwNormalForm subspace_init(std::span<const ErrorSeries> e, std::span<const std::vector<cplx>> eta,
                           int n_ivars, const IdentConfig& config, const Setpoints& sp,
                           InitReport* report, std::optional<PhaseRule> increment_rule) {
  if (e.empty() || e.size() != eta.size()) {
    throw InputError("subspace_init: need matching, non-empty input and eta record lists");
  }
  const std::size_t shift = increment_rule ? 1 : 0;
  std::size_t total = 0;
  for (std::size_t r = 0; r < e.size(); ++r) {
    if (e[r].size() != eta[r].size() + shift) throw InputError("subspace_init: record length mismatch");
    total += eta[r].size();
  }
  const std::size_t params = parameter_count(n_ivars);
  if (total < 10 * params) {
    std::ostringstream os;
    os << "subspace_init: " << total << " samples are fewer than 10x the " << params
       << " parameters";
    throw InputError(os.str());
  }
  check_excitation(e);
  const double dt = e[0].dt;

  std::vector<subspace::IoRecord> io(e.size());
  for (std::size_t r = 0; r < e.size(); ++r) {
    const auto N = static_cast<Eigen::Index>(eta[r].size());
    io[r].u.resize(N, 3);
    io[r].y.resize(N, 2);
    for (Eigen::Index k = 0; k < N; ++k) {
      io[r].u.row(k) = e[r].e[static_cast<std::size_t>(k)].transpose();
      io[r].y(k, 0) = eta[r][static_cast<std::size_t>(k)].real();
      io[r].y(k, 1) = eta[r][static_cast<std::size_t>(k)].imag();
    }
  }

  subspace::Model fit;
  if (n_ivars == 0) {
    fit.A = Eigen::MatrixXd::Zero(0, 0);
    fit.C = Eigen::MatrixXd::Zero(2, 0);
    subspace::fit_input_matrices(io, fit);
  } else {
    fit = subspace::identify(io, {n_ivars, config.hankel_rows});
  }

  HwDiscrete d;
  d.Ad = fit.A;
  d.Bd = fit.B;
  d.C = RowVectorXc(n_ivars);
  for (int i = 0; i < n_ivars; ++i) d.C[i] = cplx(fit.C(0, i), fit.C(1, i));
  for (int j = 0; j < 3; ++j) d.D[j] = cplx(fit.D(0, j), fit.D(1, j));
  d.sp = sp;
  d.dt = dt;
  if (increment_rule == PhaseRule::Trapezoidal && n_ivars > 0) {
    // C' = C (I + A_d) / 2, D' = D + C B_d / 2
    const Eigen::MatrixXd M = 0.5 * (Eigen::MatrixXd::Identity(n_ivars, n_ivars) + d.Ad);
    const Eigen::MatrixXd Cri = Eigen::MatrixXd(fit.C) * M.inverse();
    for (int i = 0; i < n_ivars; ++i) d.C[i] = cplx(Cri(0, i), Cri(1, i));
    const RowVector3c cb = (0.5 * d.C * d.Bd.cast<cplx>()).eval();
    d.D -= cb;
  }

  normalform::Conversion conv = normalform::Conversion::Logarithm;
  HwNormalForm model = normalform::to_continuous(d, &conv);
  const int reflected = fit.reflected + reflect_unstable(model.A);
  if (report) {
    report->reflected = reflected;
    report->bilinear_fallback = conv == normalform::Conversion::Bilinear;
    report->singular_values = fit.singular_values;
  }
  if (report && report->bilinear_fallback) {
    warn("subspace_init: matrix logarithm unavailable; used the bilinear transform");
  }
  return model;
}

// ---------------------------------------------------------------------------
// Loss and gradient

double loss(const PhaseSeries& predicted, const PhaseSeries& measured) {
  if (predicted.size() != measured.size()) throw InputError("loss: length mismatch");
  if (std::abs(predicted.dt - measured.dt) > 1e-9 * std::max(predicted.dt, measured.dt)) {
    throw InputError("loss: sampling interval mismatch");
  }
  double l = 0.0;
  for (std::size_t k = 0; k < predicted.size(); ++k) {
    l += std::norm(measured.theta[k] - predicted.theta[k]);
  }
  return l;
}

namespace {

struct RecordGrad {
  double loss = 0.0;
  std::vector<double> dAd, dBd, dCr, dCi;  // row-major
  std::array<double, 3> dDr{}, dDi{};
};

// Weights of C x_k and C x_{k+1} in the phase increment.
std::pair<double, double> rule_weights(PhaseRule rule) {
  return rule == PhaseRule::Trapezoidal ? std::pair{0.5, 0.5} : std::pair{1.0, 0.0};
}

// Flattened model for the inner loops.
struct Flat {
  int n = 0;
  double h = 0.0;
  std::vector<double> Ad, Bd, Cr, Ci;  // row-major
  std::array<double, 3> Dr{}, Di{};

  explicit Flat(const HwDiscrete& m) : n(m.n_ivars()), h(m.dt) {
    Ad.resize(static_cast<std::size_t>(n * n));
    Bd.resize(static_cast<std::size_t>(n * 3));
    Cr.resize(static_cast<std::size_t>(n));
    Ci.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) Ad[static_cast<std::size_t>(i * n + j)] = m.Ad(i, j);
      for (int j = 0; j < 3; ++j) Bd[static_cast<std::size_t>(i * 3 + j)] = m.Bd(i, j);
      Cr[static_cast<std::size_t>(i)] = m.C[i].real();
      Ci[static_cast<std::size_t>(i)] = m.C[i].imag();
    }
    for (int j = 0; j < 3; ++j) {
      Dr[static_cast<std::size_t>(j)] = m.D[j].real();
      Di[static_cast<std::size_t>(j)] = m.D[j].imag();
    }
  }
};

RecordGrad record_pass(const Flat& f, const PhaseRecord& rec, PhaseRule rule, bool want_grad) {
  const int n = f.n;
  const auto un = static_cast<std::size_t>(n);
  const std::size_t N = rec.e.size();
  if (rec.phase.size() != N) throw InputError("loss_gradient: phase and input lengths differ");
  const auto [wa, wb] = rule_weights(rule);
  const double h = f.h;

  RecordGrad g;
  if (N == 0) return g;
  std::vector<double> X(N * un, 0.0);  // x_k, x_0 = 0
  std::vector<cplx> r(N);

  auto cx = [&](const double* x) {
    double re = 0.0, im = 0.0;
    for (std::size_t i = 0; i < un; ++i) {
      re += f.Cr[i] * x[i];
      im += f.Ci[i] * x[i];
    }
    return cplx(re, im);
  };

  cplx theta = rec.phase.theta[0];
  double l = 0.0;
  for (std::size_t k = 0; k < N; ++k) {
    r[k] = theta - rec.phase.theta[k];
    l += std::norm(r[k]);
    if (k + 1 == N) break;
    const double* x = &X[k * un];
    double* xn = &X[(k + 1) * un];
    const auto& e = rec.e.e[k];
    for (std::size_t i = 0; i < un; ++i) {
      double acc = f.Bd[i * 3] * e[0] + f.Bd[i * 3 + 1] * e[1] + f.Bd[i * 3 + 2] * e[2];
      const double* row = &f.Ad[i * un];
      for (std::size_t j = 0; j < un; ++j) acc += row[j] * x[j];
      xn[i] = acc;
    }
    const cplx de(f.Dr[0] * e[0] + f.Dr[1] * e[1] + f.Dr[2] * e[2],
                  f.Di[0] * e[0] + f.Di[1] * e[1] + f.Di[2] * e[2]);
    theta += h * (wa * cx(x) + wb * cx(xn) + de);
  }
  if (!std::isfinite(l)) {
    g.loss = std::numeric_limits<double>::infinity();
    return g;
  }
  g.loss = l;
  if (!want_grad) return g;

  g.dAd.assign(un * un, 0.0);
  g.dBd.assign(un * 3, 0.0);
  g.dCr.assign(un, 0.0);
  g.dCi.assign(un, 0.0);
  std::vector<double> mu(un, 0.0), gm(un, 0.0), mu_next(un, 0.0);
  cplx lam{};  // lambda_{m+1}
  for (std::size_t m = N; m-- > 0;) {
    const cplx lam_m = lam + 2.0 * r[m];
    std::fill(gm.begin(), gm.end(), 0.0);
    const double* x = &X[m * un];
    if (m + 1 < N) {
      const double lr = h * lam.real();
      const double li = h * lam.imag();
      const double* xn = &X[(m + 1) * un];
      const auto& e = rec.e.e[m];
      for (std::size_t i = 0; i < un; ++i) {
        gm[i] += wa * (f.Cr[i] * lr + f.Ci[i] * li);
        const double xc = wa * x[i] + wb * xn[i];
        g.dCr[i] += lr * xc;
        g.dCi[i] += li * xc;
        double* arow = &g.dAd[i * un];
        for (std::size_t j = 0; j < un; ++j) arow[j] += mu[i] * x[j];
        g.dBd[i * 3] += mu[i] * e[0];
        g.dBd[i * 3 + 1] += mu[i] * e[1];
        g.dBd[i * 3 + 2] += mu[i] * e[2];
      }
      for (std::size_t j = 0; j < 3; ++j) {
        g.dDr[j] += lr * e[static_cast<Eigen::Index>(j)];
        g.dDi[j] += li * e[static_cast<Eigen::Index>(j)];
      }
    }
    if (m >= 1 && wb != 0.0) {
      const double lr = h * lam_m.real();
      const double li = h * lam_m.imag();
      for (std::size_t i = 0; i < un; ++i) gm[i] += wb * (f.Cr[i] * lr + f.Ci[i] * li);
    }
    // mu_m = g_m + Ad^T mu_{m+1}
    for (std::size_t j = 0; j < un; ++j) mu_next[j] = gm[j];
    for (std::size_t i = 0; i < un; ++i) {
      const double mi = mu[i];
      if (mi == 0.0) continue;
      const double* row = &f.Ad[i * un];
      for (std::size_t j = 0; j < un; ++j) mu_next[j] += row[j] * mi;
    }
    mu.swap(mu_next);
    lam = lam_m;
  }
  return g;
}

std::vector<RecordGrad> run_records(const HwDiscrete& model, std::span<const PhaseRecord> records,
                                    PhaseRule rule, bool want_grad, std::size_t threads) {
  model.validate();
  for (const auto& r : records) {
    if (std::abs(r.e.dt - model.dt) > 1e-9 * model.dt) {
      throw InputError("loss_gradient: record " + r.name + " sampling interval differs from model");
    }
  }
  const Flat f(model);
  std::vector<RecordGrad> out(records.size());
  if (threads <= 1 || records.size() <= 1) {
    for (std::size_t k = 0; k < records.size(); ++k) out[k] = record_pass(f, records[k], rule, want_grad);
    return out;
  }
  for (std::size_t start = 0; start < records.size(); start += threads) {
    const std::size_t stop = std::min(records.size(), start + threads);
    std::vector<std::future<RecordGrad>> batch;
    for (std::size_t k = start; k < stop; ++k) {
      batch.push_back(std::async(std::launch::async,
                                 [&, k] { return record_pass(f, records[k], rule, want_grad); }));
    }
    for (std::size_t k = start; k < stop; ++k) out[k] = batch[k - start].get();
  }
  return out;
}

}  // namespace

DiscreteGradient loss_gradient(const HwDiscrete& model, std::span<const PhaseRecord> records,
                               PhaseRule rule, std::size_t threads) {
  const int n = model.n_ivars();
  DiscreteGradient g;
  g.dAd = Eigen::MatrixXd::Zero(n, n);
  g.dBd = Eigen::MatrixXd::Zero(n, 3);
  g.dCr = Eigen::RowVectorXd::Zero(n);
  g.dCi = Eigen::RowVectorXd::Zero(n);
  const auto parts = run_records(model, records, rule, true, threads);
  // Fixed reduction order: record by record.
  for (const auto& p : parts) {
    g.loss += p.loss;
    if (!std::isfinite(p.loss)) continue;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) g.dAd(i, j) += p.dAd[static_cast<std::size_t>(i * n + j)];
      for (int j = 0; j < 3; ++j) g.dBd(i, j) += p.dBd[static_cast<std::size_t>(i * 3 + j)];
      g.dCr[i] += p.dCr[static_cast<std::size_t>(i)];
      g.dCi[i] += p.dCi[static_cast<std::size_t>(i)];
    }
    for (int j = 0; j < 3; ++j) {
      g.dDr[j] += p.dDr[static_cast<std::size_t>(j)];
      g.dDi[j] += p.dDi[static_cast<std::size_t>(j)];
    }
  }
  return g;
}

ContinuousGradient loss_gradient(const HwNormalForm& model, double dt,
                                 std::span<const PhaseRecord> records, PhaseRule rule,
                                 std::size_t threads) {
  const int n = model.n_ivars();
  const auto dg = loss_gradient(normalform::discretize(model, dt), records, rule, threads);
  ContinuousGradient g;
  g.loss = dg.loss;
  g.dCr = dg.dCr;
  g.dCi = dg.dCi;
  g.dDr = dg.dDr;
  g.dDi = dg.dDi;
  if (n == 0) {
    g.dA = Eigen::MatrixXd::Zero(0, 0);
    g.dB = Eigen::MatrixXd::Zero(0, 3);
    return g;
  }
  // Phi = exp(M dt) with M = [[A, B], [0, 0]]. The gradient w.r.t. M is
  // dt * L_exp(M^T dt, G), G the gradient w.r.t. Phi; the Frechet derivative
  // is the upper-right block of exp([[X, G], [0, X]]).
  const int a = n + 3;
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(a, a);
  M.topLeftCorner(n, n) = model.A;
  M.topRightCorner(n, 3) = model.B;
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(a, a);
  G.topLeftCorner(n, n) = dg.dAd;
  G.topRightCorner(n, 3) = dg.dBd;
  Eigen::MatrixXd big = Eigen::MatrixXd::Zero(2 * a, 2 * a);
  const Eigen::MatrixXd Xt = M.transpose() * dt;
  big.topLeftCorner(a, a) = Xt;
  big.bottomRightCorner(a, a) = Xt;
  big.topRightCorner(a, a) = G;
  const Eigen::MatrixXd E = big.exp();
  const Eigen::MatrixXd dM = dt * E.topRightCorner(a, a);
  g.dA = dM.topLeftCorner(n, n);
  g.dB = dM.topRightCorner(n, 3);
  return g;
}

double total_loss(const HwDiscrete& model, std::span<const PhaseRecord> records, PhaseRule rule) {
  double l = 0.0;
  for (const auto& p : run_records(model, records, rule, false, 1)) l += p.loss;
  return l;
}

// ---------------------------------------------------------------------------
// Parameter packing

std::size_t parameter_count(int n) {
  const auto un = static_cast<std::size_t>(n);
  return un * un + 3 * un + 2 * un + 6;
}

Eigen::VectorXd pack(const HwDiscrete& m) {
  const int n = m.n_ivars();
  Eigen::VectorXd p(static_cast<Eigen::Index>(parameter_count(n)));
  Eigen::Index k = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) p[k++] = (m.Ad(i, j) - (i == j ? 1.0 : 0.0)) / m.dt;
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < 3; ++j) p[k++] = m.Bd(i, j) / m.dt;
  }
  for (int i = 0; i < n; ++i) p[k++] = m.C[i].real();
  for (int i = 0; i < n; ++i) p[k++] = m.C[i].imag();
  for (int j = 0; j < 3; ++j) p[k++] = m.D[j].real();
  for (int j = 0; j < 3; ++j) p[k++] = m.D[j].imag();
  return p;
}

HwDiscrete unpack(const Eigen::VectorXd& p, int n, double dt, const Setpoints& sp) {
  if (static_cast<std::size_t>(p.size()) != parameter_count(n)) {
    throw InputError("unpack: parameter vector has wrong length");
  }
  HwDiscrete m;
  m.dt = dt;
  m.sp = sp;
  m.Ad.resize(n, n);
  m.Bd.resize(n, 3);
  m.C.resize(n);
  Eigen::Index k = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) m.Ad(i, j) = (i == j ? 1.0 : 0.0) + dt * p[k++];
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < 3; ++j) m.Bd(i, j) = dt * p[k++];
  }
  for (int i = 0; i < n; ++i) m.C[i] = cplx(p[k++], 0.0);
  for (int i = 0; i < n; ++i) m.C[i] = cplx(m.C[i].real(), p[k++]);
  for (int j = 0; j < 3; ++j) m.D[j] = cplx(p[k++], 0.0);
  for (int j = 0; j < 3; ++j) m.D[j] = cplx(m.D[j].real(), p[k++]);
  return m;
}

namespace {

Eigen::VectorXd pack_gradient(const DiscreteGradient& g, double dt) {
  const auto n = static_cast<int>(g.dAd.rows());
  Eigen::VectorXd p(static_cast<Eigen::Index>(parameter_count(n)));
  Eigen::Index k = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) p[k++] = dt * g.dAd(i, j);
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < 3; ++j) p[k++] = dt * g.dBd(i, j);
  }
  for (int i = 0; i < n; ++i) p[k++] = g.dCr[i];
  for (int i = 0; i < n; ++i) p[k++] = g.dCi[i];
  for (int j = 0; j < 3; ++j) p[k++] = g.dDr[j];
  for (int j = 0; j < 3; ++j) p[k++] = g.dDi[j];
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// Identification

double validation_score(const HwDiscrete& model, std::span<const PhaseRecord> records,
                        PhaseRule rule, std::vector<RecordScore>* per_record) {
  if (per_record) per_record->clear();
  if (records.empty()) return 0.0;
  double total = 0.0;
  const Eigen::VectorXd x0 = Eigen::VectorXd::Zero(model.n_ivars());
  for (const auto& rec : records) {
    const auto sim = normalform::simulate_open_loop(model, rec.e, rec.phase.theta[0], x0, rule);
    RecordScore s;
    s.name = rec.name;
    bool finite = true;
    for (const auto& v : sim.v) finite = finite && std::isfinite(v.real()) && std::isfinite(v.imag());
    if (!finite) {
      s.r2_d = s.r2_q = -std::numeric_limits<double>::infinity();
    } else {
      std::vector<double> od(rec.v.size()), oq(rec.v.size()), pd(rec.v.size()), pq(rec.v.size());
      for (std::size_t k = 0; k < rec.v.size(); ++k) {
        od[k] = rec.v[k].real();
        oq[k] = rec.v[k].imag();
        pd[k] = sim.v[k].real();
        pq[k] = sim.v[k].imag();
      }
      s.r2_d = metrics::r2(od, pd);
      s.r2_q = metrics::r2(oq, pq);
    }
    total += 0.5 * (s.r2_d + s.r2_q);
    if (per_record) per_record->push_back(s);
  }
  return total / static_cast<double>(records.size());
}

std::optional<Eigen::MatrixXd> closed_loop_jacobian(const HwNormalForm& model,
                                                    const plants::NetworkConfig& net,
                                                    const plants::GridState& grid) {
  const auto eq = normalform::equilibrium(model, net, grid);
  if (!eq) return std::nullopt;
  const auto n = model.A.rows();
  const Eigen::Index dim = n + 2;
  auto rhs = [&](const Eigen::VectorXd& z) {
    const cplx v = std::exp(cplx(z[0], z[1]));
    const cplx vs[1] = {v};
    const cplx i = plants::solve_network(net, grid, 0.0, vs).currents[0];
    const auto e = normalform::error_coordinates(v, i, model.sp);
    const Eigen::VectorXd x = z.tail(n);
    const cplx eta = (n > 0 ? cplx((model.C * x).value()) : cplx{}) + cplx((model.D * e).value());
    Eigen::VectorXd r(dim);
    r[0] = eta.real();
    r[1] = eta.imag();
    if (n > 0) r.tail(n) = model.A * x + model.B * e;
    return r;
  };
  Eigen::VectorXd z(dim);
  z[0] = eq->theta.real();
  z[1] = eq->theta.imag();
  z.tail(n) = eq->xc;
  Eigen::MatrixXd J(dim, dim);
  for (Eigen::Index c = 0; c < dim; ++c) {
    const double step = 1e-6 * std::max(1.0, std::abs(z[c]));
    Eigen::VectorXd zp = z, zm = z;
    zp[c] += step;
    zm[c] -= step;
    J.col(c) = (rhs(zp) - rhs(zm)) / (2.0 * step);
  }
  return J;
}

namespace {

StabilityReport stability_of(const HwNormalForm& model, cplx line_admittance) {
  StabilityReport s;
  if (model.n_ivars() > 0) {
    const Eigen::VectorXcd eig = model.A.eigenvalues();
    s.max_real_A = -std::numeric_limits<double>::infinity();
    for (const auto& l : eig) {
      s.eig_A.push_back(l);
      s.max_real_A = std::max(s.max_real_A, l.real());
    }
  }
  plants::NetworkConfig net;
  net.grid_admittance = line_admittance;
  plants::GridState grid;
  if (const auto J = closed_loop_jacobian(model, net, grid)) {
    const Eigen::VectorXcd eig = J->eigenvalues();
    for (const auto& l : eig) s.eig_closed_loop.push_back(l);
  }
  return s;
}

}  // namespace

IdentResult identify(const scenarios::Dataset& dataset, const IdentConfig& config) {
  config.validate();
  const auto train = dataset.partition(scenarios::Partition::Train);
  const auto val = dataset.partition(scenarios::Partition::Validation);
  if (train.empty()) throw InputError("identify: training partition is empty");
  if (val.empty()) throw InputError("identify: validation partition is empty");
  const Setpoints sp = dataset.setpoints;
  const double dt = dataset.dt;
  const int n = config.n_ivars;

  const auto train_recs = prepare_records(train, sp);
  const auto val_recs = prepare_records(val, sp);

  IdentResult result;
  InitReport init_report;
  if (config.init) {
    result.init_model = *config.init;
    result.init_model.sp = sp;
  } else {
    std::vector<ErrorSeries> e;
    for (const auto& r : train_recs) e.push_back(r.e);
    if (config.init_target == InitTarget::PhaseIncrement) {
      std::vector<PhaseSeries> phases;
      for (const auto& r : train_recs) phases.push_back(r.phase);
      result.init_model = subspace_init(e, phase_increments(phases), n, config, sp, &init_report,
                                        config.rule);
    } else {
      std::vector<DqSeries> series;
      for (const auto* r : train) series.push_back(r->series);
      result.init_model = subspace_init(e, estimate_eta(series), n, config, sp, &init_report);
    }
  }
  const HwDiscrete d0 = normalform::discretize(result.init_model, dt);
  const Eigen::VectorXd p0 = pack(d0);

  bfgs::Options bo;
  bo.max_iters = config.max_iters;
  bo.gradient_tolerance = config.gradient_tolerance;
  bo.loss_tolerance = config.loss_tolerance;

  double best_score = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_p;
  double best_loss = 0.0;
  std::string stop_reason;
  int finished = 0;

  for (int restart = 0; restart <= config.restarts; ++restart) {
    Eigen::VectorXd start = p0;
    if (restart > 0) {
      Rng rng(derive_seed(config.seed, "restart/" + std::to_string(restart)));
      for (Eigen::Index k = 0; k < start.size(); ++k) {
        start[k] += config.perturbation_scale * (std::abs(start[k]) + 1e-3) * rng.normal();
      }
    }
    auto objective = [&](const Eigen::VectorXd& p, Eigen::VectorXd& grad) {
      const auto g = loss_gradient(unpack(p, n, dt, sp), train_recs, config.rule, config.threads);
      if (!std::isfinite(g.loss)) {
        grad.setZero();
        return std::numeric_limits<double>::infinity();
      }
      grad = pack_gradient(g, dt);
      double l = g.loss;
      if (config.regularization > 0.0) {
        l += config.regularization * p.squaredNorm();
        grad += 2.0 * config.regularization * p;
      }
      return l;
    };
    auto callback = [&](const Eigen::VectorXd& p, const bfgs::IterationInfo& info) {
      const double score = validation_score(unpack(p, n, dt, sp), val_recs, config.rule);
      result.trace.push_back({restart, info.iteration, info.f, info.grad_norm, info.step, score});
      if (score > best_score || best_p.size() == 0) {
        best_score = score;
        best_p = p;
        best_loss = info.f - (config.regularization > 0.0 ? config.regularization * p.squaredNorm() : 0.0);
        result.best_restart = restart;
        result.best_iteration = info.iteration;
      }
      return true;
    };
    try {
      const auto res = bfgs::minimize(objective, start, bo, callback);
      stop_reason = bfgs::to_string(res.reason);
      ++finished;
    } catch (const NumericalError& ex) {
      warn("identify: restart " + std::to_string(restart) + " diverged: " + ex.what());
    }
  }
  if (finished == 0 || best_p.size() == 0) {
    std::ostringstream os;
    os << "identify: all " << config.restarts + 1 << " start(s) diverged";
    if (!result.trace.empty()) os << " (last trace loss " << result.trace.back().loss << ")";
    throw NumericalError(os.str());
  }

  const HwDiscrete best = unpack(best_p, n, dt, sp);
  normalform::Conversion conv = normalform::Conversion::Logarithm;
  if (result.best_restart == 0 && result.best_iteration == 0) {
    result.model = result.init_model;
  } else {
    result.model = normalform::to_continuous(best, &conv);
  }
  result.train_loss = best_loss;
  result.validation_r2 = validation_score(best, val_recs, config.rule, &result.validation);
  result.stop_reason = stop_reason;
  result.stability = stability_of(result.model, dataset.line_admittance);
  result.stability.init_reflected = init_report.reflected;
  result.stability.init_bilinear = init_report.bilinear_fallback;
  result.stability.conversion_bilinear = conv == normalform::Conversion::Bilinear;
  return result;
}

// ---------------------------------------------------------------------------
// Order sweep

int select_order(std::span<const int> orders, std::span<const double> scores,
                 double epsilon_select) {
  if (orders.empty() || orders.size() != scores.size()) {
    throw InputError("select_order: need one score per order");
  }
  const double best = *std::max_element(scores.begin(), scores.end());
  int chosen = std::numeric_limits<int>::max();
  for (std::size_t k = 0; k < orders.size(); ++k) {
    if (scores[k] >= best - epsilon_select) chosen = std::min(chosen, orders[k]);
  }
  return chosen;
}

namespace {

// Order n+1 model with the same I/O map: one extra decoupled stable state
// that the optimizer can couple in.
HwNormalForm pad_order(const HwNormalForm& m, std::uint64_t seed) {
  const int n = m.n_ivars();
  HwNormalForm p = HwNormalForm::zeros(n + 1, m.sp);
  p.A.topLeftCorner(n, n) = m.A;
  p.B.topRows(n) = m.B;
  p.C.head(n) = m.C;
  p.D = m.D;
  double slowest = 1.0;
  for (const auto& l : m.A.eigenvalues()) slowest = std::max(slowest, -l.real());
  p.A(n, n) = -2.0 * slowest;
  Rng rng(seed);
  for (int j = 0; j < 3; ++j) p.B(n, j) = 0.1 * rng.normal();
  return p;
}

}  // namespace

SweepResult order_sweep(const scenarios::Dataset& dataset, std::span<const int> orders,
                        const IdentConfig& config, const SweepOptions& opts) {
  if (orders.empty()) throw InputError("order_sweep: empty order range");
  SweepResult out;
  out.orders.assign(orders.begin(), orders.end());
  auto run = [&](int n) {
    IdentConfig c = config;
    c.n_ivars = n;
    c.init.reset();
    return identify(dataset, c);
  };

  if (!opts.warm_start && config.threads > 1) {
    for (std::size_t start = 0; start < orders.size(); start += config.threads) {
      const std::size_t stop = std::min(orders.size(), start + config.threads);
      std::vector<std::future<IdentResult>> batch;
      for (std::size_t k = start; k < stop; ++k) {
        batch.push_back(std::async(std::launch::async, [&, k] { return run(orders[k]); }));
      }
      for (auto& f : batch) out.results.push_back(f.get());
    }
  } else {
    for (std::size_t k = 0; k < orders.size(); ++k) {
      IdentResult r = run(orders[k]);
      if (opts.warm_start && k > 0 && orders[k] == orders[k - 1] + 1) {
        IdentConfig c = config;
        c.n_ivars = orders[k];
        c.init = pad_order(out.results.back().model,
                           derive_seed(config.seed, "sweep/pad/" + std::to_string(orders[k])));
        IdentResult warm = identify(dataset, c);
        if (warm.validation_r2 > r.validation_r2) {
          warm.stop_reason += " (warm start from order " + std::to_string(orders[k - 1]) + ")";
          r = std::move(warm);
        }
      }
      out.results.push_back(std::move(r));
    }
  }
  std::vector<double> scores;
  for (const auto& r : out.results) scores.push_back(r.validation_r2);
  out.selected_order = select_order(out.orders, scores, opts.epsilon_select);
  for (std::size_t k = 0; k < out.orders.size(); ++k) {
    if (out.orders[k] == out.selected_order) out.selected_index = k;
  }
  return out;
}

}  // namespace nfid::sysid
