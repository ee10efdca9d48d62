#pragma once

// Hammerstein-Wiener normal form of a grid-forming device:
//
//   e     = (Re(v i*), Im(v i*), |v|^2) - (P^s, Q^s, |v^s|^2)
//   dx/dt = A x + B e            (A, B real)
//   eta   = C x + D e            (C, D complex)
//   dTheta/dt = eta,   v = exp(Theta)

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nfid/plants.hpp"
#include "nfid/signal.hpp"
#include "nfid/types.hpp"

namespace nfid::normalform {

using Vector3 = Eigen::Vector3d;
using RowVector3c = Eigen::Matrix<cplx, 1, 3>;
using RowVectorXc = Eigen::Matrix<cplx, 1, Eigen::Dynamic>;

/// Continuous-time model.
struct HwNormalForm {
  Eigen::MatrixXd A;  // n x n
  Eigen::MatrixXd B;  // n x 3
  RowVectorXc C;      // 1 x n
  RowVector3c D = RowVector3c::Zero();
  Setpoints sp;

  [[nodiscard]] int n_ivars() const { return static_cast<int>(A.rows()); }
  /// Throws InputError on inconsistent dimensions or non-finite entries.
  void validate() const;

  static HwNormalForm zeros(int n, Setpoints sp);
};

/// Zero-order-hold sampled model; C, D carry over unchanged.
struct HwDiscrete {
  Eigen::MatrixXd Ad;
  Eigen::MatrixXd Bd;
  RowVectorXc C;
  RowVector3c D = RowVector3c::Zero();
  Setpoints sp;
  double dt = 0.0;

  [[nodiscard]] int n_ivars() const { return static_cast<int>(Ad.rows()); }
  void validate() const;
};

struct ErrorSeries {
  std::vector<Vector3> e;
  double dt = 0.0;

  [[nodiscard]] std::size_t size() const { return e.size(); }
};

enum class PhaseRule {
  Trapezoidal,   // Theta_{k+1} = Theta_k + dt/2 (eta_k + C x_{k+1} + D e_k)
  ForwardEuler,  // Theta_{k+1} = Theta_k + dt eta_k
};

Vector3 error_coordinates(cplx v, cplx i, const Setpoints& sp);
ErrorSeries error_series(const DqSeries& series, const Setpoints& sp);

/// A_d = exp(A dt), B_d = int_0^dt exp(A s) ds B via the augmented exponential.
HwDiscrete discretize(const HwNormalForm& model, double dt);

enum class Conversion { Logarithm, Bilinear };

/// Inverse of discretize: matrix logarithm of the augmented matrix; falls back
/// to the bilinear transform when A_d has an eigenvalue on the negative real
/// axis (or too close to it), reporting which path was taken.
HwNormalForm to_continuous(const HwDiscrete& model, Conversion* used = nullptr);

struct OpenLoopResult {
  PhaseSeries phase;
  std::vector<cplx> v;
  std::vector<cplx> eta;  // eta_k = C x_k + D e_k
};

/// Drives the model with recorded inputs (no feedback through the network).
OpenLoopResult simulate_open_loop(const HwDiscrete& model, const ErrorSeries& e, cplx theta0,
                                  const Eigen::VectorXd& xc0,
                                  PhaseRule rule = PhaseRule::Trapezoidal);

struct ClosedLoopOptions {
  PhaseRule rule = PhaseRule::Trapezoidal;
  double band_low = 0.5;   // |v| band used to report divergence
  double band_high = 1.5;
  bool throw_on_nonfinite = true;  // otherwise truncate at the first non-finite step
};

struct ClosedLoopResult {
  DqSeries series;
  std::optional<double> first_out_of_band;  // first time |v| left the band
  std::optional<double> truncated_at;       // set when the run stopped early
};

/// Couples the model to a single-bus network: at every step the current is
/// solved from the present voltage, then the state and phase advance.
ClosedLoopResult simulate_closed_loop(const HwDiscrete& model, const plants::NetworkConfig& net,
                                      plants::GridState grid,
                                      std::span<const plants::GridEvent> events, double t_end,
                                      cplx theta0, const Eigen::VectorXd& xc0,
                                      const ClosedLoopOptions& opts = {});

struct Equilibrium {
  cplx theta;
  Eigen::VectorXd xc;
  Vector3 e;
  double residual = 0.0;
  double omega = 0.0;  // rotation speed (Im eta) when the slack is disconnected
};

/// Solves eta = 0, dx/dt = 0 together with the (constant) single-bus network
/// by damped Newton. With the breaker open the steady state rotates at
/// Im eta and theta's angle keeps its initial value. Returns nullopt with a
/// diagnostic on failure.
std::optional<Equilibrium> equilibrium(const HwNormalForm& model,
                                       const plants::NetworkConfig& net,
                                       const plants::GridState& grid,
                                       std::string* diagnostic = nullptr);

/// h_0 = D, h_k = C A_d^{k-1} B_d for k >= 1.
std::vector<RowVector3c> markov_parameters(const HwDiscrete& model, int count);

/// Same I/O map, states transformed by x' = T x.
HwNormalForm similarity_transform(const HwNormalForm& model, const Eigen::MatrixXd& T);

}  // namespace nfid::normalform
