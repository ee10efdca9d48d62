#pragma once

// Identification of the normal form from recorded trajectories: subspace
// initialization on the estimated complex frequency, then BFGS on the
// complex-phase trajectory loss with an exact discrete adjoint gradient.

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nfid/bfgs.hpp"
#include "nfid/normalform.hpp"
#include "nfid/scenarios.hpp"

namespace nfid::sysid {

using normalform::HwDiscrete;
using normalform::HwNormalForm;
using normalform::PhaseRule;

/// Target the subspace initializer regresses on.
enum class InitTarget {
  CentralDifference,  // eta from central differences of the measured phase
  PhaseIncrement,     // (Theta_{k+1} - Theta_k) / dt, mapped back through the phase rule
};

struct IdentConfig {
  int n_ivars = 1;
  int max_iters = 2000;
  double gradient_tolerance = 1e-8;
  double loss_tolerance = 1e-12;
  int restarts = 0;
  double perturbation_scale = 0.05;  // relative perturbation of restart inits
  std::uint64_t seed = 0;
  int hankel_rows = 20;
  double regularization = 0.0;  // l2 weight on the optimizer parameters
  PhaseRule rule = PhaseRule::Trapezoidal;
  InitTarget init_target = InitTarget::PhaseIncrement;
  std::size_t threads = 1;  // per-record loss evaluation
  /// Optional starting model replacing the subspace initialization.
  std::optional<HwNormalForm> init;

  void validate() const;
};

/// A record prepared for the loss: inputs, measured phase and voltage.
struct PhaseRecord {
  std::string name;
  normalform::ErrorSeries e;
  PhaseSeries phase;
  std::vector<cplx> v;
};

PhaseRecord prepare_record(const std::string& name, const DqSeries& series, const Setpoints& sp);
std::vector<PhaseRecord> prepare_records(std::span<const scenarios::Record* const> records,
                                         const Setpoints& sp);

/// Central-difference complex frequency of each record (initialization only).
std::vector<std::vector<cplx>> estimate_eta(std::span<const DqSeries> records);

struct InitReport {
  int reflected = 0;  // eigenvalues of A moved to the left half plane
  bool bilinear_fallback = false;
  Eigen::VectorXd singular_values;
};

/// (Theta_{k+1} - Theta_k) / dt for k < N-1.
std::vector<std::vector<cplx>> phase_increments(std::span<const PhaseSeries> phases);

/// Fits e -> (Re eta, Im eta) with a subspace method and converts to
/// continuous time. Throws InputError on rank-deficient excitation (naming
/// the channel) or too few samples for the parameter count.
///
/// With `increment_rule` set, `eta` holds phase increments (one sample
/// shorter than e) and the fitted output map is converted back through the
/// rule: for the trapezoidal rule the increment is C (I + A_d)/2 x + (D + C B_d/2) e.
HwNormalForm subspace_init(std::span<const normalform::ErrorSeries> e,
                           std::span<const std::vector<cplx>> eta, int n_ivars,
                           const IdentConfig& config, const Setpoints& sp,
                           InitReport* report = nullptr,
                           std::optional<PhaseRule> increment_rule = std::nullopt);

/// sum_k |measured_k - predicted_k|^2.
double loss(const PhaseSeries& predicted, const PhaseSeries& measured);

/// Loss and gradient w.r.t. every real parameter of the discrete model.
struct DiscreteGradient {
  double loss = 0.0;
  Eigen::MatrixXd dAd;
  Eigen::MatrixXd dBd;
  Eigen::RowVectorXd dCr, dCi;
  Eigen::RowVector3d dDr = Eigen::RowVector3d::Zero();
  Eigen::RowVector3d dDi = Eigen::RowVector3d::Zero();
};

/// Same for the continuous parameters (A, B through the zero-order-hold map).
struct ContinuousGradient {
  double loss = 0.0;
  Eigen::MatrixXd dA;
  Eigen::MatrixXd dB;
  Eigen::RowVectorXd dCr, dCi;
  Eigen::RowVector3d dDr = Eigen::RowVector3d::Zero();
  Eigen::RowVector3d dDi = Eigen::RowVector3d::Zero();
};

/// Open-loop loss summed over records (x(0) = 0, Theta(0) = measured) and its
/// exact gradient by reverse accumulation through the recursion.
DiscreteGradient loss_gradient(const HwDiscrete& model, std::span<const PhaseRecord> records,
                               PhaseRule rule = PhaseRule::Trapezoidal, std::size_t threads = 1);

ContinuousGradient loss_gradient(const HwNormalForm& model, double dt,
                                 std::span<const PhaseRecord> records,
                                 PhaseRule rule = PhaseRule::Trapezoidal, std::size_t threads = 1);

/// Summed open-loop loss without the gradient; +inf when the simulation
/// overflows.
double total_loss(const HwDiscrete& model, std::span<const PhaseRecord> records,
                  PhaseRule rule = PhaseRule::Trapezoidal);

/// Packing of the optimizer parameters: A~ = (A_d - I) / dt, B~ = B_d / dt
/// (row-major), then Re C, Im C, Re D, Im D.
Eigen::VectorXd pack(const HwDiscrete& model);
HwDiscrete unpack(const Eigen::VectorXd& p, int n, double dt, const Setpoints& sp);
std::size_t parameter_count(int n);

struct RecordScore {
  std::string name;
  double r2_d = 0.0;
  double r2_q = 0.0;
};

struct TraceEntry {
  int restart = 0;
  int iteration = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double step = 0.0;
  double validation_r2 = 0.0;  // mean over records of (r2_d + r2_q) / 2
};

struct StabilityReport {
  std::vector<cplx> eig_A;
  /// Eigenvalues of the closed-loop linearization on the default stiff-bus
  /// line at the model's equilibrium (empty when no equilibrium was found).
  std::vector<cplx> eig_closed_loop;
  double max_real_A = 0.0;
  int init_reflected = 0;
  bool init_bilinear = false;
  bool conversion_bilinear = false;  // final discrete -> continuous map
};

struct IdentResult {
  HwNormalForm model;
  HwNormalForm init_model;
  double train_loss = 0.0;
  std::vector<RecordScore> validation;
  double validation_r2 = 0.0;  // mean over records and components
  std::vector<TraceEntry> trace;
  StabilityReport stability;
  int best_restart = 0;
  int best_iteration = 0;
  std::string stop_reason;
};

/// Mean over records of (r2_d + r2_q) / 2 of the open-loop prediction.
double validation_score(const HwDiscrete& model, std::span<const PhaseRecord> records,
                        PhaseRule rule, std::vector<RecordScore>* per_record = nullptr);

/// Needs non-empty train and validation partitions.
IdentResult identify(const scenarios::Dataset& dataset, const IdentConfig& config);

struct SweepResult {
  std::vector<IdentResult> results;  // one per order, in order
  std::vector<int> orders;
  int selected_order = 0;
  std::size_t selected_index = 0;
};

struct SweepOptions {
  double epsilon_select = 0.002;
  /// Also try starting order n from the order n-1 result (padded with a
  /// fast decoupled state); keeps the better of the two by validation R^2.
  bool warm_start = true;
};

/// Smallest order whose validation R^2 is within epsilon_select of the best.
int select_order(std::span<const int> orders, std::span<const double> scores,
                 double epsilon_select);

SweepResult order_sweep(const scenarios::Dataset& dataset, std::span<const int> orders,
                        const IdentConfig& config, const SweepOptions& opts = {});

/// Linearization of model + single-bus network around an equilibrium:
/// states (Re Theta, Im Theta, x).
std::optional<Eigen::MatrixXd> closed_loop_jacobian(const HwNormalForm& model,
                                                    const plants::NetworkConfig& net,
                                                    const plants::GridState& grid);

}  // namespace nfid::sysid
