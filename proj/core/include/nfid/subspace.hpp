#pragma once

// PO-MOESP subspace identification of a discrete-time LTI system
//   x_{k+1} = A x_k + B u_k,   y_k = C x_k + D u_k
// from one or more input/output records. The block-Hankel data matrix is
// reduced by a streaming QR, so memory is independent of record length.

#include <Eigen/Dense>
#include <span>
#include <vector>

namespace nfid::subspace {

/// One record: rows are samples, columns channels.
struct IoRecord {
  Eigen::MatrixXd u;  // N x m
  Eigen::MatrixXd y;  // N x p
};

struct Options {
  int order = 1;
  int block_rows = 20;  // Hankel depth s (past and future)
};

struct Model {
  Eigen::MatrixXd A, B, C, D;
  std::vector<Eigen::VectorXd> x0;      // estimated initial state per record
  Eigen::VectorXd singular_values;      // of the projected Hankel matrix
  int reflected = 0;                    // eigenvalues mirrored into the unit disc
};

/// Upper-triangular factor R of a tall matrix fed row blocks at a time
/// (R^T R equals the Gram matrix of all rows seen so far).
class StreamingQr {
 public:
  explicit StreamingQr(Eigen::Index cols);
  void add_rows(const Eigen::MatrixXd& rows);
  [[nodiscard]] Eigen::MatrixXd r();
  [[nodiscard]] Eigen::Index rows_seen() const { return seen_; }

 private:
  void flush();

  Eigen::Index cols_;
  Eigen::MatrixXd r_;
  Eigen::MatrixXd pending_;
  Eigen::Index pending_rows_ = 0;
  Eigen::Index seen_ = 0;
};

/// Throws InputError when the records are too short for the Hankel depth or
/// the requested order exceeds s * p.
Model identify(std::span<const IoRecord> records, const Options& opts);

/// Least-squares B, D and per-record x0 for fixed A, C.
void fit_input_matrices(std::span<const IoRecord> records, Model& model);

}  // namespace nfid::subspace
