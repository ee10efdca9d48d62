#include "nfid/subspace.hpp"

#include <algorithm>
#include <complex>
#include <sstream>

#include "nfid/error.hpp"

namespace nfid::subspace {

StreamingQr::StreamingQr(Eigen::Index cols)
    : cols_(cols), r_(Eigen::MatrixXd::Zero(0, cols)), pending_(std::max<Eigen::Index>(4 * cols, 256), cols) {}

void StreamingQr::add_rows(const Eigen::MatrixXd& rows) {
  if (rows.cols() != cols_) throw InputError("StreamingQr: column count mismatch");
  for (Eigen::Index k = 0; k < rows.rows(); ++k) {
    pending_.row(pending_rows_++) = rows.row(k);
    if (pending_rows_ == pending_.rows()) flush();
  }
  seen_ += rows.rows();
}

void StreamingQr::flush() {
  if (pending_rows_ == 0) return;
  Eigen::MatrixXd stack(r_.rows() + pending_rows_, cols_);
  stack << r_, pending_.topRows(pending_rows_);
  pending_rows_ = 0;
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(stack);
  const Eigen::Index k = std::min(stack.rows(), cols_);
  r_ = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
}

Eigen::MatrixXd StreamingQr::r() {
  flush();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(cols_, cols_);
  out.topRows(r_.rows()) = r_;
  return out;
}

namespace {

// Mirrors eigenvalues outside the unit circle to 1 / conj(lambda).
int stabilize(Eigen::MatrixXd& A) {
  if (A.rows() == 0) return 0;
  Eigen::EigenSolver<Eigen::MatrixXd> es(A);
  Eigen::VectorXcd lam = es.eigenvalues();
  int count = 0;
  for (auto& l : lam) {
    if (std::abs(l) > 1.0) {
      l = 1.0 / std::conj(l);
      ++count;
    }
  }
  if (count == 0) return 0;
  const Eigen::MatrixXcd V = es.eigenvectors();
  A = (V * lam.asDiagonal() * V.inverse()).real();
  return count;
}

}  // namespace

Model identify(std::span<const IoRecord> records, const Options& opts) {
  if (records.empty()) throw InputError("subspace: no records");
  const Eigen::Index m = records[0].u.cols();
  const Eigen::Index p = records[0].y.cols();
  const int s = opts.block_rows;
  const int n = opts.order;
  if (s < 1) throw InputError("subspace: block_rows must be >= 1");
  if (n < 1) throw InputError("subspace: order must be >= 1");
  if (n > s * p) {
    std::ostringstream os;
    os << "subspace: order " << n << " exceeds block_rows * outputs = " << s * p;
    throw InputError(os.str());
  }

  const Eigen::Index width = 2 * (m + p) * s;
  StreamingQr qr(width);
  Eigen::MatrixXd rows(1, width);
  for (const auto& rec : records) {
    if (rec.u.rows() != rec.y.rows() || rec.u.cols() != m || rec.y.cols() != p) {
      throw InputError("subspace: inconsistent record dimensions");
    }
    const Eigen::Index N = rec.u.rows();
    for (Eigen::Index j = 0; j + 2 * s <= N; ++j) {
      Eigen::Index c = 0;
      for (int i = 0; i < s; ++i, c += m) rows.block(0, c, 1, m) = rec.u.row(j + s + i);
      for (int i = 0; i < s; ++i, c += m) rows.block(0, c, 1, m) = rec.u.row(j + i);
      for (int i = 0; i < s; ++i, c += p) rows.block(0, c, 1, p) = rec.y.row(j + i);
      for (int i = 0; i < s; ++i, c += p) rows.block(0, c, 1, p) = rec.y.row(j + s + i);
      qr.add_rows(rows);
    }
  }
  if (qr.rows_seen() < width) {
    std::ostringstream os;
    os << "subspace: only " << qr.rows_seen() << " Hankel columns; need at least " << width;
    throw InputError(os.str());
  }

  const Eigen::MatrixXd R = qr.r();
  const Eigen::Index mu = m * s;
  const Eigen::Index wp = (m + p) * s;
  const Eigen::Index py = p * s;
  // L = R^T; L32 is the (future outputs, past data) block.
  const Eigen::MatrixXd L32 = R.block(mu, mu + wp, wp, py).transpose();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(L32, Eigen::ComputeThinU);
  Model model;
  model.singular_values = svd.singularValues();
  const Eigen::MatrixXd gamma =
      svd.matrixU().leftCols(n) * model.singular_values.head(n).cwiseSqrt().asDiagonal();

  model.C = gamma.topRows(p);
  const Eigen::MatrixXd upper = gamma.topRows(py - p);
  const Eigen::MatrixXd lower = gamma.bottomRows(py - p);
  model.A = upper.completeOrthogonalDecomposition().solve(lower);
  model.reflected = stabilize(model.A);
  model.B = Eigen::MatrixXd::Zero(n, m);
  model.D = Eigen::MatrixXd::Zero(p, m);
  fit_input_matrices(records, model);
  return model;
}

void fit_input_matrices(std::span<const IoRecord> records, Model& model) {
  const Eigen::Index n = model.A.rows();
  const Eigen::Index m = records[0].u.cols();
  const Eigen::Index p = records[0].y.cols();
  const auto R = static_cast<Eigen::Index>(records.size());
  const Eigen::Index nb = n * m;
  const Eigen::Index nd = p * m;
  const Eigen::Index cols = nb + nd + R * n;

  StreamingQr qr(cols + 1);
  Eigen::MatrixXd row(p, cols + 1);
  for (Eigen::Index r = 0; r < R; ++r) {
    const auto& rec = records[static_cast<std::size_t>(r)];
    // Z: response of the state to unit entries of B; X: free response to x0.
    Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(n, nb);
    Eigen::MatrixXd X = Eigen::MatrixXd::Identity(n, n);
    for (Eigen::Index k = 0; k < rec.u.rows(); ++k) {
      row.setZero();
      if (n > 0) {
        row.leftCols(nb) = model.C * Z;
        row.block(0, nb + nd + r * n, p, n) = model.C * X;
      }
      for (Eigen::Index c = 0; c < p; ++c) {
        for (Eigen::Index b = 0; b < m; ++b) row(c, nb + c * m + b) = rec.u(k, b);
      }
      row.col(cols) = rec.y.row(k).transpose();
      qr.add_rows(row);
      if (n > 0) {
        Eigen::MatrixXd Zn = model.A * Z;
        for (Eigen::Index a = 0; a < n; ++a) {
          for (Eigen::Index b = 0; b < m; ++b) Zn(a, a * m + b) += rec.u(k, b);
        }
        Z.swap(Zn);
        X = model.A * X;
      }
    }
  }
  const Eigen::MatrixXd Rf = qr.r();
  const Eigen::MatrixXd R11 = Rf.topLeftCorner(cols, cols);
  const Eigen::VectorXd rhs = Rf.topRightCorner(cols, 1);
  const Eigen::VectorXd theta = R11.completeOrthogonalDecomposition().solve(rhs);

  model.B.resize(n, m);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = 0; b < m; ++b) model.B(a, b) = theta(a * m + b);
  }
  model.D.resize(p, m);
  for (Eigen::Index c = 0; c < p; ++c) {
    for (Eigen::Index b = 0; b < m; ++b) model.D(c, b) = theta(nb + c * m + b);
  }
  model.x0.clear();
  for (Eigen::Index r = 0; r < R; ++r) model.x0.push_back(theta.segment(nb + nd + r * n, n));
}

}  // namespace nfid::subspace
