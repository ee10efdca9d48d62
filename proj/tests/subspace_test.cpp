#include "nfid/subspace.hpp"

#include <gtest/gtest.h>

#include "nfid/error.hpp"
#include "nfid/rng.hpp"

namespace nfid::subspace {
namespace {

IoRecord simulate(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Eigen::MatrixXd& C,
                  const Eigen::MatrixXd& D, Rng& rng, int N) {
  IoRecord r;
  r.u.resize(N, B.cols());
  r.y.resize(N, C.rows());
  Eigen::VectorXd x = Eigen::VectorXd::Zero(A.rows());
  for (int k = 0; k < N; ++k) {
    for (Eigen::Index j = 0; j < B.cols(); ++j) r.u(k, j) = rng.normal();
    const Eigen::VectorXd u = r.u.row(k).transpose();
    r.y.row(k) = (C * x + D * u).transpose();
    x = A * x + B * u;
  }
  return r;
}

Eigen::MatrixXd markov(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Eigen::MatrixXd& C,
                       const Eigen::MatrixXd& D, int count) {
  Eigen::MatrixXd out(C.rows(), B.cols() * count);
  out.leftCols(B.cols()) = D;
  Eigen::MatrixXd AkB = B;
  for (int k = 1; k < count; ++k) {
    out.middleCols(k * B.cols(), B.cols()) = C * AkB;
    AkB = A * AkB;
  }
  return out;
}

TEST(StreamingQr, MatchesGramMatrix) {
  Rng rng(31);
  Eigen::MatrixXd M(500, 7);
  for (Eigen::Index r = 0; r < M.rows(); ++r)
    for (Eigen::Index c = 0; c < M.cols(); ++c) M(r, c) = rng.normal();
  StreamingQr qr(7);
  for (Eigen::Index r = 0; r < M.rows(); r += 37) qr.add_rows(M.middleRows(r, std::min<Eigen::Index>(37, M.rows() - r)));
  const Eigen::MatrixXd R = qr.r();
  EXPECT_EQ(qr.rows_seen(), 500);
  EXPECT_LT((R.transpose() * R - M.transpose() * M).norm(), 1e-9 * (M.transpose() * M).norm());
}

TEST(Identify, RecoversMarkovParameters) {
  Rng rng(32);
  Eigen::MatrixXd A(2, 2), B(2, 3), C(2, 2), D(2, 3);
  A << 0.95, 0.1, -0.05, 0.9;
  B << 1.0, 0.0, 0.5, 0.0, 1.0, -0.3;
  C << 1.0, 0.5, -0.2, 1.0;
  D << 0.1, 0.0, 0.0, 0.0, 0.2, 0.0;
  const std::vector<IoRecord> recs{simulate(A, B, C, D, rng, 600), simulate(A, B, C, D, rng, 400)};
  Options o;
  o.order = 2;
  o.block_rows = 8;
  const auto m = identify(recs, o);
  const Eigen::MatrixXd h = markov(A, B, C, D, 30), g = markov(m.A, m.B, m.C, m.D, 30);
  EXPECT_LT((h - g).norm() / h.norm(), 1e-8);
  ASSERT_EQ(m.x0.size(), 2u);
  EXPECT_GE(m.singular_values.size(), 2);
  EXPECT_LT(m.singular_values[2] / m.singular_values[1], 1e-8);
}

TEST(Identify, RejectsShortRecordsAndHighOrders) {
  Rng rng(33);
  Eigen::MatrixXd A = Eigen::MatrixXd::Constant(1, 1, 0.5), B = Eigen::MatrixXd::Ones(1, 1);
  Eigen::MatrixXd C = Eigen::MatrixXd::Ones(1, 1), D = Eigen::MatrixXd::Zero(1, 1);
  const std::vector<IoRecord> shortrec{simulate(A, B, C, D, rng, 10)};
  Options o;
  o.block_rows = 20;
  EXPECT_THROW(identify(shortrec, o), InputError);
  const std::vector<IoRecord> rec{simulate(A, B, C, D, rng, 500)};
  o.block_rows = 3;
  o.order = 4;
  EXPECT_THROW(identify(rec, o), InputError);
}

}  // namespace
}  // namespace nfid::subspace
