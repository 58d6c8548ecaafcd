#include <gtest/gtest.h>

#include "dreammatcher/pca.hpp"
#include "support/generators.hpp"

using namespace dm;

TEST(Pca, LineDataKeepsAllVariance) {
  Eigen::MatrixXd s(6, 2);
  for (int i = 0; i < 6; ++i) s.row(i) << i * 2.0 - 3.0, (i * 2.0 - 3.0) * 0.5 + 1.0;
  const PcaResult r = pca_fit_project(s, 1);
  const double total = (s.rowwise() - s.colwise().mean()).squaredNorm() / 6.0;
  const double projected = r.projected.squaredNorm() / 6.0;
  EXPECT_NEAR(projected, total, 1e-6);
  EXPECT_FALSE(r.rank_deficient());
}

TEST(Pca, CompleteBasisReconstructs) {
  testkit::Gen gen(41);
  Eigen::MatrixXd s(20, 5);
  for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = gen.normal();
  const PcaResult r = pca_fit_project(s, 5);
  const Eigen::MatrixXd back = (r.projected * r.basis.transpose()).rowwise() + r.mean;
  EXPECT_LE((back - s).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(Pca, AxisAlignedPoints) {
  Eigen::MatrixXd s(4, 2);
  s << 1, 0, -1, 0, 0, 0.5, 0, -0.5;
  const PcaResult r = pca_fit_project(s, 1);
  EXPECT_NEAR(std::abs(r.basis(0, 0)), 1.0, 1e-12);
  EXPECT_NEAR(r.basis(1, 0), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(r.projected(0, 0)), 1.0, 1e-12);
  EXPECT_NEAR(r.projected(0, 0), -r.projected(1, 0), 1e-12);
  EXPECT_NEAR(r.projected(2, 0), 0.0, 1e-12);
  EXPECT_NEAR(r.projected(3, 0), 0.0, 1e-12);
  EXPECT_NEAR(r.variances(0), 0.5, 1e-12);
}

TEST(Pca, RankDeficientIsCompletedAndFlagged) {
  Eigen::MatrixXd s(5, 4);
  for (int i = 0; i < 5; ++i) s.row(i) << i, 2.0 * i, 0, 0;
  const PcaResult r = pca_fit_project(s, 3);
  EXPECT_EQ(r.completed, 2u);
  const Eigen::MatrixXd gram = r.basis.transpose() * r.basis;
  EXPECT_LE((gram - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Pca, GramRouteAgreesWithCovarianceRoute) {
  testkit::Gen gen(42);
  // D > N takes the Gram route; compare projected pairwise distances against
  // the raw centered data (full rank N-1 subspace).
  Eigen::MatrixXd s(6, 10);
  for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = gen.normal();
  const PcaResult r = pca_fit_project(s, 5);
  EXPECT_TRUE(r.used_gram);
  const Eigen::MatrixXd centered = s.rowwise() - s.colwise().mean();
  const Eigen::MatrixXd g_raw = centered * centered.transpose();
  const Eigen::MatrixXd g_proj = r.projected * r.projected.transpose();
  EXPECT_LE((g_raw - g_proj).cwiseAbs().maxCoeff(), 1e-9);
  const Eigen::MatrixXd gram = r.basis.transpose() * r.basis;
  EXPECT_LE((gram - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Pca, VariancesDescend) {
  testkit::Gen gen(43);
  Eigen::MatrixXd s(40, 6);
  for (Eigen::Index i = 0; i < s.rows(); ++i)
    for (Eigen::Index j = 0; j < 6; ++j) s(i, j) = gen.normal() * static_cast<double>(j + 1);
  const PcaResult r = pca_fit_project(s, 6);
  for (Eigen::Index k = 1; k < 6; ++k) EXPECT_GE(r.variances(k - 1), r.variances(k));
}

TEST(Pca, Errors) {
  Eigen::MatrixXd s = Eigen::MatrixXd::Ones(3, 2);
  EXPECT_THROW(pca_fit_project(s, 0), Error);
  EXPECT_THROW(pca_fit_project(s, 3), Error);
  Eigen::MatrixXd tall = Eigen::MatrixXd::Ones(2, 5);
  EXPECT_THROW(pca_fit_project(tall, 3), Error);
  s(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(pca_fit_project(s, 1), Error);
}
