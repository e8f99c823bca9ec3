#include <gtest/gtest.h>

#include <random>

#include "abc3/error.hpp"
#include "abc3/gp.hpp"
#include "oracles.hpp"

using namespace abc3;

namespace {

VectorXd gather(const VectorXd& v, const std::vector<Index>& idx) {
  VectorXd out(static_cast<Index>(idx.size()));
  for (size_t i = 0; i < idx.size(); ++i) out[static_cast<Index>(i)] = v[idx[i]];
  return out;
}

}  // namespace

TEST(ArmState, EmptyStateIsPrior) {
  std::mt19937_64 gen(1);
  const MatrixXd pool = oracle::random_matrix(gen, 8, 2);
  const ArmState s = ArmState::fit(KernelSpec::rbf(1.0, 1.0), pool, {}, VectorXd(0));
  const Posterior p = s.posterior(pool);
  EXPECT_TRUE(p.mean.isZero());
  EXPECT_TRUE((p.variance.array() == 1.0).all());
  EXPECT_TRUE((s.pool_variance().array() == 1.0).all());
  EXPECT_DOUBLE_EQ(s.integrated_variance(pool), 1.0);
}

TEST(ArmState, PosteriorMatchesDenseInverse) {
  std::mt19937_64 gen(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = oracle::random_int(gen, 5, 25), d = oracle::random_int(gen, 1, 5);
    const Index t = oracle::random_int(gen, 1, static_cast<int>(n));
    const MatrixXd pool = oracle::random_matrix(gen, n, d);
    const VectorXd y = oracle::random_vector(gen, n);
    const auto idx = oracle::random_subset(gen, n, t);
    const KernelSpec k = trial % 2 ? KernelSpec::rbf(1.0, 1.0) : KernelSpec::matern(2.5, 0.8, 0.05);
    const ArmState s = ArmState::fit(k, pool, idx, gather(y, idx));
    const Posterior p = s.posterior(pool);
    const auto ref = oracle::posterior(k, oracle::rows(pool, idx), gather(y, idx), pool);
    EXPECT_LT((p.mean - ref.mean).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((p.variance - ref.variance).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((s.pool_variance() - ref.variance).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(ArmState, ExtendMatchesRefitAcrossRefactorBoundary) {
  std::mt19937_64 gen(3);
  const Index n = 90;
  const MatrixXd pool = oracle::random_matrix(gen, n, 3);
  const VectorXd y = oracle::random_vector(gen, n);
  const KernelSpec k = KernelSpec::rbf(1.0, 1.0);
  const auto order = oracle::random_subset(gen, n, 80);
  ArmState s = ArmState::fit(k, pool, {}, VectorXd(0));
  for (size_t i = 0; i < order.size(); ++i) {
    s = s.extend(pool, order[i], y[order[i]]);
    if (i % 13 == 0 || i + 1 == order.size()) {
      std::vector<Index> seen(order.begin(), order.begin() + static_cast<long>(i) + 1);
      const ArmState ref = ArmState::fit(k, pool, seen, gather(y, seen));
      const Posterior a = s.posterior(pool), b = ref.posterior(pool);
      EXPECT_LT((a.mean - b.mean).cwiseAbs().maxCoeff(), 1e-8) << "after " << i + 1;
      EXPECT_LT((a.variance - b.variance).cwiseAbs().maxCoeff(), 1e-8);
      EXPECT_LT((s.pool_variance() - ref.pool_variance()).cwiseAbs().maxCoeff(), 1e-8);
      EXPECT_LT((s.solved_pool() - ref.solved_pool()).cwiseAbs().maxCoeff(), 1e-8);
    }
  }
  EXPECT_EQ(s.size(), 80);
}

TEST(ArmState, ExtendWithoutPoolCache) {
  std::mt19937_64 gen(4);
  const MatrixXd pool = oracle::random_matrix(gen, 20, 2);
  ArmState s = ArmState::fit(KernelSpec::rbf(1.0, 0.1), pool, {}, VectorXd(0), Arm::Treatment, false);
  s = s.extend(pool, 3, 1.0).extend(pool, 7, -1.0);
  EXPECT_FALSE(s.has_pool_cache());
  EXPECT_EQ(s.arm(), Arm::Treatment);
  EXPECT_THROW(s.pool_variance(), StateError);
  const auto ref = oracle::posterior(KernelSpec::rbf(1.0, 0.1), oracle::rows(pool, {3, 7}),
                                     (VectorXd(2) << 1.0, -1.0).finished(), pool);
  EXPECT_LT((s.posterior(pool).mean - ref.mean).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_NEAR(s.integrated_variance(pool), ref.variance.mean(), 1e-10);
}

TEST(ArmState, ExtendIsPureAndRejectsRepeats) {
  std::mt19937_64 gen(5);
  const MatrixXd pool = oracle::random_matrix(gen, 10, 2);
  const ArmState a = ArmState::fit(KernelSpec::rbf(1.0, 1.0), pool, {}, VectorXd(0));
  const ArmState b = a.extend(pool, 4, 0.5);
  EXPECT_EQ(a.size(), 0);
  EXPECT_EQ(b.size(), 1);
  EXPECT_THROW(b.extend(pool, 4, 0.1), StateError);
  EXPECT_THROW(b.extend(pool, 10, 0.1), InputError);
  EXPECT_THROW(b.extend(pool, 5, std::nan("")), InputError);
}

TEST(ArmState, NoiselessDuplicateIsNumericalError) {
  MatrixXd pool(3, 1);
  pool << 0.0, 0.0, 1.0;
  const ArmState s = ArmState::fit(KernelSpec::rbf(1.0, 0.0), pool, {}, VectorXd(0)).extend(pool, 0, 1.0);
  EXPECT_THROW(s.extend(pool, 1, 1.0), NumericalError);
}

TEST(ArmState, FitValidatesInputs) {
  std::mt19937_64 gen(6);
  const MatrixXd pool = oracle::random_matrix(gen, 5, 2);
  const std::vector<Index> dup{1, 1};
  EXPECT_THROW(ArmState::fit(KernelSpec::rbf(1.0), pool, dup, VectorXd::Zero(2)), InputError);
  const std::vector<Index> out{9};
  EXPECT_THROW(ArmState::fit(KernelSpec::rbf(1.0), pool, out, VectorXd::Zero(1)), InputError);
  const std::vector<Index> one{0};
  EXPECT_THROW(ArmState::fit(KernelSpec::rbf(1.0), pool, one, VectorXd::Zero(2)), InputError);
}

TEST(LogMarginalLikelihood, MatchesDeterminantFormula) {
  std::mt19937_64 gen(7);
  for (int trial = 0; trial < 10; ++trial) {
    const MatrixXd X = oracle::random_matrix(gen, 12, 3);
    const VectorXd y = oracle::random_vector(gen, 12);
    const KernelSpec k = KernelSpec::composite(1.3, 0.9, 0.2);
    EXPECT_NEAR(log_marginal_likelihood(k, X, y), oracle::log_marginal_likelihood(k, X, y), 1e-9);
  }
}

TEST(LogMarginalLikelihood, GradientMatchesFiniteDifferences) {
  std::mt19937_64 gen(8);
  const MatrixXd X = oracle::random_matrix(gen, 15, 2);
  const VectorXd y = oracle::random_vector(gen, 15);
  const Eigen::Vector3d theta(std::log(0.8), std::log(1.4), std::log(0.3));
  auto at = [&](const Eigen::Vector3d& t) {
    return KernelSpec::composite(std::exp(t[0]), std::exp(t[1]), std::exp(t[2]));
  };
  Eigen::Vector3d grad;
  log_marginal_likelihood(at(theta), X, y, &grad);
  for (int i = 0; i < 3; ++i) {
    Eigen::Vector3d up = theta, down = theta;
    up[i] += 1e-6;
    down[i] -= 1e-6;
    const double fd = (oracle::log_marginal_likelihood(at(up), X, y) -
                       oracle::log_marginal_likelihood(at(down), X, y)) / 2e-6;
    EXPECT_NEAR(grad[i], fd, 1e-5 * (1.0 + std::abs(fd))) << "component " << i;
  }
}
