#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "abc3/error.hpp"
#include "abc3/kernel.hpp"
#include "oracles.hpp"

using namespace abc3;

namespace {

constexpr double kPi = 3.14159265358979323846;

VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

}  // namespace

TEST(Kernel, RbfClosedForm) {
  const KernelSpec k = KernelSpec::rbf(2.0);
  const VectorXd a = vec({0.0, 1.0}), b = vec({3.0, -3.0});
  // squared distance 9 + 16 = 25
  EXPECT_DOUBLE_EQ(eval_kernel(k, a, b), std::exp(-25.0 / 8.0));
  EXPECT_DOUBLE_EQ(eval_kernel(k, a, a), 1.0);
}

TEST(Kernel, MaternClosedForms) {
  const VectorXd a = vec({0.0}), b = vec({1.5});
  const double l = 0.7, r = 1.5 / l;
  EXPECT_NEAR(eval_kernel(KernelSpec::matern(0.5, l), a, b), std::exp(-r), 1e-15);
  EXPECT_NEAR(eval_kernel(KernelSpec::matern(1.5, l), a, b),
              (1 + std::sqrt(3.0) * r) * std::exp(-std::sqrt(3.0) * r), 1e-15);
  EXPECT_NEAR(eval_kernel(KernelSpec::matern(2.5, l), a, b),
              (1 + std::sqrt(5.0) * r + 5.0 * r * r / 3.0) * std::exp(-std::sqrt(5.0) * r), 1e-15);
}

TEST(Kernel, ExpSineSquaredIsPeriodic) {
  const KernelSpec k = KernelSpec::exp_sine_squared(1.3, 2.0);
  const VectorXd a = vec({0.0}), b = vec({0.6}), c = vec({2.6});
  EXPECT_NEAR(eval_kernel(k, a, b), std::exp(-2.0 * std::pow(std::sin(kPi * 0.6 / 2.0), 2) / 1.69),
              1e-15);
  EXPECT_NEAR(eval_kernel(k, a, b), eval_kernel(k, a, c), 1e-12);
}

TEST(Kernel, CompositeWhiteNoiseOnlyOnSameRow) {
  const KernelSpec k = KernelSpec::composite(2.5, 1.0, 0.3);
  const VectorXd a = vec({1.0, 2.0});
  EXPECT_DOUBLE_EQ(eval_kernel(k, a, a), 2.5);
  EXPECT_DOUBLE_EQ(eval_kernel(k, a, a, true), 2.8);
  EXPECT_DOUBLE_EQ(k.self_value(), 2.5);
}

TEST(Kernel, SelfValueMatchesEveryFamily) {
  std::mt19937_64 gen(4);
  const MatrixXd X = oracle::random_matrix(gen, 5, 3);
  for (const KernelSpec& k :
       {KernelSpec::rbf(0.4), KernelSpec::matern(1.5, 2.0), KernelSpec::exp_sine_squared(1.0, 3.0),
        KernelSpec::composite(3.0, 1.0, 0.0)}) {
    for (Index i = 0; i < X.rows(); ++i)
      EXPECT_DOUBLE_EQ(eval_kernel(k, X.row(i).transpose(), X.row(i).transpose()), k.self_value());
  }
}

TEST(Kernel, GramIsSymmetricPsd) {
  std::mt19937_64 gen(1);
  for (int trial = 0; trial < 10; ++trial) {
    const MatrixXd X = oracle::random_matrix(gen, 30, 4);
    const MatrixXd line = X.col(0);  // the periodic kernel is PSD on the line only
    for (const KernelSpec& k : {KernelSpec::rbf(1.0), KernelSpec::matern(2.5, 0.8),
                                KernelSpec::matern(0.5, 1.2), KernelSpec::exp_sine_squared(1.0, 2.0)}) {
      const MatrixXd g = gram(k, k.family == KernelFamily::ExpSineSquared ? line : X).entries;
      EXPECT_EQ((g - g.transpose()).cwiseAbs().maxCoeff(), 0.0);
      Eigen::SelfAdjointEigenSolver<MatrixXd> eig(g);
      EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-10);
    }
  }
}

TEST(Kernel, GramDiagonalCarriesWhiteNoiseAndJitter) {
  std::mt19937_64 gen(2);
  const MatrixXd X = oracle::random_matrix(gen, 6, 2);
  const KernelSpec k = KernelSpec::composite(1.5, 1.0, 0.25);
  const GramMatrix g = gram(k, X, 1e-3);
  EXPECT_DOUBLE_EQ(g.jitter, 1e-3);
  for (Index i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(g.entries(i, i), 1.5 + 0.25 + 1e-3);
  const MatrixXd c = cross_gram(k, X, X);
  for (Index i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(c(i, i), 1.5);
}

TEST(Kernel, CrossGramOfSameRowsEqualsGram) {
  std::mt19937_64 gen(3);
  const MatrixXd X = oracle::random_matrix(gen, 12, 3);
  const KernelSpec k = KernelSpec::rbf(0.9);
  EXPECT_EQ((gram(k, X).entries - cross_gram(k, X, X)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Kernel, CrossGramMatchesPointwise) {
  std::mt19937_64 gen(5);
  const MatrixXd X = oracle::random_matrix(gen, 7, 3), Z = oracle::random_matrix(gen, 4, 3);
  const KernelSpec k = KernelSpec::rbf(1.7);
  const MatrixXd c = cross_gram(k, X, Z);
  for (Index i = 0; i < 7; ++i)
    for (Index j = 0; j < 4; ++j)
      EXPECT_NEAR(c(i, j), oracle::rbf((X.row(i) - Z.row(j)).squaredNorm(), 1.7), 1e-15);
}

TEST(Kernel, SerialAndParallelAreBitIdentical) {
  std::mt19937_64 gen(6);
  const MatrixXd X = oracle::random_matrix(gen, 200, 5), Z = oracle::random_matrix(gen, 90, 5);
  const KernelSpec k = KernelSpec::matern(1.5, 1.1);
  EXPECT_EQ(gram(k, X, 0.0, Exec::Serial).entries, gram(k, X, 0.0, Exec::Parallel).entries);
  EXPECT_EQ(cross_gram(k, X, Z, Exec::Serial), cross_gram(k, X, Z, Exec::Parallel));
}

TEST(Kernel, Errors) {
  EXPECT_THROW(eval_kernel(KernelSpec::rbf(1.0), vec({1, 2}), vec({1})), InputError);
  EXPECT_THROW(eval_kernel(KernelSpec::rbf(0.0), vec({1}), vec({1})), ConfigError);
  EXPECT_THROW(eval_kernel(KernelSpec::rbf(-1.0), vec({1}), vec({1})), ConfigError);
  EXPECT_THROW(KernelSpec::matern(1.0, 1.0).validate(), ConfigError);
  EXPECT_THROW(KernelSpec::rbf(1.0, -0.1).validate(), ConfigError);
  EXPECT_THROW(KernelSpec::composite(0.0, 1.0, 0.1).validate(), ConfigError);
  EXPECT_THROW(gram(KernelSpec::rbf(1.0), MatrixXd(0, 3)), InputError);
  EXPECT_THROW(cross_gram(KernelSpec::rbf(1.0), MatrixXd::Zero(2, 3), MatrixXd::Zero(2, 2)),
               InputError);
}

TEST(Kernel, FamilyNames) {
  for (auto f : {KernelFamily::RBF, KernelFamily::Matern, KernelFamily::ExpSineSquared,
                 KernelFamily::Composite})
    EXPECT_EQ(parse_kernel_family(to_string(f)), f);
  try {
    parse_kernel_family("linear");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("rbf, matern"), std::string::npos);
  }
}

TEST(Cholesky, NoJitterWhenPositiveDefinite) {
  std::mt19937_64 gen(7);
  const MatrixXd X = oracle::random_matrix(gen, 10, 3);
  MatrixXd a = gram(KernelSpec::rbf(1.0), X).entries;
  a.diagonal().array() += 0.1;
  const Cholesky c = cholesky_with_jitter(a);
  EXPECT_EQ(c.jitter, 0.0);
  EXPECT_LT((c.lower * c.lower.transpose() - a).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Cholesky, EscalatesJitterOnSingularGram) {
  MatrixXd X(4, 2);
  X << 0, 0, 0, 0, 1, 1, 1, 1;  // duplicate rows, no noise
  const MatrixXd a = gram(KernelSpec::rbf(1.0), X).entries;
  const Cholesky c = cholesky_with_jitter(a);
  EXPECT_GT(c.jitter, 0.0);
  EXPECT_LE(c.jitter, 1e-4);
  MatrixXd shifted = a;
  shifted.diagonal().array() += c.jitter;
  EXPECT_LT((c.lower * c.lower.transpose() - shifted).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Cholesky, IndefiniteMatrixFailsWithDiagnostics) {
  MatrixXd a(2, 2);
  a << 1, 2, 2, 1;  // eigenvalues 3, -1
  try {
    cholesky_with_jitter(a);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("min eigenvalue"), std::string::npos);
  }
}

TEST(Exec, ParallelLoopRethrowsLowestFailingIndex) {
  for (Exec e : {Exec::Serial, Exec::Parallel}) {
    try {
      for_each_index(100, e, [](std::ptrdiff_t i) {
        if (i % 17 == 5) throw NumericalError("item " + std::to_string(i));
      });
      FAIL();
    } catch (const NumericalError& err) {
      EXPECT_STREQ(err.what(), "item 5");
    }
  }
}
