#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "abc3/error.hpp"
#include "abc3/scale.hpp"
#include "oracles.hpp"

using namespace abc3;

namespace {

struct Small {
  MatrixXd pool;
  KernelSpec kernel = KernelSpec::rbf(1.0, 1.0);
  std::vector<Index> observed[2];

  Small(std::mt19937_64& gen, Index n, Index d, Index t0, Index t1) {
    pool = oracle::random_matrix(gen, n, d);
    const auto idx = oracle::random_subset(gen, n, t0 + t1);
    observed[0].assign(idx.begin(), idx.begin() + t0);
    observed[1].assign(idx.begin() + t0, idx.end());
  }

  ScaleContext context() const { return ScaleContext{pool, kernel, observed[0], observed[1]}; }

  PolicyDecision exact() const {
    const PoolCache cache = PoolCache::build(kernel, pool);
    ArmState s[2];
    for (int a = 0; a < 2; ++a)
      s[a] = ArmState::fit(kernel, pool, observed[a],
                           VectorXd::Zero(static_cast<Index>(observed[a].size())), static_cast<Arm>(a));
    Rng rng(0);
    return decide_abc3(PolicyContext{pool, cache, s[0], s[1], rng}, true);
  }
};

}  // namespace

TEST(SampledCriterion, FullSampleEqualsExactCriterion) {
  std::mt19937_64 gen(1);
  for (int trial = 0; trial < 20; ++trial) {
    Small inst(gen, oracle::random_int(gen, 13, 25), oracle::random_int(gen, 1, 5),
               oracle::random_int(gen, 0, 6), oracle::random_int(gen, 0, 6));
    const SampledCriterion crit(inst.kernel, inst.pool, oracle::rows(inst.pool, inst.observed[0]),
                                oracle::rows(inst.pool, inst.observed[1]));
    const PolicyDecision exact = inst.exact();
    for (Index c = 0; c < inst.pool.rows(); ++c)
      for (int a = 0; a < 2; ++a) {
        const double want = (*exact.per_candidate_scores)(c, a);
        if (std::isnan(want)) continue;
        EXPECT_NEAR(crit.score(inst.pool.row(c).transpose(), static_cast<Arm>(a)), want, 1e-10);
      }
  }
}

TEST(ScaledAbc3, AgreesWithExactOnSmallInstances) {
  std::mt19937_64 gen(2);
  int agree = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Index n = oracle::random_int(gen, 13, 25);
    Small inst(gen, n, oracle::random_int(gen, 1, 4), oracle::random_int(gen, 1, 6),
               oracle::random_int(gen, 1, 6));
    ScaleConfig cfg;
    cfg.sample_n = n;
    cfg.obs_sample = static_cast<Index>(std::max(inst.observed[0].size(), inst.observed[1].size()));
    Rng rng(static_cast<std::uint64_t>(trial));
    const ScaledDecision d = decide_abc3_scaled(inst.context(), cfg, rng);
    if (d.decision.subject == inst.exact().subject) ++agree;
  }
  EXPECT_GE(agree, 40);
}

TEST(ScaledAbc3, IdenticalCovariatesConvergeImmediately) {
  const MatrixXd pool = MatrixXd::Constant(12, 3, 0.7);
  const KernelSpec k = KernelSpec::rbf(1.0, 1.0);
  const std::vector<Index> c{0, 3}, t{1};
  Rng rng(0);
  const ScaledDecision d = decide_abc3_scaled(ScaleContext{pool, k, c, t}, ScaleConfig{}, rng);
  EXPECT_EQ(d.iterations, 1);
  ASSERT_EQ(d.movements.size(), 1u);
  EXPECT_LE(d.movements[0], ScaleConfig{}.tolerance);
  EXPECT_EQ(d.decision.subject, 2);
  EXPECT_FALSE(d.fell_back);
}

TEST(ScaledAbc3, SeededAndAlwaysUnobserved) {
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 10; ++trial) {
    Small inst(gen, 400, 3, 20, 15);
    ScaleConfig cfg;
    cfg.sample_n = 50;
    cfg.obs_sample = 8;
    cfg.max_iters = 5;
    Rng a(9), b(9);
    const ScaledDecision x = decide_abc3_scaled(inst.context(), cfg, a);
    const ScaledDecision y = decide_abc3_scaled(inst.context(), cfg, b);
    EXPECT_EQ(x.decision.subject, y.decision.subject);
    EXPECT_EQ(x.decision.arm, y.decision.arm);
    EXPECT_EQ(x.movements, y.movements);
    for (int arm = 0; arm < 2; ++arm)
      EXPECT_EQ(std::count(inst.observed[arm].begin(), inst.observed[arm].end(), x.decision.subject), 0);
    EXPECT_LE(x.iterations, cfg.max_iters);
    EXPECT_EQ(static_cast<int>(x.movements.size()), x.iterations);
    for (double m : x.movements) EXPECT_TRUE(std::isfinite(m));
  }
}

TEST(ScaledAbc3, SnapMaximizesKernelToOptimum) {
  std::mt19937_64 gen(4);
  Small inst(gen, 60, 2, 5, 5);
  Rng rng(1);
  const ScaledDecision d = decide_abc3_scaled(inst.context(), ScaleConfig{}, rng);
  double best = -1.0;
  for (Index i = 0; i < 60; ++i) {
    bool seen = false;
    for (int a = 0; a < 2; ++a)
      seen |= std::count(inst.observed[a].begin(), inst.observed[a].end(), i) > 0;
    if (!seen) best = std::max(best, oracle::rbf((inst.pool.row(i).transpose() - d.optimum).squaredNorm(), 1.0));
  }
  EXPECT_EQ(oracle::rbf((inst.pool.row(d.decision.subject).transpose() - d.optimum).squaredNorm(), 1.0), best);
}

TEST(ScaledAbc3, CoordinateDescentAlsoWorks) {
  std::mt19937_64 gen(5);
  Small inst(gen, 20, 2, 3, 3);
  ScaleConfig cfg;
  cfg.optimizer = ScaleOptimizer::CoordinateDescent;
  cfg.sample_n = 20;
  cfg.obs_sample = 3;
  Rng rng(0);
  const ScaledDecision d = decide_abc3_scaled(inst.context(), cfg, rng);
  const SampledCriterion crit(inst.kernel, inst.pool, oracle::rows(inst.pool, inst.observed[0]),
                              oracle::rows(inst.pool, inst.observed[1]));
  // the optimum is at least as good as the starting mean
  VectorXd mean = VectorXd::Zero(2);
  int free = 0;
  for (Index i = 0; i < 20; ++i)
    if (std::count(inst.observed[0].begin(), inst.observed[0].end(), i) +
            std::count(inst.observed[1].begin(), inst.observed[1].end(), i) == 0) {
      mean += inst.pool.row(i).transpose();
      ++free;
    }
  mean /= free;
  EXPECT_GE(crit.best(d.optimum), crit.best(mean) - 1e-12);
}

TEST(SamplePolicy, FullSampleIsExactArgmax) {
  std::mt19937_64 gen(6);
  for (int trial = 0; trial < 10; ++trial) {
    Small inst(gen, 20, 3, 3, 4);
    ScaleConfig cfg;
    cfg.sample_n = 20;
    cfg.obs_sample = 4;
    Rng rng(0);
    const PolicyDecision s = decide_sample(inst.context(), cfg, rng);
    const PolicyDecision e = inst.exact();
    EXPECT_EQ(s.subject, e.subject);
    EXPECT_EQ(s.arm, e.arm);
  }
}

TEST(Scale, ConfigAndStateErrors) {
  ScaleConfig cfg;
  cfg.sample_n = 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.tolerance = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.max_iters = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_EQ(parse_scale_optimizer("quasi-newton-numeric-grad"), ScaleOptimizer::QuasiNewton);
  EXPECT_EQ(parse_scale_optimizer(to_string(ScaleOptimizer::CoordinateDescent)),
            ScaleOptimizer::CoordinateDescent);
  EXPECT_THROW(parse_scale_optimizer("adam"), ConfigError);

  const MatrixXd empty(0, 2);
  const KernelSpec k = KernelSpec::rbf(1.0, 1.0);
  Rng rng(0);
  EXPECT_THROW(decide_abc3_scaled(ScaleContext{empty, k, {}, {}}, ScaleConfig{}, rng), StateError);
  EXPECT_THROW(decide_sample(ScaleContext{empty, k, {}, {}}, ScaleConfig{}, rng), StateError);
  const MatrixXd two = MatrixXd::Zero(2, 2);
  const std::vector<Index> c{0}, t{1};
  EXPECT_THROW(decide_abc3_scaled(ScaleContext{two, k, c, t}, ScaleConfig{}, rng), StateError);
}

TEST(ScaledBench, EmptyBudgetHasNoRows) {
  EXPECT_TRUE(scaled_bench(100, 2, 0, ScaleConfig{}, {0}).empty());
}

TEST(ScaledBench, SmallRunReportsEveryPolicy) {
  ScaleConfig cfg;
  cfg.sample_n = 30;
  cfg.max_iters = 3;
  const auto rows = scaled_bench(80, 2, 6, cfg, {0, 1});
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.seeds, 2);
    EXPECT_EQ(r.budget, 6);
    EXPECT_TRUE(std::isfinite(r.mean_pehe));
    EXPECT_GE(r.mean_decision_ms, 0.0);
  }
  EXPECT_EQ(rows[0].policy, "abc3-scaled");
}
