#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <vector>

#include "abc3/exec.hpp"
#include "abc3/gp.hpp"
#include "abc3/kernel.hpp"
#include "abc3/policy.hpp"
#include "abc3/random.hpp"

namespace abc3 {

/// Mean squared difference between estimated and true CATE over test points.
double pehe(const VectorXd& cate_hat, const VectorXd& cate_true);

/// PEHE against the oracle estimator fitted on the whole pool with both
/// potential outcomes.
double pehe_omega(const VectorXd& cate_hat, const VectorXd& cate_omega);

/// Biased (V-statistic) squared MMD between the rows of A and B, clamped at 0.
double mmd_sq(const KernelSpec& kernel, const MatrixXd& A, const MatrixXd& B,
              Exec exec = Exec::Parallel);

struct MmdReport {
  double mmd_sq = 0.0;
  double bound_rhs = 0.0;  // 4 l*/n1 + 4 l*/n0 + 2 (IV1 + IV0)
  double lambda_star = 0.0;
  Index n_treat = 0;
  Index n_control = 0;
};

/// Treatment/control imbalance against its integrated-variance bound, using
/// the acquisition kernel of the context's arm states.
MmdReport mmd_bound_report(const PolicyContext& ctx);

struct AssumptionReport {
  Index n = 0;
  double min_gap = 0.0;             // min over permutations of 2 delta* - eps*
  double two_delta_star_min = 0.0;  // min over permutations of 2 delta*
  double eps_star_max = 0.0;        // max over permutations of eps*
  double M = 0.0;
  int permutations = 0;
};

/// Evaluates eps*(I_n) <= 2 delta*(I_n) on the leading prefixes of random
/// orderings of the pool, one report per n = 1..N.
std::vector<AssumptionReport> check_assumption(const KernelSpec& kernel, const MatrixXd& pool,
                                               int permutations, Rng& rng,
                                               Exec exec = Exec::Parallel);

/// CSV with header `n,two_delta_star_min,eps_star_max,min_gap`.
std::string format_assumption_csv(const std::vector<AssumptionReport>& reports);

struct Type1Report {
  double alpha = 1.96;
  double rejection_rate = 0.0;
  VectorXd per_point_z;
  Index zero_variance_points = 0;  // counted as rejections with z = +inf
};

/// Z-test of the CATE posterior at each test point:
/// z = (m1 - m0) / sqrt(v1 + v0), rejected when |z| > alpha.
Type1Report type1_test(const Posterior& control, const Posterior& treatment, double alpha = 1.96);

Type1Report type1_test(const RegressionModel& control, const RegressionModel& treatment,
                       const MatrixXd& test_covariates, double alpha = 1.96);

/// One-sided exact sign test: P(W >= wins) for W ~ Binomial(wins + losses, 1/2).
double sign_test_p_value(int wins, int losses);

}  // namespace abc3
