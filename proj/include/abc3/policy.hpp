#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "abc3/exec.hpp"
#include "abc3/gp.hpp"
#include "abc3/kernel.hpp"
#include "abc3/random.hpp"

namespace abc3 {

enum class PolicyKind { ABC3, Naive, Mackay, ACE, Leverage, ABC3Scaled, Sample };

PolicyKind parse_policy(std::string_view name);
std::string to_string(PolicyKind kind);
/// Comma-separated list of accepted policy names.
std::string policy_names();

/// Acquisition-kernel quantities over the train pool, computed once per pool.
struct PoolCache {
  MatrixXd gram;  // k(x_i, x_j), no white noise or jitter
  std::optional<double> lambda_star;       // max eigenvalue of gram
  std::optional<VectorXd> test_affinity;   // mean_i k(test_i, x_j), ACE only

  static PoolCache build(const KernelSpec& kernel, const MatrixXd& pool,
                         const MatrixXd* test_covariates = nullptr, bool with_lambda_star = false,
                         Exec exec = Exec::Parallel);
};

/// Read-only view of everything a sequential policy may consult. Outcomes are
/// deliberately absent apart from what the arm states carry, and no scoring
/// path reads them.
struct PolicyContext {
  const MatrixXd& pool;  // normalized train covariates
  const PoolCache& cache;
  const ArmState& control;
  const ArmState& treatment;
  Rng& rng;
  const MatrixXd* test_covariates = nullptr;  // ACE only
  Exec exec = Exec::Parallel;

  [[nodiscard]] const ArmState& arm(Arm a) const { return a == Arm::Control ? control : treatment; }
  /// Unobserved pool indices in ascending order.
  [[nodiscard]] std::vector<Index> candidates() const;
};

struct PolicyDecision {
  Index subject = -1;
  Arm arm = Arm::Control;
  double score = 0.0;
  /// N x 2 scores by pool index and arm; NaN where not a candidate.
  std::optional<Eigen::MatrixX2d> per_candidate_scores;
};

/// ABC3 acquisition value for observing `candidate` under `arm`: the
/// integrated posterior-variance reduction of that arm's GP over the pool.
double abc3_score(const PolicyContext& ctx, Index candidate, Arm arm);

/// Scores for each candidate (rows) and arm (columns).
Eigen::MatrixX2d abc3_scores(const PolicyContext& ctx, const std::vector<Index>& candidates,
                             Exec exec);

PolicyDecision decide_abc3(const PolicyContext& ctx, bool keep_scores = false);
PolicyDecision decide_naive(const PolicyContext& ctx);
PolicyDecision decide_mackay(const PolicyContext& ctx, bool keep_scores = false);
PolicyDecision decide_ace(const PolicyContext& ctx, bool keep_scores = false);

/// Rows x_i / ||x_i|| with a leading intercept column.
MatrixXd leverage_design(const MatrixXd& X);

/// Diagonal of design (design^T design + ridge I)^-1 design^T.
VectorXd leverage_scores(const MatrixXd& design, double ridge = 1e-6);

/// Non-sequential batch: `budget` distinct indices drawn with probability
/// proportional to leverage, arms by fair coin.
std::vector<PolicyDecision> decide_leverage(const MatrixXd& X, Index budget, Rng& rng,
                                            double ridge = 1e-6);

/// Argmax over (candidate, arm) with ties to the lowest index, then arm 0.
PolicyDecision argmax_decision(const std::vector<Index>& candidates, const Eigen::MatrixX2d& scores,
                               Index pool_size, bool keep_scores);

namespace instrumentation {
/// Multiply-add count accumulated by abc3_score since the last reset.
std::uint64_t score_ops();
void reset_score_ops();
}  // namespace instrumentation

}  // namespace abc3
