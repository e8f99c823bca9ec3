#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "abc3/kernel.hpp"
#include "abc3/policy.hpp"
#include "abc3/random.hpp"

namespace abc3 {

enum class ScaleOptimizer { QuasiNewton, CoordinateDescent };

ScaleOptimizer parse_scale_optimizer(std::string_view name);
std::string to_string(ScaleOptimizer optimizer);

struct ScaleConfig {
  Index sample_n = 200;     // pool points per subsample
  Index obs_sample = 256;   // cap on observed indices per arm
  double tolerance = 1e-3;  // stop once an outer iteration moves the iterate less than this
  int max_iters = 20;
  int inner_iters = 25;     // optimizer steps per subsample
  ScaleOptimizer optimizer = ScaleOptimizer::QuasiNewton;

  void validate() const;
};

/// What the large-pool policies see: covariates, the acquisition kernel and
/// the observed indices per arm. No pool-sized caches.
struct ScaleContext {
  const MatrixXd& pool;
  const KernelSpec& kernel;
  std::span<const Index> control;
  std::span<const Index> treatment;
};

/// The acquisition criterion restricted to a subsample: `support` rows stand
/// in for the pool distribution and per-arm observation subsets stand in for
/// the observed sets. Evaluable at any continuous covariate vector.
class SampledCriterion {
 public:
  SampledCriterion(const KernelSpec& kernel, MatrixXd support, const MatrixXd& control_rows,
                   const MatrixXd& treatment_rows);

  /// Variance reduction from observing `x` under `arm`.
  [[nodiscard]] double score(const VectorXd& x, Arm arm) const;
  /// max over arms.
  [[nodiscard]] double best(const VectorXd& x) const;

 private:
  struct ArmPart {
    MatrixXd observed;  // t x d
    MatrixXd chol;      // t x t lower
    MatrixXd solved;    // L^-1 k(observed, support), t x n
    double jitter = 0.0;
  };
  ArmPart make_part(const MatrixXd& rows) const;

  KernelSpec kernel_;
  MatrixXd support_;
  ArmPart parts_[2];
};

struct ScaledDecision {
  PolicyDecision decision;
  int iterations = 0;
  std::vector<double> movements;  // ||x_{i+1} - x_i|| per outer iteration
  VectorXd optimum;               // continuous iterate before snapping
  bool fell_back = false;         // optimizer diverged twice; snapped the initialization
};

/// Subsample, optimize a continuous pseudo-candidate maximizing the sampled
/// criterion, snap it to the unobserved subject with the largest kernel value,
/// then pick the arm with the larger sampled criterion there.
ScaledDecision decide_abc3_scaled(const ScaleContext& ctx, const ScaleConfig& cfg, Rng& rng);

/// Baseline without optimization: evaluates the sampled criterion on
/// `cfg.sample_n` sampled unobserved subjects and returns the argmax.
PolicyDecision decide_sample(const ScaleContext& ctx, const ScaleConfig& cfg, Rng& rng);

struct ScaledBenchRow {
  std::string policy;
  Index budget = 0;
  double mean_pehe = 0.0;
  double sd_pehe = 0.0;
  double mean_decision_ms = 0.0;
  int seeds = 0;
};

/// Scaled ABC3 vs Sample vs Naive on a synthetic null pool of `pool_size`
/// subjects, evaluated after `budget` observations.
std::vector<ScaledBenchRow> scaled_bench(Index pool_size, Index dim, Index budget,
                                         const ScaleConfig& cfg,
                                         const std::vector<std::uint64_t>& seeds);

}  // namespace abc3
