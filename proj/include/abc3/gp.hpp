#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "abc3/kernel.hpp"

namespace abc3 {

enum class Arm : int { Control = 0, Treatment = 1 };

inline int arm_index(Arm a) { return static_cast<int>(a); }
inline Arm other(Arm a) { return a == Arm::Control ? Arm::Treatment : Arm::Control; }

struct Posterior {
  VectorXd mean;
  VectorXd variance;
};

/// Zero-mean GP posterior for one arm.
///
/// Holds the lower Cholesky factor of K_t + noise*I over the observed rows and,
/// optionally, the kernel rows between observations and the full pool together
/// with their triangular solve (L^-1 * cross_pool). The pool caches make
/// posterior variance over the pool and acquisition scoring O(t*N).
///
/// Instances are immutable; extend() returns a new state.
class ArmState {
 public:
  static constexpr int kRefactorEvery = 64;

  ArmState() = default;

  /// Builds a state from scratch over `indices` (rows of `pool`).
  static ArmState fit(const KernelSpec& kernel, const MatrixXd& pool,
                      std::span<const Index> indices, const VectorXd& outcomes,
                      Arm arm = Arm::Control, bool cache_pool = true);

  /// State with one more observation, via a bordered Cholesky update.
  /// `pool` must be the matrix the state was fitted on.
  [[nodiscard]] ArmState extend(const MatrixXd& pool, Index new_index, double new_outcome) const;

  [[nodiscard]] Posterior posterior(const MatrixXd& queries) const;

  /// Posterior variance at every pool row; needs the pool cache.
  [[nodiscard]] VectorXd pool_variance() const;

  /// (1/N) sum of posterior variance over the pool (uniform P).
  [[nodiscard]] double integrated_variance(const MatrixXd& pool) const;

  [[nodiscard]] Arm arm() const { return arm_; }
  [[nodiscard]] const KernelSpec& kernel() const { return kernel_; }
  [[nodiscard]] const std::vector<Index>& indices() const { return indices_; }
  [[nodiscard]] const VectorXd& outcomes() const { return outcomes_; }
  [[nodiscard]] const MatrixXd& observed_rows() const { return observed_; }
  [[nodiscard]] const MatrixXd& chol() const { return chol_; }
  [[nodiscard]] const VectorXd& alpha() const { return alpha_; }
  [[nodiscard]] double jitter() const { return jitter_; }
  [[nodiscard]] Index size() const { return static_cast<Index>(indices_.size()); }
  [[nodiscard]] bool has_pool_cache() const { return cached_; }
  [[nodiscard]] Index pool_size() const { return pool_rows_; }
  /// t x N kernel rows k(x_i, pool_j) for observed i.
  [[nodiscard]] const MatrixXd& cross_pool() const { return cross_pool_; }
  /// L^-1 * cross_pool.
  [[nodiscard]] const MatrixXd& solved_pool() const { return solved_pool_; }

  /// Solves L * u = rhs.
  [[nodiscard]] VectorXd solve_lower(const VectorXd& rhs) const;

 private:
  void refresh_alpha();

  Arm arm_ = Arm::Control;
  KernelSpec kernel_;
  std::vector<Index> indices_;
  VectorXd outcomes_;
  MatrixXd observed_;  // t x d
  MatrixXd chol_;      // t x t lower
  VectorXd alpha_;     // (K + noise I)^-1 y
  double jitter_ = 0.0;
  bool cached_ = false;
  Index pool_rows_ = 0;
  int extensions_since_refit_ = 0;
  MatrixXd cross_pool_;
  MatrixXd solved_pool_;
};

/// Log marginal likelihood of a zero-mean GP; when `grad` is non-null and the
/// kernel is Composite, writes the gradient with respect to
/// (log constant_scale, log lengthscale, log white_noise).
double log_marginal_likelihood(const KernelSpec& kernel, const MatrixXd& X, const VectorXd& y,
                               Eigen::Vector3d* grad = nullptr);

struct HyperparameterBox {
  double log_lengthscale_lo = -2.302585092994046;  // ln 0.1
  double log_lengthscale_hi = 4.605170185988092;   // ln 100
  double log_scale_lo = -6.907755278982137;        // ln 1e-3
  double log_scale_hi = 6.907755278982137;         // ln 1e3
  double log_white_lo = -13.815510557964274;       // ln 1e-6
  double log_white_hi = 2.302585092994046;         // ln 10
};

struct HyperparameterFit {
  KernelSpec kernel;
  double log_likelihood = 0.0;
  bool fell_back = false;  // every restart failed; `kernel` is the init
};

/// Maximizes the Composite log marginal likelihood over log-parameters with
/// a projected quasi-Newton ascent. Restart 0 starts at `init`, later restarts
/// at uniform draws from the box. Deterministic given `seed`.
HyperparameterFit fit_hyperparameters(const MatrixXd& pool, std::span<const Index> indices,
                                      const VectorXd& outcomes, const KernelSpec& init,
                                      int restarts = 3, std::uint64_t seed = 0,
                                      const HyperparameterBox& box = {});

struct RegressionOptions {
  KernelSpec init = KernelSpec::composite(1.0, 1.0, 1.0);
  bool optimize = true;
  int restarts = 3;
  std::uint64_t seed = 0;
};

/// GP regressor on standardized outcomes; predictions are on the raw scale.
struct RegressionModel {
  ArmState state;
  double y_mean = 0.0;
  double y_scale = 1.0;
  bool fell_back = false;

  /// Raw-scale mean and latent-function variance.
  [[nodiscard]] Posterior predict(const MatrixXd& queries) const;
};

RegressionModel fit_regression(const MatrixXd& pool, std::span<const Index> indices,
                               const VectorXd& raw_outcomes, const RegressionOptions& options);

}  // namespace abc3
