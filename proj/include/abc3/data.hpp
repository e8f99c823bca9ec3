#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace abc3 {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Subject pool: covariates with both potential outcomes.
struct CovariatePool {
  MatrixXd X;      // normalized covariates (N x d)
  MatrixXd X_raw;  // covariates as loaded
  VectorXd y0;     // raw-scale control outcomes
  VectorXd y1;     // raw-scale treatment outcomes
  std::string name;
  VectorXd dist;  // uniform 1/N weights

  [[nodiscard]] Index size() const { return X.rows(); }
  [[nodiscard]] Index dim() const { return X.cols(); }
  /// True CATE per subject.
  [[nodiscard]] VectorXd cate() const { return y1 - y0; }
  /// True when y1 == y0 for every subject.
  [[nodiscard]] bool is_null() const { return y0 == y1; }
};

/// Per-feature z-score statistics.
struct FeatureStats {
  VectorXd mean;
  VectorXd sd;  // zero for constant columns
};

/// Column means and population standard deviations of `X`.
FeatureStats feature_stats(const MatrixXd& X);

/// (X - mean) / sd per column; constant columns map to 0.
MatrixXd apply_stats(const MatrixXd& X, const FeatureStats& stats);

/// Z-scores the pool's raw covariates into X.
CovariatePool normalize(CovariatePool pool);

struct CsvOptions {
  bool null_hypothesis = false;  // y1 := y0; a missing y1 column is allowed
};

/// Reads a CSV with header x0..x{d-1},y0,y1. X is normalized over the file.
CovariatePool load_csv(const std::filesystem::path& path, const CsvOptions& options = {});
CovariatePool parse_csv(std::string_view text, const std::string& name,
                        const CsvOptions& options = {});

/// Writes raw covariates and outcomes with shortest round-trip formatting.
void write_csv(const CovariatePool& pool, const std::filesystem::path& path);
std::string format_csv(const CovariatePool& pool);

struct SplitSpec {
  std::uint64_t seed = 0;
  double train_fraction = 0.5;
  bool null_hypothesis = false;
};

struct Split {
  CovariatePool train;
  CovariatePool test;
  std::vector<Index> train_index;  // original row of each train subject
  std::vector<Index> test_index;
};

/// Seeded shuffle into disjoint train/test pools. Normalization statistics
/// come from the train raw covariates and are applied to both.
Split split(const CovariatePool& pool, const SplitSpec& spec);

enum class SyntheticKind { SmoothGp, Linear, Null };

SyntheticKind parse_synthetic_kind(std::string_view name);
std::string to_string(SyntheticKind kind);

struct SyntheticOptions {
  double noise = 0.1;  // outcome noise standard deviation
  double lengthscale = 1.0;
  int features = 512;  // random Fourier features per smooth response
};

/// Deterministic synthetic pool. Covariates are standard normal.
/// smooth-gp: independent RBF(lengthscale) GP draws per arm (random Fourier
/// feature approximation) plus noise. linear: y^a = x . beta_a + noise.
/// null: one smooth draw shared by both arms, so y0 == y1 exactly.
CovariatePool gen_synthetic(SyntheticKind kind, Index n, Index d, std::uint64_t seed,
                            const SyntheticOptions& options = {});

/// Coefficients used by the linear generator for `arm` (0 or 1).
VectorXd synthetic_linear_beta(Index d, std::uint64_t seed, int arm);

}  // namespace abc3
